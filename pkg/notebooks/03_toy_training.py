# %% [markdown]
# # Training on the synthetic task suite
#
# Four tasks in two families. Family 0 labels come from a rank-1 readout and
# family 1 from a rank-4 readout. Pass a step count as the first argument
# (default 300, a couple of minutes on one core).

# %%
import sys

import numpy as np

from ept import evaluate, toy_config, train_loop
from ept.numeric import pca2d
from ept.train import smoothed_loss

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
cfg = toy_config(max_steps=steps)
state = train_loop(cfg, progress=lambda s: s.step % 50 == 0 and print(f"step {s.step}", flush=True))
first, last = smoothed_loss(state.log)
print(f"loss {first:.3f} -> {last:.3f}")
print("held-out accuracy:", {t: round(a, 3) for t, a in evaluate(state.model, state.datasets).items()})

# %% [markdown]
# ## Which experts does each task use?
#
# Selection fractions summed over every adapted layer. Columns follow the
# kernel sizes.

# %%
totals = state.routing_totals()
frac = totals.counts / (totals.tokens[:, None] * totals.k)
print("scales:", cfg.expert_kernel_sizes)
for t, spec in enumerate(cfg.tasks):
    print(f"task {t} (rank {spec.rank}):", frac[t].round(3).tolist())

# %% [markdown]
# ## Task prototypes in the PCA plane

# %%
coords = pca2d(state.model.table.E.data)
for t, spec in enumerate(cfg.tasks):
    print(f"task {t} family {spec.family}: ({coords[t, 0]:+.3f}, {coords[t, 1]:+.3f})")
