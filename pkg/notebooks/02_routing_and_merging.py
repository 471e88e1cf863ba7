# %% [markdown]
# # Routing, gating and folding adapters back into one matrix

# %%
import numpy as np

from ept import adapter_forward, build_layer, merged_weight, trainable_parameters
from ept.numeric import matmul
from ept.router import gate_scores, select_topk

r = np.array([2.0, 1.0, 0.0, 1.0])
P = select_topk(r, 2)
print("selected:", P.tolist(), "gates:", gate_scores(r, P, 1.0).data.round(5).tolist())
print("ties go to the lowest index:", select_topk(np.ones(4), 2).tolist())

# %% [markdown]
# A fresh layer changes nothing: its kernels are zero.

# %%
rng = np.random.default_rng(0)
layer = build_layer(rng.normal(size=(8, 6)), [1, 2, 3], n_tasks=2, rank=2, k=2, rng=rng, router_init_std=0.5)
x = rng.normal(size=6)
y, _ = adapter_forward(layer, x)
# compare against the library matmul, which fixes the summation order
print("fresh layer is a no-op:", np.array_equal(y.data, matmul(x[None, :], layer.W0.T).data[0]))

# %% [markdown]
# After perturbing the trainable tensors the layer routes each token to two
# experts. Folding the chosen gates into `W0` gives the same output.

# %%
for p in trainable_parameters(layer).values():
    p.data[...] = rng.normal(0.0, 0.3, size=p.shape)
y, decision = adapter_forward(layer, x)
W = merged_weight(layer, decision)
print("selected experts:", np.flatnonzero(decision.selected).tolist())
print("max |merged - routed|:", float(np.abs(W @ x - y.data).max()))
