# %% [markdown]
# # Switching components off
#
# `ab_init` off starts the shared seed at zero, `top_k` off routes every token
# to every expert and `alp` off deconvolves the whole seed for every scale.
# Short runs only: this is about the plumbing, not the numbers.

# %%
import sys

from ept import run_ablation, toy_config

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 60
rows = run_ablation(toy_config(max_steps=steps, warmup_steps=min(30, steps)))
print(f"{'ab_init':>8}{'top_k':>8}{'alp':>8}{'final loss':>12}{'accuracy':>10}")
for r in rows:
    print(f"{r['ab_init']!s:>8}{r['top_k']!s:>8}{r['alp']!s:>8}{r['final_loss']:>12.4f}{r['mean_accuracy']:>10.3f}")
