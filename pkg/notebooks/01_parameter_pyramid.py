# %% [markdown]
# # The parameter pyramid
#
# One small shared factor pair `B @ A` is sliced and expanded by a kernel per
# expert. Small kernels need a large slice; large kernels a small one. Every
# expert ends up with a full-size weight delta.

# %%
import numpy as np

from ept import count_params, init_bank, init_subspace, project_expert, slice_seed
from ept.experts import target_slice_dims

d_out, d_in, rank = 12, 10, 3
scales = [1, 2, 4]
h_max, w_max = target_slice_dims(d_out, d_in, min(scales))
ms = init_subspace(h_max, w_max, rank, gaussian_std=1.0, seed=0)
print("subspace factors:", ms.B.shape, ms.A.shape)

# %% [markdown]
# Each scale reads its own top-left slice of the seed.

# %%
for s in scales:
    h, w = target_slice_dims(d_out, d_in, s)
    print(f"scale {s}: seed slice {h}x{w} -> expanded {h * s}x{w * s} -> cropped {d_out}x{d_in}")

# %% [markdown]
# Kernels start at zero, so every expert starts as the exact zero matrix.

# %%
bank = init_bank(scales, d_out, d_in)
print([float(np.abs(project_expert(ms, e, d_out, d_in).data).max()) for e in bank.experts])

rng = np.random.default_rng(1)
for e in bank.experts:
    e.kernel.data[...] = rng.normal(size=e.kernel.shape)
W = project_expert(ms, bank.experts[1], d_out, d_in).data
h, w = target_slice_dims(d_out, d_in, 2)
assert np.array_equal(W, np.kron(slice_seed(ms, h, w).data, bank.experts[1].kernel.data)[:d_out, :d_in])
print("scale-2 delta is the Kronecker expansion of its slice")

# %% [markdown]
# ## Counting
#
# A 768-wide layer with rank 8 and eight experts at scales 2..8.

# %%
print(count_params(768, 8, 8, [2, 2, 4, 4, 6, 6, 8, 8], 384).table())
