"""Shared low-rank meta-knowledge factors and their sliced seeds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError
from .numeric import Tensor, crop, matmul


@dataclass
class MetaSubspace:
    B: Tensor  # (h_max, rank)
    A: Tensor  # (rank, w_max)

    @property
    def h_max(self) -> int:
        return self.B.shape[0]

    @property
    def w_max(self) -> int:
        return self.A.shape[1]

    @property
    def rank(self) -> int:
        return self.B.shape[1]


def init_subspace(h_max: int, w_max: int, r: int, gaussian_std: float = 0.02, seed=0,
                  ab_init: bool = True) -> MetaSubspace:
    """Draw ``B`` and ``A`` i.i.d. from N(0, std^2).

    ``seed`` may be an int or an existing ``numpy.random.Generator``. With
    ``ab_init=False`` the conventional LoRA start is used instead: ``A`` is
    zero, so the seed product starts at exactly zero.
    """
    if min(h_max, w_max, r) < 1:
        raise ParameterError(f"subspace dimensions must be >= 1, got ({h_max}, {w_max}, {r})")
    if not gaussian_std > 0:
        raise ParameterError(f"gaussian_std must be positive, got {gaussian_std}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    b = rng.normal(0.0, gaussian_std, size=(h_max, r))
    a = rng.normal(0.0, gaussian_std, size=(r, w_max))
    if not ab_init:
        a = np.zeros_like(a)
    return MetaSubspace(B=Tensor(b, requires_grad=True, name="B"),
                        A=Tensor(a, requires_grad=True, name="A"))


def full_seed(ms: MetaSubspace) -> Tensor:
    return matmul(ms.B, ms.A)


def slice_seed(ms: MetaSubspace, h_t: int, w_t: int) -> Tensor:
    """``B[:h_t] @ A[:, :w_t]``; only the used rows/columns receive gradient."""
    if h_t > ms.h_max:
        raise CapacityError(f"slice height h_t={h_t} exceeds H_max={ms.h_max}")
    if w_t > ms.w_max:
        raise CapacityError(f"slice width w_t={w_t} exceeds W_max={ms.w_max}")
    if h_t < 1 or w_t < 1:
        raise ParameterError(f"slice dims must be >= 1, got ({h_t}, {w_t})")
    return matmul(crop(ms.B, h_t, ms.rank), crop(ms.A, ms.rank, w_t))
