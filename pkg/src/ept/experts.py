"""Deconvolutional experts that expand sliced seeds into full-size weight deltas."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .numeric import Tensor, crop, transposed_conv2d
from .subspace import MetaSubspace, slice_seed


@dataclass
class DeconvExpert:
    kernel: Tensor  # (scale, scale), zero at construction
    scale: int
    index: int


@dataclass
class ExpertBank:
    experts: list[DeconvExpert]
    d_out: int
    d_in: int

    def __len__(self):
        return len(self.experts)

    @property
    def scales(self) -> list[int]:
        return [e.scale for e in self.experts]


def init_bank(scales, d_out: int, d_in: int) -> ExpertBank:
    scales = [int(s) for s in scales]
    if not scales:
        raise ParameterError("expert scale list is empty")
    if any(s < 1 for s in scales):
        raise ParameterError(f"expert scales must be >= 1, got {scales}")
    experts = [
        DeconvExpert(kernel=Tensor(np.zeros((s, s)), requires_grad=True, name=f"K{i}"), scale=s, index=i)
        for i, s in enumerate(scales)
    ]
    return ExpertBank(experts=experts, d_out=d_out, d_in=d_in)


def target_slice_dims(d_out: int, d_in: int, s: int) -> tuple[int, int]:
    if s < 1:
        raise ParameterError(f"scale must be >= 1, got {s}")
    return math.ceil(d_out / s), math.ceil(d_in / s)


def project_expert(ms: MetaSubspace, e: DeconvExpert, d_out: int, d_in: int, full_slice: bool = False) -> Tensor:
    """Expand the expert's seed slice with its kernel and crop to ``d_out x d_in``.

    ``full_slice`` skips the scale-matched slicing and deconvolves the whole
    ``H_max x W_max`` seed (the pruner-off ablation); cropping still applies.
    """
    if full_slice:
        h_t, w_t = ms.h_max, ms.w_max
    else:
        h_t, w_t = target_slice_dims(d_out, d_in, e.scale)
    seed = slice_seed(ms, h_t, w_t)
    expanded = transposed_conv2d(seed, e.kernel, stride=e.scale)
    return crop(expanded, d_out, d_in)


def expert_param_count(scales) -> int:
    return sum(int(s) ** 2 for s in scales)
