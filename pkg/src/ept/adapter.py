"""Frozen linear layer augmented with a gated bank of pyramid experts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .experts import DeconvExpert, ExpertBank, init_bank, project_expert, target_slice_dims
from .numeric import Tensor, add, as_tensor, masked_softmax, matmul, mul, reshape, scale, take, transpose
from .router import RouterState, RoutingStats, init_router, record_routing, route_logits, topk_mask
from .subspace import MetaSubspace, init_subspace

SCALING_MODES = ("slice_height_over_T", "kernel_over_T", "none")


@dataclass
class EptLayer:
    W0: Tensor  # (d_out, d_in), frozen
    subspace: MetaSubspace
    bank: ExpertBank
    router: RouterState
    n_tasks: int
    scaling_mode: str = "slice_height_over_T"
    full_slice: bool = False  # pruner disabled: every expert reads the whole seed

    def __post_init__(self):
        if self.scaling_mode not in SCALING_MODES:
            raise ParameterError(f"scaling_mode must be one of {SCALING_MODES}, got {self.scaling_mode!r}")
        if self.router.n_experts != len(self.bank):
            raise ShapeError(f"router has {self.router.n_experts} experts, bank has {len(self.bank)}")
        if self.W0.shape != (self.bank.d_out, self.bank.d_in):
            raise ShapeError(f"W0 {self.W0.shape} does not match bank target {(self.bank.d_out, self.bank.d_in)}")
        if self.n_tasks < 1:
            raise ParameterError("task count T must be >= 1")

    @property
    def d_out(self) -> int:
        return self.W0.shape[0]

    @property
    def d_in(self) -> int:
        return self.W0.shape[1]


@dataclass
class GatingDecision:
    selected: np.ndarray  # bool, (N,) or (n_tokens, N)
    gates: np.ndarray  # same shape as selected
    scales: np.ndarray  # (N,)


def build_layer(W0, scales, n_tasks: int, rank: int = 8, k: int = 2, tau_g: float = 1.0,
                scaling_mode: str = "slice_height_over_T", gaussian_std: float = 0.02,
                ab_init: bool = True, full_slice: bool = False, conditioning: str = "token_only",
                d_e: int | None = None, router_init_std: float = 0.0, subspace: MetaSubspace | None = None,
                rng=None) -> EptLayer:
    """Wrap a frozen weight with a fresh subspace, zero kernels and a router.

    The subspace is sized for the smallest kernel, which needs the largest
    seed: ``H_max = ceil(d_out / s_min)``, ``W_max = ceil(d_in / s_min)``.
    """
    W0 = Tensor(np.array(W0, dtype=np.float64))
    d_out, d_in = W0.shape
    rng = np.random.default_rng(rng)
    if subspace is None:
        h_max, w_max = target_slice_dims(d_out, d_in, min(scales))
        subspace = init_subspace(h_max, w_max, rank, gaussian_std, rng, ab_init=ab_init)
    bank = init_bank(scales, d_out, d_in)
    router = init_router(len(bank), d_in, k=k, tau_g=tau_g, conditioning=conditioning, d_e=d_e,
                         init_std=router_init_std, rng=rng)
    return EptLayer(W0=W0, subspace=subspace, bank=bank, router=router, n_tasks=n_tasks,
                    scaling_mode=scaling_mode, full_slice=full_slice)


def scaling_factor(mode: str, expert: DeconvExpert, layer: EptLayer) -> float:
    if layer.n_tasks < 1:
        raise ParameterError("task count T must be >= 1")
    if mode == "slice_height_over_T":
        return math.ceil(layer.d_out / expert.scale) / layer.n_tasks
    if mode == "kernel_over_T":
        return expert.scale / layer.n_tasks
    if mode == "none":
        return 1.0
    raise ParameterError(f"unknown scaling mode {mode!r}")


def expert_scales(layer: EptLayer) -> np.ndarray:
    return np.array([scaling_factor(layer.scaling_mode, e, layer) for e in layer.bank.experts])


def expert_weights(layer: EptLayer) -> list[Tensor]:
    """Materialise every ``W_i`` from the current subspace and kernels."""
    return [project_expert(layer.subspace, e, layer.d_out, layer.d_in, full_slice=layer.full_slice)
            for e in layer.bank.experts]


def adapter_forward(layer: EptLayer, x, task=None, *, e_t=None, weights=None, gates=None,
                    stats: RoutingStats | None = None):
    """``y = W0 x + sum_{i in P} G_i * scale_i * (W_i x)``.

    ``x`` is one input vector or a matrix with one token per row. Each
    expert's output ``W_i x`` is formed separately and then gated. ``gates``
    pins the gate vector (or matrix) instead of routing; ``weights`` reuses
    already materialised expert matrices.
    """
    x = as_tensor(x)
    single = x.ndim == 1
    X = reshape(x, (1, x.shape[0])) if single else x
    if X.shape[-1] != layer.d_in:
        raise ShapeError(f"layer expects inputs of width {layer.d_in}, got {x.shape}")
    if task is not None and np.any(np.asarray(task) >= layer.n_tasks):
        raise ShapeError(f"task id {task} out of range for T={layer.n_tasks}")
    n = X.shape[0]
    weights = expert_weights(layer) if weights is None else weights
    scales = expert_scales(layer)

    if gates is None:
        if e_t is not None:
            e_t = as_tensor(e_t)
            if e_t.ndim == 1:
                e_t = reshape(e_t, (1, e_t.shape[0]))
        r = route_logits(layer.router, X, e_t)
        mask = topk_mask(r.data, layer.router.k)
        G = masked_softmax(r, mask, layer.router.tau_g)
    else:
        g = np.broadcast_to(np.asarray(gates, dtype=np.float64), (n, len(layer.bank)))
        mask = g != 0
        G = Tensor(g.copy())

    y = matmul(X, transpose(layer.W0))
    for i, W_i in enumerate(weights):
        if not mask[:, i].any():
            continue
        delta = matmul(X, transpose(W_i))
        y = add(y, mul(scale(take(G, [i], axis=1), scales[i]), delta))

    if stats is not None and task is not None:
        record_routing(stats, np.broadcast_to(np.asarray(task), (n,)), mask, G.data)
    decision = GatingDecision(selected=mask[0] if single else mask, gates=G.data[0] if single else G.data,
                              scales=scales)
    return (reshape(y, (layer.d_out,)) if single else y), decision


def merged_weight(layer: EptLayer, decision: GatingDecision | np.ndarray, weights=None) -> np.ndarray:
    """Dense ``W0 + sum_{i in P} G_i * scale_i * W_i`` for one gate vector."""
    gates = decision.gates if isinstance(decision, GatingDecision) else np.asarray(decision, dtype=np.float64)
    if gates.ndim != 1:
        raise ShapeError(f"merged_weight needs a single gate vector, got shape {gates.shape}")
    weights = expert_weights(layer) if weights is None else weights
    scales = expert_scales(layer)
    W = layer.W0.data.copy()
    for i, W_i in enumerate(weights):
        if gates[i] != 0:
            W = W + (gates[i] * scales[i]) * np.asarray(W_i.data)
    return W


def trainable_parameters(layer: EptLayer) -> dict[str, Tensor]:
    """Named trainable tensors of the layer; ``W0`` is never among them."""
    params = {"B": layer.subspace.B, "A": layer.subspace.A}
    for e in layer.bank.experts:
        params[f"K{e.index}"] = e.kernel
    params["W_r"] = layer.router.W_r
    if layer.router.P_e is not None:
        params["P_e"] = layer.router.P_e
    return params
