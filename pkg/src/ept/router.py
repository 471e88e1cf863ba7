"""Top-k gating and per-task routing statistics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError, ShapeError
from .numeric import Tensor, add, as_tensor, masked_softmax, matmul, reshape, transpose

TOKEN_ONLY = "token_only"
TOKEN_PLUS_TASK = "token_plus_task"


@dataclass
class RouterState:
    W_r: Tensor  # (n_experts, d_in)
    k: int = 2
    tau_g: float = 1.0
    conditioning: str = TOKEN_ONLY
    P_e: Tensor | None = None  # (d_in, d_e), only with task conditioning

    def __post_init__(self):
        n = self.W_r.shape[0]
        if not 1 <= self.k <= n:
            raise ParameterError(f"top-k must satisfy 1 <= k <= {n}, got {self.k}")
        if not self.tau_g > 0:
            raise ParameterError(f"gating temperature must be positive, got {self.tau_g}")
        if self.conditioning not in (TOKEN_ONLY, TOKEN_PLUS_TASK):
            raise ParameterError(f"unknown conditioning {self.conditioning!r}")

    @property
    def n_experts(self) -> int:
        return self.W_r.shape[0]


def init_router(n_experts: int, d_in: int, k: int = 2, tau_g: float = 1.0, conditioning: str = TOKEN_ONLY,
                d_e: int | None = None, init_std: float = 0.0, rng=None) -> RouterState:
    """Router weights; ``init_std=0`` gives the all-zero start."""
    if init_std > 0:
        w = np.random.default_rng(rng).normal(0.0, init_std, size=(n_experts, d_in))
    else:
        w = np.zeros((n_experts, d_in))
    p_e = None
    if conditioning == TOKEN_PLUS_TASK:
        p_e = Tensor(np.zeros((d_in, d_e or d_in)), requires_grad=True, name="P_e")
    return RouterState(W_r=Tensor(w, requires_grad=True, name="W_r"), k=k, tau_g=tau_g,
                       conditioning=conditioning, P_e=p_e)


def route_logits(rs: RouterState, x, e_t=None) -> Tensor:
    """``r = W_r x`` for one vector, or one row of logits per row of ``x``.

    With task conditioning the input becomes ``x + P_e e_t``.
    """
    x = as_tensor(x)
    single = x.ndim == 1
    rows = reshape(x, (1, x.shape[0])) if single else x
    if rows.shape[-1] != rs.W_r.shape[1]:
        raise ShapeError(f"router expects inputs of width {rs.W_r.shape[1]}, got {x.shape}")
    if rs.conditioning == TOKEN_PLUS_TASK:
        if e_t is None:
            raise ContractError("task-conditioned routing needs a task vector")
        e_t = as_tensor(e_t)
        e_rows = reshape(e_t, (1, e_t.shape[0])) if e_t.ndim == 1 else e_t
        rows = add(rows, matmul(e_rows, transpose(rs.P_e)))
    r = matmul(rows, transpose(rs.W_r))
    return reshape(r, (r.shape[-1],)) if single else r


def select_topk(r, k: int) -> np.ndarray:
    """Indices of the ``k`` largest logits, ties to the lowest index, ascending.

    A 2-D input selects per row and returns a boolean mask instead.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.shape[-1]
    if not 1 <= k <= n:
        raise ParameterError(f"top-k must satisfy 1 <= k <= {n}, got {k}")
    order = np.argsort(-r, axis=-1, kind="stable")[..., :k]
    if r.ndim == 1:
        return np.sort(order)
    mask = np.zeros(r.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return mask


def topk_mask(r, k: int) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 1:
        mask = np.zeros(r.shape, dtype=bool)
        mask[select_topk(r, k)] = True
        return mask
    return select_topk(r, k)


def gate_scores(r, P, tau_g: float = 1.0) -> Tensor:
    """Temperature softmax over the selected logits; zero elsewhere.

    ``P`` is an index set (1-D ``r``) or a boolean mask shaped like ``r``.
    """
    r = as_tensor(r)
    P = np.asarray(P)
    if P.dtype == bool:
        mask = P
    else:
        if P.size == 0:
            raise ContractError("gate_scores needs a non-empty selection")
        mask = np.zeros(r.shape, dtype=bool)
        mask[P.astype(np.intp)] = True
    if not mask.any():
        raise ContractError("gate_scores needs a non-empty selection")
    return masked_softmax(r, mask, tau_g)


@dataclass
class RoutingStats:
    n_tasks: int
    n_experts: int
    k: int
    counts: np.ndarray = field(default=None)
    mass: np.ndarray = field(default=None)
    tokens: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_tasks, self.n_experts), dtype=np.int64)
        if self.mass is None:
            self.mass = np.zeros((self.n_tasks, self.n_experts))
        if self.tokens is None:
            self.tokens = np.zeros(self.n_tasks, dtype=np.int64)

    def copy(self) -> "RoutingStats":
        return RoutingStats(self.n_tasks, self.n_experts, self.k, self.counts.copy(), self.mass.copy(),
                            self.tokens.copy())

    def mean_gates(self, task: int) -> np.ndarray:
        if self.tokens[task] == 0:
            raise ContractError(f"no routed tokens recorded for task {task}")
        return self.mass[task] / self.tokens[task]

    def __add__(self, other: "RoutingStats") -> "RoutingStats":
        return RoutingStats(self.n_tasks, self.n_experts, self.k, self.counts + other.counts,
                            self.mass + other.mass, self.tokens + other.tokens)

    def to_dict(self) -> dict:
        return {"n_tasks": self.n_tasks, "n_experts": self.n_experts, "k": self.k,
                "counts": self.counts.tolist(), "mass": self.mass.tolist(), "tokens": self.tokens.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RoutingStats":
        return cls(d["n_tasks"], d["n_experts"], d["k"], np.asarray(d["counts"], dtype=np.int64),
                   np.asarray(d["mass"], dtype=np.float64), np.asarray(d["tokens"], dtype=np.int64))


def record_routing(stats: RoutingStats, task, P, G) -> RoutingStats:
    """Accumulate one token (or a batch of tokens) into ``stats`` in place.

    For a batch, ``task`` is a vector of ids, ``P`` a boolean mask and ``G``
    a gate matrix, one row per token.
    """
    task_arr = np.atleast_1d(np.asarray(task, dtype=np.int64))
    if np.any(task_arr < 0) or np.any(task_arr >= stats.n_tasks):
        raise ContractError(f"unknown task id in {task_arr.tolist()} (have {stats.n_tasks} tasks)")
    G = np.asarray(G, dtype=np.float64)
    P = np.asarray(P)
    if G.ndim == 1:
        mask = np.zeros(stats.n_experts, dtype=bool)
        if P.dtype == bool:
            mask = P
        else:
            mask[P.astype(np.intp)] = True
        np.add.at(stats.counts, task_arr[0], mask.astype(np.int64))
        stats.mass[task_arr[0]] += G
        stats.tokens[task_arr[0]] += 1
        return stats
    np.add.at(stats.counts, task_arr, P.astype(np.int64))
    np.add.at(stats.mass, task_arr, G)
    np.add.at(stats.tokens, task_arr, 1)
    return stats


def routing_report(stats: RoutingStats) -> list[tuple[int, int, int, float]]:
    """Rows ``(task, expert, count, fraction)`` with fraction = count / (tokens * k)."""
    rows = []
    for t in range(stats.n_tasks):
        if stats.tokens[t] == 0:
            continue
        denom = stats.tokens[t] * stats.k
        for e in range(stats.n_experts):
            c = int(stats.counts[t, e])
            rows.append((t, e, c, c / denom))
    return rows


def report_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "expert", "count", "fraction"])
    for t, e, c, f in rows:
        w.writerow([t, e, c, repr(float(f))])
    return buf.getvalue()
