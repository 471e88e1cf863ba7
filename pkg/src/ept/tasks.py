"""Task prototypes and the prototype-contrastive objective."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, ParameterError
from .numeric import (Tensor, as_tensor, concat_rows, l2_normalize, log_softmax, matmul, mean, neg, pca2d, pick,
                      reshape, scale, sum_all, transpose, mul)


@dataclass
class TaskEmbeddingTable:
    E: Tensor  # (n_tasks, d_e)
    tau_c: float = 0.05

    def __post_init__(self):
        if self.E.ndim != 2 or min(self.E.shape) < 1:
            raise ParameterError(f"task table must be T x d_e with T, d_e >= 1, got {self.E.shape}")
        if not self.tau_c > 0:
            raise ParameterError(f"contrastive temperature must be positive, got {self.tau_c}")

    @property
    def n_tasks(self) -> int:
        return self.E.shape[0]


@dataclass
class PooledFeature:
    f: np.ndarray
    task: int


def init_task_table(n_tasks: int, d_e: int, tau_c: float = 0.05, rng=None) -> TaskEmbeddingTable:
    rng = np.random.default_rng(rng)
    e = rng.normal(0.0, 1.0 / np.sqrt(d_e), size=(n_tasks, d_e))
    return TaskEmbeddingTable(E=Tensor(e, requires_grad=True, name="E"), tau_c=tau_c)


def pool_features(hidden, proj=None) -> Tensor:
    """Mean over sequence positions, then an optional ``d_model -> d_e`` map.

    ``hidden`` is ``(seq_len, d_model)`` or batched ``(batch, seq_len, d_model)``.
    """
    hidden = as_tensor(hidden)
    if hidden.ndim < 2 or hidden.shape[-2] < 1:
        raise ContractError(f"cannot pool an empty sequence (shape {hidden.shape})")
    pooled = mean(hidden, axis=-2)
    if proj is not None:
        single = pooled.ndim == 1
        rows = reshape(pooled, (1, pooled.shape[0])) if single else pooled
        pooled = matmul(rows, transpose(proj))
        if single:
            pooled = reshape(pooled, (pooled.shape[-1],))
    return pooled


def similarity(f, e) -> Tensor:
    """Cosine similarity of two vectors."""
    f, e = as_tensor(f), as_tensor(e)
    if not np.any(f.data) or not np.any(e.data):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return sum_all(mul(l2_normalize(f), l2_normalize(e)))


def similarity_matrix(feats, E) -> Tensor:
    """Cosine similarity between every feature row and every prototype row."""
    return matmul(l2_normalize(feats), transpose(l2_normalize(E)))


def contrastive_loss(feats, tasks, table: TaskEmbeddingTable) -> Tensor:
    """Mean over the batch of ``-log softmax_k(cos(f_i, e_k) / tau)[t_i]``.

    ``feats`` is an ``(M, d_e)`` array/tensor with ``tasks`` giving each row's
    task, or a list of :class:`PooledFeature` (then ``tasks`` may be None).
    """
    if isinstance(feats, (list, tuple)) and feats and isinstance(feats[0], PooledFeature):
        tasks = [p.task for p in feats]
        feats = concat_rows([reshape(as_tensor(p.f), (1, -1)) for p in feats])
    feats = as_tensor(feats)
    tasks = np.asarray(tasks, dtype=np.int64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ContractError(f"contrastive loss needs a non-empty (M, d_e) batch, got {feats.shape}")
    if tasks.shape != (feats.shape[0],):
        raise ContractError("one task id per feature row is required")
    if np.any(tasks < 0) or np.any(tasks >= table.n_tasks):
        raise ContractError(f"task ids must lie in [0, {table.n_tasks})")
    return loss_from_similarities(similarity_matrix(feats, table.E), tasks, table.tau_c)


def loss_from_similarities(S, tasks, tau_c: float) -> Tensor:
    """``-mean_i log softmax(S_i / tau_c)[t_i]`` for a precomputed similarity matrix."""
    S = as_tensor(S)
    if not tau_c > 0:
        raise ParameterError(f"tau_c must be positive, got {tau_c}")
    return neg(mean(pick(log_softmax(scale(S, 1.0 / tau_c)), np.asarray(tasks, dtype=np.int64))))


def embedding_export(table: TaskEmbeddingTable):
    """Raw prototype rows plus their 2-D PCA coordinates (``None`` when T < 3)."""
    E = np.asarray(table.E.data)
    raw = [(t, *map(float, E[t])) for t in range(E.shape[0])]
    if E.shape[0] < 3:
        return raw, None
    coords = pca2d(E)
    return raw, [(t, float(coords[t, 0]), float(coords[t, 1])) for t in range(E.shape[0])]


def embeddings_to_csv(raw) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d_e = len(raw[0]) - 1 if raw else 0
    w.writerow(["task"] + [f"dim_{j}" for j in range(d_e)])
    for row in raw:
        w.writerow([row[0]] + [repr(v) for v in row[1:]])
    return buf.getvalue()


def pca_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "pc1", "pc2"])
    for t, a, b in rows:
        w.writerow([t, repr(a), repr(b)])
    return buf.getvalue()
