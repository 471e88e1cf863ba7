"""Synthetic multi-task data and balanced task sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TaskSpec
from .errors import ContractError, ParameterError


@dataclass
class TaskData:
    task: int
    family: int
    tokens: np.ndarray  # (n, seq_len) int, column 0 is the task prefix token
    labels: np.ndarray  # (n,) int
    eval_tokens: np.ndarray
    eval_labels: np.ndarray
    readout: np.ndarray  # (n_classes, d_model) labelling functional
    center: np.ndarray  # mean content embedding subtracted before the readout

    def __len__(self):
        return self.tokens.shape[0]


def _family_token_probs(n_families, n_content, rng):
    # each family favours its own content tokens: a distinct input "format"
    probs = []
    for _ in range(n_families):
        w = rng.gamma(0.3, size=n_content) + 1e-3
        probs.append(w / w.sum())
    return probs


def make_tasks(specs: list[TaskSpec], seed, embedding: np.ndarray, seq_len: int,
               label_noise: float = 0.0, transform_noise: float = 0.05) -> list[TaskData]:
    """Deterministic labelled datasets, one per task spec.

    Row ``i`` of task ``t`` is ``[t, c_1, ..., c_{L-1}]`` with content tokens
    drawn from the family's token distribution. Its label is
    ``argmax(U_t (m - m0) + noise)`` where ``m`` is the mean frozen embedding
    of the content tokens, ``U_t`` a rank-``rho_t`` map shared by the family
    (perturbed by ``transform_noise`` per task) and ``noise`` uniform in
    ``[-label_noise, label_noise]``.
    """
    if not specs:
        raise ParameterError("at least one task spec is required")
    if any(s.n_classes < 2 for s in specs):
        raise ParameterError("each task needs at least 2 classes")
    embedding = np.asarray(embedding, dtype=np.float64)
    vocab, d = embedding.shape
    n_tasks = len(specs)
    content = np.arange(n_tasks, vocab)
    rng = np.random.default_rng(seed)
    families = sorted({s.family for s in specs})
    fam_probs = dict(zip(families, _family_token_probs(len(families), content.size, rng)))

    fam_maps = {}
    for fam in families:
        members = [s for s in specs if s.family == fam]
        c, rank = members[0].n_classes, members[0].rank
        if any((m.n_classes, m.rank) != (c, rank) for m in members):
            raise ParameterError(f"tasks of family {fam} must share rank and class count")
        fam_maps[fam] = rng.normal(size=(c, rank)) @ rng.normal(size=(rank, d)) / np.sqrt(rank * d)

    out = []
    for t, spec in enumerate(specs):
        base = fam_maps[spec.family]
        readout = base + transform_noise * rng.normal(size=base.shape) / np.sqrt(d) if transform_noise else base.copy()
        n_total = spec.n_train + spec.n_eval
        body = rng.choice(content, size=(n_total, seq_len - 1), p=fam_probs[spec.family])
        toks = np.concatenate([np.full((n_total, 1), t), body], axis=1).astype(np.int64)
        means = embedding[body].mean(axis=1)
        center = means[: spec.n_train].mean(axis=0)
        scores = (means - center) @ readout.T
        if label_noise:
            scores = scores + rng.uniform(-label_noise, label_noise, size=scores.shape)
        labels = scores.argmax(axis=1).astype(np.int64)
        out.append(TaskData(task=t, family=spec.family, tokens=toks[: spec.n_train], labels=labels[: spec.n_train],
                            eval_tokens=toks[spec.n_train:], eval_labels=labels[spec.n_train:],
                            readout=readout, center=center))
    return out


def balanced_sample(datasets: list[TaskData], rng: np.random.Generator, batch_size: int,
                    mode: str = "random", offset: int = 0):
    """Draw a batch whose task of every row is uniform over tasks.

    ``mode="random"`` picks each row's task with probability 1/T and then a
    sample uniformly with replacement; ``mode="round_robin"`` cycles the
    tasks deterministically starting at ``offset``.
    Returns ``(tokens, labels, task_ids)``.
    """
    if not datasets:
        raise ContractError("no datasets to sample from")
    for d in datasets:
        if len(d) == 0:
            raise ContractError(f"dataset for task {d.task} is empty")
    n_tasks = len(datasets)
    if mode == "random":
        tasks = rng.integers(0, n_tasks, size=batch_size)
    elif mode == "round_robin":
        tasks = (offset + np.arange(batch_size)) % n_tasks
    else:
        raise ParameterError(f"unknown sampling mode {mode!r}")
    rows = np.array([rng.integers(0, len(datasets[t])) for t in tasks], dtype=np.int64)
    tokens = np.stack([datasets[t].tokens[i] for t, i in zip(tasks, rows)])
    labels = np.array([datasets[t].labels[i] for t, i in zip(tasks, rows)], dtype=np.int64)
    return tokens, labels, tasks.astype(np.int64)
