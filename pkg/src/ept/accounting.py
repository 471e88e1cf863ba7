"""Exact per-layer trainable-parameter counts for EPT and two low-rank baselines."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParameterError
from .experts import expert_param_count


@dataclass
class ParamBreakdown:
    categories: dict  # counted in the headline total
    addenda: dict  # reported separately (router, task embeddings)
    baselines: dict

    @property
    def total(self) -> int:
        return sum(self.categories.values())

    def to_dict(self) -> dict:
        return {"categories": dict(self.categories), "total": self.total, "addenda": dict(self.addenda),
                "baselines": dict(self.baselines)}

    def table(self) -> str:
        lines = [f"{'component':<28}{'params':>12}"]
        for k, v in self.categories.items():
            lines.append(f"{'ept.' + k:<28}{v:>12,}")
        lines.append(f"{'ept.total':<28}{self.total:>12,}")
        for k, v in self.addenda.items():
            lines.append(f"{'addendum.' + k:<28}{v:>12,}")
        for k, v in self.baselines.items():
            lines.append(f"{'baseline.' + k:<28}{v:>12,}")
        return "\n".join(lines)


def count_params(d: int, r: int, n_experts: int, scales, d_sub: int, n_tasks: int = 0,
                 d_e: int | None = None) -> ParamBreakdown:
    """Per-layer counts for a square ``d x d`` adapted weight.

    EPT: subspace ``2 * d_sub * r`` plus kernels ``sum s_i^2``. Baselines:
    independent experts ``N * 2 * d * r`` and one shared pair ``2 * d * r``.
    The router (``N * d``) and task table (``T * d_e``) are addenda, not part
    of the headline total.
    """
    scales = [int(s) for s in scales]
    for name, v in (("d", d), ("r", r), ("n_experts", n_experts), ("d_sub", d_sub)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    if not scales or any(s < 1 for s in scales):
        raise ParameterError(f"invalid scales {scales}")
    if len(scales) != n_experts:
        raise ParameterError(f"{len(scales)} scales given for {n_experts} experts")
    if d_sub > d:
        raise ParameterError(f"d_sub={d_sub} exceeds d={d}")
    categories = {"subspace": 2 * d_sub * r, "kernels": expert_param_count(scales)}
    addenda = {"router": n_experts * d}
    if n_tasks:
        addenda["task_embeddings"] = n_tasks * (d_e or d)
    baselines = {"moe_lora": n_experts * (d * r + r * d), "shared_lora": d * r + r * d}
    return ParamBreakdown(categories=categories, addenda=addenda, baselines=baselines)
