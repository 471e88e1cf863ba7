"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError


@dataclass
class Schedule:
    peak: float = 3e-4
    warmup: int = 500
    total: int = 1000


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear ramp 0 -> peak over ``warmup`` steps, then linear decay to 0 at ``total``."""
    if step < 0 or step > schedule.total:
        raise ParameterError(f"step {step} outside [0, {schedule.total}]")
    if schedule.warmup > 0 and step < schedule.warmup:
        return schedule.peak * step / schedule.warmup
    if schedule.total == schedule.warmup:
        return schedule.peak
    return schedule.peak * (schedule.total - step) / (schedule.total - schedule.warmup)


@dataclass
class OptimizerState:
    schedule: Schedule
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> float:
    """One AdamW update in place; returns the learning rate used.

    The decay is decoupled: ``theta <- theta * (1 - lr * wd)`` before the
    Adam move. Parameters are visited in sorted-name order.
    """
    lr = lr_at(min(state.step, state.schedule.total), state.schedule)
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.data.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter is {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step = t
    return lr
