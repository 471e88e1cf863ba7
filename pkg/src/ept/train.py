"""Joint-objective training loop, evaluation, ablations and the gradient-check suite."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import Config, TaskSpec
from .data import TaskData, balanced_sample, make_tasks
from .errors import NumericError, ParameterError, TrainingError
from .model import ToyBackbone, backbone_forward, build_model, new_stats
from .numeric import GradTape, Tensor, add, backward, cross_entropy, finite_diff_check, mean, scale
from .optim import OptimizerState, Schedule, optimizer_step
from .router import RoutingStats
from .tasks import contrastive_loss, pool_features

ABLATION_TOGGLES = ("ab_init", "top_k", "alp")


def generation_loss(logits, targets) -> Tensor:
    """Mean single-token cross-entropy over the batch."""
    return mean(cross_entropy(logits, targets))


def total_loss(l_gen, l_con, lam: float):
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    if isinstance(l_gen, Tensor) or isinstance(l_con, Tensor):
        return add(l_gen, scale(l_con, lam))
    return l_gen + lam * l_con


@dataclass
class TrainState:
    config: Config
    model: ToyBackbone
    datasets: list[TaskData]
    optimizer: OptimizerState
    rng: np.random.Generator
    stats: dict[str, RoutingStats]
    step: int = 0
    log: list[dict] = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        return self.optimizer.schedule.total

    def routing_totals(self) -> RoutingStats:
        it = iter(self.stats.values())
        acc = next(it).copy()
        for s in it:
            acc = acc + s
        return acc

    def log_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def steps_per_epoch(config: Config) -> int:
    n = sum(t.n_train for t in config.tasks)
    return max(1, math.ceil(n / config.batch_size))


def planned_steps(config: Config) -> int:
    if config.max_steps is not None:
        return int(config.max_steps)
    return config.epochs * steps_per_epoch(config)


def init_state(config: Config) -> TrainState:
    model = build_model(config)
    data_seed, sample_seed = np.random.SeedSequence([config.seed, 1]).spawn(2)
    datasets = make_tasks(config.tasks, np.random.default_rng(data_seed), model.frozen["embed"].data,
                          config.max_seq_len, config.label_noise, config.transform_noise)
    total = planned_steps(config)
    sched = Schedule(peak=config.learning_rate, warmup=min(config.warmup_steps, total), total=max(total, 1))
    opt = OptimizerState(schedule=sched, weight_decay=config.weight_decay, beta1=config.adam_betas[0],
                         beta2=config.adam_betas[1], eps=config.adam_eps)
    return TrainState(config=config, model=model, datasets=datasets, optimizer=opt,
                      rng=np.random.default_rng(sample_seed), stats=new_stats(model))


def compute_losses(model: ToyBackbone, tokens, labels, tasks, stats=None, gates=None):
    """Forward the batch and return ``(l_total, l_gen, l_con, forward_result)``."""
    cfg = model.config
    res = backbone_forward(model, tokens, tasks, stats=stats, gates=gates)
    l_gen = generation_loss(res.logits, labels)
    if cfg.pool_pre_adapter:
        hidden = backbone_forward(model, tokens, tasks, adapters=False).hidden
    else:
        hidden = res.hidden
    feats = pool_features(hidden, model.pool_proj)
    l_con = contrastive_loss(feats, tasks, model.table)
    return total_loss(l_gen, l_con, cfg.lambda_con), l_gen, l_con, res


def evaluate(model: ToyBackbone, datasets: list[TaskData]) -> dict[int, float]:
    """Held-out accuracy per task."""
    acc = {}
    for d in datasets:
        tasks = np.full(d.eval_tokens.shape[0], d.task)
        logits = backbone_forward(model, d.eval_tokens, tasks).logits.data
        acc[d.task] = float(np.mean(logits.argmax(axis=1) == d.eval_labels))
    return acc


def _param_norms(params):
    return {k: float(np.linalg.norm(p.data)) for k, p in params.items()}


def train_loop(config: Config | None = None, state: TrainState | None = None, until: int | None = None,
               progress=None) -> TrainState:
    """Run (or resume) training up to step ``until`` (default: the planned total).

    Each step draws a balanced batch, regenerates every expert weight from
    the current subspace and kernels, computes ``L_gen + lambda * L_con``,
    backpropagates and applies one AdamW update. The log gets one record per
    step and, at each epoch boundary, one accuracy record per task.
    """
    if state is None:
        if config is None:
            raise ParameterError("train_loop needs a config or a state")
        state = init_state(config)
    cfg = state.config
    until = state.total_steps if until is None else until
    if until > state.total_steps and planned_steps(cfg) > 0:
        raise ParameterError(f"until={until} exceeds planned total {state.total_steps}")
    if planned_steps(cfg) == 0:
        return state
    params = state.model.trainable()
    tape = GradTape(params)
    per_epoch = steps_per_epoch(cfg)
    while state.step < until:
        tokens, labels, tasks = balanced_sample(state.datasets, state.rng, cfg.batch_size,
                                                cfg.balanced_mode, offset=state.step * cfg.batch_size)
        try:
            l_total, l_gen, l_con, _ = compute_losses(state.model, tokens, labels, tasks, stats=state.stats)
        except NumericError as exc:
            raise TrainingError(f"numeric failure at step {state.step}: {exc}", step=state.step,
                                norms=_param_norms(params)) from exc
        value = float(l_total.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at step {state.step}", step=state.step,
                                norms=_param_norms(params))
        grads = backward(tape, l_total)
        lr = optimizer_step(params, grads, state.optimizer)
        state.log.append({"step": state.step, "lr": lr, "l_gen": float(l_gen.data), "l_con": float(l_con.data),
                          "l_total": value})
        state.step += 1
        if cfg.log_every_epoch and state.step % per_epoch == 0:
            epoch = state.step // per_epoch
            for task, a in evaluate(state.model, state.datasets).items():
                state.log.append({"step": state.step, "epoch": epoch, "task": task, "accuracy": a})
        if progress is not None:
            progress(state)
    return state


def step_records(log: list[dict]) -> list[dict]:
    return [r for r in log if "l_total" in r]


def smoothed_loss(log: list[dict], window: int = 20) -> tuple[float, float]:
    """``(initial, final)`` where final is the trailing ``window``-step mean of ``l_total``."""
    vals = [r["l_total"] for r in step_records(log)]
    return vals[0], float(np.mean(vals[-window:]))


# ------------------------------------------------------------------ ablation


def ablation_config(base: Config, off: tuple[str, ...]) -> Config:
    changes = {}
    for t in off:
        if t == "ab_init":
            changes["ab_init"] = False
        elif t == "top_k":
            changes["dense_gating"] = True
        elif t == "alp":
            changes["alp"] = False
        else:
            raise ParameterError(f"unknown ablation toggle {t!r}; choose from {ABLATION_TOGGLES}")
    return base.replace(**changes) if changes else base


def run_ablation(base: Config, toggles=ABLATION_TOGGLES, runner=train_loop) -> list[dict]:
    """Train the full model and each requested component switched off.

    Rows cover: all on, every single toggle off, and (with more than one
    toggle) all requested toggles off together.
    """
    toggles = tuple(toggles)
    for t in toggles:
        if t not in ABLATION_TOGGLES:
            raise ParameterError(f"unknown ablation toggle {t!r}; choose from {ABLATION_TOGGLES}")
    combos = [()] + [(t,) for t in toggles]
    if len(toggles) > 1:
        combos.append(toggles)
    rows = []
    for off in combos:
        cfg = ablation_config(base, off)
        state = runner(cfg)
        initial, final = smoothed_loss(state.log) if step_records(state.log) else (float("nan"), float("nan"))
        acc = evaluate(state.model, state.datasets)
        row = {name: name not in off for name in ABLATION_TOGGLES}
        row.update({"final_loss": final, "initial_loss": initial,
                    "mean_accuracy": float(np.mean(list(acc.values()))),
                    "accuracy": {str(k): v for k, v in acc.items()}, "log": state.log_lines()})
        rows.append(row)
    return rows


# --------------------------------------------------------- gradient checking


def mini_config(**overrides) -> Config:
    """The miniature end-to-end setting: d_model 4, one block, two experts, two tasks."""
    base = dict(vocab_size=8, max_seq_len=3, d_model=4, n_blocks=1, d_ff=8, lora_rank=2,
                expert_kernel_sizes=[1, 2], top_k=2, batch_size=2, max_steps=1, warmup_steps=0,
                tasks=[TaskSpec(family=0, rank=1, n_classes=2, n_train=4, n_eval=2),
                       TaskSpec(family=1, rank=2, n_classes=2, n_train=4, n_eval=2)])
    base.update(overrides)
    return Config(**base)


def perturb_adapters(model: ToyBackbone, rng, std: float = 0.5):
    """Redraw every adapter tensor at O(1) scale so all paths carry gradient.

    At the zero-kernel start most gradients are exactly zero, and tiny ones
    sit below the central-difference noise floor.
    """
    for name, p in model.trainable().items():
        if not name.startswith("task."):
            p.data[...] = rng.normal(0.0, std, size=p.shape)


def gradcheck_suite(config: Config | None = None, seed: int = 0, h: float = 1e-6) -> dict:
    """Central-difference check of ``L_total`` against the tape on a tiny model.

    Returns ``{"max_rel_err": ..., "per_tensor": {...}}``.
    """
    cfg = config or mini_config()
    state = init_state(cfg)
    model = state.model
    rng = np.random.default_rng(seed)
    perturb_adapters(model, rng)
    tokens, labels, tasks = balanced_sample(state.datasets, rng, cfg.batch_size, "round_robin")
    params = model.trainable()

    def f():
        return float(compute_losses(model, tokens, labels, tasks)[0].data)

    loss = compute_losses(model, tokens, labels, tasks)[0]
    grads = backward(params, loss)
    per = {name: finite_diff_check(f, {name: p}, {name: grads[name]}, h) for name, p in params.items()}
    return {"max_rel_err": max(per.values()), "per_tensor": per}
