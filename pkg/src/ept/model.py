"""A tiny frozen transformer whose linear sub-layers carry pyramid adapters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adapter import EptLayer, adapter_forward, build_layer, expert_weights, trainable_parameters
from .config import Config
from .numeric import (Tensor, add, layer_norm, matmul, mean, relu, reshape, scale, softmax_temp, take,
                      transpose)
from .router import RoutingStats
from .subspace import init_subspace
from .experts import target_slice_dims
from .tasks import TaskEmbeddingTable, init_task_table

SUBLAYERS = ("q", "k", "v", "o", "up", "down")


@dataclass
class ToyBackbone:
    config: Config
    frozen: dict[str, Tensor]  # embedding, per-block projections, head
    adapters: dict[str, EptLayer]  # keyed "blocks.{b}.{sublayer}"
    table: TaskEmbeddingTable
    pool_proj: Tensor | None = None

    def sublayer_shape(self, name: str) -> tuple[int, int]:
        return self.frozen[name].shape

    def trainable(self) -> dict[str, Tensor]:
        """Every trainable tensor exactly once, under a stable name."""
        out: dict[str, Tensor] = {}
        seen: set[int] = set()
        for lname, layer in self.adapters.items():
            for pname, p in trainable_parameters(layer).items():
                if id(p) in seen:
                    continue
                seen.add(id(p))
                key = f"shared.{pname}" if self.config.share_subspace and pname in ("B", "A") else f"{lname}.{pname}"
                out[key] = p
        out["task.E"] = self.table.E
        if self.pool_proj is not None:
            out["task.pool_proj"] = self.pool_proj
        if self.config.train_head:
            out["head"] = self.frozen["head"]
        return out

    def frozen_tensors(self) -> dict[str, Tensor]:
        out = {k: v for k, v in self.frozen.items() if not (k == "head" and self.config.train_head)}
        for lname, layer in self.adapters.items():
            out[f"{lname}.W0"] = layer.W0
        return out


def build_model(config: Config, seed=None) -> ToyBackbone:
    """Random frozen backbone plus freshly initialised adapters and task table."""
    seed = config.seed if seed is None else seed
    root = np.random.SeedSequence(seed)
    bb_seq, ad_seq, task_seq = root.spawn(3)
    rng = np.random.default_rng(bb_seq)
    d, ff, c = config.d_model, config.d_ff, config.tasks[0].n_classes
    frozen = {"embed": Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, d)))}
    shapes = {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "up": (ff, d), "down": (d, ff)}
    for b in range(config.n_blocks):
        for s in SUBLAYERS:
            d_out, d_in = shapes[s]
            frozen[f"blocks.{b}.{s}"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_out, d_in)))
    frozen["head"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(c, d)),
                            requires_grad=config.train_head, name="head")

    ad_rng = np.random.default_rng(ad_seq)
    scales = [int(s) for s in config.expert_kernel_sizes]
    shared = None
    if config.share_subspace:
        dims = [shapes[s] for s in config.target_modules]
        h_max = max(target_slice_dims(o, i, min(scales))[0] for o, i in dims)
        w_max = max(target_slice_dims(o, i, min(scales))[1] for o, i in dims)
        shared = init_subspace(h_max, w_max, config.lora_rank, config.subspace_std, ad_rng, ab_init=config.ab_init)
    adapters = {}
    for b in range(config.n_blocks):
        for s in SUBLAYERS:
            if s not in config.target_modules:
                continue
            name = f"blocks.{b}.{s}"
            layer = build_layer(
                frozen.pop(name).data, scales, config.n_tasks, rank=config.lora_rank, k=config.effective_k,
                tau_g=config.tau_gate, scaling_mode=config.effective_scaling, gaussian_std=config.subspace_std,
                ab_init=config.ab_init, full_slice=not config.alp, conditioning=config.router_conditioning,
                d_e=config.task_dim, router_init_std=config.router_init_std, subspace=shared, rng=ad_rng)
            adapters[name] = layer
    task_rng = np.random.default_rng(task_seq)
    table = init_task_table(config.n_tasks, config.task_dim, config.tau_con, task_rng)
    pool_proj = None
    if config.task_dim != d:
        pool_proj = Tensor(task_rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.task_dim, d)),
                           requires_grad=True, name="pool_proj")
    return ToyBackbone(config=config, frozen=frozen, adapters=adapters, table=table, pool_proj=pool_proj)


@dataclass
class ForwardResult:
    logits: Tensor  # (batch, n_classes)
    hidden: Tensor  # (batch, seq, d_model), final layer
    pooled: Tensor  # (batch, d_model)
    decisions: dict = field(default_factory=dict)


def backbone_forward(model: ToyBackbone, tokens, tasks, *, adapters: bool = True, stats=None, gates=None,
                     weights=None, dense: dict | None = None) -> ForwardResult:
    """Pre-norm transformer forward over a batch of token sequences.

    Adapted sub-layers route through :func:`adapter_forward` unless
    ``adapters`` is False (the frozen network). ``stats`` maps layer name to
    :class:`RoutingStats`; ``gates`` maps layer name to a pinned gate vector;
    ``dense`` maps layer name to a replacement dense weight (merged export).
    """
    cfg = model.config
    tokens = np.asarray(tokens, dtype=np.int64)
    tasks = np.asarray(tasks, dtype=np.int64)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be (batch, seq), got {tokens.shape}")
    if np.any(tokens < 0) or np.any(tokens >= cfg.vocab_size):
        raise IndexError("token id out of vocabulary range")
    batch, seq = tokens.shape
    d = cfg.d_model
    if weights is None and adapters and dense is None:
        weights = {name: expert_weights(layer) for name, layer in model.adapters.items()}
    token_tasks = np.repeat(tasks, seq)
    e_rows = None
    if adapters and cfg.router_conditioning == "token_plus_task":
        e_rows = take(model.table.E, token_tasks, axis=0)
    decisions = {}

    def linear(name, x):
        width = x.shape[-1]
        flat = reshape(x, (batch * seq, width))
        if dense is not None and name in dense:
            out = matmul(flat, transpose(Tensor(dense[name])))
        elif name in model.adapters and adapters:
            layer = model.adapters[name]
            out, dec = adapter_forward(layer, flat, token_tasks, e_t=e_rows, weights=weights[name],
                                       gates=None if gates is None else gates.get(name),
                                       stats=None if stats is None else stats[name])
            decisions[name] = dec
        elif name in model.adapters:
            out = matmul(flat, transpose(model.adapters[name].W0))
        else:
            out = matmul(flat, transpose(model.frozen[name]))
        return reshape(out, (batch, seq, out.shape[-1]))

    h = take(model.frozen["embed"], tokens, axis=0)
    inv_sqrt_d = 1.0 / math.sqrt(d)
    for b in range(cfg.n_blocks):
        a = layer_norm(h)
        q = linear(f"blocks.{b}.q", a)
        k = linear(f"blocks.{b}.k", a)
        v = linear(f"blocks.{b}.v", a)
        att = softmax_temp(scale(matmul(q, transpose(k)), inv_sqrt_d))
        h = add(h, linear(f"blocks.{b}.o", matmul(att, v)))
        f = layer_norm(h)
        h = add(h, linear(f"blocks.{b}.down", relu(linear(f"blocks.{b}.up", f))))
    hidden = layer_norm(h)
    pooled = mean(hidden, axis=1)
    logits = matmul(pooled, transpose(model.frozen["head"]))
    return ForwardResult(logits=logits, hidden=hidden, pooled=pooled, decisions=decisions)


def new_stats(model: ToyBackbone) -> dict[str, RoutingStats]:
    cfg = model.config
    return {name: RoutingStats(cfg.n_tasks, cfg.n_experts, cfg.effective_k) for name in model.adapters}
