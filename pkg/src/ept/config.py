"""Run configuration: one JSON document, defaults echoed into checkpoints."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ParameterError

TARGET_MODULES = ("q", "k", "v", "o", "up", "down")


@dataclass
class TaskSpec:
    """One synthetic task: inputs come from the family's token distribution and
    labels from a rank-``rank`` linear readout of the mean content embedding."""
    family: int
    rank: int
    n_classes: int = 4
    n_train: int = 256
    n_eval: int = 64


def _default_tasks():
    # two families (low-rank readout, full-rank readout), two tasks each
    return [TaskSpec(family=0, rank=1), TaskSpec(family=0, rank=1),
            TaskSpec(family=1, rank=4), TaskSpec(family=1, rank=4)]


@dataclass
class Config:
    # optimisation
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 5
    max_steps: int | None = None
    warmup_steps: int = 500
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    # adapter
    lora_rank: int = 8
    lora_alpha: float = 32.0  # recorded only; no alpha/r rescaling is applied
    target_modules: list = field(default_factory=lambda: list(TARGET_MODULES))
    top_k: int = 2
    expert_kernel_sizes: list = field(default_factory=lambda: [1, 2, 4, 8])
    scaling_mode: str = "slice_height_over_T"
    tau_gate: float = 1.0
    subspace_std: float = 0.02
    router_init_std: float = 0.0
    router_conditioning: str = "token_only"
    share_subspace: bool = False
    # ablation switches
    ab_init: bool = True
    alp: bool = True
    dense_gating: bool = False
    # task space
    lambda_con: float = 0.1
    tau_con: float = 0.05
    d_e: int | None = None
    pool_pre_adapter: bool = False
    # toy backbone and data
    vocab_size: int = 64
    max_seq_len: int = 16
    d_model: int = 32
    n_blocks: int = 2
    d_ff: int = 64
    train_head: bool = False
    label_noise: float = 0.0
    transform_noise: float = 0.05
    tasks: list = field(default_factory=_default_tasks)
    balanced_mode: str = "random"
    seed: int = 0
    log_every_epoch: bool = True

    def __post_init__(self):
        try:
            self.tasks = [t if isinstance(t, TaskSpec) else TaskSpec(**t) for t in self.tasks]
        except TypeError as exc:
            raise ParameterError(f"bad task entry: {exc}") from exc
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_experts(self) -> int:
        return len(self.expert_kernel_sizes)

    @property
    def effective_k(self) -> int:
        return self.n_experts if self.dense_gating else self.top_k

    @property
    def effective_scaling(self) -> str:
        return self.scaling_mode if self.alp else "none"

    @property
    def task_dim(self) -> int:
        return self.d_e or self.d_model

    def validate(self):
        if not self.tasks:
            raise ParameterError("at least one task is required")
        for name in ("batch_size", "epochs", "lora_rank", "top_k", "vocab_size", "max_seq_len", "d_model",
                     "n_blocks", "d_ff"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.warmup_steps < 0:
            raise ParameterError("warmup_steps must be >= 0")
        if not self.expert_kernel_sizes or any(int(s) < 1 for s in self.expert_kernel_sizes):
            raise ParameterError(f"invalid expert_kernel_sizes {self.expert_kernel_sizes}")
        if not 1 <= self.top_k <= self.n_experts:
            raise ParameterError(f"top_k={self.top_k} must lie in [1, {self.n_experts}]")
        bad = set(self.target_modules) - set(TARGET_MODULES)
        if bad:
            raise ParameterError(f"unknown target modules {sorted(bad)}")
        if self.lambda_con < 0:
            raise ParameterError("lambda_con must be >= 0")
        if self.tau_con <= 0 or self.tau_gate <= 0:
            raise ParameterError("temperatures must be positive")
        if self.max_seq_len < 2:
            raise ParameterError("max_seq_len must leave room for the task prefix token")
        if self.vocab_size <= self.n_tasks + 1:
            raise ParameterError("vocab_size must exceed the number of task prefix tokens")
        if self.scaling_mode not in ("slice_height_over_T", "kernel_over_T", "none"):
            raise ParameterError(f"unknown scaling_mode {self.scaling_mode!r}")
        if self.router_conditioning not in ("token_only", "token_plus_task"):
            raise ParameterError(f"unknown router_conditioning {self.router_conditioning!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ParameterError("max_steps must be >= 0")
        if self.balanced_mode not in ("random", "round_robin"):
            raise ParameterError(f"unknown balanced_mode {self.balanced_mode!r}")
        for t in self.tasks:
            if t.n_classes < 2:
                raise ParameterError("each task needs at least 2 classes")
            if t.rank < 1 or t.n_train < 1 or t.n_eval < 1:
                raise ParameterError(f"invalid task spec {t}")
        if len({t.n_classes for t in self.tasks}) != 1:
            raise ParameterError("all tasks share one output head, so n_classes must agree")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "Config":
        d = self.to_dict()
        d.update(changes)
        return Config.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def load_config(path) -> Config:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config {path} is not valid JSON: {exc}") from exc
    return Config.from_dict(data)


def toy_config(**overrides) -> Config:
    """Desk-scale preset: short schedule with a larger peak rate."""
    base = dict(learning_rate=1e-2, warmup_steps=30, max_steps=300)
    base.update(overrides)
    return Config(**base)


def reference_config(**overrides) -> Config:
    """Full-size pyramid and sequence length on the toy backbone."""
    base = dict(expert_kernel_sizes=[2, 2, 4, 4, 6, 6, 8, 8], max_seq_len=128)
    base.update(overrides)
    return Config(**base)
