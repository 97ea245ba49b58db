"""Optimisation and loop settings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from cabkws.errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    pretrain_steps: int = 1000
    finetune_steps: int = 2000
    seed: int = 0
    eval_every: int = 100
    grad_clip_norm: float = 5.0
    # add finetune_dual * L_dual (classifier-column anchors) to the CE loss
    finetune_dual: float = 0.0
    # update only the bottleneck and projection layers while fine-tuning
    freeze: bool = False
    # adds a wall-clock "ms" field to each metrics line (files then differ run to run)
    log_wall_clock: bool = False
    eval_batch_size: int = 200

    def __post_init__(self):
        if self.pretrain_steps < 0 or self.finetune_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eval_every < 1 or self.eval_batch_size < 1:
            raise ConfigError("eval_every and eval_batch_size must be >= 1")
        if self.finetune_dual < 0:
            raise ConfigError("finetune_dual must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)
