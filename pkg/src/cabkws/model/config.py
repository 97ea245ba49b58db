"""Network hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from cabkws.errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Every size and weight that defines the network and its pretraining loss.

    Defaults give the 98x40 -> 25x10x32 -> 13x320 -> 640 -> 800 -> 12 network
    with a 40-dim reconstruction head.
    """

    input_frames: int = 98
    n_mels: int = 40
    conv_layers: int = 2
    kernel: int = 3
    stride: int = 2
    channels: int = 32
    residual_blocks: int = 2
    gn_groups: int = 8
    pool_group: int = 2
    attn_layers: int = 2
    d_model: int = 320
    heads: int = 4
    ffn_dim: int = 1280
    selected_frames: int = 2
    bottleneck_dim: int = 800
    n_classes: int = 12
    recon_dim: int = 40
    norm_eps: float = 1e-5
    temperature: float = 0.1
    lambda_sim: float = 0.8
    lambda_x: float = 0.05
    lambda_x_aug: float = 0.05
    lambda_dual: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = (
            "input_frames", "n_mels", "kernel", "stride", "channels", "gn_groups",
            "pool_group", "d_model", "heads", "ffn_dim", "selected_frames",
            "bottleneck_dim", "n_classes", "recon_dim",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.conv_layers < 1:
            raise ConfigError("conv_layers must be >= 1")
        if self.residual_blocks < 0 or self.attn_layers < 0:
            raise ConfigError("residual_blocks and attn_layers must be >= 0")
        if self.kernel % 2 != 1:
            raise ConfigError(f"kernel must be odd for same padding, got {self.kernel}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.channels % self.gn_groups:
            raise ConfigError(
                f"channels={self.channels} is not divisible by gn_groups={self.gn_groups}"
            )
        if self.d_model != self.channels * self.conv_freq_bins:
            raise ConfigError(
                f"d_model={self.d_model} must equal channels x post-conv frequency bins "
                f"= {self.channels} x {self.conv_freq_bins}"
            )
        if self.recon_dim != self.n_mels:
            raise ConfigError("recon_dim must equal n_mels (it reconstructs the mean fbank row)")
        if self.pooled_frames < self.selected_frames:
            raise ConfigError(
                f"only {self.pooled_frames} frames reach the transformer, "
                f"cannot select the last {self.selected_frames}"
            )
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        for name in ("lambda_sim", "lambda_x", "lambda_x_aug", "lambda_dual"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def _conv_len(self, n: int) -> int:
        pad = self.kernel // 2
        for _ in range(self.conv_layers):
            n = (n + 2 * pad - self.kernel) // self.stride + 1
        return n

    @property
    def conv_frames(self) -> int:
        return self._conv_len(self.input_frames)

    @property
    def conv_freq_bins(self) -> int:
        return self._conv_len(self.n_mels)

    @property
    def pooled_frames(self) -> int:
        return -(-self.conv_frames // self.pool_group)

    @property
    def feat_dim(self) -> int:
        return self.selected_frames * self.d_model

    @property
    def loss_weights(self) -> tuple[float, float, float, float]:
        return (self.lambda_sim, self.lambda_x, self.lambda_x_aug, self.lambda_dual)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def tiny_config(**overrides) -> ModelConfig:
    """A reduced network with the same topology, cheap enough for gradient checks."""
    base = dict(
        input_frames=20,
        n_mels=16,
        channels=4,
        gn_groups=2,
        d_model=16,
        heads=2,
        ffn_dim=32,
        bottleneck_dim=24,
        n_classes=5,
        recon_dim=16,
    )
    base.update(overrides)
    return ModelConfig(**base)
