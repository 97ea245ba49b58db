"""The JSON run configuration shared by every training command.

A run config has four sections, each filled from defaults for any missing
key; unknown keys are rejected::

    {"model": {...ModelConfig...}, "train": {...TrainConfig...},
     "data": {...DataConfig...}, "augment": {...AugmentConfig...}}

Overrides use dotted paths, e.g. ``model.temperature=0.07`` or
``data.synth.seed=3``; values are parsed as JSON, falling back to a string.
"""

from __future__ import annotations

import json
import types
import typing
from dataclasses import asdict, dataclass, field, fields

from cabkws.audio.augment import AugmentConfig
from cabkws.data.synth import SynthSpec
from cabkws.errors import ConfigError
from cabkws.model.config import ModelConfig
from cabkws.train.config import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    # manifest CSV; None means the synthetic corpus described by ``synth``
    manifest: str | None = None
    # directory that manifest paths are relative to (default: the manifest's directory)
    root: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    # keep only the first k labeled train utterances per class for fine-tuning
    labeled_per_class: int | None = None
    # checkpoint to fine-tune from (None: from scratch)
    init_checkpoint: str | None = None
    # parent of timestamped run directories
    runs_dir: str = "runs"
    sweep_counts: tuple[int, ...] = (0, 250, 1000)
    sweep_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.labeled_per_class is not None and self.labeled_per_class < 1:
            raise ConfigError("labeled_per_class must be >= 1")
        object.__setattr__(self, "sweep_counts", tuple(self.sweep_counts))
        object.__setattr__(self, "sweep_seeds", tuple(self.sweep_seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep_counts"] = list(self.sweep_counts)
        d["sweep_seeds"] = list(self.sweep_seeds)
        return d


SECTIONS = ("model", "train", "data", "augment")


def _check_types(cls, d: dict, where: str) -> None:
    hints = typing.get_type_hints(cls)
    for f in fields(cls):
        if f.name in d and f.name != "synth":
            _check_value(hints[f.name], d[f.name], f"{where}.{f.name}")


def _check_value(hint, value, where):
    ok = _accepts(hint, value)
    if not ok:
        raise ConfigError(f"{where}: {value!r} is not a valid {getattr(hint, '__name__', hint)}")


def _accepts(hint, value) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        return any(_accepts(a, value) for a in typing.get_args(hint))
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return isinstance(value, (list, tuple)) and all(_accepts(inner, v) for v in value)
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    return True


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    _check_types(cls, d, where)
    try:
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def to_dict(self) -> dict:
        aug = asdict(self.augment)
        aug["noise_kinds"] = list(self.augment.noise_kinds)
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "augment": aug,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        data = dict(d.get("data", {}))
        if "synth" in data:
            data["synth"] = _build(SynthSpec, data["synth"], "data.synth")
        return cls(
            model=_build(ModelConfig, d.get("model", {}), "model"),
            train=_build(TrainConfig, d.get("train", {}), "train"),
            data=_build(DataConfig, data, "data"),
            augment=_build(AugmentConfig, d.get("augment", {}), "augment"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def with_overrides(self, overrides) -> "RunConfig":
        """Apply ``"a.b.c=value"`` strings (or ``(path, value)`` pairs) in order."""
        d = self.to_dict()
        for item in overrides:
            path, value = parse_override(item) if isinstance(item, str) else item
            keys = path.split(".")
            if keys[0] not in SECTIONS or len(keys) < 2:
                raise ConfigError(f"override {path!r} must start with one of {SECTIONS}")
            node = d
            for k in keys[:-1]:
                if not isinstance(node.get(k), dict):
                    raise ConfigError(f"unknown config path {path!r}")
                node = node[k]
            if keys[-1] not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node[keys[-1]] = value
        return RunConfig.from_dict(d)


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form path=value")
    path, raw = text.split("=", 1)
    path = path.strip().lstrip("-")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value
