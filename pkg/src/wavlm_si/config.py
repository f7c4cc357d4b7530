"""Architecture hyperparameters, quantization policy, and the six reference presets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

CLASS_NAMES = ("backchannel", "failed_interruption", "interruption", "laughter")

DEFAULT_CONV_KERNELS = (10, 3, 3, 3, 3, 2, 2)
DEFAULT_CONV_STRIDES = (5, 2, 2, 2, 2, 2, 2)


@dataclass(frozen=True)
class ModelConfig:
    conv_channels: int
    hidden: int
    num_layers: int = 12
    heads: int | None = None  # defaults to hidden // 48
    ffn_ratio: int = 4
    weight_share_group: int = 1
    has_positional_conv: bool = False
    pos_conv_kernel: int = 128
    pos_conv_groups: int = 16
    conv_kernels: tuple[int, ...] = DEFAULT_CONV_KERNELS
    conv_strides: tuple[int, ...] = DEFAULT_CONV_STRIDES
    num_classes: int = 4
    sample_rate_hz: int = 16000
    clip_seconds: float = 5.0
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "conv_kernels", tuple(int(k) for k in self.conv_kernels))
        object.__setattr__(self, "conv_strides", tuple(int(s) for s in self.conv_strides))
        if self.heads is None:
            object.__setattr__(self, "heads", max(1, self.hidden // 48))
        self.validate()

    def validate(self) -> None:
        positive = ("conv_channels", "hidden", "heads", "ffn_ratio", "weight_share_group",
                    "num_classes", "sample_rate_hz")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        if not self.conv_kernels or len(self.conv_kernels) != len(self.conv_strides):
            raise ConfigError("conv_kernels and conv_strides must be non-empty and of equal length")
        if min(self.conv_kernels) < 1 or min(self.conv_strides) < 1:
            raise ConfigError("conv kernels and strides must be >= 1")
        if self.has_positional_conv:
            if self.pos_conv_kernel < 1 or self.pos_conv_groups < 1:
                raise ConfigError("pos_conv_kernel and pos_conv_groups must be >= 1")
            if self.hidden % self.pos_conv_groups:
                raise ConfigError(f"hidden={self.hidden} is not divisible by pos_conv_groups={self.pos_conv_groups}")
        if self.clip_seconds <= 0:
            raise ConfigError("clip_seconds must be positive")
        n = self.num_samples
        for k, s in zip(self.conv_kernels, self.conv_strides):
            if n < k:
                raise ConfigError(f"a {self.clip_seconds} s clip is too short for the conv stack")
            n = (n - k) // s + 1

    @property
    def num_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.clip_seconds))

    @property
    def num_frames(self) -> int:
        return frame_count(self.num_samples, self.conv_kernels, self.conv_strides)

    @property
    def unique_layers(self) -> int:
        return math.ceil(self.num_layers / self.weight_share_group)

    @property
    def tied_layer_map(self) -> tuple[int, ...]:
        return tuple(i // self.weight_share_group for i in range(self.num_layers))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_kernels"] = list(self.conv_kernels)
        d["conv_strides"] = list(self.conv_strides)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def frame_count(num_samples: int, kernels=DEFAULT_CONV_KERNELS, strides=DEFAULT_CONV_STRIDES) -> int:
    """Number of frames the conv stack emits for ``num_samples`` input samples."""
    n = num_samples
    for k, s in zip(kernels, strides):
        if n < k:
            raise ConfigError(f"{num_samples} samples is too short for the conv stack")
        n = (n - k) // s + 1
    return n


@dataclass(frozen=True)
class QuantPolicy:
    """Which weight matrices get int8 per-channel quantization.

    The default covers the non-CNN part: transformer and task layers.
    """

    quantize_transformer: bool = True
    quantize_classifier: bool = True
    quantize_frontend: bool = False
    quantize_pos_conv: bool = False

    @classmethod
    def none(cls) -> "QuantPolicy":
        return cls(False, False, False, False)

    @property
    def is_empty(self) -> bool:
        return not any(asdict(self).values())

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, ModelConfig] = {
    "small_pos": ModelConfig(conv_channels=386, hidden=576, has_positional_conv=True),
    "micro": ModelConfig(conv_channels=256, hidden=384),
    "micro_ws": ModelConfig(conv_channels=128, hidden=384, weight_share_group=3),
    "nano_pos": ModelConfig(conv_channels=128, hidden=288, has_positional_conv=True),
    "nano": ModelConfig(conv_channels=128, hidden=288),
    "nano_ws": ModelConfig(conv_channels=128, hidden=288, weight_share_group=3),
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_config(path_or_preset: str | Path) -> ModelConfig:
    """Read a JSON config file, or resolve a preset name when no such file exists.

    A file may also hold ``{"preset": "nano", ...overrides}``.
    """
    path = Path(path_or_preset)
    if not path.exists():
        return preset(str(path_or_preset))
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    base = data.pop("preset", None)
    if base is not None:
        return ModelConfig.from_dict({**preset(base).to_dict(), **data})
    return ModelConfig.from_dict(data)
