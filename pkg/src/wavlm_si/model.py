"""WavLM_SI model graph: tensor layout, construction, and the float forward pass.

Data flow for one clip::

    stereo clip -> downmix -> 7 strided convs (GELU) -> projection + LayerNorm
      -> [positional conv, residual] -> N post-LN transformer blocks
      -> softmax-weighted sum over all N+1 hidden states
      -> additive attention pooling -> 2-layer classifier -> 4 probabilities

Linear weights are stored ``[out, in]`` so that axis 0 is the output
channel, which is the axis per-channel quantization works on.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from . import kernels as K
from .arena import Arena, NullArena
from .config import CLASS_NAMES, ModelConfig, QuantPolicy
from .errors import ConfigError, InputError

FRONTEND = "frontend"
POSITIONAL_CONV = "positional_conv"
TRANSFORMER = "transformer"
TASK_LAYERS = "task_layers"
COMPONENTS = (FRONTEND, POSITIONAL_CONV, TRANSFORMER, TASK_LAYERS)

# Quantization groups, matched against QuantPolicy flags.
Q_FRONTEND, Q_POS_CONV, Q_TRANSFORMER, Q_CLASSIFIER = "frontend", "pos_conv", "transformer", "classifier"

_LAYER_TENSORS = (
    # suffix, shape(H, F), init, fan_in(H, F), quant group
    ("attn.q.weight", lambda h, f: (h, h), "weight", lambda h, f: h, Q_TRANSFORMER),
    ("attn.q.bias", lambda h, f: (h,), "bias", lambda h, f: h, None),
    ("attn.k.weight", lambda h, f: (h, h), "weight", lambda h, f: h, Q_TRANSFORMER),
    ("attn.k.bias", lambda h, f: (h,), "bias", lambda h, f: h, None),
    ("attn.v.weight", lambda h, f: (h, h), "weight", lambda h, f: h, Q_TRANSFORMER),
    ("attn.v.bias", lambda h, f: (h,), "bias", lambda h, f: h, None),
    ("attn.o.weight", lambda h, f: (h, h), "weight", lambda h, f: h, Q_TRANSFORMER),
    ("attn.o.bias", lambda h, f: (h,), "bias", lambda h, f: h, None),
    ("attn_norm.gamma", lambda h, f: (h,), "ones", None, None),
    ("attn_norm.beta", lambda h, f: (h,), "zeros", None, None),
    ("ffn.fc1.weight", lambda h, f: (f, h), "weight_gelu", lambda h, f: h, Q_TRANSFORMER),
    ("ffn.fc1.bias", lambda h, f: (f,), "bias", lambda h, f: h, None),
    ("ffn.fc2.weight", lambda h, f: (h, f), "weight", lambda h, f: f, Q_TRANSFORMER),
    ("ffn.fc2.bias", lambda h, f: (h,), "bias", lambda h, f: f, None),
    ("ffn_norm.gamma", lambda h, f: (h,), "ones", None, None),
    ("ffn_norm.beta", lambda h, f: (h,), "zeros", None, None),
)
LAYER_SUFFIXES = tuple(entry[0] for entry in _LAYER_TENSORS)


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple[int, ...]
    component: str
    init: str
    fan_in: int | None = None
    quant_group: str | None = None


def layer_prefix(unique_index: int) -> str:
    return f"layers.{unique_index}."


def tensor_specs(config: ModelConfig) -> dict[str, TensorSpec]:
    """Every named tensor a model with ``config`` carries, in canonical (sorted) order."""
    c, h, f = config.conv_channels, config.hidden, config.hidden * config.ffn_ratio
    specs: dict[str, TensorSpec] = {}
    c_in = 1
    for i, k in enumerate(config.conv_kernels):
        specs[f"frontend.conv{i}.weight"] = TensorSpec((c, c_in, k), FRONTEND, "weight_gelu", c_in * k, Q_FRONTEND)
        c_in = c
    specs["proj.weight"] = TensorSpec((h, c), TASK_LAYERS, "weight", c, Q_CLASSIFIER)
    specs["proj.bias"] = TensorSpec((h,), TASK_LAYERS, "bias", c)
    specs["proj.norm.gamma"] = TensorSpec((h,), TASK_LAYERS, "ones")
    specs["proj.norm.beta"] = TensorSpec((h,), TASK_LAYERS, "zeros")
    if config.has_positional_conv:
        g, kp = config.pos_conv_groups, config.pos_conv_kernel
        specs["pos_conv.weight"] = TensorSpec((h, h // g, kp), POSITIONAL_CONV, "weight_gelu", (h // g) * kp, Q_POS_CONV)
        specs["pos_conv.bias"] = TensorSpec((h,), POSITIONAL_CONV, "bias", (h // g) * kp)
    for u in range(config.unique_layers):
        for suffix, shape, init, fan_in, qgroup in _LAYER_TENSORS:
            specs[layer_prefix(u) + suffix] = TensorSpec(
                shape(h, f), TRANSFORMER, init, fan_in(h, f) if fan_in else None, qgroup
            )
    specs["layer_sum.logits"] = TensorSpec((config.num_layers + 1,), TASK_LAYERS, "zeros")
    specs["pool.weight"] = TensorSpec((h, h), TASK_LAYERS, "weight", h, Q_CLASSIFIER)
    specs["pool.bias"] = TensorSpec((h,), TASK_LAYERS, "bias", h)
    specs["pool.vector"] = TensorSpec((h,), TASK_LAYERS, "vector", h)
    specs["cls.fc1.weight"] = TensorSpec((h, h), TASK_LAYERS, "weight_gelu", h, Q_CLASSIFIER)
    specs["cls.fc1.bias"] = TensorSpec((h,), TASK_LAYERS, "bias", h)
    specs["cls.fc2.weight"] = TensorSpec((config.num_classes, h), TASK_LAYERS, "weight", h, Q_CLASSIFIER)
    specs["cls.fc2.bias"] = TensorSpec((config.num_classes,), TASK_LAYERS, "bias", h)
    return dict(sorted(specs.items()))


def policy_covers(policy: QuantPolicy | None, quant_group: str | None) -> bool:
    if policy is None or quant_group is None:
        return False
    return {
        Q_FRONTEND: policy.quantize_frontend,
        Q_POS_CONV: policy.quantize_pos_conv,
        Q_TRANSFORMER: policy.quantize_transformer,
        Q_CLASSIFIER: policy.quantize_classifier,
    }[quant_group]


def _init_tensor(name: str, spec: TensorSpec, seed: int) -> np.ndarray:
    if spec.init == "ones":
        return np.ones(spec.shape, dtype=np.float32)
    if spec.init == "zeros":
        return np.zeros(spec.shape, dtype=np.float32)
    # One stream per (seed, name) so a tensor's values do not depend on
    # which other tensors the config has.
    rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
    gain = math.sqrt(2.0) if spec.init == "weight_gelu" else 1.0
    if spec.init == "bias":
        bound = 1.0 / math.sqrt(spec.fan_in)
    else:
        bound = gain * math.sqrt(3.0 / spec.fan_in)
    return rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)


def _shape_of(value: Any) -> tuple[int, ...]:
    return tuple(value.shape)


@dataclass(frozen=True)
class Model:
    """Immutable named-tensor store plus the topology implied by ``config``.

    Values in ``tensors`` are float32 arrays, or quantized tensors for the
    weight matrices a quantization policy covered.
    """

    config: ModelConfig
    tensors: Mapping[str, Any]
    policy: QuantPolicy | None = None
    pipeline: tuple[str, ...] = ()

    def __post_init__(self):
        specs = tensor_specs(self.config)
        missing = specs.keys() - self.tensors.keys()
        extra = self.tensors.keys() - specs.keys()
        if missing or extra:
            raise ConfigError(f"tensor set does not match config: missing {sorted(missing)[:4]}, unexpected {sorted(extra)[:4]}")
        frozen = {}
        for name, spec in specs.items():
            value = self.tensors[name]
            if _shape_of(value) != spec.shape:
                raise ConfigError(f"{name}: shape {_shape_of(value)} does not match config {spec.shape}")
            if isinstance(value, np.ndarray):
                if value.dtype != np.float32:
                    raise ConfigError(f"{name}: expected float32, got {value.dtype}")
                if value.flags.writeable:
                    value = value.copy()
                    value.flags.writeable = False
            frozen[name] = value
        object.__setattr__(self, "tensors", MappingProxyType(frozen))
        object.__setattr__(self, "pipeline", tuple(self.pipeline))

    @property
    def tied_layer_map(self) -> tuple[int, ...]:
        return self.config.tied_layer_map

    @property
    def is_quantized(self) -> bool:
        return any(not isinstance(v, np.ndarray) for v in self.tensors.values())

    def __getitem__(self, name: str):
        return self.tensors[name]

    def layer_tensors(self, layer: int) -> dict[str, Any]:
        """Weights used by transformer layer ``layer`` (suffix -> tensor)."""
        prefix = layer_prefix(self.tied_layer_map[layer])
        return {s: self.tensors[prefix + s] for s in LAYER_SUFFIXES}


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Deterministically initialized model; same (config, seed) gives identical bytes."""
    tensors = {name: _init_tensor(name, spec, seed) for name, spec in tensor_specs(config).items()}
    return Model(config, tensors)


# ---------------------------------------------------------------------------
# Clips


@dataclass(frozen=True)
class ClipInput:
    left: np.ndarray  # everyone else
    right: np.ndarray  # potential interrupter
    sample_rate_hz: int = 16000

    def __post_init__(self):
        left = np.ascontiguousarray(self.left, dtype=np.float32)
        right = np.ascontiguousarray(self.right, dtype=np.float32)
        if left.ndim != 1 or right.ndim != 1 or left.shape != right.shape:
            raise InputError(f"clip channels must be 1-D and equal length, got {left.shape} and {right.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def num_samples(self) -> int:
        return self.left.shape[0]

    @property
    def seconds(self) -> float:
        return self.num_samples / self.sample_rate_hz


def random_clip(seed: int, num_samples: int = 80_000, sample_rate_hz: int = 16000) -> ClipInput:
    """Seeded synthetic stereo clip: gated tones plus noise at random levels."""
    rng = np.random.default_rng(seed)
    t = np.arange(num_samples) / sample_rate_hz
    channels = []
    for _ in range(2):
        sig = rng.normal(0.0, rng.uniform(0.001, 0.05), num_samples)
        for _ in range(rng.integers(1, 5)):
            freq = rng.uniform(80.0, 3000.0)
            onset, dur = rng.uniform(0, t[-1]), rng.uniform(0.2, 3.0)
            gate = ((t >= onset) & (t < onset + dur)).astype(np.float64)
            sig += rng.uniform(0.02, 0.5) * gate * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        channels.append(np.clip(sig, -1.0, 1.0))
    return ClipInput(channels[0], channels[1], sample_rate_hz)


def silent_clip(num_samples: int = 80_000, sample_rate_hz: int = 16000) -> ClipInput:
    zeros = np.zeros(num_samples, dtype=np.float32)
    return ClipInput(zeros, zeros, sample_rate_hz)


def downmix(clip: ClipInput) -> np.ndarray:
    """Stereo -> mono as left + right."""
    return clip.left + clip.right


# ---------------------------------------------------------------------------
# Forward pass


def _dense(weight) -> np.ndarray:
    return weight if isinstance(weight, np.ndarray) else weight.dequantize()


def frontend_forward(model: Model, clip: ClipInput, arena: Arena | None = None) -> np.ndarray:
    """Conv feature extractor plus projection; returns [T_frames, hidden]."""
    arena = arena or NullArena()
    cfg = model.config
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise InputError(f"clip sample rate {clip.sample_rate_hz} Hz, model expects {cfg.sample_rate_hz} Hz")
    if clip.num_samples != cfg.num_samples:
        raise InputError(f"clip has {clip.num_samples} samples per channel, model expects {cfg.num_samples}")
    x = arena.hold(downmix(clip)[np.newaxis, :])
    for i, (k, s) in enumerate(zip(cfg.conv_kernels, cfg.conv_strides)):
        y = arena.hold(K.gelu(K.conv1d(x, _dense(model[f"frontend.conv{i}.weight"]), stride=s)))
        arena.drop(x)
        x = y
    frames = np.ascontiguousarray(x.T)
    projected = K.linear(frames, model["proj.weight"], model["proj.bias"])
    out = arena.hold(K.layer_norm(projected, model["proj.norm.gamma"], model["proj.norm.beta"], cfg.layer_norm_eps))
    arena.drop(x)
    return out


def transformer_block(x: np.ndarray, weights: Mapping[str, Any], heads: int, eps: float) -> np.ndarray:
    """Post-LN block: LN(x + MHSA(x)) then LN(h + FFN(h))."""
    w = weights
    attn = K.mhsa(x, K.AttentionWeights(
        w["attn.q.weight"], w["attn.q.bias"], w["attn.k.weight"], w["attn.k.bias"],
        w["attn.v.weight"], w["attn.v.bias"], w["attn.o.weight"], w["attn.o.bias"],
    ), heads)
    h = K.layer_norm(x + attn, w["attn_norm.gamma"], w["attn_norm.beta"], eps)
    ff = K.linear(K.gelu(K.linear(h, w["ffn.fc1.weight"], w["ffn.fc1.bias"])), w["ffn.fc2.weight"], w["ffn.fc2.bias"])
    return K.layer_norm(h + ff, w["ffn_norm.gamma"], w["ffn_norm.beta"], eps)


def positional_conv(model: Model, frames: np.ndarray) -> np.ndarray:
    """frames + GELU(grouped same-padded conv over time)."""
    cfg = model.config
    conv = K.conv1d(
        np.ascontiguousarray(frames.T), _dense(model["pos_conv.weight"]), model["pos_conv.bias"],
        stride=1, groups=cfg.pos_conv_groups, padding="same",
    )
    return frames + K.gelu(conv).T


def encoder_forward(model: Model, frames: np.ndarray, arena: Arena | None = None) -> list[np.ndarray]:
    """Returns num_layers + 1 hidden states: the encoder input, then each block's output."""
    arena = arena or NullArena()
    cfg = model.config
    x = frames
    if cfg.has_positional_conv:
        x = arena.hold(positional_conv(model, frames))
        arena.drop(frames)
    outputs = [x]
    for layer in range(cfg.num_layers):
        x = arena.hold(transformer_block(x, model.layer_tensors(layer), cfg.heads, cfg.layer_norm_eps))
        outputs.append(x)
    return outputs


def layer_weights(model: Model) -> np.ndarray:
    return K.softmax(np.asarray(model["layer_sum.logits"]))


def attention_pool(model: Model, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Additive attention pooling over time; returns (pooled [H], alpha [T])."""
    scores = K.linear(np.tanh(K.linear(hidden, model["pool.weight"], model["pool.bias"])), model["pool.vector"][np.newaxis, :])
    alpha = K.softmax(scores[:, 0])
    pooled = K.matmul(alpha[np.newaxis, :], hidden)[0]
    return pooled, alpha


def head_logits(model: Model, layer_outputs: list[np.ndarray], arena: Arena | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted layer sum, pooling and classifier; returns (logits, embedding)."""
    arena = arena or NullArena()
    if len(layer_outputs) != model.config.num_layers + 1:
        raise InputError(f"expected {model.config.num_layers + 1} layer outputs, got {len(layer_outputs)}")
    weights = layer_weights(model)
    mixed = np.zeros_like(layer_outputs[0])
    for w, h in zip(weights, layer_outputs):
        mixed += w * h
    arena.hold(mixed)
    arena.drop(*layer_outputs)
    pooled, _ = attention_pool(model, mixed)
    arena.drop(mixed)
    hidden = K.gelu(K.linear(pooled[np.newaxis, :], model["cls.fc1.weight"], model["cls.fc1.bias"]))
    logits = K.linear(hidden, model["cls.fc2.weight"], model["cls.fc2.bias"])[0]
    return logits, pooled


def head_forward(model: Model, layer_outputs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    logits, embedding = head_logits(model, layer_outputs)
    return K.softmax(logits), embedding


@dataclass(frozen=True)
class ClassScores:
    probs: np.ndarray
    logits: np.ndarray
    embedding: np.ndarray = field(repr=False)

    @property
    def label_index(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.label_index] if len(self.probs) == len(CLASS_NAMES) else str(self.label_index)


def infer(model: Model, clip: ClipInput, arena: Arena | None = None) -> ClassScores:
    frames = frontend_forward(model, clip, arena)
    outputs = encoder_forward(model, frames, arena)
    logits, embedding = head_logits(model, outputs, arena)
    return ClassScores(K.softmax(logits), logits, embedding)
