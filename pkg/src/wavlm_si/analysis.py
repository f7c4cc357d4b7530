"""Static cost accounting: parameters, MACs, serialized bytes, component shares,
plus activation-memory tracing of a real inference.

MAC convention: one multiply-accumulate per weight use.  Softmax, layer
norm, GELU, tanh and residual adds count as zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


from .arena import Arena
from .config import ModelConfig, QuantPolicy
from .io import planned_size
from .model import (
    COMPONENTS,
    FRONTEND,
    POSITIONAL_CONV,
    TASK_LAYERS,
    TRANSFORMER,
    ClipInput,
    Model,
    infer,
    policy_covers,
    tensor_specs,
)

MAC_CONVENTION = "MACs per clip; softmax/norm/GELU/tanh/residual adds count as 0"


def linear_params(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def linear_macs(tokens: int, n_in: int, n_out: int) -> int:
    return tokens * n_in * n_out


def conv_params(c_in: int, c_out: int, kernel: int, groups: int = 1, bias: bool = True) -> int:
    return c_out * (c_in // groups) * kernel + (c_out if bias else 0)


def conv_macs(t_out: int, c_in: int, c_out: int, kernel: int, groups: int = 1) -> int:
    return t_out * c_out * (c_in // groups) * kernel


def _config_of(m: Model | ModelConfig) -> ModelConfig:
    return m if isinstance(m, ModelConfig) else m.config


@dataclass
class ParamCount:
    total: int
    by_component: dict[str, int]


def count_params(m: Model | ModelConfig) -> ParamCount:
    """Exact parameter counts; tied weight sets count once."""
    by = dict.fromkeys(COMPONENTS, 0)
    for spec in tensor_specs(_config_of(m)).values():
        by[spec.component] += math.prod(spec.shape)
    return ParamCount(sum(by.values()), by)


@dataclass
class MacCount:
    total: int
    by_component: dict[str, int]


def count_macs(m: Model | ModelConfig, clip_seconds: float | None = None, sample_rate_hz: int | None = None) -> MacCount:
    """Multiply-accumulates for one clip (default: the config's clip length and rate)."""
    cfg = _config_of(m)
    seconds = cfg.clip_seconds if clip_seconds is None else clip_seconds
    rate = cfg.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
    cfg = cfg.with_(clip_seconds=seconds, sample_rate_hz=rate)
    c, h, f = cfg.conv_channels, cfg.hidden, cfg.hidden * cfg.ffn_ratio
    by = dict.fromkeys(COMPONENTS, 0)

    t, c_in = cfg.num_samples, 1
    for k, s in zip(cfg.conv_kernels, cfg.conv_strides):
        t = (t - k) // s + 1
        by[FRONTEND] += conv_macs(t, c_in, c, k)
        c_in = c
    frames = t

    if cfg.has_positional_conv:
        by[POSITIONAL_CONV] = conv_macs(frames, h, h, cfg.pos_conv_kernel, cfg.pos_conv_groups)

    per_layer = (
        4 * linear_macs(frames, h, h)  # q, k, v, o projections
        + 2 * frames * frames * h  # scores and context
        + linear_macs(frames, h, f) + linear_macs(frames, f, h)
    )
    by[TRANSFORMER] = cfg.num_layers * per_layer

    by[TASK_LAYERS] = (
        linear_macs(frames, c, h)  # feature projection
        + (cfg.num_layers + 1) * frames * h  # weighted layer sum
        + linear_macs(frames, h, h) + linear_macs(frames, h, 1)  # pooling scores
        + frames * h  # pooled sum
        + linear_macs(1, h, h) + linear_macs(1, h, cfg.num_classes)
    )
    return MacCount(sum(by.values()), by)


def _bytes_by_component(cfg: ModelConfig, policy: QuantPolicy | None) -> dict[str, int]:
    by = dict.fromkeys(COMPONENTS, 0)
    for spec in tensor_specs(cfg).values():
        n = math.prod(spec.shape)
        by[spec.component] += n + 4 * spec.shape[0] if policy_covers(policy, spec.quant_group) else 4 * n
    return by


@dataclass
class SizeReport:
    float32: int
    quantized: int
    overhead_float32: int


def serialized_size(m: Model | ModelConfig, policy: QuantPolicy | None = None) -> SizeReport:
    """File bytes as float32 and under ``policy`` (default: the model's own policy,
    or the default non-CNN policy for float models)."""
    cfg = _config_of(m)
    pipeline = m.pipeline if isinstance(m, Model) else ()
    if policy is None:
        policy = m.policy if isinstance(m, Model) and m.policy is not None else QuantPolicy()
    float_bytes = planned_size(cfg, None, [s for s in pipeline if s != "quantize"])
    if policy.is_empty:
        quant_bytes = float_bytes
    else:
        base = [s for s in pipeline if s != "quantize"]
        quant_bytes = planned_size(cfg, policy, base + ["quantize"])
    return SizeReport(float_bytes, quant_bytes, float_bytes - 4 * count_params(cfg).total)


def component_breakdown(m: Model | ModelConfig, policy: QuantPolicy | None = None) -> dict[str, float]:
    """Percent of tensor bytes per component after quantizing with ``policy``."""
    cfg = _config_of(m)
    if policy is None:
        policy = m.policy if isinstance(m, Model) and m.policy is not None else QuantPolicy()
    by = _bytes_by_component(cfg, policy)
    total = sum(by.values())
    return {k: 100.0 * v / total for k, v in by.items()}


@dataclass
class AnalysisReport:
    name: str
    total_params: int
    params_by_component: dict[str, int]
    total_macs: int
    macs_by_component: dict[str, int]
    bytes_float32: int
    bytes_quantized: int
    percent_by_component: dict[str, float]
    policy: QuantPolicy
    pipeline: tuple[str, ...] = ()
    clip_seconds: float = 5.0

    def kv_lines(self) -> list[str]:
        lines = [f"model.name = {self.name}", f"model.pipeline = {'|'.join(self.pipeline) or '-'}"]
        lines += [f"model.{k} = {str(v).lower()}" for k, v in self.policy.to_dict().items()]
        lines.append(f"total.params = {self.total_params}")
        lines.append(f"total.macs = {self.total_macs}")
        lines.append(f"total.clip_seconds = {self.clip_seconds:g}")
        lines.append(f"total.bytes_float32 = {self.bytes_float32}")
        lines.append(f"total.bytes_quantized = {self.bytes_quantized}")
        for comp in COMPONENTS:
            lines.append(f"{comp}.params = {self.params_by_component[comp]}")
            lines.append(f"{comp}.macs = {self.macs_by_component[comp]}")
            lines.append(f"{comp}.percent_quantized_bytes = {self.percent_by_component[comp]:.2f}")
        return lines

    def table(self) -> str:
        rows = [("component", "params (M)", "MACs (G)", "size share %")]
        for comp in COMPONENTS:
            rows.append((
                comp,
                f"{self.params_by_component[comp] / 1e6:.3f}",
                f"{self.macs_by_component[comp] / 1e9:.3f}",
                f"{self.percent_by_component[comp]:.1f}",
            ))
        rows.append(("total", f"{self.total_params / 1e6:.3f}", f"{self.total_macs / 1e9:.3f}", "100.0"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        out = [f"# {self.name}  pipeline: {' -> '.join(self.pipeline) or '(none)'}",
               f"# {MAC_CONVENTION}; clip = {self.clip_seconds:g} s"]
        for i, row in enumerate(rows):
            out.append("  ".join(cell.ljust(w) if j == 0 else cell.rjust(w) for j, (cell, w) in enumerate(zip(row, widths))))
            if i == 0:
                out.append("  ".join("-" * w for w in widths))
        out.append(f"size float32   : {self.bytes_float32 / 1e6:.2f} MB ({self.bytes_float32} bytes)")
        out.append(f"size quantized : {self.bytes_quantized / 1e6:.2f} MB ({self.bytes_quantized} bytes)")
        return "\n".join(out)


def analyze(m: Model | ModelConfig, policy: QuantPolicy | None = None, clip_seconds: float | None = None,
            name: str = "model") -> AnalysisReport:
    cfg = _config_of(m)
    if policy is None:
        policy = m.policy if isinstance(m, Model) and m.policy is not None else QuantPolicy()
    params = count_params(cfg)
    macs = count_macs(cfg, clip_seconds)
    sizes = serialized_size(m, policy)
    return AnalysisReport(
        name=name,
        total_params=params.total,
        params_by_component=params.by_component,
        total_macs=macs.total,
        macs_by_component=macs.by_component,
        bytes_float32=sizes.float32,
        bytes_quantized=sizes.quantized,
        percent_by_component=component_breakdown(cfg, policy),
        policy=policy,
        pipeline=m.pipeline if isinstance(m, Model) else (),
        clip_seconds=cfg.clip_seconds if clip_seconds is None else clip_seconds,
    )


@dataclass
class MemoryTrace:
    peak_live_bytes: int
    weights_bytes: int
    total_activation_bytes: int = 0


def weights_bytes(m: Model) -> int:
    return sum(v.nbytes for v in m.tensors.values())


def trace_memory(m: Model, clip: ClipInput, reuse: bool = True) -> MemoryTrace:
    """Run one inference through a fresh arena and report its high-water mark.

    ``reuse=False`` never releases activations (no buffer recycling).
    """
    arena = Arena(reuse=reuse)
    infer(m, clip, arena)
    return MemoryTrace(arena.peak, weights_bytes(m), arena.total)
