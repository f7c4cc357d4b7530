"""Selective symmetric per-channel int8 post-training quantization.

Weights: one scale per output channel (axis 0), ``s_c = max|w_c| / 127``,
codes in [-127, 127], zero-point 0.  Activations entering a quantized
matmul are quantized dynamically per row with the same rule.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .config import QuantPolicy
from .errors import DimensionError, QuantizationError
from .model import Model, policy_covers, tensor_specs

QMAX = 127
# Largest K for which a dot product of int8 codes stays below 2**24, so a
# float32 GEMM over that many terms is exact integer arithmetic.
_EXACT_F32_CHUNK = (1 << 24) // (QMAX * QMAX)
_TINY = np.float32(np.finfo(np.float32).smallest_subnormal)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _channel_scales(flat: np.ndarray) -> np.ndarray:
    peak = np.abs(flat).max(axis=1).astype(np.float64)
    scales = (peak / QMAX).astype(np.float32)
    # peaks below ~63.5 * (smallest subnormal) underflow; every subnormal is an
    # integer multiple of that smallest value, so it is an exact scale
    np.maximum(scales, _TINY, out=scales)
    scales[peak == 0] = 1.0
    return scales


def _codes(flat: np.ndarray, scales: np.ndarray) -> np.ndarray:
    q = round_half_away(flat.astype(np.float64) / scales.astype(np.float64)[:, None])
    return np.clip(q, -QMAX, QMAX).astype(np.int8)


def _codes_f32(x: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Float32 twin of ``_codes`` for activations; returns integer-valued float32."""
    y = x / scales[:, None]
    q = np.rint(y)
    # rint rounds ties to even; y - q is exact, so ties are found exactly
    ties = np.abs(y - q) == 0.5
    if ties.any():
        q[ties] = y[ties] + np.copysign(np.float32(0.5), y[ties])
    return np.clip(q, -QMAX, QMAX, out=q)


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    values: np.ndarray  # int8, same shape as the source tensor
    scales: np.ndarray  # float32, one per output channel (axis 0)

    dtype_tag = "i8"

    def __post_init__(self):
        if self.values.dtype != np.int8 or self.scales.dtype != np.float32:
            raise QuantizationError("QuantizedTensor needs int8 values and float32 scales")
        if self.values.ndim < 1 or self.scales.shape != (self.values.shape[0],):
            raise QuantizationError(f"scales {self.scales.shape} do not match values {self.values.shape}")
        for arr in (self.values, self.scales):
            arr.flags.writeable = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def nbytes(self) -> int:
        return self.values.nbytes + self.scales.nbytes

    def dequantize(self) -> np.ndarray:
        return dequantize(self)

    @cached_property
    def _codes_kn(self) -> np.ndarray:
        # [K, N] float32 copy of the codes for the exact-integer GEMM
        return np.ascontiguousarray(self.values.reshape(self.shape[0], -1).T, dtype=np.float32)

    def rmatmul_t(self, x: np.ndarray) -> np.ndarray:
        """``x @ W.T`` for this [N, K] weight; the hook ``kernels.linear`` uses."""
        return qmatmul(x, self)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.scales, other.scales)

    __hash__ = None


def quantize_tensor(w: np.ndarray) -> QuantizedTensor:
    """Symmetric per-output-channel int8; all-zero channels get scale 1."""
    w = np.asarray(w, dtype=np.float32)
    if w.ndim < 1 or w.size == 0:
        raise QuantizationError(f"cannot quantize tensor of shape {w.shape}")
    flat = w.reshape(w.shape[0], -1)
    scales = _channel_scales(flat)
    return QuantizedTensor(_codes(flat, scales).reshape(w.shape), scales)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    flat = q.values.reshape(q.shape[0], -1).astype(np.float32) * q.scales[:, None]
    return flat.reshape(q.shape)


def quantize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dynamic per-row activation quantization; returns (int8 codes, float32 scales)."""
    x = np.asarray(x, dtype=np.float32)
    scales = _channel_scales(x)
    return _codes_f32(x, scales).astype(np.int8), scales


def _int_gemm(a: np.ndarray, b_kn: np.ndarray) -> np.ndarray:
    """Exact integer product of code matrices held as float32.

    Each float32 GEMM covers at most ``_EXACT_F32_CHUNK`` terms, so every
    partial sum is an integer below 2**24 and the result is exact in any
    summation order.  Chunks are combined in int32.
    """
    k = a.shape[1]
    if k <= _EXACT_F32_CHUNK:
        return a @ b_kn
    acc = np.zeros((a.shape[0], b_kn.shape[1]), dtype=np.int32)
    for start in range(0, k, _EXACT_F32_CHUNK):
        acc += (a[:, start : start + _EXACT_F32_CHUNK] @ b_kn[start : start + _EXACT_F32_CHUNK]).astype(np.int32)
    return acc


def qmatmul(x: np.ndarray, qw: QuantizedTensor) -> np.ndarray:
    """x [M, K] times quantized weight [N, K] transposed, with exact integer accumulation."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or len(qw.shape) != 2 or x.shape[1] != qw.shape[1]:
        raise DimensionError(f"qmatmul: cannot multiply {x.shape} by quantized {qw.shape} transposed")
    sx = _channel_scales(x)
    acc = _int_gemm(_codes_f32(x, sx), qw._codes_kn)
    if acc.dtype == np.int32:
        acc = acc.astype(np.float64)
    out = acc * sx[:, None]
    out *= qw.scales[None, :]
    return out.astype(np.float32, copy=False)


def qmatmul_error_bound(x: np.ndarray, w: np.ndarray, qw: QuantizedTensor) -> np.ndarray:
    """Worst-case |qmatmul - matmul| per output element from rounding alone.

    sum_k |x_ik| s_w/2 + |w_jk| s_x/2 + s_x s_w/4
    """
    _, sx = quantize_rows(x)
    sx = sx.astype(np.float64)[:, None]
    sw = qw.scales.astype(np.float64)[None, :]
    abs_x = np.abs(x.astype(np.float64)).sum(axis=1)[:, None]
    abs_w = np.abs(w.astype(np.float64)).sum(axis=1)[None, :]
    k = x.shape[1]
    return abs_x * sw / 2 + abs_w * sx / 2 + k * sx * sw / 4


def _merge(a: QuantPolicy | None, b: QuantPolicy) -> QuantPolicy:
    if a is None:
        return b
    return QuantPolicy(*(x or y for x, y in zip(a.to_dict().values(), b.to_dict().values())))


def quantize_model(m: Model, policy: QuantPolicy | None = None) -> Model:
    """Quantize every weight matrix the policy covers; everything else stays float32."""
    policy = policy or QuantPolicy()
    if policy.is_empty:
        return m
    tensors = dict(m.tensors)
    for name, spec in tensor_specs(m.config).items():
        if not policy_covers(policy, spec.quant_group):
            continue
        value = tensors[name]
        if not isinstance(value, np.ndarray):
            raise QuantizationError(f"{name} is already quantized")
        tensors[name] = quantize_tensor(value)
    return replace(m, tensors=tensors, policy=_merge(m.policy, policy), pipeline=m.pipeline + ("quantize",))
