"""Numeric building blocks for the float32 forward path.

Every kernel is a pure function over ``numpy.float32`` arrays.  Shapes must
match exactly; nothing is broadcast implicitly.  Inputs and outputs are
checked for NaN/Inf.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, DimensionError, InputTooShortError, NonFiniteError

__all__ = [
    "AttentionWeights",
    "conv1d",
    "conv_output_length",
    "gelu",
    "layer_norm",
    "linear",
    "matmul",
    "mhsa",
    "softmax",
]

_SQRT1_2 = np.float32(1.0 / math.sqrt(2.0))


def _check_finite(value: Any, what: str) -> None:
    if isinstance(value, np.ndarray) and value.dtype.kind == "f":
        if not np.isfinite(value).all():
            raise NonFiniteError(f"{what} contains NaN or Inf")


def _finite_io(fn):
    """Validate that every array argument and the result are finite."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        for i, arg in enumerate(args):
            _check_finite(arg, f"{fn.__name__} argument {i}")
        for key, arg in kwargs.items():
            _check_finite(arg, f"{fn.__name__} argument {key!r}")
        out = fn(*args, **kwargs)
        _check_finite(out, f"{fn.__name__} output")
        return out

    return wrapper


def _f32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


@_finite_io
def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``c[i, j] = sum_k a[i, k] * b[k, j]`` for 2-D operands."""
    a, b = _f32(a), _f32(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def linear(x: np.ndarray, weight, bias: np.ndarray | None = None) -> np.ndarray:
    """Affine map ``x @ weight.T + bias`` with weight stored as [out, in].

    ``weight`` may also be a quantized tensor; anything that is not an
    ndarray is asked to do the product itself via ``rmatmul_t``.
    """
    if isinstance(weight, np.ndarray):
        out = matmul(x, weight.T)
    else:
        out = weight.rmatmul_t(x)
    if bias is not None:
        if bias.shape != (out.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} does not fit output {out.shape}")
        out = out + bias[np.newaxis, :]
    return out


def conv_output_length(length: int, kernel: int, stride: int = 1) -> int:
    if length < kernel:
        raise InputTooShortError(f"input length {length} is shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


@_finite_io
def conv1d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    groups: int = 1,
    padding: str = "valid",
) -> np.ndarray:
    """Grouped 1-D cross-correlation.

    x: [C_in, T]; weight: [C_out, C_in // groups, K].  ``padding="same"``
    pads ``K // 2`` on the left and ``K - 1 - K // 2`` on the right so that
    a stride-1 convolution keeps the length T.
    """
    x, weight = _f32(x), _f32(weight)
    if x.ndim != 2 or weight.ndim != 3:
        raise DimensionError(f"conv1d: expected x [C, T] and w [C_out, C_in/g, K], got {x.shape} and {weight.shape}")
    c_in, _ = x.shape
    c_out, c_per_group, k = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigError(f"conv1d: channels {c_in}->{c_out} not divisible by groups={groups}")
    if c_in // groups != c_per_group:
        raise DimensionError(f"conv1d: input {x.shape} does not match weight {weight.shape} with groups={groups}")
    if padding == "same":
        left = k // 2
        x = np.pad(x, ((0, 0), (left, k - 1 - left)))
    elif padding != "valid":
        raise ConfigError(f"conv1d: unknown padding {padding!r}")
    t_out = conv_output_length(x.shape[1], k, stride)

    # windows[c, t, j] = x[c, t * stride + j]
    windows = sliding_window_view(x, k, axis=1)[:, : (t_out - 1) * stride + 1 : stride, :]
    out_per_group = c_out // groups
    if groups == 1:
        cols = windows.transpose(1, 0, 2).reshape(t_out, c_in * k)
        out = (cols @ weight.reshape(c_out, c_in * k).T).T
    else:
        win = windows.reshape(groups, c_per_group, t_out, k).transpose(0, 2, 1, 3)
        win = win.reshape(groups, t_out, c_per_group * k)
        w = weight.reshape(groups, out_per_group, c_per_group * k)
        out = np.matmul(win, w.transpose(0, 2, 1)).transpose(0, 2, 1).reshape(c_out, t_out)
    out = np.ascontiguousarray(out, dtype=np.float32)
    if bias is not None:
        if bias.shape != (c_out,):
            raise DimensionError(f"conv1d: bias {bias.shape} does not fit {c_out} output channels")
        out += bias[:, np.newaxis]
    return out


@_finite_io
def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = _f32(x)
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not fit last dim of {x.shape}")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return (centered / np.sqrt(var + np.float32(eps))) * gamma + beta


@_finite_io
def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)``."""
    x = _f32(x)
    return (x * np.float32(0.5) * (np.float32(1.0) + erf(x * _SQRT1_2))).astype(np.float32, copy=False)


@_finite_io
def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = _f32(x)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class AttentionWeights:
    """Projection matrices ([out, in]) and biases of one attention block."""

    wq: Any
    bq: np.ndarray
    wk: Any
    bk: np.ndarray
    wv: Any
    bv: np.ndarray
    wo: Any
    bo: np.ndarray


def mhsa(x: np.ndarray, weights: AttentionWeights, heads: int, probs_out: list | None = None) -> np.ndarray:
    """Multi-head scaled dot-product self-attention over x: [T, H].

    If ``probs_out`` is a list, the per-head attention matrices
    ([heads, T, T]) are appended to it.
    """
    _check_finite(x, "mhsa input")
    if x.ndim != 2:
        raise DimensionError(f"mhsa: expected [T, H], got {x.shape}")
    t, h = x.shape
    if heads < 1 or h % heads:
        raise ConfigError(f"mhsa: hidden size {h} is not divisible by {heads} heads")
    d = h // heads
    q = linear(x, weights.wq, weights.bq).reshape(t, heads, d).transpose(1, 0, 2)
    k = linear(x, weights.wk, weights.bk).reshape(t, heads, d).transpose(1, 0, 2)
    v = linear(x, weights.wv, weights.bv).reshape(t, heads, d).transpose(1, 0, 2)
    scores = np.matmul(q, k.transpose(0, 2, 1)) * np.float32(1.0 / math.sqrt(d))
    probs = softmax(scores, axis=-1)
    if probs_out is not None:
        probs_out.append(probs)
    context = np.matmul(probs, v).transpose(1, 0, 2).reshape(t, h)
    out = linear(context, weights.wo, weights.bo)
    _check_finite(out, "mhsa output")
    return out
