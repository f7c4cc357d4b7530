"""Model file format and WAV clip ingestion.

Model file layout, little-endian throughout::

    b"WSI1"                      magic
    u16  format version
    u32  header length
    ...  header: UTF-8 JSON (sorted keys) with config, policy, pipeline, tie map
    u32  tensor count
    per tensor, sorted by name:
         u16 name length, name, u8 dtype (0 = f32, 1 = i8 + scales), u8 rank,
         u32 dims[rank], u64 absolute byte offset, u64 byte length
    ...  payload; an i8 tensor stores its float32 per-channel scales first,
         then the int8 codes

A model has exactly one byte representation.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
import wave
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import ModelConfig, QuantPolicy
from .errors import (
    BadMagicError,
    ChannelCountError,
    CodecError,
    ConfigError,
    ConsistencyError,
    InputTooShortError,
    QuantizationError,
    SampleRateError,
    StructureError,
    TruncatedFileError,
    VersionMismatchError,
)
from .model import ClipInput, Model, policy_covers, tensor_specs
from .quantization import QuantizedTensor

MAGIC = b"WSI1"
FORMAT_VERSION = 1
DTYPE_F32, DTYPE_I8 = 0, 1

_PREAMBLE = struct.Struct("<4sHI")
_COUNT = struct.Struct("<I")
_LOCATION = struct.Struct("<QQ")


def encode_header(config: ModelConfig, policy: QuantPolicy | None, pipeline: Iterable[str]) -> bytes:
    header = {
        "config": config.to_dict(),
        "pipeline": list(pipeline),
        "policy": None if policy is None else policy.to_dict(),
        "tied_layer_map": list(config.tied_layer_map),
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def payload_length(dtype: int, shape: tuple[int, ...]) -> int:
    n = math.prod(shape)
    return 4 * n if dtype == DTYPE_F32 else 4 * shape[0] + n


def _pack_entry(name: str, dtype: int, shape: tuple[int, ...], offset: int, length: int) -> bytes:
    raw = name.encode("utf-8")
    return (
        struct.pack("<H", len(raw)) + raw + struct.pack(f"<BB{len(shape)}I", dtype, len(shape), *shape)
        + _LOCATION.pack(offset, length)
    )


def _layout(header: bytes, entries: list[tuple[str, int, tuple[int, ...]]]) -> tuple[bytes, int]:
    """Directory bytes and total file size for (name, dtype, shape) entries."""
    directory_size = _COUNT.size + sum(
        2 + len(name.encode("utf-8")) + 2 + 4 * len(shape) + _LOCATION.size for name, _, shape in entries
    )
    offset = _PREAMBLE.size + len(header) + directory_size
    parts = [_COUNT.pack(len(entries))]
    for name, dtype, shape in entries:
        length = payload_length(dtype, shape)
        parts.append(_pack_entry(name, dtype, shape, offset, length))
        offset += length
    return b"".join(parts), offset


def planned_size(config: ModelConfig, policy: QuantPolicy | None = None, pipeline: Iterable[str] = ()) -> int:
    """Exact byte size of the file a model with this config/policy serializes to."""
    entries = [
        (name, DTYPE_I8 if policy_covers(policy, spec.quant_group) else DTYPE_F32, spec.shape)
        for name, spec in tensor_specs(config).items()
    ]
    _, size = _layout(encode_header(config, policy, pipeline), entries)
    return size


def model_to_bytes(m: Model) -> bytes:
    header = encode_header(m.config, m.policy, m.pipeline)
    entries = []
    payload = []
    for name, value in m.tensors.items():
        if isinstance(value, QuantizedTensor):
            entries.append((name, DTYPE_I8, value.shape))
            payload.append(value.scales.astype("<f4").tobytes() + value.values.tobytes())
        else:
            entries.append((name, DTYPE_F32, value.shape))
            payload.append(value.astype("<f4").tobytes())
    directory, total = _layout(header, entries)
    blob = b"".join([_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)), header, directory, *payload])
    assert len(blob) == total
    return blob


def save_model(m: Model, path: str | Path) -> int:
    blob = model_to_bytes(m)
    Path(path).write_bytes(blob)
    return len(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends inside the {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def model_from_bytes(data: bytes) -> Model:
    r = _Reader(data)
    magic, version, header_len = r.unpack(_PREAMBLE.format, "preamble")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, this reader supports {FORMAT_VERSION}")
    try:
        header = json.loads(r.take(header_len, "header").decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        policy = None if header["policy"] is None else QuantPolicy(**header["policy"])
        pipeline = tuple(header["pipeline"])
        tie_map = tuple(header["tied_layer_map"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise StructureError(f"unreadable header: {exc}") from None
    except ConfigError as exc:
        raise ConsistencyError(f"header config invalid: {exc}") from None
    if tie_map != config.tied_layer_map:
        raise ConsistencyError("tied_layer_map does not match weight_share_group")

    (count,) = r.unpack("<I", "directory")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H", "directory")
        try:
            name = r.take(name_len, "directory").decode("utf-8")
        except UnicodeDecodeError:
            raise StructureError("tensor name is not UTF-8") from None
        dtype, rank = r.unpack("<BB", "directory")
        shape = r.unpack(f"<{rank}I", "directory")
        offset, length = r.unpack(_LOCATION.format, "directory")
        entries.append((name, dtype, shape, offset, length))

    payload_start = r.pos
    declared = sum(e[4] for e in entries)
    if payload_start + declared > len(data):
        raise TruncatedFileError(f"payload needs {declared} bytes, file has {len(data) - payload_start}")
    names = [e[0] for e in entries]
    if names != sorted(set(names)):
        raise StructureError("directory names are not unique and sorted")

    tensors = {}
    expected_offset = payload_start
    for name, dtype, shape, offset, length in entries:
        if dtype not in (DTYPE_F32, DTYPE_I8):
            raise StructureError(f"{name}: unknown dtype code {dtype}")
        if dtype == DTYPE_I8 and not shape:
            raise StructureError(f"{name}: quantized tensor needs a channel axis")
        if length != payload_length(dtype, shape):
            raise StructureError(f"{name}: byte length {length} does not match dims {shape}")
        if offset != expected_offset or offset + length > len(data):
            raise StructureError(f"{name}: offset {offset} is outside its payload slot")
        expected_offset += length
        chunk = data[offset : offset + length]
        if dtype == DTYPE_F32:
            tensors[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(shape)
        else:
            c = shape[0]
            scales = np.frombuffer(chunk[: 4 * c], dtype="<f4").astype(np.float32)
            values = np.frombuffer(chunk[4 * c :], dtype=np.int8).reshape(shape).copy()
            try:
                tensors[name] = QuantizedTensor(values, scales)
            except QuantizationError as exc:
                raise StructureError(f"{name}: {exc}") from None
    if expected_offset != len(data):
        raise StructureError(f"{len(data) - expected_offset} trailing bytes after payload")
    try:
        return Model(config, tensors, policy, pipeline)
    except ConfigError as exc:
        raise ConsistencyError(str(exc)) from None


def load_model(path: str | Path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Audio


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """PCM16 WAV of any length and channel count as float32 [samples, channels] and its rate."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, frames = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if width != 2:
                raise CodecError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
            raw = w.readframes(frames)
    except wave.Error as exc:
        raise CodecError(f"{path}: {exc}") from None
    except EOFError:
        raise CodecError(f"{path}: truncated WAV") from None
    pcm = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    return pcm.astype(np.float32) / np.float32(32768.0), rate


def load_clip(path: str | Path, sample_rate_hz: int = 16000, seconds: float = 5.0) -> ClipInput:
    """Read a PCM16 stereo WAV; samples scaled by 1/32768, truncated to ``seconds``."""
    samples, rate = read_wav(path)
    if samples.shape[1] != 2:
        raise ChannelCountError(f"{path}: expected 2 channels, got {samples.shape[1]}")
    if rate != sample_rate_hz:
        raise SampleRateError(f"{path}: expected {sample_rate_hz} Hz, got {rate} Hz")
    need = int(round(sample_rate_hz * seconds))
    if samples.shape[0] < need:
        raise InputTooShortError(f"{path}: {samples.shape[0] / rate:.3f} s of audio, need {seconds:g} s")
    if samples.shape[0] > need:
        warnings.warn(f"{path}: truncating {samples.shape[0] / rate:.3f} s clip to the first {seconds:g} s", stacklevel=2)
        samples = samples[:need]
    return ClipInput(np.ascontiguousarray(samples[:, 0]), np.ascontiguousarray(samples[:, 1]), sample_rate_hz)


def save_clip(clip: ClipInput, path: str | Path) -> None:
    """Write a clip as PCM16 stereo WAV (values clipped to the int16 range)."""
    pcm = np.stack([clip.left, clip.right], axis=1) * 32768.0
    pcm = np.clip(np.round(pcm), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())
