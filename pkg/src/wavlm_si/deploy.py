"""Client deployment arithmetic: VAD-gated triggering, RTF, energy, fleet scale."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, TraceError, UndefinedIntervalError
from .model import ClassScores, ClipInput, Model, infer, random_clip

# Interval endpoints come from text files and float sums; a duration within
# this of the threshold counts as meeting it.
_DURATION_TOL = 1e-9


@dataclass(frozen=True)
class ActivityTrace:
    """Per-channel speech-active (start_s, end_s) intervals."""

    channels: tuple[tuple[tuple[float, float], ...], ...]

    def __post_init__(self):
        chans = []
        for ci, intervals in enumerate(self.channels):
            ivs = tuple((float(a), float(b)) for a, b in intervals)
            for a, b in ivs:
                if not b > a:
                    raise TraceError(f"channel {ci}: interval ({a}, {b}) has end <= start")
            for (a0, b0), (a1, b1) in zip(ivs, ivs[1:]):
                if a1 < b0:
                    raise TraceError(f"channel {ci}: intervals ({a0}, {b0}) and ({a1}, {b1}) overlap or are unsorted")
            chans.append(ivs)
        object.__setattr__(self, "channels", tuple(chans))

    @property
    def end_s(self) -> float:
        return max((b for ivs in self.channels for _, b in ivs), default=0.0)

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "ActivityTrace":
        per_channel: dict[int, list[tuple[float, float]]] = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TraceError(f"line {lineno}: expected 'channel start end', got {line!r}")
            try:
                ch, a, b = int(parts[0]), float(parts[1]), float(parts[2])
            except ValueError:
                raise TraceError(f"line {lineno}: cannot parse {line!r}") from None
            if ch < 0:
                raise TraceError(f"line {lineno}: negative channel index")
            per_channel.setdefault(ch, []).append((a, b))
        n = max(per_channel, default=-1) + 1
        return cls(tuple(tuple(sorted(per_channel.get(i, []))) for i in range(n)))

    def to_lines(self) -> list[str]:
        return [f"{ci} {a!r} {b!r}" for ci, ivs in enumerate(self.channels) for a, b in ivs]


def read_trace(path: str | Path) -> ActivityTrace:
    return ActivityTrace.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def write_trace(trace: ActivityTrace, path: str | Path) -> None:
    Path(path).write_text("\n".join(trace.to_lines()) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class OverlapEvent:
    onset_s: float
    duration_s: float


def detect_overlaps(trace: ActivityTrace, min_overlap_s: float = 0.3) -> list[OverlapEvent]:
    """Maximal spans where two or more channels are active, at least ``min_overlap_s`` long."""
    if len(trace.channels) < 2:
        raise TraceError(f"overlap detection needs >= 2 channels, trace has {len(trace.channels)}")
    events = []
    for ivs in trace.channels:
        for a, b in ivs:
            events.append((a, 1))
            events.append((b, -1))
    # at equal times, ends sort before starts so touching intervals do not overlap
    events.sort()
    out, active, onset = [], 0, None
    for t, delta in events:
        active += delta
        if active >= 2 and onset is None:
            onset = t
        elif active < 2 and onset is not None:
            if t > onset:
                out.append((onset, t))
            onset = None
    merged: list[list[float]] = []
    for a, b in out:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [OverlapEvent(a, b - a) for a, b in merged if b - a >= min_overlap_s - _DURATION_TOL]


def trigger_interval(total_audio_s: float, n_overlaps: int) -> float:
    """Average seconds between VAD-gated inference triggers."""
    if n_overlaps <= 0:
        raise UndefinedIntervalError("trigger interval is undefined without overlaps")
    return total_audio_s / n_overlaps


@dataclass(frozen=True)
class EnergyReduction:
    gating_factor: float
    speedup_factor: float
    combined: float


def energy_reduction(naive_interval_s: float, gated_interval_s: float, t_infer_old_s: float, t_infer_new_s: float) -> EnergyReduction:
    values = (naive_interval_s, gated_interval_s, t_infer_old_s, t_infer_new_s)
    if min(values) <= 0:
        raise InputError(f"energy_reduction needs positive inputs, got {values}")
    gating = gated_interval_s / naive_interval_s
    speedup = t_infer_old_s / t_infer_new_s
    return EnergyReduction(gating, speedup, gating * speedup)


@dataclass(frozen=True)
class EnergyScenario:
    """Inputs to the yearly fleet energy estimate.

    Watts are average model power above the idle baseline.  The default
    usage hours reproduce 1.01 kWh/user/year at 4.84 W.
    """

    baseline_watts: float = 7.16
    model_watts_old: float = 4.84
    model_watts_new: float = 0.19
    trigger_interval_s: float = 17.0
    naive_interval_s: float = 5.0
    inference_seconds_old: float = 1.6
    inference_seconds_new: float = 0.22
    users: float = 300e6
    active_hours_per_year: float = 208.8
    per_capita_kwh: float = 3128.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "users":
                if value < 0:
                    raise ConfigError("users must be >= 0")
            elif not value > 0:
                raise ConfigError(f"{f.name} must be positive, got {value}")

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "EnergyScenario":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key = key.strip()
            if not sep or key not in known:
                raise ConfigError(f"line {lineno}: expected one of {sorted(known)} as key=value, got {line!r}")
            try:
                values[key] = float(raw.strip().replace("_", ""))
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} is not a number") from None
        return cls(**values)

    def to_lines(self) -> list[str]:
        return [f"{k}={v!r}" for k, v in asdict(self).items()]


def read_scenario(path: str | Path) -> EnergyScenario:
    return EnergyScenario.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def people_equivalent(savings_gwh: float, per_capita_kwh: float) -> float:
    return savings_gwh * 1e6 / per_capita_kwh


@dataclass(frozen=True)
class FleetProjection:
    per_user_kwh_old: float
    per_user_kwh_new: float
    fleet_gwh_old: float
    fleet_gwh_new: float
    savings_gwh: float
    people_equivalent: float


def fleet_projection(s: EnergyScenario) -> FleetProjection:
    old = s.model_watts_old * s.active_hours_per_year / 1000.0
    new = s.model_watts_new * s.active_hours_per_year / 1000.0
    fleet_old = old * s.users / 1e6
    fleet_new = new * s.users / 1e6
    savings = fleet_old - fleet_new
    return FleetProjection(old, new, fleet_old, fleet_new, savings, people_equivalent(savings, s.per_capita_kwh))


def energy_report(s: EnergyScenario) -> list[tuple[str, str]]:
    """Rows of the yearly-consumption table plus the reduction estimates behind it."""
    red = energy_reduction(s.naive_interval_s, s.trigger_interval_s, s.inference_seconds_old, s.inference_seconds_new)
    fp = fleet_projection(s)
    users = f"{s.users / 1e6:g}M users"
    return [
        ("VAD gating factor", f"{red.gating_factor:.2f}x"),
        ("Inference speedup", f"{red.speedup_factor:.2f}x"),
        ("Estimated combined reduction", f"{red.combined:.1f}x"),
        ("Measured power ratio", f"{s.model_watts_old / s.model_watts_new:.1f}x"),
        ("Unoptimized feature per user", f"{fp.per_user_kwh_old:.2f} kWh"),
        ("Optimized feature per user", f"{fp.per_user_kwh_new:.2f} kWh"),
        (f"Unoptimized feature {users}", f"{fp.fleet_gwh_old:.0f} GWh"),
        (f"Optimized feature {users}", f"{fp.fleet_gwh_new:.0f} GWh"),
        (f"Savings {users}", f"{fp.savings_gwh:.0f} GWh"),
        ("Worldwide power usage per capita", f"{s.per_capita_kwh:,.0f} kWh"),
        (f"Savings {users} in per capita usage", f"{fp.people_equivalent:,.0f} people"),
    ]


@dataclass(frozen=True)
class RtfResult:
    mean_infer_s: float
    rtf: float
    min_infer_s: float
    median_infer_s: float
    timings_s: tuple[float, ...] = field(repr=False, default=())


def bench_rtf(m: Model, clip: ClipInput, repetitions: int = 5) -> RtfResult:
    """Wall-clock real-time factor; the first run is a discarded warm-up."""
    if repetitions < 3:
        raise ConfigError(f"repetitions must be >= 3, got {repetitions}")
    timings = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        infer(m, clip)
        timings.append(time.perf_counter() - t0)
    kept = timings[1:]
    mean = statistics.fmean(kept)
    return RtfResult(mean, mean / clip.seconds, min(kept), statistics.median(kept), tuple(kept))


@dataclass(frozen=True)
class Trigger:
    time_s: float
    overlap_s: float
    scores: ClassScores


@dataclass
class SimulationLog:
    triggers: list[Trigger]
    naive_triggers: int
    duration_s: float

    @property
    def count(self) -> int:
        return len(self.triggers)

    @property
    def gating_ratio(self) -> float:
        return self.naive_triggers / self.count if self.triggers else math.inf


def _window(audio: tuple[np.ndarray, np.ndarray], start: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    out = []
    for ch in audio:
        seg = np.zeros(n, dtype=np.float32)
        piece = ch[start : start + n]
        seg[: len(piece)] = piece
        out.append(seg)
    return out[0], out[1]


def simulate_meeting(
    trace: ActivityTrace,
    m: Model,
    audio: tuple[np.ndarray, np.ndarray] | None = None,
    duration_s: float | None = None,
    seed: int = 0,
    min_overlap_s: float = 0.3,
    naive_interval_s: float = 5.0,
) -> SimulationLog:
    """One inference per detected overlap on the 5 s window starting at its onset.

    ``audio`` is (left, right) at the model's sample rate; without it each
    trigger gets a synthetic clip seeded from ``seed`` and its index.
    """
    cfg = m.config
    overlaps = detect_overlaps(trace, min_overlap_s)
    duration = trace.end_s if duration_s is None else duration_s
    n = cfg.num_samples
    triggers = []
    for i, ev in enumerate(overlaps):
        if audio is None:
            clip = random_clip(seed + i, n, cfg.sample_rate_hz)
        else:
            start = int(round(ev.onset_s * cfg.sample_rate_hz))
            clip = ClipInput(*_window(audio, start, n), cfg.sample_rate_hz)
        triggers.append(Trigger(ev.onset_s, ev.duration_s, infer(m, clip)))
    return SimulationLog(triggers, int(duration // naive_interval_s), duration)


def periodic_trace(period_s: float, duration_s: float, overlap_s: float = 0.5, talk_s: float | None = None) -> ActivityTrace:
    """Two-channel trace: channel 0 talks continuously, channel 1 cuts in every ``period_s``."""
    starts = np.arange(0.0, duration_s, period_s)
    cuts = [(float(a), float(min(a + overlap_s, duration_s))) for a in starts if a + overlap_s <= duration_s]
    return ActivityTrace((((0.0, float(duration_s)),), tuple(cuts)))


def energy_vad(samples: np.ndarray, sample_rate_hz: int, frame_s: float = 0.02,
               threshold_db: float = -40.0, min_speech_s: float = 0.1) -> list[tuple[float, float]]:
    """Naive frame-energy voice activity: frames whose RMS exceeds ``threshold_db`` dBFS."""
    hop = max(1, int(round(frame_s * sample_rate_hz)))
    n_frames = len(samples) // hop
    if n_frames == 0:
        return []
    frames = np.asarray(samples[: n_frames * hop], dtype=np.float64).reshape(n_frames, hop)
    rms = np.sqrt((frames ** 2).mean(axis=1))
    active = 20 * np.log10(np.maximum(rms, 1e-12)) > threshold_db
    edges = np.flatnonzero(np.diff(np.r_[0, active.astype(np.int8), 0]))
    spans = [(s * hop / sample_rate_hz, e * hop / sample_rate_hz) for s, e in zip(edges[::2], edges[1::2])]
    return [(a, b) for a, b in spans if b - a >= min_speech_s - _DURATION_TOL]


def trace_from_audio(channels: Sequence[np.ndarray], sample_rate_hz: int, **vad_kwargs) -> ActivityTrace:
    return ActivityTrace(tuple(tuple(energy_vad(ch, sample_rate_hz, **vad_kwargs)) for ch in channels))
