"""Command-line driver: ``wavlm-si <verb> ...``.

Failures print a single ``error: <kind>: <message>`` line on stderr; usage
errors exit with 2, everything else with 1.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from typing import Sequence

from . import analysis, compression, deploy, io, metrics
from .config import CLASS_NAMES, load_config
from .errors import ChannelCountError, SampleRateError, WavLMSIError
from .model import build_model, infer
from .quantization import quantize_model


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_steps(tokens: Sequence[str]) -> list[str]:
    steps = [s for tok in tokens for s in tok.replace(";", " ").split()]
    if not steps:
        raise UsageError("--steps needs at least one step")
    for step in steps:
        kind, _, arg = step.partition("=")
        if kind not in compression.CANONICAL_ORDER:
            raise UsageError(f"unknown step {step!r}; choose from {', '.join(compression.CANONICAL_ORDER)}")
        if kind in ("select-layers", "tie") and not arg:
            raise UsageError(f"step {kind} needs an argument, e.g. {kind}={'0,3,6' if kind == 'select-layers' else '3'}")
        if kind in ("drop-pos-conv", "quantize") and arg:
            raise UsageError(f"step {kind} takes no argument")
    return steps


def apply_steps(m, steps: Sequence[str]):
    if not compression.is_canonical_order(steps):
        warnings.warn(
            f"steps {' '.join(steps)} are not in canonical order ({' -> '.join(compression.CANONICAL_ORDER)})",
            compression.CompressionWarning,
            stacklevel=2,
        )
    for step in steps:
        kind, _, arg = step.partition("=")
        if kind == "drop-pos-conv":
            m = compression.remove_positional_conv(m)
        elif kind == "select-layers":
            m = compression.select_layers(m, compression.LayerSelection.parse(arg))
        elif kind == "tie":
            try:
                group = int(arg)
            except ValueError:
                raise UsageError(f"tie needs an integer group size, got {arg!r}") from None
            m = compression.tie_weights(m, group)
        else:
            m = quantize_model(m)
    return m


def cmd_build(args) -> None:
    m = build_model(load_config(args.config), args.seed)
    n = io.save_model(m, args.out)
    print(f"wrote {args.out} ({n} bytes)")


def cmd_compress(args) -> None:
    steps = _parse_steps(args.steps)
    m = apply_steps(io.load_model(args.input), steps)
    n = io.save_model(m, args.out)
    print(f"wrote {args.out} ({n} bytes) pipeline: {' -> '.join(m.pipeline) or '(none)'}")


def cmd_analyze(args) -> None:
    m = io.load_model(args.input)
    report = analysis.analyze(m, clip_seconds=args.clip_seconds, name=args.input)
    print(report.table() if args.format == "table" else "\n".join(report.kv_lines()))


def cmd_infer(args) -> None:
    m = io.load_model(args.model)
    out = infer(m, io.load_clip(args.clip, m.config.sample_rate_hz, m.config.clip_seconds))
    for name, p in zip(CLASS_NAMES, out.probs):
        print(f"score.{name} = {p:.6f}")
    print(f"label = {out.label}")
    if args.emit_embedding:
        print("embedding = " + ",".join(f"{v:.7g}" for v in out.embedding))


def cmd_bench(args) -> None:
    m = io.load_model(args.model)
    clip = io.load_clip(args.clip, m.config.sample_rate_hz, m.config.clip_seconds)
    res = deploy.bench_rtf(m, clip, args.reps)
    mem = analysis.trace_memory(m, clip)
    print(f"bench.repetitions = {args.reps}")
    print(f"bench.mean_infer_s = {res.mean_infer_s:.6f}")
    print(f"bench.median_infer_s = {res.median_infer_s:.6f}")
    print(f"bench.min_infer_s = {res.min_infer_s:.6f}")
    print(f"bench.rtf = {res.rtf:.6f}")
    print(f"memory.peak_live_bytes = {mem.peak_live_bytes}")
    print(f"memory.weights_bytes = {mem.weights_bytes}")


def cmd_roc(args) -> None:
    clips = metrics.read_scores(args.scores)
    curve = metrics.roc_curve(clips, args.positive)
    tpr = metrics.tpr_at_fpr(clips, args.positive, args.fpr)
    print(f"roc.positive = {args.positive}")
    print(f"roc.fpr_budget = {args.fpr:g}")
    print(f"roc.tpr_at_fpr = {tpr:.6f}")
    print(f"roc.auc = {metrics.roc_auc(curve):.6f}")
    print("# fpr tpr threshold")
    for p in curve:
        print(f"{p.fpr:.6f} {p.tpr:.6f} {p.threshold:.6g}")


def cmd_simulate(args) -> None:
    m = io.load_model(args.model)
    trace = deploy.read_trace(args.trace)
    audio = None
    if args.audio:
        samples, rate = io.read_wav(args.audio)
        if samples.shape[1] != 2:
            raise ChannelCountError(f"{args.audio}: expected 2 channels, got {samples.shape[1]}")
        if rate != m.config.sample_rate_hz:
            raise SampleRateError(f"{args.audio}: expected {m.config.sample_rate_hz} Hz, got {rate} Hz")
        audio = (samples[:, 0], samples[:, 1])
    log = deploy.simulate_meeting(trace, m, audio, args.duration, args.seed, args.min_overlap)
    print("# time_s overlap_s label " + " ".join(CLASS_NAMES))
    for t in log.triggers:
        print(f"{t.time_s:.3f} {t.overlap_s:.3f} {t.scores.label} " + " ".join(f"{p:.6f}" for p in t.scores.probs))
    print(f"simulate.duration_s = {log.duration_s:g}")
    print(f"simulate.triggers = {log.count}")
    print(f"simulate.naive_triggers = {log.naive_triggers}")
    print(f"simulate.gating_ratio = {log.gating_ratio:.4f}")


def cmd_energy(args) -> None:
    scenario = deploy.EnergyScenario() if args.scenario == "default" else deploy.read_scenario(args.scenario)
    rows = deploy.energy_report(scenario)
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k.ljust(width)}  {v}")


def cmd_vad(args) -> None:
    samples, rate = io.read_wav(args.wav)
    trace = deploy.trace_from_audio(
        [samples[:, c] for c in range(samples.shape[1])], rate, threshold_db=args.threshold_db
    )
    deploy.write_trace(trace, args.out)
    print(f"wrote {args.out} ({sum(len(c) for c in trace.channels)} intervals)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavlm-si", description="Build, compress, analyze and run speech-interruption models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build", help="initialize a model from a config file or preset name")
    s.add_argument("--config", required=True, help="JSON config file or preset name")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("compress", help="apply compression steps in order")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--steps", nargs="+", required=True,
                   help="drop-pos-conv | select-layers=i,j,k | tie=N | quantize")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("analyze", help="parameter, MAC and size report")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--clip-seconds", type=float, default=None)
    s.add_argument("--format", choices=("table", "kv"), default="table")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("infer", help="classify one 5 s stereo clip")
    s.add_argument("--model", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--emit-embedding", action="store_true")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("bench", help="real-time factor and activation memory")
    s.add_argument("--model", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--reps", type=int, required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("roc", help="TPR at a fixed FPR from a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--positive", default="failed_interruption", choices=CLASS_NAMES)
    s.add_argument("--fpr", type=float, default=0.01)
    s.set_defaults(func=cmd_roc)

    s = sub.add_parser("simulate", help="overlap-gated triggering over a meeting trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--audio", help="stereo WAV of the meeting; synthetic clips otherwise")
    s.add_argument("--duration", type=float, default=None, help="meeting length (default: end of trace)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-overlap", type=float, default=0.3)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("energy", help="yearly energy and fleet projection")
    s.add_argument("--scenario", required=True, help="key=value file, or 'default'")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("vad", help="energy-threshold activity trace from a multichannel WAV")
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold-db", type=float, default=-40.0)
    s.set_defaults(func=cmd_vad)
    return p


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv: Sequence[str] | None = None) -> int:
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                args = build_parser().parse_args(argv)
                args.func(args)
            finally:
                for w in caught:
                    print(f"warning: {_one_line(w.message)}", file=sys.stderr)
    except UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=sys.stderr)
        return 2
    except WavLMSIError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
