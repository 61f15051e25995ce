"""Command-line front end: simulate streams, score logs, sweep configs.

Exit codes: 0 on success, 2 for usage/input problems, 3 for backend
(transport) failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .bridge import BridgeModel, open_endpoint
from .harness import (
    Segment,
    StreamManifest,
    load_manifest,
    read_log,
    run_stream,
    save_manifest,
    write_log,
)
from .metrics import (
    delayed_words,
    resegment,
    score_segments,
    stream_laal,
    write_score_report,
    write_segmented_hypotheses,
)
from .mock import MockModel, generate_scenario, load_scenario, save_scenario
from .policy import PolicyConfig
from .types import InputError, ScenarioError, TransportError

HISTORY_FLAGS = {"fw": "fixed_words", "punct": "punctuation",
                 "baseline": "baseline_fixed"}
DEFAULT_SWEEP_F = [2, 4, 6, 8]
DEFAULT_SWEEP_N_WORDS = [10, 20, 30, 40]


def build_model(spec: str, attention_layer: int):
    if spec.startswith("mock:"):
        return MockModel(load_scenario(spec[len("mock:"):]))
    if spec.startswith("bridge:"):
        endpoint = spec[len("bridge:"):]
        return BridgeModel(open_endpoint(endpoint), attention_layer)
    raise InputError(f"unknown model spec {spec!r}, want mock:<path> or "
                     f"bridge:<endpoint>")


def close_model(model) -> None:
    close = getattr(model, "close", None)
    if close is not None:
        close()


def _policy_config(args: argparse.Namespace, *, f: int | None = None,
                   n_words: int | None = None,
                   history: str | None = None) -> PolicyConfig:
    return PolicyConfig(
        f=args.f if f is None else f,
        chunk_ms=args.chunk_ms,
        n_words=args.n_words if n_words is None else n_words,
        history_mode=HISTORY_FLAGS[args.history if history is None else history],
        ms_per_word_baseline=args.ms_per_word,
        attention_layer=args.attention_layer,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    config = _policy_config(args)
    model = build_model(args.model, args.attention_layer)
    try:
        log = run_stream(manifest, model, config,
                         measure_wall_clock=args.wall_clock)
    finally:
        close_model(model)
    write_log(log, args.out)
    print(f"{manifest.talk_id}: {len(log.events)} emission events -> {args.out}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    log = read_log(args.log)
    manifest = load_manifest(args.manifest)
    if not log.events:
        print("warning: log has no emission events, scores are 0",
              file=sys.stderr)
    modes = ["nca", "ca"] if args.mode == "both" else [args.mode]
    totals = {mode: stream_laal(log, manifest, mode) for mode in modes}
    segments = score_segments(log, manifest) if args.per_segment else None
    write_score_report(args.out, manifest.talk_id, totals, segments)
    if args.hyp_out:
        refs = [seg.reference_words() for seg in manifest.segments]
        chunks = resegment(delayed_words(log), refs)
        write_segmented_hypotheses(args.hyp_out, chunks)
    for mode, value in totals.items():
        print(f"{manifest.talk_id}\t{mode}\tstream_laal_ms={value!r}")
    return 0


def _sweep_one(manifest_path: str, model_spec: str, args: argparse.Namespace,
               history: str, f: int, n_words: int) -> dict:
    row = {"history": history, "f": f, "n_words": n_words}
    try:
        manifest = load_manifest(manifest_path)
        config = _policy_config(args, f=f, n_words=n_words, history=history)
        model = build_model(model_spec, args.attention_layer)
        try:
            log = run_stream(manifest, model, config)
        finally:
            close_model(model)
        modes = ["nca", "ca"] if args.mode == "both" else [args.mode]
        row["values"] = {mode: stream_laal(log, manifest, mode)
                         for mode in modes}
        row["error"] = None
    except Exception as exc:  # report per-config failures, keep sweeping
        row["values"] = {}
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["transport"] = isinstance(exc, TransportError)
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    if not args.f_values or not args.n_words_values or not args.histories:
        raise InputError("sweep lists must be non-empty")
    combos = [(h, f, n) for h in args.histories
              for f in args.f_values for n in args.n_words_values]
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(
            lambda c: _sweep_one(args.manifest, args.model, args, *c), combos))

    lines = ["\t".join(("history", "f", "n_words", "mode", "stream_laal_ms",
                        "status"))]
    failed = []
    for row in rows:
        if row["error"] is not None:
            failed.append(row)
            lines.append("\t".join((row["history"], str(row["f"]),
                                    str(row["n_words"]), "-", "",
                                    row["error"])))
            continue
        for mode, value in row["values"].items():
            lines.append("\t".join((row["history"], str(row["f"]),
                                    str(row["n_words"]), mode,
                                    repr(float(value)), "ok")))
    report = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    else:
        sys.stdout.write(report)
    for row in failed:
        print(f"config history={row['history']} f={row['f']} "
              f"n_words={row['n_words']} failed: {row['error']}",
              file=sys.stderr)
    if any(row.get("transport") for row in failed):
        return 3
    return 2 if failed else 0


def cmd_make_scenario(args: argparse.Namespace) -> int:
    scenario = generate_scenario(
        args.words, args.frames, seed=args.seed, noise=args.noise,
        compute_cost_ms=args.compute_cost_ms)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario_path = out_dir / "scenario.json"
    save_scenario(scenario, scenario_path)

    total_ms = args.frames * scenario.frame_duration_ms
    segments = _even_segments(scenario, args.segments, args.frames)
    manifest = StreamManifest(args.talk_id, total_ms, "scenario",
                              segments, scenario.frame_duration_ms)
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    print(f"wrote {scenario_path} and {manifest_path}")
    return 0


def _even_segments(scenario, num_segments: int, total_frames: int) -> list[Segment]:
    """Split the script into contiguous word groups and time-bound them by
    when each group's last word becomes available."""
    words = scenario.words
    if num_segments < 1 or num_segments > len(words):
        raise InputError("segments must be between 1 and the word count")
    frame_ms = scenario.frame_duration_ms
    base, extra = divmod(len(words), num_segments)
    sizes = [base + (1 if i < extra else 0) for i in range(num_segments)]
    segments = []
    start = 0
    prev_end_frame = 0
    for i, size in enumerate(sizes):
        group = words[start:start + size]
        start += size
        if i == num_segments - 1:
            end_frame = total_frames
        else:
            avail = max(max(w.alignment_frames) + w.lookahead_frames
                        for w in group)
            end_frame = max(prev_end_frame + 1, avail)
            end_frame = min(end_frame, total_frames - (num_segments - 1 - i))
        segments.append(Segment(prev_end_frame * frame_ms,
                                (end_frame - prev_end_frame) * frame_ms,
                                " ".join(w.surface for w in group)))
        prev_end_frame = end_frame
    return segments


def _add_policy_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--f", type=int, default=4,
                        help="forbidden frames at the window end (default 4)")
    parser.add_argument("--chunk-ms", type=float, default=1000.0,
                        help="stream chunk size in ms (default 1000)")
    parser.add_argument("--history", choices=sorted(HISTORY_FLAGS), default="fw",
                        help="history selection: fw, punct, or baseline")
    parser.add_argument("--n-words", type=int, default=20,
                        help="retained word cap for fw/baseline (default 20)")
    parser.add_argument("--ms-per-word", type=float, default=280.0,
                        help="audio per retained word for baseline (default 280)")
    parser.add_argument("--attention-layer", type=int, default=4,
                        help="1-based decoder layer to read attention from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamst",
        description="Streaming speech translation: simulate, score, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one stream and write the log")
    sim.add_argument("manifest")
    sim.add_argument("--model", required=True,
                     help="mock:<scenario.json> or bridge:<endpoint>")
    sim.add_argument("--out", required=True, help="emission log path (.jsonl)")
    sim.add_argument("--wall-clock", action="store_true",
                     help="measure real compute time instead of simulated")
    _add_policy_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    score = sub.add_parser("score", help="score an emission log")
    score.add_argument("log")
    score.add_argument("manifest")
    score.add_argument("--mode", choices=["nca", "ca", "both"], default="both")
    score.add_argument("--out", required=True, help="TSV report path")
    score.add_argument("--hyp-out",
                       help="write resegmented hypotheses, one per line")
    score.add_argument("--per-segment", action="store_true",
                       help="include per-segment rows in the report")
    score.set_defaults(func=cmd_score)

    sweep = sub.add_parser("sweep", help="simulate+score over a config grid")
    sweep.add_argument("manifest")
    sweep.add_argument("--model", required=True)
    sweep.add_argument("--f-values", type=int, nargs="+",
                       default=DEFAULT_SWEEP_F, dest="f_values")
    sweep.add_argument("--n-words-values", type=int, nargs="+",
                       default=DEFAULT_SWEEP_N_WORDS, dest="n_words_values")
    sweep.add_argument("--histories", nargs="+", choices=sorted(HISTORY_FLAGS),
                       default=["fw"])
    sweep.add_argument("--mode", choices=["nca", "ca", "both"], default="both")
    sweep.add_argument("--out", help="TSV report path (default stdout)")
    sweep.add_argument("--jobs", type=int, default=1,
                       help="parallel configs (default 1)")
    _add_policy_flags(sweep)
    sweep.set_defaults(func=cmd_sweep)

    gen = sub.add_parser("make-scenario",
                         help="generate a mock scenario + manifest")
    gen.add_argument("out_dir")
    gen.add_argument("--words", type=int, default=30)
    gen.add_argument("--frames", type=int, default=240)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--noise", type=float, default=0.2)
    gen.add_argument("--segments", type=int, default=3)
    gen.add_argument("--compute-cost-ms", type=float, default=0.0)
    gen.add_argument("--talk-id", default="mock_talk")
    gen.set_defaults(func=cmd_make_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ScenarioError, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
