"""Command line front end.

    temporal-eenn gen-model --config bench.cfg --out model.bin
    temporal-eenn gen-stream --config bench.cfg --out stream.bin
    temporal-eenn run --config bench.cfg --out run.csv
    temporal-eenn sweep --config bench.cfg --out sweep.csv --workers 8
    temporal-eenn compare-labeling --config bench.cfg --out labeling.csv
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .bench import (Benchmark, SweepTable, evaluate, labeling_comparison, make_benchmark,
                    report_csv, run_sweeps, tune_confidence)
from .exit_graph import build_desk_model
from .model_io import load_model, save_model
from .policies import PolicyConfig
from .stream_gen import StreamConfig, generate_stream, load_stream, make_centroids, save_stream

log = logging.getLogger("temporal_eenn")

_FLOATS = {"noise_sigma", "drift_rate", "threshold"}
_INTS = {"class_count", "mean_scene_length", "stream_length", "seed", "model_seed", "workers"}
_LISTS = {"frame_shape": int, "confidence_thresholds": float, "thresholds": float}


@dataclass
class RunConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    policy: str = "difference_detection"
    threshold: float = 0.2
    confidence_thresholds: Optional[Tuple[float, ...]] = None
    thresholds: Optional[List[float]] = None
    model_seed: Optional[int] = None
    workers: int = 1


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[config]\n" + text)
    values = {}
    for key, raw in parser.items("config"):
        if key in _FLOATS:
            values[key] = float(raw)
        elif key in _INTS:
            values[key] = int(raw)
        elif key in _LISTS:
            values[key] = [_LISTS[key](v) for v in raw.replace(" ", "").split(",") if v]
        elif key == "policy":
            values[key] = raw.strip()
        else:
            raise ValueError(f"unknown config key {key!r}")
    stream_keys = set(StreamConfig.field_names())
    stream = StreamConfig(**{k: v for k, v in values.items() if k in stream_keys})
    rest = {k: v for k, v in values.items() if k not in stream_keys}
    if "confidence_thresholds" in rest:
        rest["confidence_thresholds"] = tuple(rest["confidence_thresholds"])
    cfg = RunConfig(stream=stream, **rest)
    PolicyConfig(cfg.policy, cfg.threshold)  # fail before any stream is built
    return cfg


def _load_config(args) -> RunConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.stream.seed = args.seed
        cfg.stream.validate()
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if cfg.workers < 1:
        raise ValueError(f"workers must be >= 1, got {cfg.workers}")
    return cfg


def _benchmark(args, cfg: RunConfig) -> Benchmark:
    graph = load_model(args.model) if getattr(args, "model", None) else None
    stream = load_stream(args.stream) if getattr(args, "stream", None) else None
    return make_benchmark(cfg.stream, cfg.model_seed, graph, stream)


def _confidence(bench: Benchmark, cfg: RunConfig) -> Tuple[float, ...]:
    if cfg.confidence_thresholds is not None:
        return cfg.confidence_thresholds
    half = bench.stream[: max(1, len(bench.stream) // 2)]
    return tune_confidence(bench.replay, half)


def cmd_gen_model(args, cfg: RunConfig):
    seed = cfg.stream.seed if cfg.model_seed is None else cfg.model_seed
    graph = build_desk_model(make_centroids(cfg.stream), seed=seed)
    save_model(graph, args.out)
    log.info("wrote model to %s (exit costs %s)", args.out,
             [graph.cumulative_cost(k) for k in range(graph.n_exits)])


def cmd_gen_stream(args, cfg: RunConfig):
    samples, _ = generate_stream(cfg.stream)
    save_stream(samples, args.out, cfg.stream.class_count)
    log.info("wrote %d samples to %s", len(samples), args.out)


def cmd_run(args, cfg: RunConfig):
    bench = _benchmark(args, cfg)
    conf = ()
    if PolicyConfig(cfg.policy).kind == "confidence":
        conf = _confidence(bench, cfg)
    policy = PolicyConfig(cfg.policy, cfg.threshold, conf)
    metrics = evaluate(policy, bench.replay, bench.stream)
    thr = policy.threshold if policy.kind in ("difference_detection", "temporal_patience") else None
    report_csv([SweepTable(policy.kind, [(thr, metrics)])], args.out)


def cmd_sweep(args, cfg: RunConfig):
    bench = _benchmark(args, cfg)
    tables = run_sweeps(bench, cfg.thresholds, cfg.workers)
    report_csv(tables, args.out)
    log.info("wrote %d rows to %s", sum(len(t.rows) for t in tables), args.out)


def cmd_compare_labeling(args, cfg: RunConfig):
    bench = _benchmark(args, cfg)
    conf = _confidence(bench, cfg)
    vote, confidence = labeling_comparison(bench.replay, bench.stream, conf)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vote_accuracy", "confidence_accuracy", "gap_pp", "confidence_thresholds"])
        w.writerow([f"{vote:.4f}", f"{confidence:.4f}", f"{100 * (vote - confidence):.4f}",
                    " ".join(f"{t:g}" for t in conf)])


COMMANDS = {
    "gen-model": cmd_gen_model,
    "gen-stream": cmd_gen_stream,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "compare-labeling": cmd_compare_labeling,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="temporal-eenn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=None, help="overrides 'seed' in the config")
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", required=True)
        if name in ("run", "sweep", "compare-labeling"):
            p.add_argument("--model", default=None, help="model file; built from the config if omitted")
            p.add_argument("--stream", default=None, help="stream file; generated if omitted")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, KeyError, IndexError, configparser.Error) as exc:
        print(f"temporal-eenn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
