"""Streaming benchmark: accuracy, mean MACs per inference and exit usage.

Metrics follow the usual early-exit evaluation: each sample of a scene
stream is fed in order through a policy, and the policy's reported MACs are
averaged. Threshold sweeps fan out over a thread pool; each sweep point owns
its policy instance, so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exit_graph import ExitGraph, ReplayGraph, build_desk_model
from .policies import FULL_VOTE, Policy, PolicyConfig, majority_vote
from .stream_gen import StreamConfig, StreamSample, generate_stream
from .tensor_ops import argmax

CONFIDENCE_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class RunMetrics:
    policy: PolicyConfig
    accuracy: float
    mean_macs: float
    exit_shares: Tuple[float, ...]  # one per exit, full vote last
    scene_change_count: int


@dataclass
class SweepTable:
    kind: str
    rows: List[Tuple[Optional[float], RunMetrics]] = field(default_factory=list)

    @property
    def thresholds(self) -> List[Optional[float]]:
        return [t for t, _ in self.rows]


def default_thresholds(n: int = 16) -> List[float]:
    """Geometric grid from 1e-3 up to sqrt(2), the largest distance between two probability vectors."""
    return [float(t) for t in np.geomspace(1e-3, math.sqrt(2.0), n)]


def _check_stream(graph: ExitGraph, stream: Sequence[StreamSample]):
    if len(stream) == 0:
        raise ValueError("cannot evaluate an empty stream")
    shape = tuple(stream[0].frame.shape)
    if shape != graph.input_shape:
        raise ValueError(f"stream frame shape {shape} does not match model input {graph.input_shape}")


def evaluate(policy: PolicyConfig, graph: ExitGraph, stream: Sequence[StreamSample]) -> RunMetrics:
    _check_stream(graph, stream)
    runner = Policy(policy, graph)
    n_exits = graph.n_exits
    counts = [0] * (n_exits + 1)
    correct = 0
    total_macs = 0
    changes = 0
    for sample in stream:
        res = runner.step(sample.frame)
        correct += res.prediction == sample.label
        total_macs += res.macs
        changes += res.scene_changed
        counts[n_exits if res.exit_used == FULL_VOTE else res.exit_used] += 1
    n = len(stream)
    return RunMetrics(
        policy=policy,
        accuracy=correct / n,
        mean_macs=total_macs / n,
        exit_shares=tuple(c / n for c in counts),
        scene_change_count=changes,
    )


def sweep(policy_kind: str, thresholds: Sequence[float], graph: ExitGraph,
          stream: Sequence[StreamSample], workers: int = 1) -> SweepTable:
    if len(thresholds) == 0:
        raise ValueError("sweep needs at least one threshold")
    ordered = sorted(float(t) for t in thresholds)
    if len(set(ordered)) != len(ordered):
        raise ValueError(f"duplicate thresholds in sweep: {list(thresholds)}")
    configs = [PolicyConfig(policy_kind, t) for t in ordered]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(lambda c: evaluate(c, graph, stream), configs))
    else:
        metrics = [evaluate(c, graph, stream) for c in configs]
    return SweepTable(configs[0].kind, list(zip(ordered, metrics)))


def tune_confidence(graph: ExitGraph, stream: Sequence[StreamSample],
                    grid: Sequence[float] = CONFIDENCE_GRID) -> Tuple[float, ...]:
    """Exhaustive per-exit threshold search.

    Picks the most accurate configuration whose mean MACs stay below the
    single-exit cost; ties go to the cheaper one, then to the earlier grid
    point. Falls back to never exiting early if nothing qualifies.
    """
    budget = graph.single_exit_cost
    best = None
    for combo in itertools.product(grid, repeat=graph.n_exits - 1):
        m = evaluate(PolicyConfig("confidence", confidence_thresholds=combo), graph, stream)
        if m.mean_macs >= budget:
            continue
        key = (-m.accuracy, m.mean_macs)
        if best is None or key < best[0]:
            best = (key, combo)
    if best is None:
        return (1.0,) * (graph.n_exits - 1)
    return tuple(best[1])


def labeling_comparison(graph: ExitGraph, stream: Sequence[StreamSample],
                        confidence_thresholds: Sequence[float]) -> Tuple[float, float]:
    """Accuracy of majority-vote labels vs confidence-exit labels, both on full runs."""
    _check_stream(graph, stream)
    if len(confidence_thresholds) != graph.n_exits - 1:
        raise ValueError(f"expected {graph.n_exits - 1} confidence thresholds, "
                         f"got {len(confidence_thresholds)}")
    vote_ok = conf_ok = 0
    for sample in stream:
        outs = graph.run_full(sample.frame).exit_outputs
        preds = [argmax(outs[k]) for k in range(graph.n_exits)]
        vote_ok += majority_vote(preds) == sample.label
        conf = preds[-1]
        for k, thr in enumerate(confidence_thresholds):
            if float(outs[k].max()) >= thr:
                conf = preds[k]
                break
        conf_ok += conf == sample.label
    n = len(stream)
    return vote_ok / n, conf_ok / n


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def report_csv(tables: Sequence[SweepTable], path) -> None:
    if not tables or not any(t.rows for t in tables):
        raise ValueError("nothing to report")
    n_shares = len(next(t for t in tables if t.rows).rows[0][1].exit_shares)
    header = (["policy", "threshold", "accuracy", "mean_macs"]
              + [f"share_exit{k}" for k in range(n_shares - 1)]
              + ["share_full_vote", "scene_changes"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for table in tables:
            for thr, m in table.rows:
                w.writerow([table.kind, _fmt(thr), _fmt(m.accuracy), _fmt(m.mean_macs)]
                           + [_fmt(s) for s in m.exit_shares] + [m.scene_change_count])


@dataclass
class Benchmark:
    """A generated stream, the desk model built from its centroids, and a replay engine."""

    config: StreamConfig
    stream: List[StreamSample]
    centroids: list
    graph: ExitGraph
    replay: ReplayGraph


def make_benchmark(config: StreamConfig, model_seed: Optional[int] = None,
                   graph: Optional[ExitGraph] = None,
                   stream: Optional[List[StreamSample]] = None) -> Benchmark:
    centroids = []
    if stream is None or graph is None:
        gen, centroids = generate_stream(config)
        stream = gen if stream is None else stream
    if graph is None:
        graph = build_desk_model(centroids, seed=config.seed if model_seed is None else model_seed)
    _check_stream(graph, stream)
    return Benchmark(config, stream, centroids, graph, ReplayGraph(graph, [s.frame for s in stream]))


def run_sweeps(bench: Benchmark, thresholds: Optional[Sequence[float]] = None,
               workers: int = 1) -> List[SweepTable]:
    """DD and TP sweeps plus single-exit and tuned confidence baseline rows."""
    thresholds = default_thresholds() if thresholds is None else thresholds
    g, s = bench.replay, bench.stream
    tables = [sweep(kind, thresholds, g, s, workers)
              for kind in ("difference_detection", "temporal_patience")]
    tables.append(SweepTable("single_exit", [(None, evaluate(PolicyConfig("single_exit"), g, s))]))
    conf = tune_confidence(g, s[: len(s) // 2])
    tables.append(SweepTable("confidence", [
        (None, evaluate(PolicyConfig("confidence", confidence_thresholds=conf), g, s))]))
    return tables
