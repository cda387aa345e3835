"""Runtime termination policies for early-exit inference over a stream.

Difference Detection (DD) runs only the first exit while its output stays
close to the output recorded at the start of the current scene, and reuses
the scene's majority-vote label. Temporal Patience (TP) instead tracks the
shallowest exit that agreed with the scene-start vote and also requires that
exit's label to stay unchanged. Confidence and single-exit baselines are
stateless.

Every step reports the MACs the engine actually executed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exit_graph import ExitGraph
from .tensor_ops import argmax, euclidean_distance

FULL_VOTE = -1

POLICY_KINDS = ("single_exit", "confidence", "difference_detection", "temporal_patience")

_ALIASES = {"dd": "difference_detection", "tp": "temporal_patience",
            "single": "single_exit", "conf": "confidence"}


@dataclass(frozen=True)
class SceneState:
    reference_vector: np.ndarray
    reference_vote: int
    selected_exit: int
    scene_start: int


@dataclass(frozen=True)
class StepResult:
    prediction: int
    macs: int
    exit_used: int  # exit index, or FULL_VOTE
    scene_changed: bool


@dataclass
class PolicyConfig:
    kind: str
    threshold: float = 0.0
    confidence_thresholds: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.kind = _ALIASES.get(self.kind, self.kind)
        self.threshold = float(self.threshold)
        self.confidence_thresholds = tuple(float(t) for t in self.confidence_thresholds)
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if math.isnan(self.threshold) or self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        for t in self.confidence_thresholds:
            if not 0.0 <= t <= 1.0 + 1e-6:
                raise ValueError(f"confidence thresholds must lie in [0, 1], got {t}")


def majority_vote(predictions: Sequence[int]) -> int:
    """Most frequent label; a tie goes to the deepest classifier among the tied classes."""
    if len(predictions) == 0:
        raise ValueError("majority vote over no predictions")
    counts = Counter(predictions)
    best = max(counts.values())
    for p in reversed(predictions):
        if counts[p] == best:
            return int(p)
    raise AssertionError("unreachable")


def tp_select(exit_predictions: Sequence[int], vote: int) -> int:
    """Shallowest exit whose prediction equals the vote."""
    for i, p in enumerate(exit_predictions):
        if p == vote:
            return i
    raise AssertionError(f"vote {vote} not among predictions {list(exit_predictions)}")


def _check_threshold(threshold: float):
    if math.isnan(threshold) or threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")


def _exit_predictions(graph: ExitGraph, run) -> List[int]:
    return [argmax(run.exit_outputs[k]) for k in range(graph.n_exits)]


def dd_step(state: Optional[SceneState], graph: ExitGraph, frame, threshold: float,
            position: int = 0, _predecessor: bool = False) -> Tuple[StepResult, SceneState]:
    """One Difference Detection step.

    ``_predecessor`` is an ablation for tests only: it compares against the
    previous sample's first-exit output instead of the scene's first one.
    """
    _check_threshold(threshold)
    if state is not None:
        run = graph.run_to_exit(frame, 0)
        current = run.exit_outputs[0]
        if euclidean_distance(current, state.reference_vector) < threshold:
            if _predecessor:
                state = replace(state, reference_vector=current)
            return StepResult(state.reference_vote, run.macs, 0, False), state
        run = graph.run_full(frame, run)
    else:
        run = graph.run_full(frame)
    vote = majority_vote(_exit_predictions(graph, run))
    new_state = SceneState(run.exit_outputs[0], vote, 0, position)
    return StepResult(vote, run.macs, FULL_VOTE, True), new_state


def tp_step(state: Optional[SceneState], graph: ExitGraph, frame, threshold: float,
            position: int = 0) -> Tuple[StepResult, SceneState]:
    """One Temporal Patience step.

    Within a scene only segments up to the selected exit and that exit's
    head are executed.
    """
    _check_threshold(threshold)
    if state is not None:
        sel = state.selected_exit
        run = graph.run_to_exit(frame, sel)
        current = run.exit_outputs[sel]
        label = argmax(current)
        if (euclidean_distance(current, state.reference_vector) < threshold
                and label == argmax(state.reference_vector)):
            return StepResult(label, run.macs, sel, False), state
        run = graph.run_full(frame, run)
    else:
        run = graph.run_full(frame)
    preds = _exit_predictions(graph, run)
    vote = majority_vote(preds)
    sel = tp_select(preds, vote)
    new_state = SceneState(run.exit_outputs[sel], vote, sel, position)
    return StepResult(vote, run.macs, FULL_VOTE, True), new_state


def confidence_step(graph: ExitGraph, frame, confidence_thresholds: Sequence[float]) -> StepResult:
    """Stop at the first exit whose top probability reaches its threshold."""
    if len(confidence_thresholds) != graph.n_exits - 1:
        raise ValueError(f"expected {graph.n_exits - 1} confidence thresholds, "
                         f"got {len(confidence_thresholds)}")
    run = None
    for k, thr in enumerate(confidence_thresholds):
        run = graph.run_to_exit(frame, k, run)
        out = run.exit_outputs[k]
        if float(out.max()) >= thr:
            return StepResult(argmax(out), run.macs, k, False)
    final = graph.final_exit
    run = graph.run_to_exit(frame, final, run)
    return StepResult(argmax(run.exit_outputs[final]), run.macs, final, False)


def single_exit_step(graph: ExitGraph, frame) -> StepResult:
    final = graph.final_exit
    run = graph.run_to_exit(frame, final)
    return StepResult(argmax(run.exit_outputs[final]), run.macs, final, False)


class Policy:
    """Per-stream policy instance; owns its scene state."""

    def __init__(self, config: PolicyConfig, graph: ExitGraph):
        self.config = config
        self.graph = graph
        if config.kind == "confidence" and len(config.confidence_thresholds) != graph.n_exits - 1:
            raise ValueError(f"confidence policy needs {graph.n_exits - 1} thresholds, "
                             f"got {len(config.confidence_thresholds)}")
        self.reset()

    def reset(self):
        self.state: Optional[SceneState] = None
        self.position = 0

    def step(self, frame) -> StepResult:
        kind = self.config.kind
        if kind == "difference_detection":
            result, self.state = dd_step(self.state, self.graph, frame,
                                         self.config.threshold, self.position)
        elif kind == "temporal_patience":
            result, self.state = tp_step(self.state, self.graph, frame,
                                         self.config.threshold, self.position)
        elif kind == "confidence":
            result = confidence_step(self.graph, frame, self.config.confidence_thresholds)
        else:
            result = single_exit_step(self.graph, frame)
        self.position += 1
        return result
