"""Early-exit network topology: trunk segments with one classifier head each.

An :class:`ExitGraph` is immutable once built. Execution state lives in a
:class:`PartialRun`, which lets a caller stop at any exit and later resume
deeper without recomputing a segment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor_ops as ops
from .tensor_ops import DTYPE, ShapeError, Tensor

LAYER_KINDS = ("reorder", "conv", "depthwise", "pool", "flatten", "dense", "softmax")

_tokens = itertools.count(1)


@dataclass(frozen=True, eq=False)
class Layer:
    """One layer spec plus its weights.

    ``window=None`` on a pool layer means global pooling over the whole map.
    """

    kind: str
    kernel: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    stride: Tuple[int, int] = (1, 1)
    padding: str = "valid"
    activation: Optional[str] = None
    pool: str = "max"
    window: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in (None, "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        # one memory layout so saved and loaded weights hit the same kernels bit for bit
        for name in ("kernel", "bias"):
            arr = getattr(self, name)
            if arr is not None:
                object.__setattr__(self, name, np.ascontiguousarray(arr, dtype=DTYPE))
        object.__setattr__(self, "stride", tuple(int(s) for s in self.stride))

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        """Static shape inference; raises ShapeError on mismatch."""
        return self._static(shape)[0]

    def macs(self, shape: Tuple[int, ...]) -> int:
        return self._static(shape)[1]

    def _static(self, shape):
        k = self.kind
        if k == "reorder":
            if len(shape) != 4:
                raise ShapeError(f"reorder expects rank 4, got {shape}")
            t, h, w, c = shape
            return (h, w, t * c), 0
        if k in ("conv", "depthwise"):
            if len(shape) != 3:
                raise ShapeError(f"{k} expects rank 3, got {shape}")
            h, w, c = shape
            kh, kw = self.kernel.shape[:2]
            kc = self.kernel.shape[2]
            if kc != c:
                raise ShapeError(f"{k} kernel expects {kc} channels, input has {c}")
            ho, _ = ops.conv_output_size(h, kh, self.stride[0], self.padding)
            wo, _ = ops.conv_output_size(w, kw, self.stride[1], self.padding)
            cout = self.kernel.shape[3] if k == "conv" else c
            per = kh * kw * c * (cout if k == "conv" else 1)
            return (ho, wo, cout), per * ho * wo
        if k == "pool":
            if len(shape) != 3:
                raise ShapeError(f"pool expects rank 3, got {shape}")
            h, w, c = shape
            ph, pw = self.window or (h, w)
            sh, sw = (ph, pw) if self.window is None else self.stride
            if ph > h or pw > w:
                raise ShapeError(f"pool window {(ph, pw)} larger than input {(h, w)}")
            ho = (h - ph) // sh + 1
            wo = (w - pw) // sw + 1
            return (ho, wo, c), (ho * wo * c if self.pool == "avg" else 0)
        if k == "flatten":
            return (int(np.prod(shape)),), 0
        if k == "dense":
            if len(shape) != 1 or shape[0] != self.kernel.shape[0]:
                raise ShapeError(f"dense expects ({self.kernel.shape[0]},), got {shape}")
            return (self.kernel.shape[1],), self.kernel.shape[0] * self.kernel.shape[1]
        # softmax
        if len(shape) != 1:
            raise ShapeError(f"softmax expects a vector, got {shape}")
        return shape, 0

    def apply(self, x: Tensor) -> Tuple[Tensor, int]:
        k = self.kind
        if k == "reorder":
            y, macs = ops.reorder_time_antenna(x), 0
        elif k == "conv":
            y, macs = ops.conv2d(x, self.kernel, self.bias, self.stride, self.padding)
        elif k == "depthwise":
            y, macs = ops.depthwise_conv2d(x, self.kernel, self.bias, self.stride, self.padding)
        elif k == "pool":
            if self.window is None:
                y, macs = ops.pool2d(x, self.pool, x.shape[:2], x.shape[:2])
            else:
                y, macs = ops.pool2d(x, self.pool, self.window, self.stride)
        elif k == "flatten":
            y, macs = x.reshape(-1), 0
        elif k == "dense":
            y, macs = ops.dense(x, self.kernel, self.bias)
        else:
            y, macs = ops.softmax(x), 0
        if self.activation == "relu":
            y = ops.relu(y)
        return y, macs


@dataclass
class PartialRun:
    """Execution state for one frame.

    ``deepest_segment`` is -1 before any segment has run. Segment outputs are
    kept so that a skipped shallow head can still be evaluated on resume.
    """

    frame: object
    token: int
    deepest_segment: int = -1
    activations: List[Tensor] = field(default_factory=list)
    exit_outputs: Dict[int, Tensor] = field(default_factory=dict)
    macs: int = 0


class ExitGraph:
    """Linear trunk of segments; head ``k`` reads the output of segment ``k``.

    The last head is the final classifier.
    """

    def __init__(self, input_shape, segments: Sequence[Sequence[Layer]],
                 heads: Sequence[Sequence[Layer]], class_count: int):
        if len(segments) != len(heads):
            raise ShapeError(f"{len(segments)} segments but {len(heads)} heads")
        if not segments:
            raise ShapeError("graph needs at least one segment")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.segments = [list(s) for s in segments]
        self.heads = [list(h) for h in heads]
        self.class_count = int(class_count)

        self.segment_costs: List[int] = []
        self.head_costs: List[int] = []
        self.segment_shapes: List[Tuple[int, ...]] = []
        shape = self.input_shape
        for k, (seg, head) in enumerate(zip(self.segments, self.heads)):
            cost = 0
            for layer in seg:
                cost += layer.macs(shape)
                shape = layer.output_shape(shape)
            self.segment_costs.append(cost)
            self.segment_shapes.append(shape)
            hshape, hcost = shape, 0
            for layer in head:
                hcost += layer.macs(hshape)
                hshape = layer.output_shape(hshape)
            if hshape != (self.class_count,):
                raise ShapeError(f"head {k} outputs {hshape}, expected ({self.class_count},)")
            if not head or head[-1].kind != "softmax":
                raise ShapeError(f"head {k} must end in softmax")
            self.head_costs.append(hcost)

    @property
    def n_exits(self) -> int:
        return len(self.heads)

    @property
    def final_exit(self) -> int:
        return len(self.heads) - 1

    def _check_exit(self, exit_idx: int):
        if not 0 <= exit_idx < len(self.heads):
            raise IndexError(f"exit index {exit_idx} out of range [0, {len(self.heads)})")

    def cumulative_cost(self, exit_idx: int) -> int:
        """Cost of terminating at ``exit_idx``: segments 0..exit_idx plus that head only."""
        self._check_exit(exit_idx)
        return sum(self.segment_costs[: exit_idx + 1]) + self.head_costs[exit_idx]

    @property
    def full_vote_cost(self) -> int:
        return sum(self.segment_costs) + sum(self.head_costs)

    @property
    def single_exit_cost(self) -> int:
        return self.cumulative_cost(self.final_exit)

    # -- execution ------------------------------------------------------

    def _run_layers(self, layers: Sequence[Layer], x: Tensor, where: str) -> Tuple[Tensor, int]:
        total = 0
        for layer in layers:
            x, macs = layer.apply(x)
            total += macs
        return x, total

    def _compute_segment(self, run: PartialRun, k: int) -> int:
        x = run.frame if k == 0 else run.activations[k - 1]
        y, macs = self._run_layers(self.segments[k], x, f"segment{k}")
        run.activations.append(y)
        return macs

    def _compute_head(self, run: PartialRun, k: int) -> Tuple[Tensor, int]:
        return self._run_layers(self.heads[k], run.activations[k], f"head{k}")

    def _new_run(self, frame) -> PartialRun:
        frame = np.asarray(frame)
        if frame.shape != self.input_shape:
            raise ShapeError(f"frame shape {frame.shape} does not match model input {self.input_shape}")
        return PartialRun(frame=frame, token=next(_tokens))

    def run_to_exit(self, frame, exit_idx: int, prior: Optional[PartialRun] = None,
                    all_heads: bool = False) -> PartialRun:
        """Execute up to ``exit_idx``, resuming from ``prior`` when given.

        Only head ``exit_idx`` is evaluated unless ``all_heads`` is set, in
        which case every head up to ``exit_idx`` that has not run yet is
        evaluated too. ``prior`` is updated in place and returned.
        """
        self._check_exit(exit_idx)
        if prior is None:
            run = self._new_run(frame)
        else:
            if prior.frame is not frame:
                raise ValueError(f"partial run {prior.token} belongs to a different frame")
            run = prior
        for k in range(run.deepest_segment + 1, exit_idx + 1):
            run.macs += self._compute_segment(run, k)
            run.deepest_segment = k
        for k in range(exit_idx + 1):
            if (all_heads or k == exit_idx) and k not in run.exit_outputs:
                out, macs = self._compute_head(run, k)
                run.exit_outputs[k] = out
                run.macs += macs
        return run

    def run_full(self, frame, prior: Optional[PartialRun] = None) -> PartialRun:
        """Evaluate every segment and every head."""
        return self.run_to_exit(frame, self.final_exit, prior, all_heads=True)


def run_to_exit(graph: ExitGraph, frame, exit_idx: int, prior: Optional[PartialRun] = None,
                all_heads: bool = False) -> PartialRun:
    return graph.run_to_exit(frame, exit_idx, prior, all_heads)


def run_full(graph: ExitGraph, frame, prior: Optional[PartialRun] = None) -> PartialRun:
    return graph.run_full(frame, prior)


def cumulative_cost(graph: ExitGraph, exit_idx: int) -> int:
    return graph.cumulative_cost(exit_idx)


class ReplayGraph(ExitGraph):
    """An ExitGraph that serves head outputs precomputed for a fixed frame set.

    Cost bookkeeping is inherited unchanged, so every PartialRun reports the
    same MACs as live execution. Frames are matched by object identity, so
    pass the very arrays the replay was built from.
    """

    def __init__(self, graph: ExitGraph, frames: Sequence[Tensor]):
        super().__init__(graph.input_shape, graph.segments, graph.heads, graph.class_count)
        self._frames = list(frames)
        self._outputs: Dict[int, List[Tensor]] = {}
        for frame in self._frames:
            run = graph.run_full(frame)
            self._outputs[id(frame)] = [run.exit_outputs[k] for k in range(graph.n_exits)]

    def _cached(self, frame) -> List[Tensor]:
        try:
            return self._outputs[id(frame)]
        except KeyError:
            raise KeyError("frame was not part of this replay set") from None

    def _new_run(self, frame) -> PartialRun:
        self._cached(frame)
        return PartialRun(frame=frame, token=next(_tokens))

    def _compute_segment(self, run: PartialRun, k: int) -> int:
        return self.segment_costs[k]

    def _compute_head(self, run: PartialRun, k: int) -> Tuple[Tensor, int]:
        return self._cached(run.frame)[k], self.head_costs[k]


# -- constructive desk model ----------------------------------------------

DEFAULT_TRUNK = {
    "widths": (8, 16, 32),
    "kernel": 3,
    "first_stride": 2,
    # max-pool applied at the start of each segment after the first
    "segment_pools": (None, 2),
    # avg-pool window of each head; None is global, 1 skips pooling
    "head_pools": (None, 2, 1),
    "sharpness": 4.0,
}


def _he(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(DTYPE)


def build_desk_model(centroids: Sequence[Tensor], trunk_config: Optional[dict] = None,
                     seed: int = 0) -> ExitGraph:
    """Build a trained-looking early-exit model without training.

    The trunk gets fixed random depthwise-separable weights. Each head is a
    nearest-centroid classifier in its own pooled feature space: for class
    feature ``mu`` the dense row is ``2*mu`` with bias ``-|mu|^2``, divided by
    a per-head temperature, so ``argmax`` picks the closest class feature.
    """
    cfg = dict(DEFAULT_TRUNK)
    cfg.update(trunk_config or {})
    if len(centroids) < 2:
        raise ValueError(f"need at least 2 class centroids, got {len(centroids)}")
    cents = [np.asarray(c, dtype=DTYPE) for c in centroids]
    shape = cents[0].shape
    if len(shape) != 4:
        raise ShapeError(f"centroids must be rank-4 [T,H,W,C] frames, got {shape}")
    for i, c in enumerate(cents):
        if c.shape != shape:
            raise ShapeError(f"centroid {i} has shape {c.shape}, expected {shape}")

    widths = tuple(cfg["widths"])
    seg_pools = tuple(cfg["segment_pools"]) + (None,) * len(widths)
    head_pools = tuple(cfg["head_pools"]) + (None,) * len(widths)
    kk = int(cfg["kernel"])
    rng = np.random.default_rng(seed)

    t, h, w, c = shape
    ch = t * c
    segments: List[List[Layer]] = []
    for k, width in enumerate(widths):
        seg: List[Layer] = []
        if k == 0:
            seg.append(Layer("reorder"))
        elif seg_pools[k]:
            p = int(seg_pools[k])
            seg.append(Layer("pool", pool="max", window=(p, p), stride=(p, p)))
        stride = int(cfg["first_stride"]) if k == 0 else 1
        seg.append(Layer("depthwise", kernel=_he(rng, (kk, kk, ch), kk * kk),
                         bias=np.zeros(ch, DTYPE), stride=(stride, stride), padding="same"))
        seg.append(Layer("conv", kernel=_he(rng, (1, 1, ch, width), ch),
                         bias=(rng.standard_normal(width) * 0.1).astype(DTYPE),
                         padding="valid", activation="relu"))
        segments.append(seg)
        ch = width

    head_pool_layers = []
    for k in range(len(widths)):
        p = head_pools[k]
        if p is None:
            pool = [Layer("pool", pool="avg")]
        elif int(p) > 1:
            pool = [Layer("pool", pool="avg", window=(int(p), int(p)), stride=(int(p), int(p)))]
        else:
            pool = []
        head_pool_layers.append(pool + [Layer("flatten")])

    # class features at every head
    feats = [[] for _ in widths]
    for cent in cents:
        x = cent
        for k, seg in enumerate(segments):
            for layer in seg:
                x, _ = layer.apply(x)
            f = x
            for layer in head_pool_layers[k]:
                f, _ = layer.apply(f)
            feats[k].append(f.astype(np.float64))

    heads = []
    for k in range(len(widths)):
        mu = np.stack(feats[k])  # [classes, F]
        d2 = ((mu[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
        off = d2[~np.eye(len(mu), dtype=bool)]
        if off.min() <= 0:
            raise ValueError(f"two class centroids are indistinguishable at exit {k}")
        temp = off.min() / float(cfg["sharpness"])
        weight = (2.0 * mu.T / temp).astype(DTYPE)
        bias = (-(mu ** 2).sum(1) / temp).astype(DTYPE)
        heads.append(head_pool_layers[k] + [Layer("dense", kernel=weight, bias=bias),
                                            Layer("softmax")])
    return ExitGraph(shape, segments, heads, len(cents))
