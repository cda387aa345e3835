"""Seeded synthetic sensor stream made of scenes, plus its binary file format.

Each class has a fixed centroid frame shaped ``[T, H, W, C]`` resembling a
stack of range-Doppler maps: a shared clutter floor plus one moving blob per
target, where class ``k`` holds ``k`` targets. Scenes have geometric lengths
and consecutive scenes always differ in class. Within a scene the frame drifts
linearly along a random per-scene direction whose full length equals the
mean distance between centroids (``drift_rate`` per sample, capped at one
full length), and gets i.i.d. Gaussian noise.

File layout (little endian)::

    b"EXST" | version u16 | class_count u16 | T,H,W,C u32 x4 | length u64
    then per sample: frame f32[T*H*W*C] | label u32 | scene_id u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import List, Sequence, Tuple

import numpy as np

from .tensor_ops import DTYPE, Tensor

MAGIC = b"EXST"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH4IQ")
_TRAILER = struct.Struct("<II")


class StreamFormatError(ValueError):
    pass


class StreamVersionError(StreamFormatError):
    pass


@dataclass
class StreamConfig:
    class_count: int = 5
    frame_shape: Tuple[int, int, int, int] = (8, 16, 16, 3)
    mean_scene_length: int = 30
    noise_sigma: float = 0.1
    drift_rate: float = 0.001
    stream_length: int = 10_000
    seed: int = 42

    def __post_init__(self):
        self.frame_shape = tuple(int(d) for d in self.frame_shape)
        self.validate()

    def validate(self):
        if int(self.class_count) < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if len(self.frame_shape) != 4 or min(self.frame_shape) < 1:
            raise ValueError(f"frame_shape must be 4 positive dims, got {self.frame_shape}")
        if int(self.mean_scene_length) < 1:
            raise ValueError(f"mean_scene_length must be >= 1, got {self.mean_scene_length}")
        if not self.noise_sigma >= 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.drift_rate >= 0:
            raise ValueError(f"drift_rate must be >= 0, got {self.drift_rate}")
        if int(self.stream_length) < 1:
            raise ValueError(f"stream_length must be >= 1, got {self.stream_length}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StreamSample:
    frame: Tensor
    label: int
    scene_id: int


def make_centroids(config: StreamConfig) -> List[Tensor]:
    """Class centroid frames; depends only on class_count, frame_shape and seed."""
    t, h, w, c = config.frame_shape
    rng = np.random.default_rng([int(config.seed), 0])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def blob(cy, cx, width):
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width ** 2))

    # static clutter at low Doppler, identical for every class
    clutter = np.zeros((h, w))
    for _ in range(3):
        clutter += 0.5 * blob(rng.uniform(0, h), w / 2 + rng.normal(0, 0.5), 1.0)
    antenna_gain = rng.uniform(0.7, 1.0, size=c)

    # one target track per possible person: start cell and per-step velocity
    n_targets = config.class_count - 1
    def span(n):  # keep tracks off the border, degrading gracefully on tiny frames
        lo = min(2.0, (n - 1) / 2.0)
        return lo, max(lo, n - 3.0)

    starts = np.column_stack([rng.uniform(*span(h), n_targets), rng.uniform(*span(w), n_targets)])
    vel = rng.normal(0, 0.3, size=(n_targets, 2))

    centroids = []
    for k in range(config.class_count):
        frame = np.empty((t, h, w, c))
        for ti in range(t):
            m = clutter.copy()
            for j in range(k):
                cy, cx = starts[j] + vel[j] * ti
                m += blob(cy, cx, 1.2)
            frame[ti] = m[:, :, None] * antenna_gain[None, None, :]
        centroids.append(frame.astype(DTYPE))
    return centroids


def generate_stream(config: StreamConfig) -> Tuple[List[StreamSample], List[Tensor]]:
    config.validate()
    centroids = make_centroids(config)
    rng = np.random.default_rng([int(config.seed), 1])
    n_cls = int(config.class_count)
    p = 1.0 / int(config.mean_scene_length)

    def other(label):
        k = int(rng.integers(n_cls - 1))
        return k + (k >= label)

    stacked = np.stack(centroids).reshape(n_cls, -1).astype(np.float64)
    gaps = [np.linalg.norm(stacked[a] - stacked[b]) for a in range(n_cls) for b in range(a)]
    drift_scale = float(np.mean(gaps))

    samples: List[StreamSample] = []
    label = int(rng.integers(n_cls))
    scene_id = 0
    total = int(config.stream_length)
    while len(samples) < total:
        length = int(rng.geometric(p))
        nxt = other(label)
        base = centroids[label]
        direction = rng.standard_normal(base.shape)
        direction = (direction * (drift_scale / np.linalg.norm(direction))).astype(DTYPE)
        for i in range(min(length, total - len(samples))):
            frame = base
            if config.drift_rate > 0:
                frame = frame + DTYPE(min(config.drift_rate * i, 1.0)) * direction
            if config.noise_sigma > 0:
                noise = rng.standard_normal(base.shape, dtype=np.float32)
                frame = frame + DTYPE(config.noise_sigma) * noise
            samples.append(StreamSample(np.asarray(frame, dtype=DTYPE), label, scene_id))
        label = nxt
        scene_id += 1
    return samples, centroids


def scene_lengths(samples: Sequence[StreamSample]) -> List[int]:
    out: List[int] = []
    prev = None
    for s in samples:
        if s.scene_id != prev:
            out.append(0)
            prev = s.scene_id
        out[-1] += 1
    return out


def save_stream(samples: Sequence[StreamSample], path, class_count: int | None = None) -> None:
    if not samples:
        raise ValueError("cannot save an empty stream")
    shape = samples[0].frame.shape
    if class_count is None:
        class_count = max(s.label for s in samples) + 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, class_count, *shape, len(samples)))
        for s in samples:
            if s.frame.shape != shape:
                raise ValueError(f"frame shape {s.frame.shape} differs from {shape}")
            fh.write(np.asarray(s.frame, dtype="<f4").tobytes())
            fh.write(_TRAILER.pack(s.label, s.scene_id))


def load_stream(path) -> List[StreamSample]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise StreamFormatError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, class_count, t, h, w, c, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise StreamFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise StreamVersionError(f"{path}: unsupported stream format version {version}")
    n = t * h * w * c
    rec = 4 * n + _TRAILER.size
    expected = _HEADER.size + length * rec
    if len(data) != expected:
        raise StreamFormatError(f"{path}: size {len(data)} bytes, header implies {expected}")
    samples = []
    off = _HEADER.size
    for _ in range(length):
        frame = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(DTYPE).reshape(t, h, w, c)
        label, scene_id = _TRAILER.unpack_from(data, off + 4 * n)
        if label >= class_count:
            raise StreamFormatError(f"{path}: label {label} out of range for {class_count} classes")
        samples.append(StreamSample(frame, label, scene_id))
        off += rec
    return samples
