"""Binary model file: JSON header plus a little-endian float32 weight blob.

Layout::

    b"EXNN" | header_len u32 LE | header (UTF-8 JSON) | blob

The header holds ``format_version``, ``class_count``, ``input_shape`` and
``segments`` / ``heads`` as lists of layer lists. Each weight tensor is
described by ``{"offset", "length", "shape"}`` with offset and length in
bytes relative to the start of the blob.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exit_graph import ExitGraph, Layer
from .tensor_ops import DTYPE, ShapeError

MAGIC = b"EXNN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sI")


class ModelFormatError(ValueError):
    """File is truncated or not a model file."""


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    """Header is well formed but describes an inconsistent network."""


def _layer_header(layer: Layer, blob: bytearray) -> dict:
    entry = {"kind": layer.kind}
    if layer.kind in ("conv", "depthwise"):
        entry.update(stride=list(layer.stride), padding=layer.padding)
    if layer.kind == "pool":
        entry.update(pool=layer.pool,
                     window=None if layer.window is None else list(layer.window),
                     stride=list(layer.stride))
    if layer.activation:
        entry["activation"] = layer.activation
    weights = {}
    for name in ("kernel", "bias"):
        arr = getattr(layer, name)
        if arr is None:
            continue
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        weights[name] = {"offset": len(blob), "length": len(raw), "shape": list(arr.shape)}
        blob.extend(raw)
    if weights:
        entry["weights"] = weights
    return entry


def save_model(graph: ExitGraph, path) -> None:
    blob = bytearray()
    header = {
        "format_version": FORMAT_VERSION,
        "class_count": graph.class_count,
        "input_shape": list(graph.input_shape),
        "segments": [[_layer_header(l, blob) for l in seg] for seg in graph.segments],
        "heads": [[_layer_header(l, blob) for l in head] for head in graph.heads],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, len(raw)))
        fh.write(raw)
        fh.write(bytes(blob))


def _tensor(desc, blob: bytes, where: str) -> np.ndarray:
    try:
        off, length, shape = int(desc["offset"]), int(desc["length"]), [int(d) for d in desc["shape"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: bad weight descriptor {desc!r}") from exc
    if length != 4 * int(np.prod(shape)):
        raise ModelShapeError(f"{where}: {length} bytes cannot hold shape {shape}")
    if off < 0 or off + length > len(blob):
        raise ModelFormatError(f"{where}: weights [{off}, {off + length}) outside the "
                               f"{len(blob)}-byte blob")
    return np.frombuffer(blob, dtype="<f4", count=length // 4, offset=off).astype(DTYPE).reshape(shape)


def _layer(entry, blob: bytes, where: str) -> Layer:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ModelFormatError(f"{where}: layer entry must be an object with a 'kind'")
    weights = entry.get("weights", {})
    kw = {}
    for name in ("kernel", "bias"):
        if name in weights:
            kw[name] = _tensor(weights[name], blob, f"{where}.{name}")
    if entry["kind"] in ("conv", "depthwise", "dense") and "kernel" not in kw:
        raise ModelShapeError(f"{where}: {entry['kind']} layer has no kernel")
    window = entry.get("window")
    try:
        return Layer(
            kind=entry["kind"],
            stride=tuple(entry.get("stride", (1, 1))),
            padding=entry.get("padding", "valid"),
            activation=entry.get("activation"),
            pool=entry.get("pool", "max"),
            window=None if window is None else tuple(window),
            **kw,
        )
    except ValueError as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc


def load_model(path) -> ExitGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise ModelFormatError(f"{path}: file too short for a model header")
    magic, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if _PREFIX.size + hlen > len(data):
        raise ModelFormatError(f"{path}: header length {hlen} exceeds file size")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ModelFormatError(f"{path}: header must be a JSON object")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: unsupported model format version {version!r}")
    blob = data[_PREFIX.size + hlen:]
    try:
        segments = [[_layer(e, blob, f"segment{k}[{i}]") for i, e in enumerate(seg)]
                    for k, seg in enumerate(header["segments"])]
        heads = [[_layer(e, blob, f"head{k}[{i}]") for i, e in enumerate(head)]
                 for k, head in enumerate(header["heads"])]
        input_shape = header["input_shape"]
        class_count = header["class_count"]
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: missing or malformed header field: {exc}") from exc
    try:
        return ExitGraph(input_shape, segments, heads, class_count)
    except ShapeError as exc:
        raise ModelShapeError(f"{path}: {exc}") from exc
