"""Checkpoint files: magic, version, JSON graph header, raw little-endian float64 blobs.

Layout::

    8 bytes   magic  b"INFOPRN\\0"
    4 bytes   uint32 format version
    8 bytes   uint64 header length n
    n bytes   UTF-8 JSON header (sorted keys): graph description + blob table
    ...       concatenated float64 little-endian parameter blobs
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .graph import ModelGraph
from .layers import layer_from_dict

MAGIC = b"INFOPRN\0"
VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


def to_bytes(model: ModelGraph) -> bytes:
    blobs, table, offset = [], [], 0
    for (i, name), arr in model.parameters().items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"layer": i, "name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "arch_name": model.arch_name,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "meta": model.meta,
        "layers": [layer.to_dict() for layer in model.layers],
        "blobs": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)


def from_bytes(raw: bytes) -> ModelGraph:
    if len(raw) < _PREAMBLE.size:
        raise FormatError("checkpoint truncated: missing preamble")
    magic, version, n = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    start = _PREAMBLE.size
    if len(raw) < start + n:
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    body = raw[start + n:]
    expected = sum(b["nbytes"] for b in header["blobs"])
    if len(body) != expected:
        raise FormatError(f"checkpoint body has {len(body)} bytes, header declares {expected}")
    params = {}
    for b in header["blobs"]:
        arr = np.frombuffer(body, dtype="<f8", count=b["nbytes"] // 8, offset=b["offset"])
        params.setdefault(b["layer"], {})[b["name"]] = arr.reshape(b["shape"]).astype(np.float64)
    layers = [layer_from_dict(d, params.get(i)) for i, d in enumerate(header["layers"])]
    model = ModelGraph(layers, tuple(header["input_shape"]), header["num_classes"],
                       header["arch_name"], header["meta"])
    model.validate()
    return model


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(model))
    return path


def load_checkpoint(path) -> ModelGraph:
    return from_bytes(Path(path).read_bytes())
