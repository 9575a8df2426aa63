"""Model checkpoint container: topology as JSON text + float32 blobs.

Layout, all integers little-endian uint32:
  magic "ASCM" | version | topology length | topology JSON (utf-8) |
  blob count | per blob: name length | name "layer/param" (utf-8) |
  ndim | dims... | float32 little-endian data

Blobs are written in graph layer order with parameter keys sorted, so a
save/load/save round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .graph import LayerSpec, ModelGraph

MAGIC = b"ASCM"
VERSION = 1


def graph_to_dict(graph: ModelGraph) -> dict:
    return {
        "name": graph.name,
        "input_shape": list(graph.input_shape),
        "layers": [
            {
                "kind": s.kind,
                "name": s.name,
                "inputs": list(s.inputs),
                "attrs": dict(s.attrs),
            }
            for s in graph.layers
        ],
    }


def graph_from_dict(d: dict) -> ModelGraph:
    layers = [
        LayerSpec(sp["kind"], sp["name"], tuple(sp["inputs"]), sp["attrs"])
        for sp in d["layers"]
    ]
    return ModelGraph(d["name"], tuple(d["input_shape"]), layers)


def save_checkpoint(path, graph: ModelGraph) -> None:
    topo = json.dumps(graph_to_dict(graph), sort_keys=True).encode("utf-8")
    blobs = []
    for spec in graph.layers:
        store = graph.params.get(spec.name)
        if not store:
            continue
        for key in sorted(store):
            blobs.append((f"{spec.name}/{key}", store[key]))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(topo)))
        fh.write(topo)
        fh.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelGraph:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (topo_len,) = struct.unpack_from("<I", data, 8)
    off = 12
    try:
        topo = json.loads(data[off : off + topo_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt topology block: {exc}") from exc
    off += topo_len
    graph = graph_from_dict(topo)

    (n_blobs,) = struct.unpack_from("<I", data, off)
    off += 4
    for _ in range(n_blobs):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        end = off + 4 * count
        if end > len(data):
            raise DataError(f"{path}: truncated blob {name!r}")
        arr = np.frombuffer(data[off:end], dtype="<f4").reshape(dims).copy()
        off += 4 * count
        layer, _, key = name.partition("/")
        if not key:
            raise DataError(f"{path}: malformed blob name {name!r}")
        graph.params.setdefault(layer, {})[key] = arr
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes")
    return graph
