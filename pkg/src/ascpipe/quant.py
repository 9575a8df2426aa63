"""Post-training 8-bit quantization and a quantized inference path.

Weights of conv / depthwise-conv / dense layers are mapped to signed
8-bit integers with one symmetric scale per tensor (zero-point 0).
Batchnorm is folded into the preceding layer first, so the quantized
graph carries no normalization layers. Biases and channel-attention
parameters stay float32. At inference, activations feeding a quantized
layer are quantized on the fly with a per-batch scale; multiply-
accumulate runs on exact integer values, and the result is rescaled by
the product of the two scales before the bias add.

Integer accumulation is exact by construction: products are bounded by
127 * 127 and a validation check caps multiply-accumulates per output at
2**23, which keeps every accumulator within a 32-bit budget.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, GraphError
from .nn.checkpoint import graph_from_dict, graph_to_dict
from .nn.engine import _layer_forward
from .nn.graph import INPUT, LayerSpec, ModelGraph, _pair
from .nn.layers import BN_EPS
from .nn import layers as L

MAGIC = b"ASCQ"
VERSION = 1

QUANT_KINDS = ("conv2d", "depthwise_conv2d", "dense")
FOLDABLE_KINDS = QUANT_KINDS

# per-output multiply-accumulate budget that keeps int32 accumulation safe
MAX_MACS_PER_OUTPUT = 2**23

_QMAX = 127


@dataclass(frozen=True)
class QuantizedTensor:
    """Signed 8-bit values with one symmetric scale (zero-point 0)."""

    values: np.ndarray
    scale: float

    def dequantize(self) -> np.ndarray:
        return (self.values.astype(np.float32) * np.float32(self.scale)).astype(
            np.float32
        )


@dataclass
class QuantizedModel:
    """Folded topology, float32 side parameters, int8 weight tensors.

    ``graph.params`` holds every float parameter (biases, attention
    weights); the quantized ``w`` of each conv / depthwise / dense layer
    lives in ``weights`` keyed by layer name.
    """

    graph: ModelGraph
    weights: dict[str, QuantizedTensor]


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_tensor(w: np.ndarray) -> QuantizedTensor:
    """Symmetric per-tensor quantization: scale = max|w| / 127.

    An all-zero tensor takes scale 1 with all-zero values, so the round
    trip stays exact.
    """
    arr = np.asarray(w, dtype=np.float64)
    if arr.size == 0:
        raise DataError("cannot quantize an empty tensor")
    if not np.isfinite(arr).all():
        raise DataError("cannot quantize non-finite values")
    amax = float(np.max(np.abs(arr)))
    scale = amax / _QMAX if amax > 0 else 1.0
    q = np.clip(_round_half_away(arr / scale), -_QMAX, _QMAX)
    return QuantizedTensor(q.astype(np.int8), scale)


def _mac_count(graph: ModelGraph, spec: LayerSpec) -> int:
    """Multiply-accumulates per output element for a quantizable layer."""
    x = graph.in_shape(spec)
    if spec.kind == "conv2d":
        kh, kw = _pair(spec.attr("kernel", (3, 3)))
        return kh * kw * x[2]
    if spec.kind == "depthwise_conv2d":
        kh, kw = _pair(spec.attr("kernel", (3, 3)))
        return kh * kw
    if spec.kind == "dense":
        return x[0]
    raise GraphError(f"layer {spec.name!r}: kind {spec.kind!r} has no MAC bound")


def check_mac_budget(graph: ModelGraph) -> None:
    """Reject graphs whose integer accumulators could exceed 32 bits."""
    for spec in graph.layers:
        if spec.kind not in QUANT_KINDS:
            continue
        macs = _mac_count(graph, spec)
        if macs > MAX_MACS_PER_OUTPUT:
            raise GraphError(
                f"layer {spec.name!r}: {macs} multiply-accumulates per output "
                f"exceeds the {MAX_MACS_PER_OUTPUT} accumulator budget"
            )


def fold_batchnorm(graph: ModelGraph) -> ModelGraph:
    """Fold every batchnorm into the conv / depthwise / dense before it.

    Uses the running statistics (inference behavior). The producing
    layer's weights are rescaled per output channel and it gains a bias,
    so the folded graph computes the same function as the original in
    eval mode. Returns a new graph; the input is left untouched.
    """
    if not graph.params:
        raise DataError(f"model {graph.name!r} has no parameters to fold")
    by_name = {spec.name: spec for spec in graph.layers}
    consumers: dict[str, list[str]] = {}
    for spec in graph.layers:
        for inp in spec.inputs:
            consumers.setdefault(inp, []).append(spec.name)

    folded_bn: dict[str, str] = {}  # bn name -> producer name
    for spec in graph.layers:
        if spec.kind != "batchnorm":
            continue
        src = spec.inputs[0]
        if src == INPUT or by_name[src].kind not in FOLDABLE_KINDS:
            raise DataError(
                f"batchnorm {spec.name!r} does not follow a foldable layer"
            )
        if len(consumers[src]) != 1:
            raise DataError(
                f"cannot fold batchnorm {spec.name!r}: its input "
                f"{src!r} feeds other layers too"
            )
        folded_bn[spec.name] = src

    new_layers: list[LayerSpec] = []
    new_params: dict[str, dict[str, np.ndarray]] = {}
    for spec in graph.layers:
        if spec.name in folded_bn:
            continue
        inputs = tuple(folded_bn.get(i, i) for i in spec.inputs)
        attrs = dict(spec.attrs)
        store = {k: v.copy() for k, v in graph.params.get(spec.name, {}).items()}
        if spec.name in folded_bn.values():
            bn_name = next(b for b, s in folded_bn.items() if s == spec.name)
            bn = graph.params[bn_name]
            scale = bn["gamma"] / np.sqrt(bn["running_var"] + BN_EPS)
            w = store["w"]
            if spec.kind == "conv2d":
                n_out = w.shape[3]
                store["w"] = (w * scale).astype(np.float32)
            elif spec.kind == "depthwise_conv2d":
                n_out = w.shape[2] * w.shape[3]
                store["w"] = (w * scale.reshape(w.shape[2], w.shape[3])).astype(
                    np.float32
                )
            else:
                n_out = w.shape[1]
                store["w"] = (w * scale).astype(np.float32)
            bias = store.get("b", np.zeros(n_out, dtype=np.float32))
            store["b"] = (
                (bias - bn["running_mean"]) * scale + bn["beta"]
            ).astype(np.float32)
            attrs["use_bias"] = True
        new_layers.append(LayerSpec(spec.kind, spec.name, inputs, attrs))
        if store:
            new_params[spec.name] = store

    out = ModelGraph(graph.name, graph.input_shape, new_layers)
    out.params = new_params
    return out


def quantize_model(graph: ModelGraph) -> QuantizedModel:
    """Fold batchnorm, then quantize every conv / depthwise / dense weight."""
    folded = fold_batchnorm(graph)
    check_mac_budget(folded)
    weights: dict[str, QuantizedTensor] = {}
    for spec in folded.layers:
        if spec.kind not in QUANT_KINDS:
            continue
        store = folded.params.get(spec.name)
        if store is None or "w" not in store:
            raise DataError(f"layer {spec.name!r} has no weights to quantize")
        weights[spec.name] = quantize_tensor(store.pop("w"))
    return QuantizedModel(folded, weights)


def dequantize_model(qm: QuantizedModel) -> ModelGraph:
    """Rebuild a float model with dequantized weights (for comparisons)."""
    out = ModelGraph(qm.graph.name, qm.graph.input_shape, qm.graph.layers)
    out.params = {
        name: {k: v.copy() for k, v in store.items()}
        for name, store in qm.graph.params.items()
    }
    for name, qt in qm.weights.items():
        out.params.setdefault(name, {})["w"] = qt.dequantize()
    return out


def _quantize_activation(a: np.ndarray) -> tuple[np.ndarray, float]:
    amax = float(np.max(np.abs(a))) if a.size else 0.0
    scale = amax / _QMAX if amax > 0 else 1.0
    q = np.clip(_round_half_away(a.astype(np.float64) / scale), -_QMAX, _QMAX)
    return q, scale


def quantized_forward(qm: QuantizedModel, x: np.ndarray) -> np.ndarray:
    """Run inference with int8 weights and dynamically quantized activations.

    Integer products are accumulated in float64, which is exact for the
    value ranges admitted by check_mac_budget; the accumulator is then
    rescaled by activation-scale times weight-scale and the float bias is
    added.
    """
    graph = qm.graph
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != graph.input_shape:
        raise DataError(
            f"model {graph.name!r} expects input (B, "
            + ", ".join(str(d) for d in graph.input_shape)
            + f"), got {x.shape}"
        )
    acts: dict[str, np.ndarray] = {INPUT: x.astype(np.float32)}
    for idx, spec in enumerate(graph.layers):
        ins = [acts[name] for name in spec.inputs]
        if spec.kind in QUANT_KINDS:
            qt = qm.weights[spec.name]
            qa, a_scale = _quantize_activation(ins[0])
            qw = qt.values.astype(np.float64)
            bias = graph.params.get(spec.name, {}).get("b")
            if spec.kind == "conv2d":
                acc, _ = L.conv2d_forward(
                    qa, qw, None, _pair(spec.attr("stride", (1, 1))),
                    spec.attr("padding", "same"),
                )
            elif spec.kind == "depthwise_conv2d":
                acc, _ = L.depthwise_forward(
                    qa, qw, None, _pair(spec.attr("stride", (1, 1))),
                    spec.attr("padding", "same"),
                )
            else:
                acc = qa @ qw
            out = acc * (a_scale * qt.scale)
            if bias is not None:
                out = out + bias
            out = out.astype(np.float32)
        else:
            out, _ = _layer_forward(graph, spec, ins, "eval", None, idx)
        acts[spec.name] = out
    return acts[graph.layers[-1].name]


def _serialize(qm: QuantizedModel) -> tuple[bytes, "QuantSizeReport"]:
    topo = json.dumps(graph_to_dict(qm.graph), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(topo)), topo]
    records: list[tuple[str, str]] = []  # (layer, param)
    for spec in qm.graph.layers:
        keys = set(qm.graph.params.get(spec.name, {}))
        if spec.name in qm.weights:
            keys.add("w")
        for key in sorted(keys):
            records.append((spec.name, key))
    chunks.append(struct.pack("<I", len(records)))

    header_bytes = 16
    record_header_bytes = 0
    scale_bytes = 0
    int8_payload_bytes = 0
    float_payload_bytes = 0
    for layer, key in records:
        name = f"{layer}/{key}".encode("utf-8")
        quantized = key == "w" and layer in qm.weights
        if quantized:
            qt = qm.weights[layer]
            arr = qt.values
        else:
            arr = qm.graph.params[layer][key]
        head = struct.pack("<I", len(name)) + name + struct.pack("<B", quantized)
        dims = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        chunks.append(head)
        record_header_bytes += len(head) + len(dims)
        if quantized:
            chunks.append(struct.pack("<f", qt.scale))
            chunks.append(dims)
            payload = np.ascontiguousarray(arr, dtype=np.int8).tobytes()
            scale_bytes += 4
            int8_payload_bytes += len(payload)
        else:
            chunks.append(dims)
            payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            float_payload_bytes += len(payload)
        chunks.append(payload)

    blob = b"".join(chunks)
    report = QuantSizeReport(
        header_bytes=header_bytes,
        topology_bytes=len(topo),
        record_header_bytes=record_header_bytes,
        scale_bytes=scale_bytes,
        int8_payload_bytes=int8_payload_bytes,
        float_payload_bytes=float_payload_bytes,
    )
    return blob, report


@dataclass(frozen=True)
class QuantSizeReport:
    """Exact byte counts per section of a serialized quantized model."""

    header_bytes: int
    topology_bytes: int
    record_header_bytes: int
    scale_bytes: int
    int8_payload_bytes: int
    float_payload_bytes: int

    @property
    def total_bytes(self) -> int:
        return (
            self.header_bytes
            + self.topology_bytes
            + self.record_header_bytes
            + self.scale_bytes
            + self.int8_payload_bytes
            + self.float_payload_bytes
        )


def size_report(qm: QuantizedModel) -> QuantSizeReport:
    return _serialize(qm)[1]


def weight_blob_ratio(qm: QuantizedModel) -> float:
    """Quantized weight-blob bytes over the float32 bytes of the same tensors."""
    if not qm.weights:
        raise DataError("model has no quantized weights")
    quant = sum(qt.values.size + 4 for qt in qm.weights.values())
    flat = sum(4 * qt.values.size for qt in qm.weights.values())
    return quant / flat


def save_quantized(path, qm: QuantizedModel) -> QuantSizeReport:
    blob, report = _serialize(qm)
    Path(path).write_bytes(blob)
    return report


def load_quantized(path) -> QuantizedModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read quantized model {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a quantized model file")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    topo_len = struct.unpack_from("<I", data, 8)[0]
    pos = 12
    if pos + topo_len > len(data):
        raise DataError(f"{path}: truncated topology")
    try:
        topo = json.loads(data[pos : pos + topo_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad topology block: {exc}") from exc
    pos += topo_len
    try:
        graph = graph_from_dict(topo)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: bad topology block: {exc}") from exc

    def take(fmt: str, size: int):
        nonlocal pos
        if pos + size > len(data):
            raise DataError(f"{path}: truncated at byte {pos}")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (n_records,) = take("<I", 4)
    params: dict[str, dict[str, np.ndarray]] = {}
    weights: dict[str, QuantizedTensor] = {}
    layer_kinds = {spec.name: spec.kind for spec in graph.layers}
    for _ in range(n_records):
        (name_len,) = take("<I", 4)
        if pos + name_len > len(data):
            raise DataError(f"{path}: truncated record name")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if "/" not in name:
            raise DataError(f"{path}: malformed record name {name!r}")
        layer, key = name.split("/", 1)
        if layer not in layer_kinds:
            raise DataError(f"{path}: record for unknown layer {layer!r}")
        (quantized,) = take("<B", 1)
        if quantized:
            if layer_kinds[layer] not in QUANT_KINDS or key != "w":
                raise DataError(
                    f"{path}: quantized record {name!r} on a non-quantizable slot"
                )
            (scale,) = take("<f", 4)
            if scale <= 0:
                raise DataError(f"{path}: record {name!r} has scale {scale}")
        (ndim,) = take("<I", 4)
        shape = take(f"<{ndim}I", 4 * ndim)
        count = int(np.prod(shape)) if ndim else 1
        if quantized:
            raw = data[pos : pos + count]
            if len(raw) < count:
                raise DataError(f"{path}: truncated data for {name!r}")
            pos += count
            values = np.frombuffer(raw, dtype=np.int8).reshape(shape)
            weights[layer] = QuantizedTensor(values.copy(), float(scale))
        else:
            raw = data[pos : pos + 4 * count]
            if len(raw) < 4 * count:
                raise DataError(f"{path}: truncated data for {name!r}")
            pos += 4 * count
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            params.setdefault(layer, {})[key] = arr
    if pos != len(data):
        raise DataError(f"{path}: {len(data) - pos} trailing bytes")
    for spec in graph.layers:
        if spec.kind in QUANT_KINDS and spec.name not in weights:
            raise DataError(f"{path}: missing quantized weights for {spec.name!r}")
    graph.params = params
    check_mac_budget(graph)
    return QuantizedModel(graph, weights)
