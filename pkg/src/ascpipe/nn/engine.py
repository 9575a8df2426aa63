"""Graph executor: forward pass, reverse-mode gradients, cross-entropy.

The backward walk visits layers in reverse order, so a layer's output
gradient is fully accumulated (across all of its consumers) before the
layer itself runs. Softmax + cross-entropy use the fused gradient
(p - t) / B seeded at the softmax input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import GraphError, NumericError
from . import layers as L
from .graph import INPUT, LayerSpec, ModelGraph, _pair


@dataclass
class Tape:
    """Cached activations and per-layer caches from one training forward."""

    acts: dict
    caches: dict
    mode: str


def _dropout_rng(drop_key, layer_idx: int) -> np.random.Generator:
    key = [layer_idx] if drop_key is None else [*np.atleast_1d(drop_key), layer_idx]
    return np.random.default_rng([int(k) for k in key])


def _layer_forward(graph, spec: LayerSpec, ins, mode, drop_key, layer_idx):
    p = graph.params.get(spec.name, {})
    kind = spec.kind
    if kind == "conv2d":
        return L.conv2d_forward(
            ins[0], p["w"], p.get("b"), _pair(spec.attr("stride", (1, 1))),
            spec.attr("padding", "same"),
        )
    if kind == "depthwise_conv2d":
        return L.depthwise_forward(
            ins[0], p["w"], p.get("b"), _pair(spec.attr("stride", (1, 1))),
            spec.attr("padding", "same"),
        )
    if kind == "batchnorm":
        out, cache, rm, rv = L.batchnorm_forward(
            ins[0],
            p["gamma"],
            p["beta"],
            p["running_mean"],
            p["running_var"],
            mode,
            spec.attr("momentum", 0.9),
        )
        if mode == "train":
            p["running_mean"], p["running_var"] = rm, rv
        return out, cache
    if kind == "relu":
        return L.relu_forward(ins[0])
    if kind == "maxpool":
        ph, pw = spec.attr("pool")
        return L.maxpool_forward(ins[0], int(ph), int(pw))
    if kind == "global_avg_pool":
        return L.global_avg_pool_forward(ins[0])
    if kind == "dense":
        return L.dense_forward(ins[0], p["w"], p["b"])
    if kind == "softmax":
        return L.softmax_forward(ins[0])
    if kind == "dropout":
        rng = _dropout_rng(drop_key, layer_idx) if mode == "train" else None
        return L.dropout_forward(ins[0], float(spec.attr("rate", 0.3)), mode, rng)
    if kind == "channel_attention":
        return L.channel_attention_forward(ins[0], p["w1"], p["b1"], p["w2"], p["b2"])
    if kind == "residual_add":
        return ins[0] + ins[1], None
    if kind == "freq_split":
        return L.freq_split_forward(ins[0], int(spec.attr("part")))
    if kind == "concat":
        return L.concat_forward(ins, spec.attr("axis", "channel"))
    raise GraphError(f"layer {spec.name!r}: unknown kind {kind!r}")


def _layer_backward(graph, spec: LayerSpec, cache, dout):
    """Returns (gradients w.r.t. each input, parameter gradients)."""
    p = graph.params.get(spec.name, {})
    kind = spec.kind
    if kind == "conv2d":
        dx, dw, db = L.conv2d_backward(dout, p["w"], cache)
        grads = {"w": dw}
        if "b" in p:
            grads["b"] = db
        return [dx], grads
    if kind == "depthwise_conv2d":
        dx, dw, db = L.depthwise_backward(dout, p["w"], cache)
        grads = {"w": dw}
        if "b" in p:
            grads["b"] = db
        return [dx], grads
    if kind == "batchnorm":
        dx, dgamma, dbeta = L.batchnorm_backward(dout, cache)
        return [dx], {"gamma": dgamma, "beta": dbeta}
    if kind == "relu":
        return [L.relu_backward(dout, cache)], {}
    if kind == "maxpool":
        return [L.maxpool_backward(dout, cache)], {}
    if kind == "global_avg_pool":
        return [L.global_avg_pool_backward(dout, cache)], {}
    if kind == "dense":
        dx, dw, db = L.dense_backward(dout, p["w"], cache)
        return [dx], {"w": dw, "b": db}
    if kind == "softmax":
        return [L.softmax_backward(dout, cache)], {}
    if kind == "dropout":
        return [L.dropout_backward(dout, cache)], {}
    if kind == "channel_attention":
        dx, dw1, db1, dw2, db2 = L.channel_attention_backward(dout, p["w1"], p["w2"], cache)
        return [dx], {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    if kind == "residual_add":
        return [dout, dout], {}
    if kind == "freq_split":
        return [L.freq_split_backward(dout, cache)], {}
    if kind == "concat":
        return L.concat_backward(dout, cache), {}
    raise GraphError(f"layer {spec.name!r}: unknown kind {kind!r}")


def run_forward(graph: ModelGraph, x: np.ndarray, mode: str = "eval", drop_key=None):
    """Execute every layer; returns (output, Tape). NaN anywhere is an error."""
    if mode not in ("train", "eval"):
        raise GraphError(f"mode must be train or eval, not {mode!r}")
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != graph.input_shape:
        raise GraphError(
            f"graph {graph.name!r} expects input (B,)+{graph.input_shape}, got {x.shape}"
        )
    acts = {INPUT: x}
    caches = {}
    for idx, spec in enumerate(graph.layers):
        ins = [acts[s] for s in spec.inputs]
        out, cache = _layer_forward(graph, spec, ins, mode, drop_key, idx)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite activation at layer {spec.name!r}")
        acts[spec.name] = out
        caches[spec.name] = cache
    return acts[graph.layers[-1].name], Tape(acts, caches, mode)


def forward(graph: ModelGraph, x: np.ndarray, mode: str = "eval", drop_key=None):
    out, _ = run_forward(graph, x, mode, drop_key)
    return out


def run_backward(graph: ModelGraph, tape: Tape, dout: np.ndarray, skip_last: bool = False):
    """Backpropagate an arbitrary output gradient through the tape.

    With skip_last=True, dout is injected at the final layer's input
    (the fused softmax + cross-entropy path).
    """
    layers = graph.layers
    grads_acts: dict[str, np.ndarray] = {}
    if skip_last:
        last = layers[-1]
        if len(last.inputs) != 1:
            raise GraphError("fused head requires a single-input final layer")
        grads_acts[last.inputs[0]] = dout
        layers = layers[:-1]
    else:
        grads_acts[layers[-1].name] = dout

    param_grads: dict[str, dict[str, np.ndarray]] = {}
    for spec in reversed(layers):
        if spec.name not in grads_acts:
            raise GraphError(f"layer {spec.name!r} received no output gradient")
        d = grads_acts.pop(spec.name)
        dins, dparams = _layer_backward(graph, spec, tape.caches[spec.name], d)
        for src, dx in zip(spec.inputs, dins):
            if src in grads_acts:
                grads_acts[src] = grads_acts[src] + dx
            else:
                grads_acts[src] = dx
        if dparams:
            param_grads[spec.name] = dparams
    return param_grads, grads_acts.get(INPUT)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy against soft targets."""
    if probs.shape != targets.shape:
        raise GraphError(f"probs {probs.shape} vs targets {targets.shape}")
    losses = -(targets * np.log(probs + 1e-12)).sum(axis=-1)
    return float(losses.mean())


def backward(graph: ModelGraph, x: np.ndarray, targets: np.ndarray, drop_key=None):
    """Train-mode forward + fused softmax/cross-entropy backward.

    Returns (loss, parameter gradients, Tape).
    """
    if graph.layers[-1].kind != "softmax":
        raise GraphError("cross-entropy training requires a softmax output layer")
    probs, tape = run_forward(graph, x, "train", drop_key)
    targets = np.asarray(targets, dtype=probs.dtype)
    loss = cross_entropy(probs, targets)
    if not np.isfinite(loss):
        raise NumericError("training loss is not finite")
    seed = (probs - targets) / probs.shape[0]
    param_grads, _ = run_backward(graph, tape, seed, skip_last=True)
    return loss, param_grads, tape
