"""Stochastic gradient descent with classical momentum."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .graph import NON_TRAINABLE, ModelGraph


class SgdMomentum:
    """v <- momentum * v - lr * g; p <- p + v. Velocities start at zero."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = float(momentum)
        self._velocity: dict[str, dict[str, np.ndarray]] = {}

    def step(self, graph: ModelGraph, grads: dict, lr: float) -> None:
        for layer, layer_grads in grads.items():
            store = graph.params[layer]
            vstore = self._velocity.setdefault(layer, {})
            for key, g in layer_grads.items():
                if key in NON_TRAINABLE:
                    continue
                p = store[key]
                v = vstore.get(key)
                if v is None:
                    v = np.zeros_like(p)
                v = self.momentum * v - lr * np.asarray(g, dtype=p.dtype)
                if not np.all(np.isfinite(v)):
                    raise NumericError(f"non-finite update for {layer}/{key}")
                store[key] = p + v
                vstore[key] = v
