"""Minibatch SGD training loop with online augmentation and snapshots.

A parameter snapshot is captured once per schedule cycle, at the first
step whose learning rate falls to 2x lr_min or below (the tail of the
cosine decay). Snapshot ensembling averages output probabilities, not
weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..augment import (
    LabeledBatch,
    mixup_batch,
    random_crop,
    spec_augment,
)
from ..errors import DataError
from ..features import FeatureTensor
from .engine import backward, forward
from .graph import ModelGraph, clone_params
from .optim import SgdMomentum
from .schedule import ScheduleConfig, cosine_restart_lr, cycle_position


@dataclass(frozen=True)
class OnlineAugment:
    """Batch-level augmentations applied during training. Zeros disable."""

    crop_len: int = 0
    mixup_alpha: float = 0.0
    time_mask_frac: float = 0.0
    freq_mask_frac: float = 0.0
    swap_stereo_blocks: bool = False


@dataclass
class TrainResult:
    graph: ModelGraph
    loss_curve: list = field(default_factory=list)  # mean loss per epoch
    lr_curve: list = field(default_factory=list)  # lr per step
    snapshots: list = field(default_factory=list)  # parameter stores


def _augment_batch(xb, yb, online: OnlineAugment, rng) -> LabeledBatch:
    if online.crop_len:
        xb = np.stack(
            [random_crop(FeatureTensor(x), online.crop_len, rng).data for x in xb]
        )
    if online.swap_stereo_blocks:
        out = xb.copy()
        for i in range(out.shape[0]):
            if rng.random() < 0.5:
                out[i] = out[i][:, :, [3, 4, 5, 0, 1, 2]]
        xb = out
    if online.time_mask_frac or online.freq_mask_frac:
        xb = np.stack(
            [
                spec_augment(
                    FeatureTensor(x), online.time_mask_frac, online.freq_mask_frac, rng
                ).data
                for x in xb
            ]
        )
    batch = LabeledBatch(xb, yb)
    if online.mixup_alpha and xb.shape[0] >= 2:
        batch = mixup_batch(batch, online.mixup_alpha, rng)
    return batch


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Integer class labels to float32 one-hot rows."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range for {n_classes} classes")
    out = np.zeros((labels.size, n_classes), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def train(
    graph: ModelGraph,
    tensors: np.ndarray,
    labels: np.ndarray,
    schedule: ScheduleConfig,
    epochs: int,
    seed: int = 0,
    batch_size: int = 32,
    online: OnlineAugment = OnlineAugment(),
    record_snapshots: bool = True,
) -> TrainResult:
    tensors = np.asarray(tensors, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.float32)
    if tensors.ndim != 4 or len(tensors) != len(labels):
        raise DataError("training data must be (N,T,F,C) tensors with (N,K) labels")
    if len(tensors) == 0:
        raise DataError("empty training set")
    if epochs < 0 or batch_size < 1:
        raise DataError("epochs must be >= 0 and batch_size >= 1")

    result = TrainResult(graph)
    rng = np.random.default_rng(seed)
    opt = SgdMomentum(schedule.momentum)
    step = 0
    snapped_cycles: set[int] = set()
    for _ in range(epochs):
        order = rng.permutation(len(tensors))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            batch = _augment_batch(tensors[idx], labels[idx], online, rng)
            lr = cosine_restart_lr(step, schedule)
            loss, grads, _ = backward(graph, batch.tensors, batch.labels, (seed, step))
            opt.step(graph, grads, lr)
            epoch_losses.append(loss)
            result.lr_curve.append(lr)
            if record_snapshots and lr <= 2.0 * schedule.lr_min:
                cycle, _, _ = cycle_position(step, schedule)
                if cycle not in snapped_cycles:
                    snapped_cycles.add(cycle)
                    result.snapshots.append(clone_params(graph.params))
            step += 1
        result.loss_curve.append(float(np.mean(epoch_losses)))
    return result


def predict(graph: ModelGraph, tensors: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities; inputs longer in time are center-cropped."""
    tensors = np.asarray(tensors, dtype=np.float32)
    want_t = graph.input_shape[0]
    if tensors.shape[1] > want_t:
        lo = (tensors.shape[1] - want_t) // 2
        tensors = tensors[:, lo : lo + want_t]
    outs = [
        forward(graph, tensors[i : i + batch_size], "eval")
        for i in range(0, len(tensors), batch_size)
    ]
    return np.concatenate(outs, axis=0)


def snapshot_average(prob_batches: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of probability batches from several model states."""
    if not prob_batches:
        raise DataError("snapshot_average needs at least one probability batch")
    first = np.asarray(prob_batches[0])
    for p in prob_batches[1:]:
        if np.asarray(p).shape != first.shape:
            raise DataError("snapshot probability shapes disagree")
    return np.mean([np.asarray(p) for p in prob_batches], axis=0)


def predict_with_snapshots(
    graph: ModelGraph, snapshots: list[dict], tensors: np.ndarray, batch_size: int = 64
) -> np.ndarray:
    """Average predictions over captured snapshots (current params if none)."""
    if not snapshots:
        return predict(graph, tensors, batch_size)
    saved = graph.params
    batches = []
    try:
        for snap in snapshots:
            graph.params = snap
            batches.append(predict(graph, tensors, batch_size))
    finally:
        graph.params = saved
    return snapshot_average(batches)
