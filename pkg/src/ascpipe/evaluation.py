"""Accuracy, loss, per-device breakdown, and prediction-overlap metrics.

Test items are grouped by recording device: the reference device A, the
real devices B and C together, and two trios of simulated devices. Any
other source label lands in a catch-all "unknown" group row. Because
"average accuracy" is ambiguous between weighting items and weighting
device groups, the report carries both numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .fusion import SCENE_LABELS, SUPERCLASS_LABELS
from .manifest import DatasetManifest

DEVICE_GROUPS = (
    ("A", ("a",)),
    ("B&C", ("b", "c")),
    ("s1-s3", ("s1", "s2", "s3")),
    ("s4-s6", ("s4", "s5", "s6")),
)
UNKNOWN_GROUP = "unknown"

_LOG_EPS = 1e-12


@dataclass
class EvalReport:
    classes: tuple[str, ...]
    group_order: tuple[str, ...]
    group_counts: dict[str, int]
    group_accuracy: dict[str, float]  # percent; nan for empty groups
    val_loss: float
    avg_accuracy_items: float  # percent over all items
    avg_accuracy_groups: float  # percent, mean over non-empty groups
    per_class_accuracy: np.ndarray  # percent per class; nan when absent
    confusion: np.ndarray  # [true, predicted] counts


def _group_of(source_label: str) -> str:
    dev = source_label.strip().lower()
    for name, members in DEVICE_GROUPS:
        if dev in members:
            return name
    return UNKNOWN_GROUP


def _detect_classes(manifest: DatasetManifest) -> tuple[str, ...]:
    present = set(manifest.scene_labels())
    if present <= set(SCENE_LABELS):
        return SCENE_LABELS
    if present <= set(SUPERCLASS_LABELS):
        return SUPERCLASS_LABELS
    strays = sorted(present - set(SCENE_LABELS) - set(SUPERCLASS_LABELS))
    raise DataError(
        f"scene labels {strays} match neither the scene-class nor the "
        "superclass label set; pass classes= explicitly"
    )


def evaluate(
    predictions: np.ndarray,
    manifest: DatasetManifest,
    classes: Sequence[str] | None = None,
) -> EvalReport:
    """Score per-item prediction vectors against a manifest.

    ``predictions`` holds one score row per manifest row, in manifest
    order. Rows are normalized to sum 1 before the cross-entropy loss, so
    fused (unnormalized) score vectors are accepted; the argmax is taken
    on the raw rows.
    """
    classes = tuple(classes) if classes is not None else _detect_classes(manifest)
    preds = np.asarray(predictions, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[0] != len(manifest):
        raise DataError(
            f"expected one prediction row per manifest row "
            f"({len(manifest)}), got shape {preds.shape}"
        )
    if preds.shape[1] != len(classes):
        raise DataError(
            f"predictions have {preds.shape[1]} columns but there are "
            f"{len(classes)} classes"
        )
    if not np.isfinite(preds).all():
        raise DataError("non-finite prediction scores")
    if (preds < 0).any():
        raise DataError("negative prediction scores")
    row_sums = preds.sum(axis=1)
    dead = np.flatnonzero(row_sums <= 0)
    if dead.size:
        raise DataError(f"prediction rows with zero total score: {dead.tolist()}")

    true = manifest.label_indices(classes)
    top1 = np.argmax(preds, axis=1)
    hits = top1 == true

    probs = preds / row_sums[:, None]
    val_loss = float(np.mean(-np.log(probs[np.arange(len(true)), true] + _LOG_EPS)))

    groups = np.array([_group_of(r.source_label) for r in manifest.rows])
    order = [name for name, _ in DEVICE_GROUPS]
    if (groups == UNKNOWN_GROUP).any():
        order.append(UNKNOWN_GROUP)
    counts: dict[str, int] = {}
    accuracy: dict[str, float] = {}
    for name in order:
        mask = groups == name
        counts[name] = int(mask.sum())
        accuracy[name] = (
            float(hits[mask].mean() * 100.0) if counts[name] else math.nan
        )

    k = len(classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (true, top1), 1)
    class_totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(
            class_totals > 0,
            np.diag(confusion) / np.maximum(class_totals, 1) * 100.0,
            math.nan,
        )

    present = [name for name in order if counts[name]]
    return EvalReport(
        classes=classes,
        group_order=tuple(order),
        group_counts=counts,
        group_accuracy=accuracy,
        val_loss=val_loss,
        avg_accuracy_items=float(hits.mean() * 100.0),
        avg_accuracy_groups=float(
            np.mean([accuracy[name] for name in present])
        ),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def prediction_overlap(preds_a: Sequence, preds_b: Sequence) -> float:
    """Percentage of items on which two prediction lists agree."""
    a = np.asarray(preds_a)
    b = np.asarray(preds_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(
            f"prediction lists must be 1-D and equal length, "
            f"got {a.shape} and {b.shape}"
        )
    if a.size == 0:
        raise DataError("empty prediction lists")
    return float(np.mean(a == b) * 100.0)


def _fmt(value: float, width: int) -> str:
    if math.isnan(value):
        return "-".rjust(width)
    return f"{value:.1f}".rjust(width)


def render_report(report: EvalReport) -> str:
    """Human-readable report table."""
    headers = [f"{name} acc. %" for name in report.group_order]
    headers += ["val loss", "Avg acc. %"]
    values = [report.group_accuracy[name] for name in report.group_order]
    widths = [max(len(h), 8) for h in headers]
    cells = [_fmt(v, w) for v, w in zip(values, widths)]
    cells.append(f"{report.val_loss:.3f}".rjust(widths[-2]))
    cells.append(_fmt(report.avg_accuracy_items, widths[-1]))
    lines = [
        "  ".join(h.rjust(w) for h, w in zip(headers, widths)),
        "  ".join(cells),
        "",
        f"item-weighted average accuracy:  {report.avg_accuracy_items:.2f} %",
        f"group-weighted average accuracy: {report.avg_accuracy_groups:.2f} %",
        "",
        "per-class accuracy:",
    ]
    for cls, acc in zip(report.classes, report.per_class_accuracy):
        shown = "-" if math.isnan(acc) else f"{acc:.1f} %"
        lines.append(f"  {cls:<20} {shown}")
    lines.append("")
    lines.append("confusion matrix (rows true, columns predicted):")
    name_w = max(len(c) for c in report.classes)
    cell_w = max(len(str(int(report.confusion.max()))), 3)
    for i, cls in enumerate(report.classes):
        row = " ".join(str(int(n)).rjust(cell_w) for n in report.confusion[i])
        lines.append(f"  {cls:<{name_w}} {row}")
    return "\n".join(lines) + "\n"


def _none_for_nan(value: float):
    return None if math.isnan(value) else value


def report_to_json(report: EvalReport) -> str:
    """Machine-readable report; NaN accuracies become null."""
    payload = {
        "classes": list(report.classes),
        "groups": {
            name: {
                "count": report.group_counts[name],
                "accuracy": _none_for_nan(report.group_accuracy[name]),
            }
            for name in report.group_order
        },
        "group_order": list(report.group_order),
        "val_loss": report.val_loss,
        "avg_accuracy_items": report.avg_accuracy_items,
        "avg_accuracy_groups": report.avg_accuracy_groups,
        "per_class_accuracy": [
            _none_for_nan(v) for v in report.per_class_accuracy.tolist()
        ],
        "confusion": report.confusion.tolist(),
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"bad report JSON: {exc}") from exc
    try:
        order = tuple(payload["group_order"])
        nan = math.nan
        return EvalReport(
            classes=tuple(payload["classes"]),
            group_order=order,
            group_counts={
                name: int(payload["groups"][name]["count"]) for name in order
            },
            group_accuracy={
                name: (
                    nan
                    if payload["groups"][name]["accuracy"] is None
                    else float(payload["groups"][name]["accuracy"])
                )
                for name in order
            },
            val_loss=float(payload["val_loss"]),
            avg_accuracy_items=float(payload["avg_accuracy_items"]),
            avg_accuracy_groups=float(payload["avg_accuracy_groups"]),
            per_class_accuracy=np.array(
                [nan if v is None else float(v)
                 for v in payload["per_class_accuracy"]]
            ),
            confusion=np.array(payload["confusion"], dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad report JSON: {exc}") from exc
