"""Nearest-reference labeling and overall / average accuracy."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hsille.datacube import LabelMask, ReferenceSet, read_int_grid, write_int_grid
from hsille.errors import DataError
from hsille.lle import ManifoldCoords

__all__ = [
    "LabelMap",
    "AccuracyReport",
    "nn_classify",
    "accuracy_report",
    "overall_accuracy",
    "average_accuracy",
]

# Elements in one (pixels x references x d) distance block.
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class labels; 0 marks clutter or no label."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise DataError(f"label map must be 2-D, got {labels.shape}")
        if (labels < 0).any() or (labels > self.n_classes).any():
            raise DataError(f"label map values must lie in [0, {self.n_classes}]")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def save(self, path: str | Path) -> None:
        write_int_grid(self.labels, path)

    @classmethod
    def load(cls, path: str | Path, n_classes: int) -> "LabelMap":
        return cls(read_int_grid(path), n_classes)


def nn_classify(coords: ManifoldCoords | np.ndarray, refs: ReferenceSet, shape: tuple[int, int] | None = None) -> LabelMap:
    """Give every pixel the label of its Euclidean-nearest reference pixel.

    ``coords`` is a :class:`ManifoldCoords` or an ``(n, d)`` point matrix.
    Distance ties go to the reference with the smaller pixel index; reference
    pixels keep their own label.
    """
    pts = coords.points() if isinstance(coords, ManifoldCoords) else np.asarray(coords, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    shape = shape or (1, n)
    if shape[0] * shape[1] != n:
        raise DataError(f"shape {shape} does not hold {n} samples")
    if len(refs) == 0:
        raise DataError("empty reference set")
    if refs.indices.min() < 0 or refs.indices.max() >= n:
        raise DataError("reference index outside the scene")
    anchors = pts[refs.indices]
    out = np.empty(n, dtype=np.int64)
    step = max(1, _BLOCK_ELEMENTS // (anchors.shape[0] * max(1, pts.shape[1])))
    for start in range(0, n, step):
        block = pts[start:start + step]
        # Explicit differences keep coincident points at exactly zero distance.
        dist = ((block[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=2)
        out[start:start + step] = refs.labels[np.argmin(dist, axis=1)]
    out[refs.indices] = refs.labels
    return LabelMap(out.reshape(shape), max(refs.n_classes, int(refs.labels.max())))


@dataclass(frozen=True)
class AccuracyReport:
    overall: float
    average: float
    per_class: tuple[float | None, ...]
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "average": self.average,
            "per_class": list(self.per_class),
            "confusion": self.confusion.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _eligible(pred: LabelMap, truth: LabelMask, exclude: ReferenceSet | None) -> np.ndarray:
    if pred.shape != truth.labels.shape:
        raise DataError(f"prediction {pred.shape} and truth {truth.labels.shape} differ in size")
    mask = truth.flat() != 0
    if exclude is not None and len(exclude):
        mask[exclude.indices] = False
    return mask


def accuracy_report(pred: LabelMap, truth: LabelMask, exclude: ReferenceSet | None = None) -> AccuracyReport:
    """Confusion matrix (rows: truth, columns: prediction) and derived scores.

    Only pixels labeled in ``truth`` and absent from ``exclude`` count.
    """
    mask = _eligible(pred, truth, exclude)
    if not mask.any():
        raise DataError("no eligible pixels to score")
    n_classes = truth.n_classes
    t = truth.flat()[mask]
    p = pred.flat()[mask]
    if (p < 1).any() or (p > n_classes).any():
        raise DataError(f"predictions on scored pixels must lie in 1..{n_classes}")
    confusion = np.bincount((t - 1) * n_classes + (p - 1), minlength=n_classes * n_classes)
    confusion = confusion.reshape(n_classes, n_classes)
    totals = confusion.sum(axis=1)
    per_class: list[float | None] = []
    for c in range(n_classes):
        per_class.append(100.0 * confusion[c, c] / totals[c] if totals[c] else None)
    empty = [c + 1 for c, v in enumerate(per_class) if v is None]
    if empty:
        warnings.warn(f"classes {empty} have no scored pixels; left out of the average", stacklevel=2)
    scored = [v for v in per_class if v is not None]
    overall = 100.0 * np.trace(confusion) / confusion.sum()
    return AccuracyReport(float(overall), float(np.mean(scored)), tuple(per_class), confusion)


def overall_accuracy(pred: LabelMap, truth: LabelMask, exclude: ReferenceSet | None = None) -> float:
    return accuracy_report(pred, truth, exclude).overall


def average_accuracy(pred: LabelMap, truth: LabelMask, exclude: ReferenceSet | None = None) -> float:
    return accuracy_report(pred, truth, exclude).average
