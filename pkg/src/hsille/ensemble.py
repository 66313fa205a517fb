"""Trial grid, proximity-label tallies, classification entropy and clutter."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hsille.datacube import HsiCube, ReferenceSet
from hsille.errors import DataError
from hsille.features import FeatureParams, SpectrumScope, assemble_features
from hsille.lle import embed_pipeline
from hsille.metrics import LabelMap, nn_classify

__all__ = [
    "TrialConfig",
    "EnsembleTally",
    "EntropyMap",
    "ClutterResult",
    "enumerate_trials",
    "run_trial",
    "tally",
    "entropy",
    "consensus",
    "clutter_split",
    "save_tally",
    "load_tally",
    "DEFAULT_GRID",
]

DEFAULT_GRID = {
    "scopes": ("whole", "odd", "even"),
    "box_sizes": (3, 5),
    "ks": (5, 10, 15),
    "ds": (10, 20, 30),
}


@dataclass(frozen=True)
class TrialConfig:
    scope: SpectrumScope
    box_size: int
    k: int
    d: int
    trial_id: int
    identity_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scope", SpectrumScope.parse(self.scope))
        if self.k < 1 or self.d < 1:
            raise DataError(f"k and d must be positive, got k={self.k}, d={self.d}")

    @property
    def feature_params(self) -> FeatureParams:
        return FeatureParams(self.scope, self.box_size, self.identity_only)

    def describe(self) -> str:
        mode = "identity" if self.identity_only else "filterbank"
        return f"trial {self.trial_id} ({mode}, scope={self.scope.value}, p={self.box_size}, k={self.k}, d={self.d})"


def enumerate_trials(
    scopes: Sequence = DEFAULT_GRID["scopes"],
    box_sizes: Sequence[int] = DEFAULT_GRID["box_sizes"],
    ks: Sequence[int] = DEFAULT_GRID["ks"],
    ds: Sequence[int] = DEFAULT_GRID["ds"],
    identity_only: bool = False,
) -> list[TrialConfig]:
    """Cartesian product in (scope, p, k, d) lexicographic order."""
    lists = [list(scopes), list(box_sizes), list(ks), list(ds)]
    if not all(lists):
        raise DataError("every grid axis needs at least one value")
    return [
        TrialConfig(SpectrumScope.parse(s), int(p), int(k), int(d), i, identity_only)
        for i, (s, p, k, d) in enumerate(itertools.product(*lists))
    ]


def run_trial(cube: HsiCube, config: TrialConfig, refs: ReferenceSet, seed: int = 0, window: int = 51) -> LabelMap:
    features = assemble_features(cube, config.feature_params)
    coords = embed_pipeline(features, config.k, config.d, window, seed)
    return nn_classify(coords, refs, (cube.height, cube.width))


@dataclass(frozen=True)
class EnsembleTally:
    """``counts[j, l - 1]`` is how many trials gave pixel j label l."""

    counts: np.ndarray
    shape: tuple[int, int]

    @property
    def trials(self) -> int:
        return int(self.counts[0].sum()) if self.counts.size else 0

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]


def tally(maps: Sequence[LabelMap]) -> EnsembleTally:
    if not maps:
        raise DataError("cannot tally an empty ensemble")
    shape = maps[0].shape
    n_classes = maps[0].n_classes
    for m in maps:
        if m.shape != shape or m.n_classes != n_classes:
            raise DataError(f"label map {m.shape}/L={m.n_classes} inconsistent with {shape}/L={n_classes}")
        if (m.labels == 0).any():
            raise DataError("trial maps must label every pixel")
    n = shape[0] * shape[1]
    counts = np.zeros((n, n_classes), dtype=np.int64)
    rows = np.arange(n)
    for m in maps:
        np.add.at(counts, (rows, m.flat() - 1), 1)
    return EnsembleTally(counts, shape)


def save_tally(t: EnsembleTally, path: str | Path) -> None:
    """Little-endian uint32 counts, pixel-major (all labels of pixel 0 first)."""
    t.counts.astype("<u4").tofile(path)


def load_tally(path: str | Path, shape: tuple[int, int], n_classes: int) -> EnsembleTally:
    raw = np.fromfile(path, dtype="<u4")
    if raw.size != shape[0] * shape[1] * n_classes:
        raise DataError(f"{path}: {raw.size} counts, expected {shape[0] * shape[1] * n_classes}")
    return EnsembleTally(raw.reshape(-1, n_classes).astype(np.int64), tuple(shape))


@dataclass(frozen=True)
class EntropyMap:
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def entropy(t: EnsembleTally) -> EntropyMap:
    """Base-L entropy of each pixel's label frequencies, ``0 log 0 = 0``.

    Evaluated as ``sum_l n_l * log_L(T / n_l) / T`` so that one-hot counts
    give exactly 0 and uniform counts exactly 1.
    """
    n_classes = t.n_classes
    if n_classes < 2:
        raise DataError("entropy needs at least 2 classes")
    counts = t.counts.astype(np.float64)
    total = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        ratio = np.where(counts > 0, total / np.where(counts > 0, counts, 1.0), 1.0)
    terms = counts * (np.log(ratio) / math.log(n_classes))
    values = terms.sum(axis=1) / total[:, 0]
    return EntropyMap(values.reshape(t.shape))


def consensus(t: EnsembleTally) -> LabelMap:
    """Most frequent label per pixel; ties go to the smallest class."""
    return LabelMap((np.argmax(t.counts, axis=1) + 1).reshape(t.shape), t.n_classes)


@dataclass(frozen=True)
class ClutterResult:
    threshold: float
    clutter: np.ndarray
    consensus: LabelMap


def clutter_split(h: EntropyMap, labels: LabelMap, tau: float, refs: ReferenceSet | None = None) -> ClutterResult:
    """Pixels with entropy >= tau become clutter (label 0); references never do."""
    if not 0.0 <= tau <= 1.0:
        raise DataError(f"clutter threshold must lie in [0, 1], got {tau}")
    if h.shape != labels.shape:
        raise DataError(f"entropy map {h.shape} and label map {labels.shape} differ")
    clutter = h.values >= tau
    if refs is not None and len(refs):
        clutter.reshape(-1)[refs.indices] = False
    masked = np.where(clutter, 0, labels.labels)
    return ClutterResult(float(tau), clutter, LabelMap(masked, labels.n_classes))
