"""Spatially windowed k-nearest-neighbor search under cosine similarity."""

from __future__ import annotations

import collections
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from hsille.errors import DataError
from hsille.features import FeatureImage

__all__ = ["NeighborList", "cosine_similarity", "windowed_knn", "euclidean_knn", "diagnostics"]

# Similarities are compared on this grid so that ties do not depend on
# BLAS summation order.
SIMILARITY_DECIMALS = 12

diagnostics: collections.Counter = collections.Counter()


@dataclass(frozen=True)
class NeighborList:
    """``neighbors[j]`` lists the k most similar pixels of pixel j, best first.

    For the Euclidean point-cloud search ``similarities`` hold negated
    distances, keeping the "best first, non-increasing" convention.
    """

    neighbors: np.ndarray
    similarities: np.ndarray
    window: int | None = None
    degenerate: int = 0
    metric: str = "cosine"

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"vector lengths differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        diagnostics["zero_norm"] += 1
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, int]:
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return x / safe[:, None], int(zero.sum())


def _top_k(scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Column indices of the k best scores per row, ties to the lower column."""
    n_cols = scores.shape[1]
    kth = np.partition(scores, n_cols - k, axis=1)[:, n_cols - k][:, None]
    above = scores > kth
    equal = scores == kth
    room = k - above.sum(axis=1, keepdims=True)
    chosen = above | (equal & (np.cumsum(equal, axis=1) <= room))
    cols = np.nonzero(chosen)[1].reshape(-1, k)
    vals = np.take_along_axis(scores, cols, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1), np.take_along_axis(vals, order, axis=1)


def windowed_knn(img: FeatureImage, k: int, window: int) -> NeighborList:
    """k most cosine-similar pixels inside a ``window x window`` box.

    Windows are clipped at the image border; the center pixel is excluded.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if window < 1 or window % 2 == 0:
        raise DataError(f"window must be odd and >= 1, got {window}")
    h, w = img.height, img.width
    half = window // 2
    unit, n_zero = _unit_rows(img.vectors())
    if n_zero:
        diagnostics["zero_norm"] += n_zero
    nbrs = np.empty((h * w, k), dtype=np.int64)
    sims = np.empty((h * w, k), dtype=np.float64)
    xs = np.arange(w)
    for r in range(h):
        lo, hi = max(0, r - half), min(h, r + half + 1)
        block = unit[r * w:(r + 1) * w]
        cand = unit[lo * w:hi * w]
        scores = np.round(block @ cand.T, SIMILARITY_DECIMALS)
        cand_x = np.tile(xs, hi - lo)
        outside = np.abs(cand_x[None, :] - xs[:, None]) > half
        scores[outside] = -np.inf
        scores[xs, (r - lo) * w + xs] = -np.inf
        available = np.isfinite(scores).sum(axis=1)
        if (available < k).any():
            x = int(np.argmax(available < k))
            raise DataError(
                f"pixel ({r}, {x}) has only {int(available[x])} candidates in a "
                f"{window}x{window} window, k = {k}"
            )
        cols, vals = _top_k(scores, k)
        nbrs[r * w:(r + 1) * w] = cols + lo * w
        sims[r * w:(r + 1) * w] = vals
    return NeighborList(nbrs, sims, window, n_zero)


def euclidean_knn(points: np.ndarray, k: int) -> NeighborList:
    """Global Euclidean kNN of a point cloud (no spatial window)."""
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k < points.shape[0]:
        raise DataError(f"k must lie in [1, {points.shape[0] - 1}], got {k}")
    dist, idx = cKDTree(points).query(points, k=k + 1)
    self_hit = idx == np.arange(points.shape[0])[:, None]
    # Drop the query point itself; if duplicates hid it, drop the last column.
    keep = ~self_hit
    keep[~self_hit.any(axis=1), -1] = False
    nbrs = idx[keep].reshape(-1, k)
    return NeighborList(nbrs, -dist[keep].reshape(-1, k), None, 0, "euclidean")
