"""Locally linear embedding on a precomputed neighbor graph.

Weights are solved column by column (each sample reconstructed as an affine
combination of its neighbors), then the embedding is read off the smallest
eigenvectors of ``M = (I - W)(I - W)^T`` after discarding the constant,
per-component null space.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh, splu

from hsille.errors import DataError, NumericalError
from hsille.features import FeatureImage
from hsille.neighbors import NeighborList, windowed_knn

__all__ = [
    "SparseWeightMatrix",
    "ManifoldCoords",
    "solve_local_weights",
    "assemble_weight_matrix",
    "reduce_dimension",
    "embed_pipeline",
    "diagnostics",
]

log = logging.getLogger(__name__)

REG = 1e-3
NULL_TOL = 1e-14
SHIFT = 1e-12
_CHUNK = 2048

diagnostics: collections.Counter = collections.Counter()


@dataclass(frozen=True)
class SparseWeightMatrix:
    """Column j holds the reconstruction weights of sample j.

    ``neighbors[j]`` are the row indices of column j and ``weights[j]`` the
    matching entries; each column sums to one.
    """

    neighbors: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def column_sums(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def to_sparse(self) -> sp.csc_matrix:
        n, k = self.neighbors.shape
        indptr = np.arange(0, n * k + 1, k)
        return sp.csc_matrix((self.weights.ravel(), self.neighbors.ravel(), indptr), shape=(n, n))

    def dump_triplets(self, path: str | Path) -> None:
        """Write ``row,col,weight`` lines sorted by (col, row); weights in repr form."""
        order = np.argsort(self.neighbors, axis=1, kind="stable")
        rows = np.take_along_axis(self.neighbors, order, axis=1)
        vals = np.take_along_axis(self.weights, order, axis=1)
        lines = [
            f"{r},{j},{float(v)!r}"
            for j in range(self.n)
            for r, v in zip(rows[j].tolist(), vals[j].tolist())
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ManifoldCoords:
    """``coords`` is ``(d, n)``: one orthonormal, mean-free row per direction."""

    coords: np.ndarray
    eigenvalues: np.ndarray
    n_components: int = 1

    @property
    def d(self) -> int:
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.coords.shape[1]

    def points(self) -> np.ndarray:
        """Samples as an ``(n, d)`` matrix."""
        return self.coords.T


def _weights_batch(centers: np.ndarray, nbr_vecs: np.ndarray, reg: float) -> np.ndarray:
    """Affine reconstruction weights for a batch.

    centers: (n, m); nbr_vecs: (n, k, m). The Gram matrix is regularized by
    ``reg * trace / k`` whenever its smallest eigenvalue falls below that
    level, which always happens when the neighbors span fewer than k
    directions (k > m, duplicates, collinear points).
    """
    n, k, _ = nbr_vecs.shape
    z = nbr_vecs - centers[:, None, :]
    gram = np.einsum("nim,njm->nij", z, z)
    trace = np.trace(gram, axis1=1, axis2=2)
    weights = np.full((n, k), 1.0 / k)
    live = trace > 0.0
    n_dead = int(n - live.sum())
    if n_dead:
        diagnostics["zero_trace"] += n_dead
    if not live.any():
        return weights
    g = gram[live]
    shift = reg * trace[live] / k
    if k > 1:
        lam_min = np.linalg.eigvalsh(g)[:, 0]
        shift = np.where(lam_min < shift, shift, 0.0)
        diagnostics["regularized"] += int(np.count_nonzero(shift))
    g = g + shift[:, None, None] * np.eye(k)
    w = np.linalg.solve(g, np.ones((g.shape[0], k, 1)))[:, :, 0]
    weights[live] = w / w.sum(axis=1, keepdims=True)
    return weights


def solve_local_weights(x_j, neighbors, reg: float = REG) -> np.ndarray:
    """Weights w minimizing ``|x_j - sum_i w_i n_i|^2`` with ``sum(w) = 1``."""
    x_j = np.asarray(x_j, dtype=np.float64).ravel()
    neighbors = np.asarray(neighbors, dtype=np.float64)
    if neighbors.ndim == 1:
        neighbors = neighbors[:, None] if x_j.size == 1 else neighbors[None, :]
    if neighbors.shape[0] < 1 or neighbors.shape[1] != x_j.size:
        raise DataError(f"need (k, {x_j.size}) neighbors, got {neighbors.shape}")
    if not (np.isfinite(x_j).all() and np.isfinite(neighbors).all()):
        raise DataError("non-finite input to local weight solve")
    return _weights_batch(x_j[None, :], neighbors[None], reg)[0]


def _as_vectors(features) -> np.ndarray:
    if isinstance(features, FeatureImage):
        return features.vectors()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def assemble_weight_matrix(features, nbrs: NeighborList | np.ndarray, reg: float = REG) -> SparseWeightMatrix:
    x = _as_vectors(features)
    idx = nbrs.neighbors if isinstance(nbrs, NeighborList) else np.asarray(nbrs, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise DataError(f"neighbor table {idx.shape} does not match {x.shape[0]} samples")
    if (idx == np.arange(x.shape[0])[:, None]).any():
        raise DataError("a sample lists itself as neighbor")
    weights = np.empty(idx.shape, dtype=np.float64)
    for start in range(0, x.shape[0], _CHUNK):
        stop = min(start + _CHUNK, x.shape[0])
        weights[start:stop] = _weights_batch(x[start:stop], x[idx[start:stop]], reg)
    return SparseWeightMatrix(idx.copy(), weights)


def _components(w: sp.csc_matrix) -> tuple[int, np.ndarray]:
    # Zero weights still define graph edges.
    pattern = sp.csc_matrix((np.ones_like(w.data, dtype=np.int8), w.indices, w.indptr), shape=w.shape)
    return connected_components(pattern + pattern.T, directed=False)


def _fix_signs(y: np.ndarray) -> np.ndarray:
    pivot = np.argmax(np.abs(y), axis=1)
    signs = np.sign(y[np.arange(y.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return y * signs[:, None]


def reduce_dimension(w: SparseWeightMatrix, d: int, seed: int = 0, solver: str = "auto") -> ManifoldCoords:
    """The d smallest non-null eigenvectors of ``(I - W)(I - W)^T``.

    ``solver`` is ``"arpack"`` (shift-invert Lanczos), ``"dense"`` or
    ``"auto"`` (ARPACK unless the problem is too small for it).
    """
    n = w.n
    if d < 1 or d + 2 > n:
        raise DataError(f"need 1 <= d <= n - 2, got d={d}, n={n}")
    wm = w.to_sparse()
    n_comp, comp = _components(wm)
    a = (sp.identity(n, format="csc") - wm).tocsc()
    m = (a @ a.T).tocsc()
    m = ((m + m.T) * 0.5).tocsc()
    scale = float(abs(m).sum(axis=0).max()) or 1.0
    nev = d + n_comp
    if nev > n - 1:
        raise DataError(f"{n_comp} connected components leave no room for d={d} coordinates among {n} samples")
    # One extra pair tells whether the null space outgrows the request.
    n_probe = min(nev + 1, n - 1)
    if solver == "auto":
        solver = "dense" if n < 50 else "arpack"
    if solver == "dense":
        vals, vecs = scipy.linalg.eigh(m.toarray(), subset_by_index=[0, n_probe - 1])
    elif solver == "arpack":
        v0 = np.random.default_rng(seed).standard_normal(n)
        # The wanted eigenvalues sit far below ||M||; a shift of comparable
        # size keeps them apart after inversion.
        sigma = -SHIFT * scale
        try:
            lu = splu((m - sigma * sp.identity(n, format="csc")).tocsc(), permc_spec="COLAMD")
            op_inv = LinearOperator((n, n), matvec=lu.solve, dtype=np.float64)
            vals, vecs = eigsh(
                m, k=n_probe, sigma=sigma, OPinv=op_inv, which="LM", v0=v0, tol=0.0, maxiter=max(1000, 10 * n)
            )
        except ArpackNoConvergence as exc:
            res = [float(np.linalg.norm(m @ v - lam * v)) for lam, v in zip(exc.eigenvalues, exc.eigenvectors.T)]
            raise NumericalError(f"eigensolver did not converge; {len(res)} pairs converged, residuals {res}") from exc
        except (ArpackError, RuntimeError) as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    else:
        raise DataError(f"unknown solver {solver!r}")

    if vals.size > nev and vals[nev] < NULL_TOL * scale:
        raise NumericalError(
            f"rank anomaly: more than d + c = {nev} near-zero eigenvalues "
            f"({n_comp} connected component(s)); smallest eigenvalues {vals.tolist()}"
        )
    vals, vecs = vals[:nev], vecs[:, :nev]
    # Component indicators are exact null vectors; project them out and
    # re-solve the small problem on what is left.
    indicators = np.zeros((n, n_comp))
    indicators[np.arange(n), comp] = 1.0
    indicators /= np.sqrt(indicators.sum(axis=0))
    rest = vecs - indicators @ (indicators.T @ vecs)
    basis = np.linalg.svd(rest, full_matrices=False)[0][:, :d]
    basis -= indicators @ (indicators.T @ basis)
    basis = np.linalg.qr(basis)[0]
    small = basis.T @ (m @ basis)
    evals, rot = np.linalg.eigh((small + small.T) * 0.5)
    y = (basis @ rot).T
    return ManifoldCoords(_fix_signs(y), evals, n_comp)


def embed_pipeline(features: FeatureImage, k: int, d: int, window: int, seed: int = 0) -> ManifoldCoords:
    nbrs = windowed_knn(features, k, window)
    weights = assemble_weight_matrix(features, nbrs)
    return reduce_dimension(weights, d, seed)
