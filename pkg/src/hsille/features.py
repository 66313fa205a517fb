"""Filter-bank feature embedding of hyperspectral pixels.

Each pixel's spectrum (optionally subsampled to odd or even band positions)
is extended with its spectral gradient, mean and standard deviation; every
resulting channel is then smoothed with a ``p x p`` spatial box filter.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from hsille.datacube import HsiCube
from hsille.errors import DataError

__all__ = [
    "SpectrumScope",
    "FeatureParams",
    "FeatureImage",
    "select_scope",
    "spectral_gradient",
    "spectral_moments",
    "assemble_features",
    "box_filter",
]


class SpectrumScope(enum.Enum):
    WHOLE = "whole"
    ODD = "odd"
    EVEN = "even"

    @classmethod
    def parse(cls, value: "str | SpectrumScope") -> "SpectrumScope":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DataError(f"unknown spectrum scope {value!r}; expected whole, odd or even") from None


def _check_box(p: int) -> int:
    if int(p) != p or p < 1 or p % 2 == 0:
        raise DataError(f"box size must be an odd integer >= 1, got {p}")
    return int(p)


@dataclass(frozen=True)
class FeatureParams:
    scope: SpectrumScope = SpectrumScope.WHOLE
    box_size: int = 1
    # Ablation mode: keep only the raw scoped bands.
    identity_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scope", SpectrumScope.parse(self.scope))
        object.__setattr__(self, "box_size", _check_box(self.box_size))


@dataclass(frozen=True)
class FeatureImage:
    """Per-pixel feature vectors, ``data`` shaped ``(height, width, dim)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise DataError(f"feature image must be (height, width, dim), got {data.shape}")
        if not np.isfinite(data).all():
            raise DataError("feature image contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def vectors(self) -> np.ndarray:
        """``(n_pixels, dim)`` matrix, pixels in row-major order."""
        return self.data.reshape(-1, self.dim)


def select_scope(cube: HsiCube, scope: SpectrumScope | str) -> list[int]:
    """Band positions (within the cube's current band list) used by ``scope``."""
    scope = SpectrumScope.parse(scope)
    positions = list(range(cube.bands))
    if scope is SpectrumScope.EVEN:
        positions = positions[0::2]
    elif scope is SpectrumScope.ODD:
        positions = positions[1::2]
    if len(positions) < 2:
        raise DataError(f"{scope.value} scope of a {cube.bands}-band cube leaves {len(positions)} band(s); need 2")
    return positions


def spectral_gradient(v: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided differences at both ends.

    Works along the last axis, so a ``(n, B)`` block of spectra is accepted.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 2:
        raise DataError("gradient needs at least 2 bands")
    g = np.empty_like(v)
    g[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / 2.0
    g[..., 0] = v[..., 1] - v[..., 0]
    g[..., -1] = v[..., -1] - v[..., -2]
    return g


def spectral_moments(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < 1:
        raise DataError("moments of an empty spectrum")
    mean = v.mean(axis=-1)
    std = np.sqrt(((v - mean[..., None]) ** 2).mean(axis=-1))
    return mean, std


def box_filter(img: FeatureImage, p: int) -> FeatureImage:
    """Mean over the ``p x p`` window of every channel, edges replicated."""
    p = _check_box(p)
    if p == 1:
        return img
    out = ndimage.uniform_filter(img.data, size=(p, p, 1), mode="nearest")
    return FeatureImage(out)


def assemble_features(cube: HsiCube, params: FeatureParams) -> FeatureImage:
    positions = select_scope(cube, params.scope)
    spectra = cube.pixels()[:, positions]
    if params.identity_only:
        channels = spectra
    else:
        mean, std = spectral_moments(spectra)
        channels = np.concatenate([spectra, spectral_gradient(spectra), mean[:, None], std[:, None]], axis=1)
    img = FeatureImage(channels.reshape(cube.height, cube.width, -1))
    return box_filter(img, params.box_size)
