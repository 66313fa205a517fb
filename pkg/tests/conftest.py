from __future__ import annotations

import numpy as np
import pytest

from hsille.datacube import HsiCube, LabelMask


def make_scene(height: int, width: int, bands: int, n_classes: int, seed: int = 0, noise: float = 0.02):
    """Blocky synthetic scene: each class has a smooth random spectrum."""
    rng = np.random.default_rng(seed)
    block_r = max(1, height // 4)
    block_c = max(1, width // 4)
    rows = np.arange(height)[:, None] // block_r
    cols = np.arange(width)[None, :] // block_c
    labels = (rows * 4 + cols) % n_classes + 1
    base = rng.random((n_classes, bands)).cumsum(axis=1)
    base /= base.max(axis=1, keepdims=True)
    gain = 1.0 + 0.1 * rng.standard_normal((height, width, 1))
    spectra = base[labels - 1] * gain + noise * rng.standard_normal((height, width, bands))
    cube = HsiCube.from_pixels(spectra.reshape(-1, bands), height, width)
    return cube, LabelMask(labels)


def two_blob_scene(seed: int = 0):
    """8x8 scene, left half class 1, right half class 2, raw bands separable."""
    rng = np.random.default_rng(seed)
    bands = 6
    up = np.linspace(1.0, 2.0, bands)
    down = up[::-1].copy()
    labels = np.ones((8, 8), dtype=np.int64)
    labels[:, 4:] = 2
    spectra = np.where(labels[..., None] == 1, up, down) * (1.0 + 0.05 * rng.random((8, 8, 1)))
    spectra = spectra + 0.01 * rng.standard_normal((8, 8, bands))
    cube = HsiCube.from_pixels(spectra.reshape(-1, bands), 8, 8)
    return cube, LabelMask(labels)


@pytest.fixture
def blob_scene():
    return two_blob_scene()


@pytest.fixture
def small_scene():
    return make_scene(16, 16, 12, 4, seed=3)
