"""Binary PGM/PPM writers for entropy and class maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hsille.errors import DataError

__all__ = ["RenderPalette", "write_pgm", "write_ppm", "read_pnm", "render_grayscale", "render_classmap"]

BLACK = (0, 0, 0)


@dataclass(frozen=True)
class RenderPalette:
    colors: tuple[tuple[int, int, int], ...]
    clutter: tuple[int, int, int] = BLACK
    unlabeled: tuple[int, int, int] = BLACK

    @classmethod
    def from_colors(cls, colors: Sequence[Sequence[int]]) -> "RenderPalette":
        return cls(tuple(tuple(int(c) for c in rgb) for rgb in colors))

    def table(self) -> np.ndarray:
        """Lookup table indexed by label (row 0 is the unlabeled color)."""
        return np.array([self.unlabeled, *self.colors], dtype=np.uint8)


def _write_pnm(path: str | Path, magic: bytes, pixels: np.ndarray) -> None:
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise DataError(f"PGM needs a 2-D array, got {gray.shape}")
    _write_pnm(path, b"P5", gray)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError(f"PPM needs an (h, w, 3) array, got {rgb.shape}")
    _write_pnm(path, b"P6", rgb)


def read_pnm(path: str | Path) -> np.ndarray:
    """Parse a binary P5/P6 file with maxval 255."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DataError(f"{path}: unsupported PNM header {tokens}")
    channels = 1 if magic == b"P5" else 3
    body = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    return body.reshape(h, w) if channels == 1 else body.reshape(h, w, 3)


def render_grayscale(values: np.ndarray, path: str | Path) -> np.ndarray:
    """Gray level ``round(255 * H)`` (halves up); dark means confident."""
    values = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if not np.isfinite(values).all() or values.min() < 0.0 or values.max() > 1.0:
        raise DataError("grayscale rendering needs values in [0, 1]")
    gray = np.floor(255.0 * values + 0.5).astype(np.uint8)
    write_pgm(path, gray)
    return gray


def render_classmap(labels, clutter: np.ndarray | None, palette: RenderPalette, path: str | Path) -> np.ndarray:
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    if labels.size and labels.max() > len(palette.colors):
        raise DataError(f"label {int(labels.max())} has no palette entry ({len(palette.colors)} colors)")
    rgb = palette.table()[labels]
    if clutter is not None:
        rgb[np.asarray(clutter, dtype=bool)] = palette.clutter
    write_ppm(path, rgb)
    return rgb
