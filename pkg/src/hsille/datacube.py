"""Hyperspectral cubes, label masks and reference sampling.

Cubes live on disk as a small ``key = value`` text header next to a raw
band-sequential payload of little-endian float32 samples. Label masks are
comma-separated integer grids, 0 meaning unlabeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from hsille.errors import DataError

__all__ = [
    "HsiCube",
    "LabelMask",
    "ReferenceSet",
    "default_palette",
    "load_cube",
    "write_cube",
    "remove_bands",
    "load_label_mask",
    "write_label_mask",
    "sample_reference",
    "parse_header",
    "save_reference",
    "load_reference",
]

_REQUIRED_KEYS = ("height", "width", "bands", "dtype", "interleave", "data")

# First 16 entries follow the usual Indian Pines legend ordering; the rest cycle.
_BASE_PALETTE = (
    (255, 254, 137), (3, 28, 241), (255, 89, 1), (5, 255, 133),
    (255, 2, 251), (89, 1, 255), (3, 171, 255), (12, 255, 7),
    (172, 175, 84), (160, 78, 158), (101, 173, 255), (60, 91, 112),
    (104, 192, 63), (139, 69, 46), (119, 255, 172), (254, 255, 3),
)


def default_palette(n_classes: int) -> list[tuple[int, int, int]]:
    out = []
    for i in range(n_classes):
        r, g, b = _BASE_PALETTE[i % len(_BASE_PALETTE)]
        shift = 37 * (i // len(_BASE_PALETTE))
        out.append(((r + shift) % 256, (g + 2 * shift) % 256, (b + 3 * shift) % 256))
    return out


@dataclass(frozen=True)
class HsiCube:
    """Band-sequential hyperspectral cube.

    ``data`` has shape ``(bands, height, width)`` and dtype float32, so its
    C-order byte image is exactly the on-disk payload. ``band_ids`` are the
    original (1-based) sensor band numbers still present.
    """

    data: np.ndarray
    band_ids: tuple[int, ...] = ()

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError(f"cube data must be 3-D (bands, height, width), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1 or data.shape[2] < 1:
            raise DataError(f"empty cube of shape {data.shape}")
        ids = tuple(int(b) for b in self.band_ids) if len(self.band_ids) else tuple(range(1, data.shape[0] + 1))
        if len(ids) != data.shape[0]:
            raise DataError(f"{len(ids)} band ids for {data.shape[0]} bands")
        if any(b >= a for a, b in zip(ids[1:], ids[:-1])):
            raise DataError("band ids must be strictly increasing")
        _check_finite(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "band_ids", ids)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def samples(self) -> np.ndarray:
        """Flat view in storage order (band-major, then row-major)."""
        return self.data.reshape(-1)

    def pixels(self) -> np.ndarray:
        """Spectra as a float64 ``(n_pixels, bands)`` matrix, pixels row-major."""
        return self.data.reshape(self.bands, -1).T.astype(np.float64)

    @classmethod
    def from_pixels(cls, spectra: np.ndarray, height: int, width: int, band_ids: Sequence[int] = ()) -> "HsiCube":
        spectra = np.asarray(spectra)
        if spectra.ndim != 2 or spectra.shape[0] != height * width:
            raise DataError(f"expected ({height * width}, bands) spectra, got {spectra.shape}")
        return cls(spectra.T.reshape(-1, height, width), tuple(band_ids))


def _check_finite(data: np.ndarray) -> None:
    bad = ~np.isfinite(data)
    if bad.any():
        band, row, col = (int(v) for v in np.argwhere(bad)[0])
        raise DataError(
            f"non-finite sample at band position {band}, pixel ({row}, {col}) "
            f"[{int(bad.sum())} non-finite values in total]"
        )


def parse_header(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"cube header not found: {path}")
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip().lower()] = value.strip()
    missing = [k for k in _REQUIRED_KEYS if k not in entries]
    if missing:
        raise DataError(f"{path}: missing header keys {missing}")
    return entries


def _positive_int(entries: dict[str, str], key: str, path: Path) -> int:
    try:
        value = int(entries[key])
    except ValueError:
        raise DataError(f"{path}: {key} must be an integer, got {entries[key]!r}") from None
    if value < 1:
        raise DataError(f"{path}: {key} must be positive")
    return value


def load_cube(header_path: str | Path) -> HsiCube:
    header_path = Path(header_path)
    entries = parse_header(header_path)
    height = _positive_int(entries, "height", header_path)
    width = _positive_int(entries, "width", header_path)
    bands = _positive_int(entries, "bands", header_path)
    if entries["dtype"].lower() != "f32le":
        raise DataError(f"{header_path}: unsupported dtype {entries['dtype']!r} (only f32le)")
    if entries["interleave"].lower() != "bsq":
        raise DataError(f"{header_path}: unsupported interleave {entries['interleave']!r} (only bsq)")
    payload = header_path.parent / entries["data"]
    if not payload.is_file():
        raise DataError(f"cube payload not found: {payload}")
    expected = height * width * bands
    raw = np.fromfile(payload, dtype="<f4")
    if raw.size * 4 != payload.stat().st_size or raw.size != expected:
        raise DataError(
            f"{payload}: payload holds {payload.stat().st_size} bytes, "
            f"header implies {expected} float32 samples ({expected * 4} bytes)"
        )
    band_ids: tuple[int, ...] = ()
    if "band_ids" in entries:
        try:
            band_ids = tuple(int(v) for v in entries["band_ids"].replace(",", " ").split())
        except ValueError:
            raise DataError(f"{header_path}: malformed band_ids") from None
    return HsiCube(raw.reshape(bands, height, width).astype(np.float32), band_ids)


def write_cube(cube: HsiCube, header_path: str | Path, data_name: str | None = None) -> Path:
    """Write header and payload; returns the payload path."""
    header_path = Path(header_path)
    data_name = data_name or header_path.with_suffix(".raw").name
    payload = header_path.parent / data_name
    header_path.parent.mkdir(parents=True, exist_ok=True)
    cube.data.astype("<f4").tofile(payload)
    lines = [
        f"height = {cube.height}",
        f"width = {cube.width}",
        f"bands = {cube.bands}",
        "dtype = f32le",
        "interleave = bsq",
        f"data = {data_name}",
    ]
    if cube.band_ids != tuple(range(1, cube.bands + 1)):
        lines.append("band_ids = " + ",".join(str(b) for b in cube.band_ids))
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return payload


def remove_bands(cube: HsiCube, drop: Sequence[int]) -> HsiCube:
    """Drop sensor bands by id; kept samples are untouched."""
    drop_set = set(int(b) for b in drop)
    unknown = sorted(drop_set - set(cube.band_ids))
    if unknown:
        raise DataError(f"unknown band ids {unknown}")
    if not drop_set:
        return cube
    keep = [i for i, b in enumerate(cube.band_ids) if b not in drop_set]
    if not keep:
        raise DataError("removing every band would leave an empty cube")
    return HsiCube(cube.data[keep], tuple(cube.band_ids[i] for i in keep))


@dataclass(frozen=True)
class LabelMask:
    labels: np.ndarray
    class_names: tuple[str, ...] = ()
    palette: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise DataError(f"label mask must be 2-D, got shape {labels.shape}")
        if (labels < 0).any():
            row, col = (int(v) for v in np.argwhere(labels < 0)[0])
            raise DataError(f"negative label at pixel ({row}, {col})")
        n_classes = int(labels.max()) if labels.size else 0
        if n_classes < 1:
            raise DataError("label mask contains no labeled pixel")
        absent = sorted(set(range(1, n_classes + 1)) - set(np.unique(labels).tolist()))
        if absent:
            raise DataError(f"classes {absent} never occur in the mask")
        names = tuple(self.class_names) or tuple(f"class {i}" for i in range(1, n_classes + 1))
        palette = tuple(tuple(int(c) for c in rgb) for rgb in self.palette) or tuple(default_palette(n_classes))
        if len(names) < n_classes or len(palette) < n_classes:
            raise DataError(f"class legend covers {min(len(names), len(palette))} classes, mask has {n_classes}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names[:n_classes])
        object.__setattr__(self, "palette", palette[:n_classes])

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)

    def coverage(self) -> float:
        """Fraction of pixels carrying a class label."""
        return float(np.count_nonzero(self.labels)) / self.labels.size


def read_int_grid(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"grid file not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([int(v) for v in line.replace(",", " ").split()])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer value") from None
        if len(rows[-1]) != len(rows[0]):
            raise DataError(f"{path}:{lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    if not rows:
        raise DataError(f"{path}: empty grid")
    return np.array(rows, dtype=np.int64)


def write_int_grid(grid: np.ndarray, path: str | Path) -> None:
    grid = np.asarray(grid)
    text = "\n".join(",".join(str(int(v)) for v in row) for row in grid)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_legend(path: Path) -> tuple[list[str], list[tuple[int, int, int]]]:
    entries = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 'class_id, name, r, g, b'")
        try:
            cid, rgb = int(parts[0]), tuple(int(v) for v in parts[2:])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed legend entry") from None
        if not all(0 <= v <= 255 for v in rgb):
            raise DataError(f"{path}:{lineno}: color components must lie in [0, 255]")
        entries[cid] = (parts[1], rgb)
    ids = sorted(entries)
    if ids != list(range(1, len(ids) + 1)):
        raise DataError(f"{path}: class ids must be 1..L without gaps")
    return [entries[i][0] for i in ids], [entries[i][1] for i in ids]


def load_label_mask(path: str | Path, cube: HsiCube | None = None, legend: str | Path | None = None) -> LabelMask:
    """Read a label grid, validating it against ``cube`` when given.

    The legend sidecar defaults to ``<path>.classes`` if that file exists.
    """
    path = Path(path)
    grid = read_int_grid(path)
    if cube is not None and grid.shape != (cube.height, cube.width):
        raise DataError(f"{path}: mask is {grid.shape[0]}x{grid.shape[1]}, cube is {cube.height}x{cube.width}")
    legend_path = Path(legend) if legend is not None else path.with_name(path.name + ".classes")
    names: list[str] = []
    palette: list[tuple[int, int, int]] = []
    if legend is not None or legend_path.is_file():
        names, palette = read_legend(legend_path)
    return LabelMask(grid, tuple(names), tuple(palette))


def write_label_mask(mask: LabelMask, path: str | Path, with_legend: bool = True) -> None:
    path = Path(path)
    write_int_grid(mask.labels, path)
    if with_legend:
        lines = [f"{i}, {name}, {r}, {g}, {b}" for i, (name, (r, g, b)) in enumerate(zip(mask.class_names, mask.palette), 1)]
        path.with_name(path.name + ".classes").write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ReferenceSet:
    """Sparse labeled training pixels, sorted by linear pixel index."""

    indices: np.ndarray
    labels: np.ndarray
    density: float = 1.0
    seed: int = 0
    n_classes: int = field(default=0)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if idx.shape != lab.shape or idx.ndim != 1:
            raise DataError("reference indices and labels must be equal-length vectors")
        order = np.argsort(idx, kind="stable")
        idx, lab = idx[order], lab[order]
        if idx.size and (np.diff(idx) == 0).any():
            raise DataError("duplicate reference pixel")
        if (lab <= 0).any():
            raise DataError("reference labels must be nonzero")
        idx.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)
        if not self.n_classes:
            object.__setattr__(self, "n_classes", int(lab.max()) if lab.size else 0)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.indices.tolist(), self.labels.tolist()))

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(values.tolist(), counts.tolist()))


def per_class_count(density: float, class_size: int) -> int:
    """``max(1, round(density * m))`` with halves rounded up."""
    return max(1, min(class_size, int(math.floor(density * class_size + 0.5))))


def sample_reference(mask: LabelMask, density: float, seed: int) -> ReferenceSet:
    if not 0.0 < density <= 1.0:
        raise DataError(f"density must lie in (0, 1], got {density}")
    flat = mask.flat()
    rng = np.random.default_rng(seed)
    picked_idx, picked_lab = [], []
    for c in range(1, mask.n_classes + 1):
        members = np.flatnonzero(flat == c)
        n = per_class_count(density, members.size)
        chosen = members if n == members.size else rng.choice(members, size=n, replace=False)
        picked_idx.append(np.sort(chosen))
        picked_lab.append(np.full(n, c, dtype=np.int64))
    return ReferenceSet(np.concatenate(picked_idx), np.concatenate(picked_lab), density, seed, mask.n_classes)


def save_reference(refs: ReferenceSet, path: str | Path) -> None:
    lines = [f"# density = {refs.density!r}", f"# seed = {refs.seed}", f"# classes = {refs.n_classes}"]
    lines += [f"{i},{c}" for i, c in refs.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_reference(path: str | Path) -> ReferenceSet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"reference file not found: {path}")
    meta: dict[str, str] = {}
    idx, lab = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
            continue
        try:
            i, c = (int(v) for v in line.split(","))
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected 'pixel_index,label'") from None
        idx.append(i)
        lab.append(c)
    return ReferenceSet(
        np.array(idx, dtype=np.int64),
        np.array(lab, dtype=np.int64),
        float(meta.get("density", 1.0)),
        int(meta.get("seed", 0)),
        int(meta.get("classes", 0)),
    )
