"""Command-line entry point: run ensembles, evaluate maps, convert data.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from hsille import datacube
from hsille.datacube import HsiCube, LabelMask, ReferenceSet
from hsille.ensemble import (
    DEFAULT_GRID,
    TrialConfig,
    clutter_split,
    consensus,
    entropy,
    enumerate_trials,
    load_tally,
    run_trial,
    save_tally,
    tally,
)
from hsille.errors import DataError, HsiError, NumericalError, UsageError
from hsille.metrics import LabelMap, accuracy_report
from hsille.render import RenderPalette, render_classmap, render_grayscale

log = logging.getLogger("hsille")

PROFILE_DIR = Path(__file__).parent / "profiles"


# ---------------------------------------------------------------- config

def parse_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def parse_int_list(text: str) -> list[int]:
    """``"1-3, 7"`` -> ``[1, 2, 3, 7]``."""
    out: list[int] = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1) if not part.startswith("-") else part[1:].split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"malformed integer list {text!r}") from None
    return out


def _parse_str_list(text: str) -> list[str]:
    return [p.strip().lower() for p in text.split(",") if p.strip()]


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    cube: Path
    mask: Path
    drop_bands: tuple[int, ...] = ()
    tau: float = 0.25
    legend: Path | None = None


def resolve_profile(ref: str, data_dir: str | Path | None = None) -> DatasetProfile:
    """Load a profile by name (shipped) or by path.

    Relative data paths resolve against ``data_dir``, then ``$HSILLE_DATA``,
    then the profile's own directory.
    """
    path = Path(ref)
    if not path.is_file():
        shipped = PROFILE_DIR / f"{ref}.profile"
        if not shipped.is_file():
            known = sorted(p.stem for p in PROFILE_DIR.glob("*.profile"))
            raise UsageError(f"unknown dataset {ref!r}; shipped profiles: {known}")
        path = shipped
    entries = parse_kv_file(path)
    for key in ("cube", "mask"):
        if key not in entries:
            raise UsageError(f"{path}: profile lacks '{key}'")
    base = Path(data_dir or os.environ.get("HSILLE_DATA") or path.parent)

    def locate(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    return DatasetProfile(
        name=entries.get("name", path.stem),
        cube=locate(entries["cube"]),
        mask=locate(entries["mask"]),
        drop_bands=tuple(parse_int_list(entries.get("drop_bands", ""))),
        tau=float(entries.get("tau", 0.25)),
        legend=locate(entries["legend"]) if entries.get("legend") else None,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    out: Path
    density: float = 0.10
    seed: int = 0
    tau: float | None = None
    window: int = 51
    scopes: tuple[str, ...] = DEFAULT_GRID["scopes"]
    box_sizes: tuple[int, ...] = DEFAULT_GRID["box_sizes"]
    ks: tuple[int, ...] = DEFAULT_GRID["ks"]
    ds: tuple[int, ...] = DEFAULT_GRID["ds"]
    ablation: bool = False
    threads: int = 1
    resume: bool = False
    data_dir: Path | None = None

    def validate(self) -> None:
        if not 0.0 < self.density <= 1.0:
            raise UsageError(f"density must lie in (0, 1], got {self.density}")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise UsageError(f"tau must lie in [0, 1], got {self.tau}")
        if self.window < 1 or self.window % 2 == 0:
            raise UsageError(f"window must be odd and positive, got {self.window}")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if any(p < 1 or p % 2 == 0 for p in self.box_sizes):
            raise UsageError(f"box sizes must be odd and positive: {self.box_sizes}")
        if any(k < 1 for k in self.ks) or any(d < 1 for d in self.ds):
            raise UsageError("k and d values must be positive")

    def trials(self) -> list[TrialConfig]:
        if self.ablation:
            # Raw bands only: whole spectrum, no spatial filter.
            return enumerate_trials(("whole",), (1,), self.ks, self.ds, identity_only=True)
        return enumerate_trials(self.scopes, self.box_sizes, self.ks, self.ds)


_CONFIG_KEYS = {
    "dataset": str,
    "out": Path,
    "density": float,
    "seed": int,
    "tau": float,
    "window": int,
    "grid.scopes": lambda v: tuple(_parse_str_list(v)),
    "grid.p": lambda v: tuple(parse_int_list(v)),
    "grid.k": lambda v: tuple(parse_int_list(v)),
    "grid.d": lambda v: tuple(parse_int_list(v)),
    "ablation": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "threads": int,
    "data_dir": Path,
}
_FIELD_OF = {"grid.scopes": "scopes", "grid.p": "box_sizes", "grid.k": "ks", "grid.d": "ds"}


def load_config(path: str | Path | None, overrides: dict) -> ExperimentConfig:
    values: dict = {}
    if path is not None:
        for key, raw in parse_kv_file(path).items():
            if key not in _CONFIG_KEYS:
                raise UsageError(f"{path}: unknown config key {key!r}")
            try:
                values[_FIELD_OF.get(key, key)] = _CONFIG_KEYS[key](raw)
            except ValueError:
                raise UsageError(f"{path}: bad value for {key}: {raw!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("dataset", "out"):
        if key not in values:
            raise UsageError(f"missing required setting '{key}'")
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- run

_WORKER: dict = {}


def _init_worker(cube: HsiCube, refs: ReferenceSet, seed: int, window: int) -> None:
    _WORKER.update(cube=cube, refs=refs, seed=seed, window=window)


def _trial_job(trial: TrialConfig) -> np.ndarray:
    with threadpool_limits(1):
        return run_trial(_WORKER["cube"], trial, _WORKER["refs"], _WORKER["seed"], _WORKER["window"]).labels


def _trial_path(out: Path, trial: TrialConfig) -> Path:
    return out / f"trial_{trial.trial_id}.labels"


def _load_existing(path: Path, shape: tuple[int, int], n_classes: int) -> LabelMap | None:
    try:
        lm = LabelMap.load(path, n_classes)
    except DataError:
        return None
    if lm.shape != shape or (lm.labels == 0).any():
        return None
    return lm


def load_dataset(profile: DatasetProfile) -> tuple[HsiCube, LabelMask]:
    cube = datacube.load_cube(profile.cube)
    if profile.drop_bands:
        cube = datacube.remove_bands(cube, profile.drop_bands)
    mask = datacube.load_label_mask(profile.mask, cube, profile.legend)
    return cube, mask


def _stats(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "max": float(arr.max()), "min": float(arr.min())}


def cmd_run(cfg: ExperimentConfig) -> dict:
    """Run the whole ensemble and write every artifact into ``cfg.out``."""
    profile = resolve_profile(cfg.dataset, cfg.data_dir)
    tau = profile.tau if cfg.tau is None else cfg.tau
    cube, mask = load_dataset(profile)
    refs = datacube.sample_reference(mask, cfg.density, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    datacube.save_reference(refs, out / "references.txt")
    shape = (cube.height, cube.width)
    trials = cfg.trials()
    log.info("%s: %dx%dx%d, %d references, %d trials", profile.name, *shape, cube.bands, len(refs), len(trials))

    maps: dict[int, LabelMap] = {}
    pending = []
    for trial in trials:
        existing = _load_existing(_trial_path(out, trial), shape, mask.n_classes) if cfg.resume else None
        if existing is not None:
            maps[trial.trial_id] = existing
        else:
            pending.append(trial)

    def finish(trial: TrialConfig, labels: np.ndarray) -> None:
        lm = LabelMap(labels, mask.n_classes)
        lm.save(_trial_path(out, trial))
        maps[trial.trial_id] = lm
        log.info("finished %s", trial.describe())

    if cfg.threads == 1 or len(pending) <= 1:
        _init_worker(cube, refs, cfg.seed, cfg.window)
        for trial in pending:
            finish(trial, _run_guarded(trial))
    else:
        with ProcessPoolExecutor(cfg.threads, initializer=_init_worker, initargs=(cube, refs, cfg.seed, cfg.window)) as pool:
            futures = [(t, pool.submit(_trial_job, t)) for t in pending]
            for trial, fut in futures:
                try:
                    labels = fut.result()
                except HsiError as exc:
                    raise type(exc)(f"{trial.describe()}: {exc}") from exc
                except (np.linalg.LinAlgError, ArithmeticError) as exc:
                    raise NumericalError(f"{trial.describe()}: {exc}") from exc
                finish(trial, labels)

    ordered = [maps[t.trial_id] for t in trials]
    report = summarize(ordered, trials, mask, refs, out, tau, cube.n_pixels)
    report.update(
        dataset=profile.name,
        density=cfg.density,
        seed=cfg.seed,
        window=cfg.window,
        ablation=cfg.ablation,
        bands=cube.bands,
        height=cube.height,
        width=cube.width,
    )
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def _run_guarded(trial: TrialConfig) -> np.ndarray:
    try:
        return _trial_job(trial)
    except HsiError as exc:
        raise type(exc)(f"{trial.describe()}: {exc}") from exc
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise NumericalError(f"{trial.describe()}: {exc}") from exc


def summarize(
    maps: Sequence[LabelMap],
    trials: Sequence[TrialConfig],
    mask: LabelMask,
    refs: ReferenceSet,
    out: Path,
    tau: float,
    n_pixels: int,
) -> dict:
    """Tally, entropy, consensus, clutter, images and the accuracy summary."""
    t = tally(maps)
    save_tally(t, out / "tally.bin")
    h = entropy(t)
    agreed = consensus(t)
    split = clutter_split(h, agreed, tau, refs)
    palette = RenderPalette.from_colors(mask.palette)
    render_grayscale(h, out / "entropy.pgm")
    render_classmap(agreed, None, palette, out / "consensus.ppm")
    render_classmap(split.consensus, split.clutter, palette, out / "consensus_clutter.ppm")

    per_trial = []
    for trial, lm in zip(trials, maps):
        rep = accuracy_report(lm, mask, refs)
        per_trial.append(
            {
                "id": trial.trial_id,
                "scope": trial.scope.value,
                "p": trial.box_size,
                "k": trial.k,
                "d": trial.d,
                "identity_only": trial.identity_only,
                "oa": rep.overall,
                "aa": rep.average,
            }
        )
    ens = accuracy_report(agreed, mask, refs)
    return {
        "n_references": len(refs),
        "n_trials": len(trials),
        "tau": tau,
        "clutter_fraction": float(split.clutter.sum()) / n_pixels,
        "instances": {
            "oa": _stats([p["oa"] for p in per_trial]),
            "aa": _stats([p["aa"] for p in per_trial]),
        },
        "ensemble": {"oa": ens.overall, "aa": ens.average, "per_class": list(ens.per_class)},
        "trials": per_trial,
    }


def cmd_render(run_dir: Path, tau: float | None, mask_path: Path | None = None) -> None:
    """Re-render entropy and class maps of a finished run from ``tally.bin``."""
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    shape = (report["height"], report["width"])
    refs = datacube.load_reference(run_dir / "references.txt")
    n_classes = refs.n_classes
    t = load_tally(run_dir / "tally.bin", shape, n_classes)
    tau = report["tau"] if tau is None else tau
    h = entropy(t)
    agreed = consensus(t)
    split = clutter_split(h, agreed, tau, refs)
    if mask_path is not None:
        palette = RenderPalette.from_colors(datacube.load_label_mask(mask_path).palette)
    else:
        palette = RenderPalette.from_colors(datacube.default_palette(n_classes))
    render_grayscale(h, run_dir / "entropy.pgm")
    render_classmap(agreed, None, palette, run_dir / "consensus.ppm")
    render_classmap(split.consensus, split.clutter, palette, run_dir / f"consensus_clutter_tau{tau:g}.ppm")


def cmd_evaluate(pred_path: Path, truth_path: Path, refs_path: Path | None, out_path: Path | None) -> dict:
    truth = datacube.load_label_mask(truth_path)
    pred = LabelMap.load(pred_path, truth.n_classes)
    refs = datacube.load_reference(refs_path) if refs_path else None
    report = accuracy_report(pred, truth, refs).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    return report


# ---------------------------------------------------------------- convert

def _read_numeric_rows(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            row = [float(v) for v in line.replace(",", " ").split()]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}:{lineno}: ragged row ({len(row)} values, expected {width})")
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data")
    return np.array(rows)


def _load_array(path: Path, ndim: int) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".npy":
        return np.load(path)
    if suffix == ".mat":
        from scipy.io import loadmat

        arrays = [v for k, v in loadmat(path).items() if not k.startswith("__") and getattr(v, "ndim", 0) == ndim]
        if not arrays:
            raise DataError(f"{path}: no {ndim}-D array inside")
        return max(arrays, key=lambda a: a.size)
    return _read_numeric_rows(path)


def cmd_convert(
    cube_src: Path,
    out_header: Path,
    height: int | None = None,
    width: int | None = None,
    mask_src: Path | None = None,
    legend: Path | None = None,
) -> tuple[HsiCube, LabelMask | None]:
    """Turn text / .npy / .mat dumps into the native header+raw format.

    A text cube dump holds one pixel spectrum per line in row-major pixel
    order and needs ``height`` and ``width``; array files are
    ``(height, width, bands)``.
    """
    cube_src = Path(cube_src)
    if not cube_src.is_file():
        raise DataError(f"source not found: {cube_src}")
    arr = _load_array(cube_src, 3)
    if arr.ndim == 3:
        height, width = arr.shape[:2]
        spectra = arr.reshape(height * width, -1)
    else:
        if height is None or width is None:
            raise UsageError("text cube dumps need --height and --width")
        if arr.shape[0] != height * width:
            raise DataError(f"{cube_src}: {arr.shape[0]} pixel rows, expected {height * width}")
        spectra = arr
    cube = HsiCube.from_pixels(spectra.astype(np.float32), height, width)
    datacube.write_cube(cube, out_header)
    mask = None
    if mask_src is not None:
        mask_src = Path(mask_src)
        grid = _load_array(mask_src, 2) if mask_src.suffix.lower() in (".npy", ".mat") else datacube.read_int_grid(mask_src)
        grid = np.asarray(grid)
        if grid.shape != (height, width):
            raise DataError(f"{mask_src}: mask {grid.shape} does not match cube {height}x{width}")
        if grid.dtype.kind == "f" and not np.array_equal(grid, np.round(grid)):
            raise DataError(f"{mask_src}: non-integer labels")
        names: tuple = ()
        palette: tuple = ()
        if legend is not None:
            names, palette = (tuple(v) for v in datacube.read_legend(Path(legend)))
        mask = LabelMask(grid.astype(np.int64), names, palette)
        mask_out = Path(out_header).with_name(Path(out_header).stem + "_gt.labels")
        datacube.write_label_mask(mask, mask_out)
    return cube, mask


# ---------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hsille", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an ensemble experiment")
    run.add_argument("--config", type=Path, help="key = value experiment file")
    run.add_argument("--dataset", help="shipped profile name or profile path")
    run.add_argument("--data-dir", type=Path)
    run.add_argument("--density", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--tau", type=float)
    run.add_argument("--window", type=int)
    run.add_argument("--grid-scopes", type=_parse_str_list)
    run.add_argument("--grid-p", type=parse_int_list)
    run.add_argument("--grid-k", type=parse_int_list)
    run.add_argument("--grid-d", type=parse_int_list)
    run.add_argument("--ablation", action="store_true", default=None, help="raw bands only, p = 1")
    run.add_argument("--out", type=Path)
    run.add_argument("--threads", type=int)
    run.add_argument("--resume", action="store_true", default=None)

    ev = sub.add_parser("evaluate", help="score a label map against a reference mask")
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--truth", type=Path, required=True)
    ev.add_argument("--refs", type=Path, help="references.txt to exclude from scoring")
    ev.add_argument("--out", type=Path)

    conv = sub.add_parser("convert", help="convert text/.npy/.mat dumps to header+raw")
    conv.add_argument("--cube", type=Path, required=True)
    conv.add_argument("--out", type=Path, required=True, help="output header path")
    conv.add_argument("--height", type=int)
    conv.add_argument("--width", type=int)
    conv.add_argument("--mask", type=Path)
    conv.add_argument("--legend", type=Path)

    ren = sub.add_parser("render", help="re-render maps of a finished run")
    ren.add_argument("run_dir", type=Path)
    ren.add_argument("--tau", type=float)
    ren.add_argument("--mask", type=Path, help="mask whose legend supplies colors")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            overrides = {
                "dataset": args.dataset,
                "data_dir": args.data_dir,
                "density": args.density,
                "seed": args.seed,
                "tau": args.tau,
                "window": args.window,
                "scopes": tuple(args.grid_scopes) if args.grid_scopes else None,
                "box_sizes": tuple(args.grid_p) if args.grid_p else None,
                "ks": tuple(args.grid_k) if args.grid_k else None,
                "ds": tuple(args.grid_d) if args.grid_d else None,
                "ablation": args.ablation,
                "out": args.out,
                "threads": args.threads,
                "resume": args.resume,
            }
            report = cmd_run(load_config(args.config, overrides))
            print(
                f"ensemble OA {report['ensemble']['oa']:.2f}  AA {report['ensemble']['aa']:.2f}  "
                f"instances OA {report['instances']['oa']['mean']:.2f} +- {report['instances']['oa']['std']:.2f}"
            )
        elif args.command == "evaluate":
            report = cmd_evaluate(args.pred, args.truth, args.refs, args.out)
            print(f"OA {report['overall']:.2f}  AA {report['average']:.2f}")
        elif args.command == "convert":
            cube, mask = cmd_convert(args.cube, args.out, args.height, args.width, args.mask, args.legend)
            extra = f", mask with {mask.n_classes} classes" if mask is not None else ""
            print(f"wrote {args.out}: {cube.height}x{cube.width}x{cube.bands}{extra}")
        elif args.command == "render":
            cmd_render(args.run_dir, args.tau, args.mask)
    except HsiError as exc:
        print(f"hsille: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"hsille: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
