"""Synthetic benchmark polynomials, noise injection, CSV loading, scaling and splits."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .expr import PolyTemplate, eval_elementwise, template_from_json, template_to_tree

log = logging.getLogger(__name__)

# Ten synthetic targets, sum over features of a shared polynomial.
POLYNOMIALS = {
    "p1": PolyTemplate({2: 6}),
    "p2": PolyTemplate({4: 3}),
    "p3": PolyTemplate({2: 4, 1: 5}),
    "p4": PolyTemplate({4: 2, 1: 6}),
    "p5": PolyTemplate({4: 2, 2: 3, 1: 6}),
    "p6": PolyTemplate({4: 3, 3: 4, 2: 2, 1: 3}),
    "p7": PolyTemplate({4: 4, 2: 2}),
    "p8": PolyTemplate({4: 2, 3: 3}),
    "p9": PolyTemplate({3: 2, 1: 3}),
    "p10": PolyTemplate({5: 3, 4: 4, 1: 5}),
}

DEFAULT_D = 10
NOISE_LEVELS = (0.0, 0.05, 0.15, 0.30)


class DataError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    template: PolyTemplate | str = "p1"
    d: int = DEFAULT_D
    n_points: int = 600
    sample_range: tuple = (-50.0, 50.0)
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.template, str):
            if self.template not in POLYNOMIALS:
                raise DataError(f"unknown polynomial {self.template!r}")
        self.sample_range = tuple(float(v) for v in self.sample_range)
        if self.n_points < 1:
            raise DataError("n_points must be >= 1")
        if self.d < 1:
            raise DataError("d must be >= 1")
        lo, hi = self.sample_range
        if not lo < hi:
            raise DataError("sample_range needs lo < hi")
        if self.noise_level < 0:
            raise DataError("noise_level must be >= 0")

    @property
    def poly(self):
        return POLYNOMIALS[self.template] if isinstance(self.template, str) else self.template

    @property
    def name(self):
        return self.template if isinstance(self.template, str) else "custom"

    def to_json(self):
        tmpl = self.template if isinstance(self.template, str) else self.template.to_json()
        return {"template": tmpl, "d": self.d, "n_points": self.n_points,
                "sample_range": list(self.sample_range), "noise_level": self.noise_level,
                "seed": self.seed}

    @classmethod
    def from_json(cls, data):
        data = dict(data)
        if isinstance(data.get("template"), dict):
            data["template"] = template_from_json(data["template"])
        return cls(**data)


@dataclass
class Dataset:
    """Features, targets, optional split indices and scaling metadata."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    feature_names: list = field(default_factory=list)
    target_name: str = "y"
    splits: dict = field(default_factory=dict)
    scaling: dict = field(default_factory=dict)
    label_mapping: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=int if self.task == "classification" else float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError("X and y row counts differ")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if self.task == "classification" else 1

    def part(self, name):
        """(X, y) restricted to a named split."""
        idx = self.splits[name]
        return self.X[idx], self.y[idx]

    def copy(self, **changes):
        fresh = replace(self, X=self.X.copy(), y=self.y.copy(),
                        splits={k: v.copy() for k, v in self.splits.items()},
                        scaling=json.loads(json.dumps(self.scaling)),
                        meta=dict(self.meta))
        for key, value in changes.items():
            setattr(fresh, key, value)
        return fresh

    # --- persistence -------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {"X": self.X, "y": self.y}
        arrays.update({f"split_{k}": v for k, v in self.splits.items()})
        with open(directory / "arrays.npz", "wb") as fh:
            np.savez(fh, **arrays)
        meta = {
            "task": self.task,
            "n": self.n,
            "d": self.d,
            "feature_names": self.feature_names,
            "target_name": self.target_name,
            "splits": sorted(self.splits),
            "scaling": self.scaling,
            "label_mapping": self.label_mapping,
            "meta": self.meta,
        }
        (directory / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta_path = directory / "dataset.json"
        if not meta_path.exists():
            raise DataError(f"{directory} is not a dataset directory")
        meta = json.loads(meta_path.read_text())
        with np.load(directory / "arrays.npz") as arrays:
            X, y = arrays["X"], arrays["y"]
            splits = {k: arrays[f"split_{k}"] for k in meta["splits"]}
        return cls(X, y, task=meta["task"], feature_names=meta["feature_names"],
                   target_name=meta["target_name"], splits=splits, scaling=meta["scaling"],
                   label_mapping=meta["label_mapping"], meta=meta["meta"])


# --- synthetic data --------------------------------------------------------

def gen_synthetic(spec):
    """Clean samples of a synthetic polynomial (noise is added separately)."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.sample_range
    X = rng.uniform(lo, hi, size=(spec.n_points, spec.d))
    y = spec.poly.evaluate(X)
    return Dataset(X, y, meta={"synthetic": spec.to_json(), "noise_level": 0.0})


def signal_power(y):
    """Root mean square of ``y``."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise DataError("signal_power of an empty vector")
    return float(np.sqrt(np.mean(y * y)))


def add_noise(y, noise_level, rng):
    """``y + noise_level * signal_power(y) * n`` with ``n`` standard normal."""
    if noise_level < 0:
        raise DataError("noise_level must be >= 0")
    y = np.asarray(y, dtype=float)
    if noise_level == 0:
        return y.copy()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return y + noise_level * signal_power(y) * rng.standard_normal(y.shape)


def make_synthetic(spec, ratios=(0.8, 0.2), split_seed=None):
    """Generate, add noise (seeded from ``spec.seed + 1``) and split."""
    ds = gen_synthetic(spec)
    if spec.noise_level:
        ds.y = add_noise(ds.y, spec.noise_level, np.random.default_rng(spec.seed + 1))
        ds.meta["noise_level"] = spec.noise_level
    return split(ds, ratios, spec.seed if split_seed is None else split_seed)


def check_generator(spec, dataset):
    """Max abs deviation between stored clean targets and tree evaluation."""
    tree = template_to_tree(spec.poly)
    return float(np.max(np.abs(eval_elementwise(tree, dataset.X) - dataset.y)))


# --- scaling ---------------------------------------------------------------

def _minmax(values, lo, hi):
    return 2.0 * (values - lo) / (hi - lo) - 1.0


def normalize_minmax(dataset, fit_on="train", target=None):
    """Map every feature onto [-1, 1] with statistics from one split.

    ``target`` defaults to True for regression; classification labels are
    never scaled.  The returned dataset records the parameters in
    ``scaling`` so that :func:`denormalize` can invert it.
    """
    if target is None:
        target = dataset.task == "regression"
    if fit_on is not None and fit_on in dataset.splits:
        idx = dataset.splits[fit_on]
    else:
        idx = np.arange(dataset.n)
    X_fit = dataset.X[idx]
    lo, hi = X_fit.min(axis=0), X_fit.max(axis=0)
    flat = np.flatnonzero(hi <= lo)
    if flat.size:
        names = [dataset.feature_names[i] for i in flat]
        raise DataError(f"constant feature(s) cannot be scaled: {', '.join(names)}")
    out = dataset.copy()
    out.X = _minmax(dataset.X, lo, hi)
    out.scaling = {"x_min": lo.tolist(), "x_max": hi.tolist(), "fit_on": fit_on}
    if target:
        y_fit = dataset.y[idx]
        ylo, yhi = float(y_fit.min()), float(y_fit.max())
        if not yhi > ylo:
            raise DataError("constant target cannot be scaled")
        out.y = _minmax(dataset.y, ylo, yhi)
        out.scaling.update({"y_min": ylo, "y_max": yhi})
    return out


def denormalize(dataset):
    """Undo :func:`normalize_minmax`."""
    s = dataset.scaling
    if not s:
        return dataset.copy()
    out = dataset.copy()
    lo, hi = np.asarray(s["x_min"]), np.asarray(s["x_max"])
    out.X = (dataset.X + 1.0) / 2.0 * (hi - lo) + lo
    if "y_min" in s:
        out.y = (dataset.y + 1.0) / 2.0 * (s["y_max"] - s["y_min"]) + s["y_min"]
    out.scaling = {}
    return out


# --- splitting -------------------------------------------------------------

SPLIT_NAMES = {2: ("train", "test"), 3: ("train", "val", "test")}


def split(dataset, ratios=(0.8, 0.2), seed=0, names=None):
    """Random partition of the rows by ``ratios`` (rounded, remainder to train)."""
    ratios = [float(r) for r in ratios]
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    names = names or SPLIT_NAMES.get(len(ratios)) or tuple(f"part{i}" for i in range(len(ratios)))
    n = dataset.n
    sizes = [int(round(r * n)) for r in ratios]
    sizes[0] = n - sum(sizes[1:])
    if min(sizes) < 1:
        raise DataError(f"split of {n} rows by {ratios} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    out = dataset.copy()
    out.splits = {name: np.sort(perm[a:b]) for name, a, b in zip(names, bounds[:-1], bounds[1:])}
    return out


# --- CSV -------------------------------------------------------------------

def load_csv(path, target_column, task="regression"):
    """Read a headed CSV; every feature must be numeric and present."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if target_column not in header:
        raise DataError(f"{path}: no column named {target_column!r}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    t = header.index(target_column)
    missing = [i + 2 for i, row in enumerate(rows)
               if len(row) != len(header) or any(v.strip() == "" for v in row)]
    if missing:
        shown = ", ".join(map(str, missing[:20]))
        raise DataError(f"{path}: missing values on line(s) {shown}")
    feature_idx = [j for j in range(len(header)) if j != t]
    X = np.empty((len(rows), len(feature_idx)))
    for i, row in enumerate(rows):
        for col, j in enumerate(feature_idx):
            try:
                X[i, col] = float(row[j])
            except ValueError:
                raise DataError(f"{path}: non-numeric value {row[j]!r} in column "
                                f"{header[j]!r}, line {i + 2}") from None
    raw_target = [row[t].strip() for row in rows]
    mapping = {}
    if task == "classification":
        labels = sorted(set(raw_target), key=_label_key)
        mapping = {label: code for code, label in enumerate(labels)}
        y = np.array([mapping[v] for v in raw_target], dtype=int)
    elif task == "regression":
        try:
            y = np.array([float(v) for v in raw_target])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric regression target ({exc})") from None
    else:
        raise DataError(f"unknown task {task!r}")
    return Dataset(X, y, task=task, feature_names=[header[j] for j in feature_idx],
                   target_name=target_column, label_mapping=mapping,
                   meta={"source": str(path)})


def _label_key(label):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, math.inf, label)
