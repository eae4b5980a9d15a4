"""Repeated TN / LN / quadratic / random-polynomial comparisons and their reports.

An experiment learns one formula by symbolic regression on the training
split, then trains every arm ``repeats`` times with seeds
``base_seed + repeat`` and aggregates the test metric as mean (std).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import data as data_mod
from .expr import PolyTemplate, parse_template, template_from_json, template_to_string
from .network import (
    NetworkSpec,
    TrainConfig,
    TrainingDiverged,
    build_network,
    count_parameters,
    parse_structure,
    train,
    write_history_csv,
)
from .neuron import TASK_KINDS
from .vsr import GpConfig, evolve

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

@dataclass
class ArmConfig:
    name: str
    kind: str
    structure: str
    activation: str = "relu"
    template: str = "vsr"
    pair: str | None = None

    @property
    def widths(self):
        return parse_structure(self.structure)


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    arms: list
    split: tuple = (0.8, 0.2)
    gp: dict = field(default_factory=lambda: {"preset": "supplementary"})
    train: dict = field(default_factory=dict)
    repeats: int = 10
    base_seed: int = 0
    vsr_on: str | None = None

    def __post_init__(self):
        self.arms = [a if isinstance(a, ArmConfig) else ArmConfig(**a) for a in self.arms]
        self.split = tuple(self.split)
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.arms:
            raise ConfigError("an experiment needs at least one arm")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ConfigError("arm names must be unique")
        for arm in self.arms:
            if arm.pair is not None and arm.pair not in names:
                raise ConfigError(f"arm {arm.name!r} pairs with unknown arm {arm.pair!r}")
        if ("synthetic" in self.dataset) == ("csv" in self.dataset):
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'csv'")
        if self.vsr_on is None:
            self.vsr_on = "raw" if "synthetic" in self.dataset else "normalized"
        if self.vsr_on not in ("raw", "normalized"):
            raise ConfigError("vsr_on must be 'raw' or 'normalized'")

    @property
    def task(self):
        if "csv" in self.dataset:
            return self.dataset["csv"].get("task", "regression")
        return "regression"

    def gp_config(self):
        gp = dict(self.gp)
        preset = gp.pop("preset", None)
        overrides = gp.pop("overrides", {})
        overrides.update(gp)
        if preset:
            return GpConfig.preset(preset, **overrides)
        return GpConfig.from_dict(overrides)

    def train_config(self, seed):
        cfg = dict(self.train)
        cfg["seed"] = seed
        return TrainConfig.for_task(self.task, **cfg)

    def to_json(self):
        return {
            "name": self.name,
            "dataset": self.dataset,
            "arms": [vars(a).copy() for a in self.arms],
            "split": list(self.split),
            "gp": self.gp,
            "train": self.train,
            "repeats": self.repeats,
            "base_seed": self.base_seed,
            "vsr_on": self.vsr_on,
        }

    @classmethod
    def from_json(cls, data):
        return cls(**data)

    @classmethod
    def load(cls, path):
        """Read a config file; a relative CSV path is taken relative to it."""
        path = Path(path)
        cfg = json.loads(path.read_text())
        csv = cfg.get("dataset", {}).get("csv")
        if csv and not Path(csv["path"]).is_absolute():
            csv["path"] = str(path.parent / csv["path"])
        return cls.from_json(cfg)


def bundled_config(name):
    """A shipped experiment config, e.g. ``'p1'``."""
    text = resources.files("taskneuron.presets").joinpath(f"experiment-{name}.json").read_text()
    return ExperimentConfig.from_json(json.loads(text))


def synthetic_structures():
    """Layer structures paired per synthetic polynomial (LN, TN) for S1..S5."""
    text = resources.files("taskneuron.presets").joinpath("synthetic-structures.json").read_text()
    return json.loads(text)


def synthetic_experiment(poly, structures=("S1",), noise_level=0.0, repeats=10, base_seed=0,
                         gp=None, train=None, extra_arms=(), d=data_mod.DEFAULT_D):
    """Experiment config comparing TN and LN on one synthetic polynomial."""
    table = synthetic_structures()[poly]
    arms = []
    for s in structures:
        ln, tn = table[s]
        arms.append({"name": f"LN-{s}", "kind": "linear", "structure": ln})
        arms.append({"name": f"TN-{s}", "kind": "task_poly", "structure": tn,
                     "activation": "sigmoid", "pair": f"LN-{s}"})
    arms.extend(extra_arms)
    return ExperimentConfig(
        name=f"{poly}-noise{noise_level:g}",
        dataset={"synthetic": {"template": poly, "d": d, "n_points": 600,
                               "sample_range": [-50.0, 50.0], "noise_level": noise_level,
                               "seed": base_seed}},
        arms=arms,
        gp=gp or {"preset": "supplementary"},
        train=train or {"epochs": 300},
        repeats=repeats,
        base_seed=base_seed,
    )


# --- report types ----------------------------------------------------------

@dataclass
class ArmResult:
    name: str
    kind: str
    structure: str
    n_params: int
    metric: str
    values: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    mean: float = math.nan
    std: float = math.nan
    formula: str | None = None
    failed: bool = False
    error: str | None = None
    flags: list = field(default_factory=list)

    @property
    def structure_string(self):
        return f"{self.structure}({self.n_params})"

    def cell(self, digits=4):
        if self.failed:
            return "failed"
        return f"{self.mean:.{digits}f} ({self.std:.{digits}f})"


@dataclass
class ExperimentReport:
    name: str
    config: dict
    formula: str | None
    template: dict | None
    vsr: dict
    arms: list
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)

    def arm(self, name):
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_json(self):
        """Archive payload (wall-clock timings are kept out so archives replay exactly)."""
        return {
            "name": self.name,
            "config": self.config,
            "formula": self.formula,
            "template": self.template,
            "vsr": self.vsr,
            "arms": [vars(a).copy() for a in self.arms],
        }

    @classmethod
    def from_json(cls, data):
        try:
            arms = [ArmResult(**a) for a in data["arms"]]
            return cls(data["name"], data["config"], data.get("formula"), data.get("template"),
                       data.get("vsr", {}), arms)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"corrupt report archive: {exc}") from None


# --- aggregation -----------------------------------------------------------

def aggregate(values):
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("aggregate needs at least one value")
    mean = float(np.mean(v))
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return mean, std


# --- random polynomial baseline --------------------------------------------

def random_polynomial_arm(template, rng):
    """Random unit-coefficient template with the reference's maximum degree.

    Degree sets are compared on positive degrees (a constant only feeds the
    bias).  Returns ``(template, collision)``; ``collision`` is True when the
    drawn polynomial cannot differ, which happens for maximum degree <= 2
    where the draw is fixed to the single term ``x ⊙^k x``.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    top = template.max_degree
    if top < 1:
        raise ValueError("reference template has no positive degree")
    reference = set(template.positive_degrees)
    if top <= 2:
        return PolyTemplate({top: 1.0}), reference == {top}
    while True:
        degrees = {top} | {k for k in range(1, top) if rng.random() < 0.5}
        if degrees != reference:
            break
    terms = {k: 1.0 for k in degrees}
    if rng.random() < 0.5:
        terms[0] = 1.0
    return PolyTemplate(terms), False


# --- running ---------------------------------------------------------------

def prepare_dataset(config):
    ds_cfg = config.dataset
    if "synthetic" in ds_cfg:
        spec = data_mod.SyntheticSpec.from_json(ds_cfg["synthetic"])
        raw = data_mod.make_synthetic(spec, config.split, split_seed=config.base_seed)
    else:
        c = ds_cfg["csv"]
        raw = data_mod.load_csv(c["path"], c["target"], c.get("task", "regression"))
        raw = data_mod.split(raw, config.split, config.base_seed)
    return raw, data_mod.normalize_minmax(raw, fit_on="train")


def _train_one(args):
    arm, template, d_input, dataset, train_cfg, seed = args
    spec = NetworkSpec(arm.widths, arm.kind, arm.activation, dataset.task)
    model = build_network(spec, template if arm.kind in TASK_KINDS else None, d_input,
                          rng=np.random.default_rng(seed))
    start = time.perf_counter()
    try:
        model, metrics = train(model, dataset, train_cfg)
    except TrainingDiverged as exc:
        return {"error": str(exc), "history": exc.history, "seconds": time.perf_counter() - start}
    return {"value": metrics["test_metric"], "history": model.history,
            "seconds": time.perf_counter() - start}


def run_experiment(config, n_jobs=1, template=None):
    """Run every arm of an experiment and aggregate the results.

    ``template`` skips symbolic regression and uses the given formula for all
    ``vsr`` arms.
    """
    timings = {}
    t0 = time.perf_counter()
    raw, norm = prepare_dataset(config)
    timings["data"] = time.perf_counter() - t0

    needs_vsr = any(a.kind in TASK_KINDS and a.template in ("vsr", "random") for a in config.arms)
    vsr_info = {}
    if template is None and needs_vsr:
        gp = config.gp_config()
        source = raw if config.vsr_on == "raw" else norm
        t0 = time.perf_counter()
        result = evolve(source.part("train"), gp)
        timings["vsr"] = time.perf_counter() - t0
        template = result.template
        vsr_info = {"error_rate": result.error_rate, "template_mse": result.template_mse,
                    "best_tree": str(result.best.tree), "generations": len(result.history),
                    "gp": gp.to_dict(), "on": config.vsr_on}

    rng = np.random.default_rng(config.base_seed)
    templates = {}
    flags = {}
    for arm in config.arms:
        if arm.kind not in TASK_KINDS:
            continue
        if arm.template == "vsr":
            templates[arm.name] = template
        elif arm.template == "random":
            templates[arm.name], collision = random_polynomial_arm(template, rng)
            if collision:
                flags[arm.name] = ["random-polynomial collision: same degree set as the learned formula"]
        else:
            templates[arm.name] = parse_template(arm.template)

    counts = {}
    for arm in config.arms:
        spec = NetworkSpec(arm.widths, arm.kind, arm.activation, norm.task)
        counts[arm.name] = count_parameters(spec, norm.d, templates.get(arm.name))
    for arm in config.arms:
        if arm.kind in TASK_KINDS and arm.pair and counts[arm.name] > counts[arm.pair]:
            raise ConfigError(f"{arm.name} has {counts[arm.name]} parameters, more than "
                              f"{arm.pair} ({counts[arm.pair]})")

    jobs = []
    for arm in config.arms:
        for r in range(config.repeats):
            seed = config.base_seed + r
            jobs.append((arm, templates.get(arm.name), norm.d, norm, config.train_config(seed), seed))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_train_one, jobs))
    else:
        outcomes = [_train_one(job) for job in jobs]

    metric = "accuracy" if norm.task == "classification" else "mse"
    arms = []
    histories = {}
    for i, arm in enumerate(config.arms):
        chunk = outcomes[i * config.repeats:(i + 1) * config.repeats]
        res = ArmResult(arm.name, arm.kind, arm.structure, counts[arm.name], metric,
                        seeds=[config.base_seed + r for r in range(config.repeats)],
                        flags=list(flags.get(arm.name, [])))
        if arm.name in templates:
            res.formula = template_to_string(templates[arm.name], precision=6)
        errors = [o["error"] for o in chunk if "error" in o]
        timings[f"train:{arm.name}"] = sum(o["seconds"] for o in chunk)
        for r, o in enumerate(chunk):
            histories[f"{arm.name}_{r}"] = o["history"]
        if errors:
            res.failed, res.error = True, errors[0]
        else:
            res.values = [o["value"] for o in chunk]
            res.mean, res.std = aggregate(res.values)
            if config.repeats == 1:
                res.flags.append("single repeat: std reported as 0")
        arms.append(res)

    return ExperimentReport(
        name=config.name,
        config=config.to_json(),
        formula=None if template is None else template_to_string(template, precision=6),
        template=None if template is None else template.to_json(),
        vsr=vsr_info,
        arms=arms,
        timings=timings,
        histories=histories,
    )


def learned_template(report):
    return None if report.template is None else template_from_json(report.template)


# --- emission --------------------------------------------------------------

def render_markdown(report):
    if not report.arms:
        raise ConfigError("empty report")
    metric = report.arms[0].metric.upper() if report.arms[0].metric == "mse" else "Accuracy"
    lines = [f"# {report.name}", ""]
    if report.formula is not None:
        lines += [f"Learned formula: `{report.formula}`", ""]
    if report.vsr.get("error_rate") is not None:
        lines += [f"Symbolic regression error rate on the training split: "
                  f"{100 * report.vsr['error_rate']:.2f}%", ""]
    lines += [f"| Arm | Neuron | Structure | {metric} mean (std) | Notes |",
              "|---|---|---|---|---|"]
    for a in report.arms:
        notes = "; ".join(a.flags + ([a.error] if a.error else []))
        lines.append(f"| {a.name} | {a.kind} | {a.structure_string} | {a.cell()} | {notes} |")
    n = len(report.arms[0].seeds)
    lines += ["", f"{n} repeat(s), seeds {report.arms[0].seeds[0]}..{report.arms[0].seeds[-1]}.", ""]
    return "\n".join(lines)


def render_csv(report):
    if not report.arms:
        raise ConfigError("empty report")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["arm", "kind", "structure", "n_params", "metric", "mean", "std", "values",
                     "formula", "failed"])
    for a in report.arms:
        writer.writerow([a.name, a.kind, a.structure, a.n_params, a.metric, repr(a.mean),
                         repr(a.std), " ".join(repr(v) for v in a.values), a.formula or "",
                         int(a.failed)])
    return buf.getvalue()


def emit_report(report, out_dir, histories=True):
    """Write report.md, report.csv, archive.json (+ per-run history CSVs)."""
    if not report.arms:
        raise ConfigError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(render_markdown(report))
    (out / "report.csv").write_text(render_csv(report))
    (out / "archive.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if report.timings:
        (out / "timings.json").write_text(json.dumps(report.timings, indent=2, sort_keys=True))
    if histories and report.histories:
        for key, hist in report.histories.items():
            write_history_csv(out / "histories" / f"{key}.csv", hist)
    return out


def load_archive(path):
    path = Path(path)
    if path.is_dir():
        path = path / "archive.json"
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read archive {path}: {exc}") from None
    return ExperimentReport.from_json(payload)
