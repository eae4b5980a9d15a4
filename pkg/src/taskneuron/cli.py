"""Command-line entry point: ``taskneuron {synth,regress,train,bench,report}``.

Config files are the source of truth; ``--set key=value`` overrides a key
(dotted paths reach into nested sections, values are parsed as JSON when
possible).  Exit codes: 0 success, 1 usage/config error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, data
from .expr import TemplateParseError, parse_template, template_from_json
from .network import (
    NetworkSpec,
    TrainConfig,
    TrainingDiverged,
    build_network,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)
from .vsr import PRESETS, GpConfig, evolve


EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config, sets, open_sections=()):
    """Apply ``key=value`` strings to a nested dict in place."""
    for item in sets or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        path = key.split(".")
        node = config
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                raise UsageError(f"unknown config key {key!r}")
            node = node[part]
        leaf = path[-1]
        if leaf not in node and not (len(path) > 1 and path[0] in open_sections):
            raise UsageError(f"unknown config key {key!r}")
        node[leaf] = _value(raw)
    return config


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


# --- subcommands -----------------------------------------------------------

def cmd_synth(args):
    cfg = {"template": None, "d": data.DEFAULT_D, "n_points": 600, "sample_range": [-50.0, 50.0],
           "noise_level": 0.0, "seed": 0, "split": [0.8, 0.2]}
    if args.config:
        cfg.update(_read_json(args.config))
    if args.poly:
        cfg["template"] = args.poly
    if args.template:
        cfg["template"] = parse_template(args.template).to_json()
    if args.noise is not None:
        cfg["noise_level"] = args.noise
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.d is not None:
        cfg["d"] = args.d
    apply_overrides(cfg, args.set)
    if cfg["template"] is None:
        raise UsageError("synth needs --poly or --template (or a config with 'template')")
    ratios = cfg.pop("split")
    spec = data.SyntheticSpec.from_json(cfg)
    ds = data.make_synthetic(spec, ratios)
    ds.save(args.out)
    print(f"wrote {ds.n}x{ds.d} dataset ({spec.name}, noise {spec.noise_level:g}) to {args.out}")
    return EXIT_OK


def cmd_regress(args):
    ds = data.Dataset.load(args.data)
    if ds.n == 0:
        raise UsageError("dataset has no rows")
    gp = GpConfig.preset(args.preset).to_dict()
    if args.config:
        gp.update(_read_json(args.config).get("gp", {}))
    if args.seed is not None:
        gp["seed"] = args.seed
    apply_overrides(gp, args.set)
    config = GpConfig.from_dict(gp)
    Xy = ds.part(args.split) if args.split in ds.splits else (ds.X, ds.y)
    if len(Xy[1]) == 0:
        raise UsageError("dataset has no rows")
    result = evolve(Xy, config)
    payload = result.to_json()
    out = Path(args.out)
    _write_json(out / "regression.json", payload)
    print(result.formula)
    print(f"error rate {100 * result.error_rate:.4f}%  mse {result.template_mse:.6g}")
    return EXIT_OK


def _load_template(args):
    if args.template:
        return parse_template(args.template)
    if args.template_file:
        payload = _read_json(args.template_file)
        return template_from_json(payload.get("template", payload))
    return None


def cmd_train(args):
    out = Path(args.out)
    if args.resume:
        model, cfg, state = load_checkpoint(args.resume)
        if cfg is None:
            raise UsageError("checkpoint has no training config")
        ds = data.Dataset.load(args.data)
        ds = data.normalize_minmax(ds) if args.normalize else ds
        extra = {"epochs": cfg.epochs}
        apply_overrides(extra, args.set)
        cfg = TrainConfig(**{**cfg.to_json(), **extra})
    else:
        ds = data.Dataset.load(args.data)
        if args.normalize:
            ds = data.normalize_minmax(ds, fit_on="train")
        template = _load_template(args)
        try:
            spec = NetworkSpec(args.structure, args.kind, args.activation, ds.task)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cfg_dict = TrainConfig.for_task(ds.task).to_json()
        if args.config:
            cfg_dict.update(_read_json(args.config).get("train", {}))
        if args.seed is not None:
            cfg_dict["seed"] = args.seed
        apply_overrides(cfg_dict, args.set)
        cfg = TrainConfig(**cfg_dict)
        model = build_network(spec, template, ds.d, rng=np.random.default_rng(cfg.seed))
        state = None
    model, metrics = train(model, ds, cfg, state=state)
    save_checkpoint(out / "checkpoint.json", model, cfg, metrics["state"])
    write_history_csv(out / "history.csv", model.history)
    summary = {k: v for k, v in metrics.items() if k != "state"}
    summary["structure"] = model.structure_string
    _write_json(out / "metrics.json", summary)
    print(f"{model.spec.neuron_kind} {model.structure_string}: test {metrics['metric']} "
          f"{metrics['test_metric']:.6g}")
    return EXIT_OK


def cmd_bench(args):
    if args.bundled:
        config = bench.bundled_config(args.bundled).to_json()
    elif args.config:
        config = _read_json(args.config)
    else:
        raise UsageError("bench needs --config or --bundled")
    if args.seed is not None:
        config["base_seed"] = args.seed
    if args.preset:
        config.setdefault("gp", {})["preset"] = args.preset
    apply_overrides(config, args.set, open_sections=("train", "gp", "dataset"))
    try:
        experiment = bench.ExperimentConfig.from_json(config)
    except TypeError as exc:
        raise UsageError(f"bad experiment config: {exc}") from None
    report = bench.run_experiment(experiment, n_jobs=args.jobs)
    bench.emit_report(report, args.out)
    print(bench.render_markdown(report))
    return EXIT_OK


def cmd_report(args):
    report = bench.load_archive(args.archive)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text(bench.render_markdown(report))
    (out / "report.csv").write_text(bench.render_csv(report))
    print(bench.render_markdown(report))
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="taskneuron", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="generate a synthetic polynomial dataset")
    common(p)
    p.add_argument("--poly", choices=sorted(data.POLYNOMIALS, key=lambda s: int(s[1:])))
    p.add_argument("--template", help="custom formula, e.g. '2(x⊙³x)^T + 3x^T'")
    p.add_argument("--noise", type=float)
    p.add_argument("--d", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("regress", help="vectorized symbolic regression on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=PRESETS, default="supplementary")
    p.add_argument("--split", default="train", help="split to fit on (all rows if absent)")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("train", help="train a network of one neuron kind")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", default="task_poly")
    p.add_argument("--structure", default="1", help="layer widths, e.g. 5-3-1")
    p.add_argument("--activation", default="relu")
    p.add_argument("--template", help="formula text for task_poly neurons")
    p.add_argument("--template-file", help="regression.json or template JSON")
    p.add_argument("--resume", help="checkpoint.json to continue from")
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run a TN/LN comparison experiment")
    common(p)
    p.add_argument("--bundled", help="name of a shipped experiment config, e.g. p1")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="re-render a report from archive.json")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, bench.ConfigError, data.DataError, TemplateParseError,
            KeyError, ValueError) as exc:
        print(f"taskneuron: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError, ArithmeticError) as exc:
        print(f"taskneuron: numeric failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
