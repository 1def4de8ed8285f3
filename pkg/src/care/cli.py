"""Command-line entry point: train, metrics, vcbound, ablate, parse.

Exit codes: 0 success, 1 usage or configuration, 2 data or format, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import sepmetrics, vcbound
from .errors import CareError, ConfigError, DomainError, FormatError, NumericalError, ShapeError
from .graphio import make_folds, parse_tudataset
from .trainer import ModelConfig, embed, run_cv, write_embeddings, write_trace

log = logging.getLogger("care")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ABLATE_KEYS = {"lambda1", "lambda2", "design", "selector", "class_loss_mode", "depth"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """A run file: dataset location plus every :class:`ModelConfig` field."""

    dataset: str
    model: ModelConfig
    name: str | None = None
    feature_policy: str | None = None
    out: str | None = None
    folds: list | None = None

    RUN_KEYS = ("dataset", "name", "feature_policy", "out", "folds")

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        model_keys = {f.name for f in fields(ModelConfig)}
        unknown = set(data) - model_keys - set(cls.RUN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in data:
            raise ConfigError("config needs a 'dataset' directory")
        model = ModelConfig.from_dict({k: v for k, v in data.items() if k in model_keys})
        return cls(data["dataset"], model, data.get("name"), data.get("feature_policy"),
                   data.get("out"), data.get("folds"))

    @property
    def dataset_name(self) -> str:
        return self.name or Path(self.dataset).name

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "name": self.dataset_name, "feature_policy": self.feature_policy,
                "out": self.out, "folds": self.folds, **self.model.to_dict()}


def load_config(path, seed_env: bool = True) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if seed_env and "CARE_SEED" in os.environ:
        try:
            data["seed"] = int(os.environ["CARE_SEED"])
        except ValueError:
            raise ConfigError(f"CARE_SEED must be an integer, got {os.environ['CARE_SEED']!r}") from None
    return RunConfig.from_dict(data)


def _load_dataset(cfg: RunConfig):
    directory = Path(cfg.dataset)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    return parse_tudataset(directory, cfg.dataset_name, cfg.feature_policy)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def execute_run(cfg: RunConfig, out: Path, dataset=None) -> dict:
    """Cross-validate one configuration and write its artefacts under ``out``."""
    dataset = dataset or _load_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())

    plan = make_folds(dataset, cfg.model.seed, cfg.model.stratified_folds)

    def on_fold(res, model):
        write_trace(res.trace, out / f"trace_fold{res.fold}.csv")
        # embeddings of the train split after convergence, refined with the true class
        train = list(plan[res.fold]["train"])
        vecs = embed(model, dataset, train, use_labels=True)
        write_embeddings(out / f"embeddings_fold{res.fold}.csv", train, dataset.labels[train], vecs)
        log.info("fold %d: test accuracy %.4f after %d epochs", res.fold, res.test_accuracy, res.stop_epoch)

    result = run_cv(dataset, cfg.model, plan, folds=cfg.folds, on_fold=on_fold)
    (out / "result.json").write_text(result.to_json() + "\n")
    _write_json(out / "timing.json", result.timing())
    return result.to_dict()


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out or "runs/train")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    summary = execute_run(cfg, out)
    print(f"mean accuracy {summary['mean']:.4f} ± {summary['std']:.4f} -> {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    s = sepmetrics.read_embeddings(args.embeddings)
    text = sepmetrics.metrics_json(sepmetrics.all_metrics(s))
    for w in s.warnings:
        log.warning(w)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "metrics.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_vcbound(args) -> int:
    for name in ("n", "h2", "d"):
        v = getattr(args, name)
        if v is not None and v < 1:
            raise UsageError(f"--{name} must be a positive integer, got {v}")
    d = args.d or 1
    if args.sweep:
        reports = vcbound.sweep(ds=(d,))
        failing = [r for r in reports if not r.verdict]
        if failing:
            print(vcbound.format_table(failing))
            print(f"verdict: false for {len(failing)} of {len(reports)} cells")
            return EXIT_NUMERIC
        print(f"verdict: true for all {len(reports)} cells")
    else:
        if args.n is None or args.h2 is None:
            raise UsageError("vcbound needs --n and --h2 (or --sweep)")
        reports = [vcbound.theorem1_check(args.n, args.h2, d)]
        print(vcbound.format_table(reports))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "vcbound.json").write_text(vcbound.reports_json(reports) + "\n")
    return EXIT_OK


def _grid_cells(grid: dict) -> list[dict]:
    if not isinstance(grid, dict) or not grid:
        raise UsageError("ablation grid must be a non-empty JSON object")
    unknown = set(grid) - ABLATE_KEYS
    if unknown:
        raise UsageError(f"unknown grid keys {sorted(unknown)}; allowed: {sorted(ABLATE_KEYS)}")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise UsageError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    try:
        grid = json.loads(Path(args.grid).read_text())
    except FileNotFoundError:
        raise UsageError(f"grid file not found: {args.grid}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{args.grid}: invalid JSON at line {e.lineno}: {e.msg}") from None
    cells = _grid_cells(grid)
    root = Path(args.out or cfg.out or "runs/ablate")
    dataset = _load_dataset(cfg)
    rows = []
    for i, cell in enumerate(cells):
        model = ModelConfig.from_dict({**cfg.model.to_dict(), **cell})
        cell_cfg = RunConfig(cfg.dataset, model, cfg.name, cfg.feature_policy, None, cfg.folds)
        summary = execute_run(cell_cfg, root / f"cell{i:03d}", dataset)
        rows.append({"cell": i, **cell, "mean": summary["mean"], "std": summary["std"]})
        print(f"cell {i}: {cell} -> {summary['mean']:.4f}")
    rows.sort(key=lambda r: (-r["mean"], r["cell"]))
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["rank", "cell", *sorted(grid), "mean", "std"])
        w.writeheader()
        for rank, r in enumerate(rows, start=1):
            w.writerow({"rank": rank, **r})
    return EXIT_OK


def cmd_parse(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    ds = parse_tudataset(directory, args.name or directory.name, args.feature_policy)
    st = ds.stats()
    print(f"{'dataset':<12}{'graphs':>8}{'classes':>9}{'avg nodes':>11}{'avg edges':>11}")
    print(f"{st['name']:<12}{st['graphs']:>8}{st['classes']:>9}{st['avg_nodes']:>11.2f}{st['avg_edges']:>11.2f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "stats.json", st)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="care", description="Class-aware graph representation refinement experiments.")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="10-fold cross-validation of one configuration")
    t.add_argument("--config", required=True)
    t.set_defaults(fn=cmd_train)

    m = sub.add_parser("metrics", help="separability metrics of an embedding dump")
    m.add_argument("embeddings")
    m.set_defaults(fn=cmd_metrics)

    v = sub.add_parser("vcbound", help="GCN vs CARE complexity under matched parameters")
    v.add_argument("--n", type=int)
    v.add_argument("--h2", type=int)
    v.add_argument("--d", type=int)
    v.add_argument("--sweep", action="store_true", help="all n in [1,100], h2 in [1,256]")
    v.set_defaults(fn=cmd_vcbound)

    a = sub.add_parser("ablate", help="cross product of configuration overrides")
    a.add_argument("--config", required=True)
    a.add_argument("--grid", required=True, help="JSON object mapping keys to value lists")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("parse", help="dataset statistics")
    s.add_argument("directory")
    s.add_argument("--name")
    s.add_argument("--feature-policy")
    s.set_defaults(fn=cmd_parse)
    for sp in (t, m, v, a, s):
        sp.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"care: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as e:
        print(f"care: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FormatError, ShapeError, DomainError) as e:
        print(f"care: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, OverflowError) as e:
        print(f"care: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CareError as e:
        print(f"care: {e}", file=sys.stderr)
        return EXIT_USAGE
