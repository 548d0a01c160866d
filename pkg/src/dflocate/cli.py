"""Command-line driver.

    dflocate train-predictor --config run.toml
    dflocate train-localizer --config run.toml --tau 8
    dflocate sweep --config run.toml [--full-sweep] [--jobs 4] [--strict]
    dflocate ci --config run.toml --localizer runs/localizer_tau8.dfl
    dflocate heatmap --config run.toml --localizer runs/localizer_tau8.dfl --indices 0,1,2
    dflocate oracle --beta 3,1,2 --tau 1.5
    dflocate arch-sweep --config run.toml

Every run writes ``manifest.json`` into the output directory after all other
artifacts. Errors are printed to stderr as one JSON object and map to exit
codes: 2 config/data, 3 oracle tie, 4 divergence, 5 target unreachable
(with --strict).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff.checkpoint import CheckpointError
from .data import DataError, Dataset, csv_train_test, dataset_from_manifest, split
from .heatmap import HeatmapError, export_heatmaps
from .localizer import CaeConfig, LocalizerError, load_localizer, preset, save_localizer
from .metrics import DegenerateR2Error, bootstrap_r2_ci, format_table
from .oracles import TieError, greedy_linear_delta
from .predictor import Predictor
from .training import (DivergenceError, FrozenPredictorError, LocalizerFactory, TrainConfig,
                       architecture_sweep, localizer_config, predictor_config, sweep_tau,
                       train_localizer, train_predictor)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("dflocate")

EXIT_OK, EXIT_CONFIG, EXIT_TIE, EXIT_DIVERGED, EXIT_UNREACHABLE = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


class TargetUnreachable(RuntimeError):
    pass


# defaults per section; anything not listed here is rejected
DEFAULTS = {
    "": {"seed": 0, "out_dir": "runs"},
    "dataset": {"format": "mnist79", "test_fraction": 0.2, "split_seed": None},
    "predictor": {"checkpoint": None, "layers": None, "loss": "cross-entropy", "l1_weight": 1e-4,
                  "optimizer": "adam", "learning_rate": 1e-3, "max_epochs": 60, "batch_size": 16,
                  "patience": 10},
    "localizer": {"preset": None, "encoder": None, "hidden": [32], "decoder": None, "kernel": None,
                  "activation": "trelu-softmax", "weight_norm": True, "optimizer": "adam",
                  "learning_rate": 1e-3, "momentum": 0.0, "weight_decay": 0.0, "max_epochs": 20,
                  "batch_size": 16, "patience": 15, "lr_reduce_patience": 3, "tau": None},
    "sweep": {"grid": [4, 6, 8, 10, 12, 14, 18, 20], "target_r2": 0.5, "full_sweep": False,
              "heatmaps": 3},
    "bootstrap": {"count": 500, "level": 0.95, "seed": None},
    "arch": {"presets": ["CAE8", "MLP64"], "folds": 5, "tau": None},
}
# dataset entries are passed through to the loader
DATASET_PASSTHROUGH = {"images", "labels", "path", "label_column", "rescale", "dir", "n",
                       "keep_classes", "relabel", "limit", "seed"}


def load_config(path: str | None) -> tuple[dict, Path]:
    """Merge a TOML file over the defaults; returns (config, base directory)."""
    raw: dict = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {p}: {e}") from None
        base = p.resolve().parent
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    for key, val in raw.items():
        if isinstance(val, dict):
            if key not in DEFAULTS or key == "":
                raise ConfigError(f"unknown config section [{key}]")
            allowed = set(DEFAULTS[key]) | (DATASET_PASSTHROUGH if key == "dataset" else set())
            unknown = set(val) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
            cfg[key].update(val)
        elif key in DEFAULTS[""]:
            cfg[""][key] = val
        else:
            raise ConfigError(f"unknown top-level config key {key!r}")
    return cfg, base


def resolve_seed(cfg: dict, flag: int | None = None) -> int:
    """--seed beats $DFL_SEED, which beats the config file."""
    if flag is not None:
        return int(flag)
    env = os.environ.get("DFL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DFL_SEED must be an integer, got {env!r}") from None
    return int(cfg[""]["seed"])


@dataclass
class RunManifest:
    config_path: str | None
    seed: int
    tool_version: str = __version__
    artifacts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def add(self, *paths):
        self.artifacts.extend(str(p) for p in paths)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        body = {"config_path": self.config_path, "seed": self.seed, "tool_version": self.tool_version,
                "artifacts": sorted(set(self.artifacts)), "timings": self.timings}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


# building blocks

def _load_data(cfg: dict, base: Path, seed: int) -> tuple[Dataset, Dataset]:
    ds = cfg["dataset"]
    frac = ds["test_fraction"]
    if not 0 < frac < 1:
        raise ConfigError("dataset.test_fraction must lie in (0, 1)")
    split_seed = ds["split_seed"] if ds["split_seed"] is not None else seed
    if ds["format"] == "csv" and ds.get("rescale", True):
        # rescale with training-split statistics only
        p = Path(ds.get("path", ""))
        p = p if p.is_absolute() else base / p
        if not ds.get("path") or not p.exists():
            raise DataError(f"dataset file not found: {p}")
        return csv_train_test(p.read_text(), frac, split_seed, ds.get("label_column", -1))
    m = {k: v for k, v in ds.items() if k in DATASET_PASSTHROUGH or k == "format"}
    data = dataset_from_manifest(m, base)
    train, test = split(data, [1 - frac, frac], seed=split_seed)
    return train, test


def default_predictor_layers(data: Dataset) -> list[dict]:
    n_out = len(np.unique(data.labels))
    if len(data.instance_shape) == 2:
        return [{"type": "conv2d", "filters": 16, "kernel": 5, "stride": 2}, {"type": "relu"},
                {"type": "conv2d", "filters": 32, "kernel": 5, "stride": 2}, {"type": "relu"},
                {"type": "dense", "units": n_out}]
    return [{"type": "dense", "units": 32}, {"type": "relu"}, {"type": "dense", "units": n_out}]


def _optimizer(sec: dict, tau: float | None = None) -> dict:
    lr = sec["learning_rate"]
    if lr == "auto":
        if tau is None:
            raise ConfigError('learning_rate "auto" (10/tau) only applies to localizers')
        lr = 10.0 / tau
    try:
        lr = float(lr)
    except (TypeError, ValueError):
        raise ConfigError(f"learning_rate must be a number or \"auto\", got {lr!r}") from None
    opt = {"kind": sec["optimizer"], "learning_rate": lr}
    if "momentum" in sec and sec["optimizer"] != "adam":
        opt["momentum"] = float(sec["momentum"])
        opt["weight_decay"] = float(sec["weight_decay"])
    return opt


def _predictor(cfg: dict, base: Path, train: Dataset, seed: int, manifest: RunManifest | None,
               out_dir: Path) -> Predictor:
    sec = cfg["predictor"]
    if sec["checkpoint"]:
        p = Path(sec["checkpoint"])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise DataError(f"predictor checkpoint not found: {p}")
        return Predictor.load(p)
    layers = sec["layers"] or default_predictor_layers(train)
    tcfg = predictor_config(optimizer=_optimizer(sec), max_epochs=int(sec["max_epochs"]),
                            batch_size=int(sec["batch_size"]), early_stop_patience=int(sec["patience"]),
                            seed=seed)
    d = train_predictor(layers, train, tcfg, l1_weight=float(sec["l1_weight"]), loss_kind=sec["loss"])
    if manifest is not None:
        manifest.add(*d.save(out_dir / "predictor.dfl"))
    return d


def localizer_architecture(cfg: dict, shape) -> CaeConfig:
    sec = cfg["localizer"]
    if sec["preset"]:
        c = preset(sec["preset"], shape, kernel=sec["kernel"], hidden=sec["hidden"],
                   activation=sec["activation"])
        if not sec["weight_norm"]:
            c.weight_norm = False
        return c
    if sec["encoder"] is None and sec["decoder"] is None:
        k = sec["kernel"] or (3 if len(shape) == 2 else 5)
        enc, dec = [(8, k), (4, k)], [(4, k), (8, k)]
    else:
        enc, dec = sec["encoder"] or [], sec["decoder"] or []
    return CaeConfig(shape, encoder=enc, hidden=sec["hidden"], decoder=dec,
                     activation=sec["activation"], weight_norm=sec["weight_norm"], name="cae")


def localizer_train_config(cfg: dict, seed: int):
    sec = cfg["localizer"]

    def make(tau: float) -> TrainConfig:
        opt = _optimizer(sec, tau)
        return localizer_config(tau, optimizer=opt, max_epochs=int(sec["max_epochs"]),
                                batch_size=int(sec["batch_size"]),
                                early_stop_patience=int(sec["patience"]),
                                lr_reduce_patience=sec["lr_reduce_patience"], seed=seed)
    return make


def _out_dir(cfg: dict, args) -> Path:
    out = Path(args.out or cfg[""]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tau_name(tau: float) -> str:
    return f"{tau:g}".replace(".", "p")


def _write(path: Path, text: str, manifest: RunManifest) -> Path:
    path.write_text(text)
    manifest.add(path)
    return path


# subcommands

def cmd_train_predictor(args, cfg, base, seed, manifest, out):
    train, test = _load_data(cfg, base, seed)
    t0 = time.perf_counter()
    d = _predictor(cfg, base, train, seed, manifest, out)
    manifest.timings["train_predictor"] = time.perf_counter() - t0
    res = {"test_accuracy": d.accuracy(test.features, test.labels) if d.loss_kind == "cross-entropy" else None,
           "test_loss": float(np.mean(d.losses(test.features, test.labels))),
           "epochs_run": d.history.epochs_run if hasattr(d, "history") else 0}
    _write(out / "predictor_report.json", json.dumps(res, indent=2, sort_keys=True) + "\n", manifest)
    print(json.dumps(res, sort_keys=True))


def cmd_train_localizer(args, cfg, base, seed, manifest, out):
    tau = args.tau if args.tau is not None else cfg["localizer"]["tau"]
    if tau is None:
        raise ConfigError("train-localizer needs --tau or localizer.tau")
    train, test = _load_data(cfg, base, seed)
    d = _predictor(cfg, base, train, seed, manifest, out)
    t0 = time.perf_counter()
    loc = LocalizerFactory(localizer_architecture(cfg, train.instance_shape), seed)(float(tau))
    train_localizer(d, loc, train, localizer_train_config(cfg, seed)(float(tau)))
    manifest.timings["train_localizer"] = time.perf_counter() - t0
    manifest.add(*save_localizer(loc, out / f"localizer_tau{_tau_name(loc.tau)}.dfl"))
    report = bootstrap_r2_ci(d, loc, test, **_bootstrap_args(cfg, seed))
    _write(out / f"report_tau{_tau_name(loc.tau)}.json", report.dumps() + "\n", manifest)
    print(format_table([(loc.config.name, report)]))


def _bootstrap_args(cfg: dict, seed: int) -> dict:
    b = cfg["bootstrap"]
    return {"B": int(b["count"]), "level": float(b["level"]),
            "seed": int(b["seed"]) if b["seed"] is not None else seed}


def cmd_sweep(args, cfg, base, seed, manifest, out):
    sw = cfg["sweep"]
    grid = [float(t) for t in (args.grid.split(",") if args.grid else sw["grid"])]
    target = args.target_r2 if args.target_r2 is not None else float(sw["target_r2"])
    full = args.full_sweep or bool(sw["full_sweep"])
    train, test = _load_data(cfg, base, seed)
    d = _predictor(cfg, base, train, seed, manifest, out)
    factory = LocalizerFactory(localizer_architecture(cfg, train.instance_shape), seed)
    result = sweep_tau(d, factory, train, test, grid, target, cfg=localizer_train_config(cfg, seed),
                       full_sweep=full, jobs=args.jobs, **_bootstrap_args(cfg, seed))
    k = min(int(sw["heatmaps"]), len(test))
    for cell in result.cells:
        name = _tau_name(cell.tau)
        manifest.add(*save_localizer(cell.localizer, out / f"localizer_tau{name}.dfl"))
        if k:
            manifest.add(*export_heatmaps(cell.localizer, test.features, range(k),
                                          out / "heatmaps" / f"tau{name}"))
        manifest.timings[f"tau={cell.tau:g}"] = cell.wall_seconds
    _write(out / "sweep.json", result.dumps(), manifest)
    _write(out / "sweep.csv", result.to_csv(), manifest)
    print(format_table([(f"tau={c.tau:g}", c.report) for c in result.cells if c.report]))
    print(f"selected tau: {result.selected_tau}")
    if args.strict and not result.reached:
        raise TargetUnreachable(f"no tau in {grid} reached R^2 >= {target}")


def cmd_ci(args, cfg, base, seed, manifest, out):
    train, test = _load_data(cfg, base, seed)
    d = _predictor(cfg, base, train, seed, manifest, out)
    loc = _load_localizer_arg(args.localizer)
    report = bootstrap_r2_ci(d, loc, test, **_bootstrap_args(cfg, seed))
    _write(out / f"ci_tau{_tau_name(loc.tau)}.json", report.dumps() + "\n", manifest)
    print(format_table([(loc.config.name, report)]))


def _load_localizer_arg(path: str):
    p = Path(path)
    if not p.exists() or not p.with_suffix(p.suffix + ".json").exists():
        raise DataError(f"localizer checkpoint or sidecar not found: {p}")
    return load_localizer(p)


def cmd_heatmap(args, cfg, base, seed, manifest, out):
    _, test = _load_data(cfg, base, seed)
    loc = _load_localizer_arg(args.localizer)
    try:
        indices = [int(i) for i in args.indices.split(",")]
    except ValueError:
        raise ConfigError(f"indices must be comma-separated integers, got {args.indices!r}") from None
    try:
        paths = export_heatmaps(loc, test.features, indices, out / "heatmaps")
    except IndexError as e:
        raise DataError(str(e)) from None
    manifest.add(*paths)
    for p in paths:
        print(p)


def parse_beta(text: str) -> np.ndarray:
    p = Path(text)
    if p.suffix == ".csv" or p.exists():
        if not p.exists():
            raise DataError(f"beta file not found: {p}")
        text = p.read_text()
    cells = [c.strip() for c in text.replace("\n", ",").split(",") if c.strip()]
    try:
        return np.array([float(c) for c in cells])
    except ValueError:
        raise ConfigError(f"beta must be comma-separated numbers, got {text!r}") from None


def format_delta(delta) -> str:
    return ",".join(f"{v:g}" for v in np.asarray(delta) + 0.0)


def cmd_oracle(args, cfg, base, seed, manifest, out):
    beta = parse_beta(args.beta)
    try:
        delta = greedy_linear_delta(beta, args.tau)
    except TieError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    print(format_delta(delta))


def cmd_arch_sweep(args, cfg, base, seed, manifest, out):
    a = cfg["arch"]
    tau = args.tau if args.tau is not None else (a["tau"] or cfg["localizer"]["tau"])
    if tau is None:
        raise ConfigError("arch-sweep needs --tau, arch.tau or localizer.tau")
    train, test = _load_data(cfg, base, seed)
    d = _predictor(cfg, base, train, seed, manifest, out)
    sec = cfg["localizer"]
    configs = [preset(name, train.instance_shape, kernel=sec["kernel"], hidden=sec["hidden"],
                      activation=sec["activation"]) for name in a["presets"]]
    t0 = time.perf_counter()
    rows = architecture_sweep(d, configs, float(tau), test, localizer_train_config(cfg, seed),
                              k=int(a["folds"]), seed=seed, jobs=args.jobs)
    manifest.timings["arch_sweep"] = time.perf_counter() - t0
    body = json.dumps([r.to_json() for r in rows], indent=2, sort_keys=True) + "\n"
    _write(out / "arch_sweep.json", body, manifest)
    print(f"{'architecture':<14}{'mean R2':>10}{'std':>8}")
    for r in rows:
        print(f"{r.name:<14}{r.mean_r2:>10.3f}{r.std_r2:>8.3f}")


COMMANDS = {
    "train-predictor": cmd_train_predictor,
    "train-localizer": cmd_train_localizer,
    "sweep": cmd_sweep,
    "ci": cmd_ci,
    "heatmap": cmd_heatmap,
    "oracle": cmd_oracle,
    "arch-sweep": cmd_arch_sweep,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors follow the same JSON-on-stderr convention as runtime errors."""

    def error(self, message):
        body = {"error": "UsageError", "message": f"{self.prog}: {message}", "exit_code": EXIT_CONFIG}
        print(json.dumps(body, sort_keys=True), file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dflocate", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", "-c", help="TOML run configuration")
            p.add_argument("--out", help="output directory (overrides out_dir)")
            p.add_argument("--seed", type=int, help="overrides the config seed")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
            p.add_argument("--verbose", "-v", action="store_true")
        return p

    add("train-predictor", "train and freeze the predictor")
    p = add("train-localizer", "train one localizer at a fixed budget")
    p.add_argument("--tau", type=float)
    p = add("sweep", "grid search for the smallest budget reaching the target R^2")
    p.add_argument("--full-sweep", action="store_true", help="evaluate every grid cell")
    p.add_argument("--strict", action="store_true", help="exit 5 when no budget reaches the target")
    p.add_argument("--grid", help="comma-separated budgets (overrides sweep.grid)")
    p.add_argument("--target-r2", type=float)
    p = add("ci", "bootstrap interval for a trained localizer")
    p.add_argument("--localizer", required=True)
    p = add("heatmap", "export removal proportions for test instances")
    p.add_argument("--localizer", required=True)
    p.add_argument("--indices", default="0")
    p = add("oracle", "closed-form greedy disruption for a linear model", config=False)
    p.add_argument("--beta", required=True, help="coefficients as CSV text or a CSV file")
    p.add_argument("--tau", type=float, required=True)
    p = add("arch-sweep", "cross-validated R^2 per localizer architecture")
    p.add_argument("--tau", type=float)
    return ap


def _error(code: int, exc: BaseException) -> int:
    body = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, TieError):
        body["indices"] = exc.indices
    print(json.dumps(body, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "oracle":
            cmd_oracle(args, None, None, None, None, None)
            return EXIT_OK
        cfg, base = load_config(args.config)
        seed = resolve_seed(cfg, args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = _out_dir(cfg, args)
        manifest = RunManifest(args.config, seed)
        t0 = time.perf_counter()
        COMMANDS[args.command](args, cfg, base, seed, manifest, out)
        manifest.timings["total"] = time.perf_counter() - t0
        manifest.write(out)
    except TieError as e:
        return _error(EXIT_TIE, e)
    except DivergenceError as e:
        return _error(EXIT_DIVERGED, e)
    except TargetUnreachable as e:
        return _error(EXIT_UNREACHABLE, e)
    except (ConfigError, DataError, LocalizerError, CheckpointError, HeatmapError,
            DegenerateR2Error, FrozenPredictorError, KeyError, ValueError, OSError) as e:
        return _error(EXIT_CONFIG, e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
