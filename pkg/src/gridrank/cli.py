"""Command-line front end.

One JSON config file drives every subcommand; ``--set section.key=value``
flags override file values (flags win). Unknown config keys are
rejected. Outputs land under one run directory together with a
``run.json`` provenance record (resolved config, its hash, seed,
versions). Exit codes: 0 success, 2 config error, 3 data error, 4
numerical failure, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, autodiff, crossk, grid as griddata, metrics, training
from .errors import ConfigError, DataError, NumericalError
from .losses import SurrogateConfig, hybrid_objective
from .model import (ModelConfig, forward, init_params, load_checkpoint, predict_topk,
                    predictions_for, save_checkpoint)
from .training import Splits, TrainConfig, split_windows

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_GRADCHECK = 5


@dataclass
class DataConfig:
    seed: int = 7
    rows: int = 8
    cols: int = 8
    periods: int = 120
    hotspots: int = 3
    d_t: int = 4
    d_s: int = 6
    d_st: int = 3
    train_fraction: float = 0.75


@dataclass
class ModelSection:
    hidden: int = 32
    recurrent_hidden: int = 32
    conv_layers: int = 2
    window: int = 7
    embed_dim: int = 16
    saturation: float = 3.0
    fixed_gate: float | None = None
    seed: int | None = None


@dataclass
class EvalConfig:
    ks: list[int] = field(default_factory=lambda: [5, 10, 20])
    radius: float = 2.0
    crossk_k: int = 10
    crossk_max_distance: float = 4.0
    crossk_step: float = 0.5
    crossk_sims: int = 99
    crossk_seed: int = 0
    envelope: str = "minmax"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs/default"
    threads: int = 1

    def validate(self) -> "RunConfig":
        self.train.validate()
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.eval.envelope not in crossk.ENVELOPE_METHODS:
            raise ConfigError(f"envelope must be one of {crossk.ENVELOPE_METHODS}")
        if self.eval.crossk_step <= 0 or self.eval.crossk_max_distance < 0:
            raise ConfigError("cross-K distance grid must have positive step")
        return self


def _from_dict(cls, payload: dict, path: str = ""):
    if not isinstance(payload, dict):
        raise ConfigError(f"config section {path or cls.__name__} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} in section {path or 'root'}")
    kwargs = {}
    for name, value in payload.items():
        spec = fields[name]
        if dataclasses.is_dataclass(spec.type) or spec.type in (DataConfig, ModelSection, TrainConfig, EvalConfig):
            kwargs[name] = _from_dict(spec.type, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {"data": DataConfig, "model": ModelSection, "train": TrainConfig, "eval": EvalConfig}


def load_run_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    payload: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
    config = _build_config(payload)
    for override in overrides:
        _apply_override(config, override)
    env_out = os.environ.get("GRIDRANK_OUT_DIR")
    if env_out:
        config.out_dir = env_out
    return config.validate()


def _build_config(payload: dict) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(payload) - (set(_SECTIONS) | {"out_dir", "threads"})
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} in section root")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in payload:
            kwargs[name] = _from_dict(cls, payload[name], f"{name}.")
    if "out_dir" in payload:
        kwargs["out_dir"] = str(payload["out_dir"])
    if "threads" in payload:
        kwargs["threads"] = int(payload["threads"])
    return RunConfig(**kwargs)


def _apply_override(config: RunConfig, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    dotted, text = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    target = config
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise ConfigError(f"unknown config key {dotted!r}")
        target = getattr(target, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {dotted!r}")
    setattr(target, leaf, value)


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_run_record(config: RunConfig, command: str, out_dir: Path, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": asdict(config),
        "config_sha256": config_hash(config),
        "seed": seed,
        "versions": {"gridrank": __version__,
                     "python": ".".join(str(v) for v in sys.version_info[:3]),
                     "numpy": np.__version__},
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_config(config: RunConfig, dataset: griddata.StGrid) -> ModelConfig:
    section = config.model
    return ModelConfig.for_grid(dataset, hidden=section.hidden,
                                recurrent_hidden=section.recurrent_hidden,
                                conv_layers=section.conv_layers, window=section.window,
                                embed_dim=section.embed_dim, saturation=section.saturation,
                                fixed_gate=section.fixed_gate, seed=section.seed)


def _splits_for(config: RunConfig, dataset: griddata.StGrid) -> Splits:
    train_end = max(2, int(round(config.data.train_fraction * dataset.periods)))
    return Splits(train_end=min(train_end, dataset.periods - 1)).validate(dataset.periods)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, config: RunConfig) -> int:
    data = config.data
    dataset = griddata.generate_synthetic(data.seed, data.rows, data.cols, data.periods,
                                          data.hotspots, d_t=data.d_t, d_s=data.d_s,
                                          d_st=data.d_st, train_fraction=data.train_fraction)
    out_dir = Path(args.out or config.out_dir)
    manifest = griddata.save_grid(dataset, out_dir)
    write_run_record(config, "gen-data", out_dir, data.seed)
    print(f"wrote dataset manifest {manifest}")
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    dataset = griddata.load_grid(args.data)
    splits = _splits_for(config, dataset)
    model_config = _model_config(config, dataset)
    state = training.train(dataset, splits, model_config, config.train)
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint", state.best_params())
    training.write_training_log(state, out_dir / "training_log.csv")
    write_run_record(config, "train", out_dir, config.train.seed)
    best = "n/a" if state.best_metric in (None, -np.inf) else f"{state.best_metric:.4f}"
    print(f"trained {state.epochs_run} epochs; best val ndcg@{config.train.eval_k} = {best} "
          f"(epoch {state.best_epoch}); checkpoint in {out_dir}")
    return EXIT_OK


def cmd_evaluate(args, config: RunConfig) -> int:
    dataset = griddata.load_grid(args.data)
    splits = _splits_for(config, dataset)
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ks = list(config.eval.ks)
    if args.predictor == "model":
        params = load_checkpoint(Path(args.checkpoint))
        report = training.evaluate_split(params, dataset, splits, ks, config.eval.radius)
        stem = "report"
    else:
        report = training.baseline_report(dataset, splits, config.model.window, ks,
                                          config.eval.radius)
        stem = "report_ha"
    report.write_json(out_dir / f"{stem}.json")
    report.write_csv(out_dir / f"{stem}.csv")
    write_run_record(config, "evaluate", out_dir, config.train.seed)
    for k in ks:
        row = report.lookup("ndcg", k)
        shown = "undefined" if row.mean is None else f"{row.mean:.4f}"
        print(f"ndcg@{k}: {shown}")
    print(f"wrote {out_dir / (stem + '.json')}")
    return EXIT_OK


def _scores_for_day(args, config: RunConfig, dataset: griddata.StGrid, day: int) -> np.ndarray:
    if args.predictor == "oracle":
        return dataset.risk_by_location()[:, day].astype(float)
    if args.predictor == "ha":
        splits = _splits_for(config, dataset)
        return training.historical_average(dataset, splits)
    params = load_checkpoint(Path(args.checkpoint))
    window = griddata.Window(day, params.config.window)
    with autodiff.no_grad():
        return forward(params, dataset, window).data


def cmd_rank(args, config: RunConfig) -> int:
    dataset = griddata.load_grid(args.data)
    day = dataset.periods - 1 if args.day == "last" else int(args.day)
    if not 0 <= day < dataset.periods:
        raise ConfigError(f"day {day} outside study period [0, {dataset.periods})")
    if args.predictor == "model" and day < config.model.window:
        raise ConfigError(f"day {day} has no length-{config.model.window} input window")
    scores = _scores_for_day(args, config, dataset, day)
    k = args.k or min(10, dataset.n_locations)
    if k > dataset.n_locations:
        raise ConfigError(f"k={k} exceeds location count {dataset.n_locations}")
    order = metrics.descending_order(scores)[:k]
    actual = dataset.risk_by_location()[:, day]
    print(f"top-{k} locations for period {day} ({args.predictor}):")
    print("rank,location,row,col,score,actual_risk")
    for position, location in enumerate(order, start=1):
        r, c = griddata.location_rc(int(location), dataset.cols)
        print(f"{position},{location},{r},{c},{scores[location]:.6f},{actual[location]:g}")
    return EXIT_OK


def cmd_crossk(args, config: RunConfig) -> int:
    dataset = griddata.load_grid(args.data)
    splits = _splits_for(config, dataset)
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, val_windows = split_windows(dataset, splits, config.model.window)
    risk = dataset.risk_by_location()
    val_days = [w.target for w in val_windows]
    actual = risk[:, val_days].T.copy()
    if args.predictor == "model":
        params = load_checkpoint(Path(args.checkpoint))
        predicted = predictions_for(params, dataset, val_windows)
        stem = "crossk_model"
    else:
        constant = training.historical_average(dataset, splits)
        predicted = np.tile(constant, (len(val_days), 1))
        stem = "crossk_ha"
    distances = np.arange(0.0, config.eval.crossk_max_distance + 1e-9, config.eval.crossk_step)
    curve = crossk.daily_average_curve(actual, predicted, config.eval.crossk_k, distances,
                                       (dataset.rows, dataset.cols),
                                       n_sim=config.eval.crossk_sims,
                                       seed=config.eval.crossk_seed,
                                       method=config.eval.envelope)
    path = crossk.write_curve_csv(curve, out_dir / f"{stem}.csv")
    write_run_record(config, "crossk", out_dir, config.eval.crossk_seed)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args, config: RunConfig) -> int:
    dataset = griddata.generate_synthetic(config.data.seed, 4, 4, 30, 2)
    model_config = ModelConfig.for_grid(dataset, hidden=4, recurrent_hidden=4,
                                        conv_layers=2, window=2, embed_dim=3)
    params = init_params(model_config, seed=config.data.seed)
    from .adjacency import pearson_static

    params.static_graph = pearson_static(dataset.risk[:, :, :20]).matrix
    window = griddata.Window(21, 2)
    tensors = params.tensors()

    report_forward = autodiff.grad_check(
        lambda: autodiff.mean_(forward(params, dataset, window)),
        tensors, eps=1e-5, tol=1e-4, max_coords=args.coords,
        rng=np.random.default_rng(config.data.seed))
    day = dataset.risk_by_location()[:, window.target]
    surrogate = SurrogateConfig(margin=1.0, local_weight=0.5, radius=2.0).validate()
    report_loss = autodiff.grad_check(
        lambda: hybrid_objective(day, forward(params, dataset, window), surrogate,
                                 None, (dataset.rows, dataset.cols)),
        tensors, eps=1e-5, tol=1e-4, max_coords=args.coords,
        rng=np.random.default_rng(config.data.seed + 1))

    ok = True
    for label, report in (("forward", report_forward), ("hybrid-objective", report_loss)):
        verdict = "PASS" if report.passed else "FAIL"
        print(f"gradcheck {label}: {verdict} max_rel_error={report.max_rel_error:.3e} "
              f"checked={report.checked} kinks={report.kinks}")
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_config_schema(args, config: RunConfig) -> int:
    print(json.dumps(asdict(RunConfig()), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridrank",
                                     description="Spatiotemporal top-K event ranking toolkit")
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config value (flags win)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap; results are identical for any value")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset manifest")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train and write checkpoint + log")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--out", help="run directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="write a ranking report for the validation split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="checkpoint directory (model predictor)")
    p.add_argument("--predictor", choices=["model", "ha"], default="model")
    p.add_argument("--out", help="run directory")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("rank", help="print the top-K table for one day")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--day", default="last", help="target period index or 'last'")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--predictor", choices=["model", "ha", "oracle"], default="model")
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("crossk", help="write cross-K curve CSV with CSR envelope")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictor", choices=["model", "ha"], default="model")
    p.add_argument("--out", help="run directory")
    p.set_defaults(handler=cmd_crossk)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--coords", type=int, default=120, help="sampled coordinates per check")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("config-schema", help="print the default config (round-trips as a config file)")
    p.set_defaults(handler=cmd_config_schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config, args.overrides)
        if args.threads is not None:
            config.threads = args.threads
            config.validate()
        if getattr(args, "seed", None) is not None:
            config.data.seed = args.seed
        if getattr(args, "command", "") in ("evaluate", "rank", "crossk"):
            if getattr(args, "predictor", "model") == "model" and not getattr(args, "checkpoint", None):
                raise ConfigError("--checkpoint is required with the model predictor")
        return args.handler(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
