"""Command-line entry point.

Four subcommands: ``synth`` writes a synthetic feature-CSV pair, ``train``
fits one method and persists the model, ``evaluate`` scores a persisted
model on a feature CSV, and ``benchmark`` runs the full method sweep and
writes the summary, the raw per-trial CSV and per-run loss histories.

Configs are JSON. Every run echoes its fully resolved config (defaults
filled in, overrides applied) into the output directory so results are
self-describing. The default output directory can be set with the
``CADA_OUT`` environment variable; ``--out`` wins over the config file,
which wins over the environment.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .adaptation import (
    TrainConfig,
    train_cada,
    train_finetune,
    train_source_only,
    train_target_only,
)
from .backends import backend_name
from .datasets import (
    SOURCE,
    TARGET,
    FeatureTableError,
    SyntheticShiftSpec,
    apply_normalization,
    fit_normalization,
    generate_synthetic_pair,
    load_feature_csv,
    sample_target_examples,
    write_feature_csv,
)
from .evaluation import (
    ALL_SOURCE,
    ALL_TARGET,
    CADA,
    FINE_TUNE,
    LABEL_TARGET,
    METHOD_ORDER,
    render_report,
    run_experiment,
    unweighted_accuracy,
)
from .model import ModelConfig, load_params, predict_classes, save_params
from .optimizer import AdamConfig

DEFAULT_BENCHMARK_CONFIG = "benchmark_default.json"


class ConfigError(ValueError):
    """A run config failed validation; the message names the field."""


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 2
    feature_dim: int = 0  # 0: take whatever the data provides
    source_csv: str = ""
    target_csv: str = ""
    synthetic: dict = field(default_factory=dict)

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("data.num_classes: must be >= 2")
        has_csv = bool(self.source_csv or self.target_csv)
        if has_csv and self.synthetic:
            raise ConfigError("data: give either CSV paths or a synthetic block, not both")
        if not has_csv and not self.synthetic:
            raise ConfigError("data: needs source_csv/target_csv or a synthetic block")
        if has_csv:
            if not self.source_csv or not self.target_csv:
                raise ConfigError("data: source_csv and target_csv must both be set")
            for key, path in (("source_csv", self.source_csv), ("target_csv", self.target_csv)):
                if not Path(path).is_file():
                    raise ConfigError(f"data.{key}: no such file: {path}")
        else:
            try:
                SyntheticShiftSpec.from_dict(self.synthetic)
            except (ValueError, TypeError, KeyError) as err:
                raise ConfigError(f"data.synthetic: {err}") from err


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple = tuple(METHOD_ORDER)
    n_values: tuple = (1, 2, 3, 4, 5, 6)
    trials: int = 20
    folds: int = 5
    master_seed: int = 0
    count_unit: str = "per_class"
    speaker_disjoint_folds: bool = False
    single_split: bool = False
    save_histories: bool = True
    workers: int = 1

    def validate(self):
        if not self.methods:
            raise ConfigError("experiment.methods: must be non-empty")
        unknown = [m for m in self.methods if m not in METHOD_ORDER]
        if unknown:
            raise ConfigError(
                f"experiment.methods: unknown {unknown}; valid: {list(METHOD_ORDER)}"
            )
        for name in ("trials", "folds", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"experiment.{name}: must be >= 1")
        if any(n < 1 for n in self.n_values):
            raise ConfigError("experiment.n_values: entries must be >= 1")
        if self.count_unit not in ("per_class", "total"):
            raise ConfigError("experiment.count_unit: must be 'per_class' or 'total'")


@dataclass(frozen=True)
class TrainRunConfig:
    method: str = CADA
    n_per_class: int = 0  # 0: use the whole target set for few-shot methods
    model_out: str = "model.cada"

    def validate(self):
        if self.method not in METHOD_ORDER:
            raise ConfigError(
                f"train_run.method: unknown {self.method!r}; valid: {list(METHOD_ORDER)}"
            )
        if self.n_per_class < 0:
            raise ConfigError("train_run.n_per_class: must be >= 0")


@dataclass(frozen=True)
class EvaluateRunConfig:
    model: str = ""
    data_csv: str = ""
    domain: str = TARGET

    def validate(self):
        if not self.model:
            raise ConfigError("evaluate_run.model: required")
        if not Path(self.model).is_file():
            raise ConfigError(f"evaluate_run.model: no such file: {self.model}")
        if not self.data_csv:
            raise ConfigError("evaluate_run.data_csv: required")
        if not Path(self.data_csv).is_file():
            raise ConfigError(f"evaluate_run.data_csv: no such file: {self.data_csv}")


@dataclass(frozen=True)
class RunConfig:
    mode: str = ""
    output_dir: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    hidden_dim: int = 256
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    train_run: TrainRunConfig = field(default_factory=TrainRunConfig)
    evaluate_run: EvaluateRunConfig = field(default_factory=EvaluateRunConfig)


def _build(cls, data, where):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from err


def load_run_config(path, mode):
    """Parse and validate a JSON run config for the given subcommand."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: no such file: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config: invalid JSON in {path}: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    if raw.get("mode") and raw["mode"] != mode:
        raise ConfigError(f"mode: config says {raw['mode']!r} but command is {mode!r}")

    train_raw = dict(raw.get("train", {}))
    adam_raw = {
        k: train_raw.pop(k) for k in ("lr", "beta1", "beta2", "eps") if k in train_raw
    }
    train_cfg = _build(
        TrainConfig,
        {**train_raw, "adam": _build(AdamConfig, adam_raw, "train")},
        "train",
    )

    exp_raw = dict(raw.get("experiment", {}))
    for key in ("methods", "n_values"):
        if key in exp_raw:
            exp_raw[key] = tuple(exp_raw[key])
    experiment = _build(ExperimentConfig, exp_raw, "experiment")
    experiment.validate()

    data_raw = dict(raw.get("data", {}))
    data_cfg = _build(DataConfig, data_raw, "data")

    model_raw = dict(raw.get("model", {}))
    unknown = set(model_raw) - {"hidden_dim"}
    if unknown:
        raise ConfigError(f"model: unknown fields {sorted(unknown)}")
    hidden_dim = int(model_raw.get("hidden_dim", 256))
    if hidden_dim < 1:
        raise ConfigError("model.hidden_dim: must be >= 1")

    cfg = RunConfig(
        mode=mode,
        output_dir=str(raw.get("output_dir", "")),
        data=data_cfg,
        hidden_dim=hidden_dim,
        train=train_cfg,
        experiment=experiment,
        train_run=_build(TrainRunConfig, dict(raw.get("train_run", {})), "train_run"),
        evaluate_run=_build(
            EvaluateRunConfig, dict(raw.get("evaluate_run", {})), "evaluate_run"
        ),
    )
    if mode != "evaluate":
        cfg.data.validate()
    if mode == "train":
        cfg.train_run.validate()
    if mode == "evaluate":
        cfg.evaluate_run.validate()
    return cfg


def resolved_config_dict(cfg):
    out = dataclasses.asdict(cfg)
    # asdict flattens AdamConfig under train.adam; surface it at the level
    # users write it
    adam = out["train"].pop("adam")
    out["train"].update(adam)
    out["model"] = {"hidden_dim": out.pop("hidden_dim")}
    out["backend"] = backend_name()
    out["version"] = __version__
    return out


def load_datasets(data_cfg):
    if data_cfg.synthetic:
        spec = SyntheticShiftSpec.from_dict(data_cfg.synthetic)
        source, target = generate_synthetic_pair(spec)
        return source, target
    expected = data_cfg.feature_dim or None
    source = load_feature_csv(
        data_cfg.source_csv, SOURCE, data_cfg.num_classes, expected
    )
    target = load_feature_csv(
        data_cfg.target_csv, TARGET, data_cfg.num_classes, expected
    )
    if source.feature_dim != target.feature_dim:
        raise ConfigError(
            f"data: feature dims differ (source {source.feature_dim}, "
            f"target {target.feature_dim})"
        )
    return source, target


def _out_dir(args, cfg):
    path = args.out or cfg.output_dir or os.environ.get("CADA_OUT", "") or "cada_out"
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg, out_dir):
    with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved_config_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args):
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        print(f"error: spec: no such file: {args.spec}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as err:
        print(f"error: spec: invalid JSON: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = SyntheticShiftSpec.from_dict(raw)
    except (ValueError, TypeError, KeyError) as err:
        print(f"error: spec: {err}", file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get("CADA_OUT", "") or "cada_out")
    out.mkdir(parents=True, exist_ok=True)
    source, target = generate_synthetic_pair(spec)
    write_feature_csv(out / "source.csv", source)
    write_feature_csv(out / "target.csv", target)
    manifest = {
        "spec": spec.to_dict(),
        "source_rows": len(source),
        "target_rows": len(target),
        "version": __version__,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'source.csv'} ({len(source)} rows)")
    print(f"wrote {out / 'target.csv'} ({len(target)} rows)")
    return 0


def _model_config(cfg, source):
    return ModelConfig(
        input_dim=source.feature_dim,
        hidden_dim=cfg.hidden_dim,
        num_classes=source.num_classes,
    )


def cmd_benchmark(args):
    cfg = load_run_config(args.config, "benchmark")
    exp = cfg.experiment
    if args.seed is not None:
        exp = replace(exp, master_seed=args.seed)
    if args.workers is not None:
        exp = replace(exp, workers=args.workers)
    cfg = replace(cfg, experiment=exp)
    out_dir = _out_dir(args, cfg)
    _echo_config(cfg, out_dir)
    source, target = load_datasets(cfg.data)

    started = time.perf_counter()
    report = run_experiment(
        source,
        target,
        methods=list(exp.methods),
        n_values=list(exp.n_values),
        trials=exp.trials,
        folds=exp.folds,
        master_seed=exp.master_seed,
        model_config=_model_config(cfg, source),
        train_config=cfg.train,
        workers=exp.workers,
        count_unit=exp.count_unit,
        speaker_disjoint_folds=exp.speaker_disjoint_folds,
        single_split=exp.single_split,
        collect_histories=exp.save_histories,
    )
    elapsed = time.perf_counter() - started

    summary = render_report(report, "text")
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(summary)
    with open(out_dir / "results_raw.csv", "w", encoding="utf-8") as fh:
        fh.write(render_report(report, "csv"))
    if exp.save_histories and report.histories:
        hist_dir = out_dir / "histories"
        hist_dir.mkdir(exist_ok=True)
        for (method, n, fold, trial), history in sorted(report.histories.items()):
            history.to_csv(hist_dir / f"{method}_n{n}_f{fold}_t{trial}.csv")
    print(summary, end="")
    print(f"[{backend_name()} backend, {elapsed:.1f}s] results in {out_dir}")
    return 0


def cmd_train(args):
    cfg = load_run_config(args.config, "train")
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    cfg = replace(cfg, train=train_cfg)
    out_dir = _out_dir(args, cfg)
    _echo_config(cfg, out_dir)
    source, target = load_datasets(cfg.data)
    model_cfg = _model_config(cfg, source)
    method = cfg.train_run.method
    n = cfg.train_run.n_per_class

    if n and method in (LABEL_TARGET, FINE_TUNE, CADA):
        idx = sample_target_examples(target, n, train_cfg.seed, cfg.experiment.count_unit)
        examples = target.subset(idx, name=f"{target.name}/sampled")
    else:
        examples = target

    def normalized(ds, stats):
        return dataclasses.replace(
            ds, features=apply_normalization(ds.features, stats)
        )

    if method == ALL_SOURCE:
        stats = fit_normalization(source.features)
        params, history = train_source_only(normalized(source, stats), model_cfg, train_cfg)
    elif method == ALL_TARGET:
        stats = fit_normalization(target.features)
        params, history = train_target_only(normalized(target, stats), model_cfg, train_cfg)
    elif method == LABEL_TARGET:
        stats = fit_normalization(examples.features)
        params, history = train_target_only(normalized(examples, stats), model_cfg, train_cfg)
    else:
        stats = fit_normalization(np.vstack([source.features, examples.features]))
        trainer = train_finetune if method == FINE_TUNE else train_cada
        params, history = trainer(
            normalized(source, stats), normalized(examples, stats), model_cfg, train_cfg
        )

    model_path = out_dir / cfg.train_run.model_out
    save_params(
        model_path,
        params,
        num_classes=source.num_classes,
        seed=train_cfg.seed,
        feature_min=stats.feature_min,
        feature_max=stats.feature_max,
    )
    history.to_csv(out_dir / "history.csv")
    print(
        f"trained {method} for {history.n_epochs} epochs "
        f"(best epoch {history.chosen_epoch}); model at {model_path}"
    )
    return 0


def cmd_evaluate(args):
    cfg = load_run_config(args.config, "evaluate")
    ev = cfg.evaluate_run
    params, meta = load_params(ev.model)
    num_classes = meta["num_classes"]
    data = load_feature_csv(ev.data_csv, ev.domain, num_classes)
    if data.feature_dim != params.input_dim:
        raise ConfigError(
            f"evaluate_run.data_csv: {data.feature_dim} features but the model "
            f"expects {params.input_dim}"
        )
    features = data.features
    if meta["feature_min"] is not None:
        from .datasets import NormalizationStats

        features = apply_normalization(
            features, NormalizationStats(meta["feature_min"], meta["feature_max"])
        )
    preds = predict_classes(params, features, num_classes)
    ua = unweighted_accuracy(preds, data.labels, num_classes)
    print(f"UA: {ua:.4f} ({round(ua * 100)}%) on {len(data)} examples")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cada",
        description="Class-wise adversarial domain adaptation on tabular features",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic feature-CSV pair")
    p_synth.add_argument("--spec", required=True, help="synthetic shift spec (JSON)")
    p_synth.add_argument("--out", default=None, help="output directory")
    p_synth.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one method and persist the model")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seed", type=int, default=None, help="override train.seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a persisted model on a feature CSV")
    p_eval.add_argument("--config", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("benchmark", help="run the method sweep and write reports")
    p_bench.add_argument(
        "--config",
        default=None,
        help="run config JSON (default: the packaged synthetic benchmark)",
    )
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--seed", type=int, default=None, help="override master_seed")
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.set_defaults(func=cmd_benchmark)
    return parser


def default_benchmark_config():
    """Filesystem path of the packaged frozen benchmark config."""
    return resources.files("cada").joinpath("configs", DEFAULT_BENCHMARK_CONFIG)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "benchmark" and args.config is None:
        args.config = str(default_benchmark_config())
    try:
        return args.func(args)
    except (ConfigError, FeatureTableError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
