"""Metric, experiment driver, and report rendering.

The protocol cross-validates the target corpus; the source corpus is used
whole in every fold. Within a fold, each trial draws one set of labeled
target examples that every sampled method shares, so methods are compared
on identical information. Seeds derive deterministically from the master
seed and the (fold, trial, method, n) coordinates, which makes a sweep
bit-reproducible for any worker count.

Raw results CSV schema: ``method,n_per_class,fold,trial,ua`` with
full-precision floats. Whole-dataset baselines run once per fold and are
recorded with ``n_per_class`` 0 and ``trial`` 0.
"""

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .adaptation import (
    TrainConfig,
    train_cada,
    train_finetune,
    train_source_only,
    train_target_only,
)
from .backends import active
from .datasets import (
    DomainDataset,
    apply_normalization,
    class_quotas,
    fit_normalization,
    sample_target_examples,
    speaker_kfold,
)
from .model import ModelConfig, predict_classes

ALL_SOURCE = "all-source"
ALL_TARGET = "all-target"
LABEL_TARGET = "label-target"
FINE_TUNE = "fine-tune"
CADA = "cada"

METHOD_ORDER = (ALL_SOURCE, ALL_TARGET, LABEL_TARGET, FINE_TUNE, CADA)
METHOD_IDS = {name: i for i, name in enumerate(METHOD_ORDER)}
BASELINE_METHODS = frozenset({ALL_SOURCE, ALL_TARGET})
SAMPLED_METHODS = frozenset({LABEL_TARGET, FINE_TUNE, CADA})

RAW_CSV_HEADER = "method,n_per_class,fold,trial,ua"

# Tables only show the few-shot-target baseline once it has a usable
# amount of data per class.
LABEL_TARGET_MIN_PER_CLASS = 10


def unweighted_accuracy(predictions, truth, num_classes):
    """Per-class recall averaged over classes.

    Robust to class imbalance; a constant predictor on two classes scores
    exactly 0.5. Raises when a class never occurs in ``truth`` (the metric
    is undefined there).
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions {predictions.shape} and truth {truth.shape} must be "
            "1-D and equal length"
        )
    recalls = []
    for cls in range(num_classes):
        mask = truth == cls
        if not mask.any():
            raise ValueError(f"class {cls} absent from truth; UA undefined")
        recalls.append(float(np.mean(predictions[mask] == cls)))
    return float(np.mean(recalls))


def aggregate(values):
    """Mean and sample standard deviation (n-1); a single value has std 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty list")
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std


@dataclass(frozen=True)
class TrialRecord:
    method: str
    n_per_class: int  # 0 for whole-dataset baselines
    fold: int
    trial: int
    ua: float
    train_seed: int = 0
    sample_seed: int = 0


@dataclass(frozen=True)
class TrialReport:
    """All trials of one (method, n) cell plus their aggregate."""

    method: str
    n_per_class: int
    records: tuple
    mean_ua: float
    std_ua: float

    @classmethod
    def from_records(cls, method, n_per_class, records):
        mean, std = aggregate([r.ua for r in records])
        return cls(
            method=method,
            n_per_class=n_per_class,
            records=tuple(records),
            mean_ua=mean,
            std_ua=std,
        )

    @property
    def uas(self):
        return [r.ua for r in self.records]


@dataclass
class SweepReport:
    methods: tuple
    n_values: tuple
    trials: int
    folds: int
    master_seed: int
    count_unit: str
    num_classes: int
    baselines: list  # TrialReport per whole-dataset baseline
    cells: list  # TrialReport per (sampled method, n)
    warnings: list
    histories: Optional[dict] = None  # (method, n, fold, trial) -> TrainHistory

    def cell(self, method, n_per_class):
        for report in self.cells + self.baselines:
            if report.method == method and report.n_per_class == n_per_class:
                return report
        raise KeyError(f"no cell for method={method!r}, n={n_per_class}")


def _derive_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _sample_seed(master_seed, fold, trial):
    # No method component: methods within a trial share the drawn examples.
    return _derive_seed(master_seed, 211, fold, trial)


def _train_seed(master_seed, method, fold, trial, n):
    return _derive_seed(master_seed, 307, METHOD_IDS[method], fold, trial, n)


def _normalized(dataset, stats):
    return DomainDataset(
        features=apply_normalization(dataset.features, stats),
        labels=dataset.labels,
        speaker_ids=dataset.speaker_ids,
        domain=dataset.domain,
        name=dataset.name,
        num_classes=dataset.num_classes,
    )


def _execute_item(ctx, item):
    """Train and score one (method, n, fold, trial) work unit."""
    method, n, fold, trial = item
    source = ctx["source"]
    target = ctx["target"]
    train_idx, test_idx = ctx["fold_splits"][fold]
    target_train = target.subset(train_idx, name=f"{target.name}/fold{fold}-train")
    test = target.subset(test_idx, name=f"{target.name}/fold{fold}-test")
    num_classes = source.num_classes
    train_seed = _train_seed(ctx["master_seed"], method, fold, trial, n)
    cfg = replace(ctx["train_config"], seed=train_seed)
    model_cfg = ctx["model_config"]
    sample_seed = 0

    if method == ALL_SOURCE:
        stats = fit_normalization(source.features)
        params, history = train_source_only(_normalized(source, stats), model_cfg, cfg)
    elif method == ALL_TARGET:
        stats = fit_normalization(target_train.features)
        params, history = train_target_only(
            _normalized(target_train, stats), model_cfg, cfg
        )
    else:
        sample_seed = _sample_seed(ctx["master_seed"], fold, trial)
        chosen = sample_target_examples(
            target_train, n, sample_seed, ctx["count_unit"]
        )
        examples = target_train.subset(chosen, name=f"{target.name}/trial{trial}")
        if method == LABEL_TARGET:
            stats = fit_normalization(examples.features)
            params, history = train_target_only(
                _normalized(examples, stats), model_cfg, cfg
            )
        else:
            # Shared feature map across domains: fit on everything the
            # method trains on, source plus the drawn target examples.
            stats = fit_normalization(
                np.vstack([source.features, examples.features])
            )
            trainer = train_finetune if method == FINE_TUNE else train_cada
            params, history = trainer(
                _normalized(source, stats), _normalized(examples, stats), model_cfg, cfg
            )

    preds = predict_classes(
        params, apply_normalization(test.features, stats), num_classes
    )
    ua = unweighted_accuracy(preds, test.labels, num_classes)
    return ua, history, train_seed, sample_seed


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_item_in_worker(item):
    return _execute_item(_WORKER_CTX, item)


def run_experiment(
    source,
    target,
    methods,
    n_values,
    trials=20,
    folds=5,
    master_seed=0,
    model_config=None,
    train_config=None,
    workers=1,
    count_unit="per_class",
    speaker_disjoint_folds=False,
    single_split=False,
    collect_histories=False,
):
    """Full sweep: methods x n_values x folds x trials, deterministic per seed.

    Whole-dataset baselines run once per fold. A fold whose training side
    cannot supply ``n`` examples per class is skipped for that ``n`` with a
    warning recorded in the report. Work units run in parallel when
    ``workers`` > 1; results are merged in a fixed order so the report is
    byte-identical for any worker count.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    unknown = [m for m in methods if m not in METHOD_IDS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; valid: {list(METHOD_ORDER)}")
    if source.num_classes != target.num_classes:
        raise ValueError("source and target disagree on the number of classes")
    if trials < 1 or folds < 1:
        raise ValueError("trials and folds must both be >= 1")
    n_values = [int(n) for n in n_values]
    if any(n < 1 for n in n_values):
        raise ValueError("n_values must be positive")

    if model_config is None:
        model_config = ModelConfig(input_dim=source.feature_dim)
    model_config = replace(
        model_config, input_dim=source.feature_dim, num_classes=source.num_classes
    )
    if train_config is None:
        train_config = TrainConfig()

    fold_splits = speaker_kfold(
        target, folds, _derive_seed(master_seed, 101), speaker_disjoint_folds
    )
    if single_split:
        fold_splits = fold_splits[:1]
    active_folds = len(fold_splits)

    warnings_list = []
    feasible = {}  # (fold, n) -> bool
    for n in n_values:
        quotas = class_quotas(target.num_classes, n, count_unit)
        for fold in range(active_folds):
            counts = np.bincount(
                target.labels[fold_splits[fold][0]], minlength=target.num_classes
            )
            short = [
                (cls, int(counts[cls]))
                for cls, quota in enumerate(quotas)
                if counts[cls] < quota
            ]
            feasible[(fold, n)] = not short
            if short:
                detail = ", ".join(f"class {c} has {m}" for c, m in short)
                warnings_list.append(
                    f"skipped fold {fold} at n={n} ({count_unit}): {detail}"
                )

    items = []
    for method in METHOD_ORDER:
        if method not in methods:
            continue
        if method in BASELINE_METHODS:
            items.extend((method, 0, fold, 0) for fold in range(active_folds))
        else:
            for n in n_values:
                for fold in range(active_folds):
                    if not feasible[(fold, n)]:
                        continue
                    items.extend((method, n, fold, t) for t in range(trials))

    ctx = {
        "source": source,
        "target": target,
        "fold_splits": fold_splits,
        "master_seed": master_seed,
        "model_config": model_config,
        "train_config": train_config,
        "count_unit": count_unit,
    }

    active.warmup()  # compile kernels pre-fork so workers inherit them
    if workers <= 1 or len(items) <= 1:
        outcomes = [_execute_item(ctx, item) for item in items]
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            chunk = max(1, len(items) // (workers * 8))
            outcomes = list(pool.map(_run_item_in_worker, items, chunksize=chunk))

    by_key = dict(zip(items, outcomes))
    histories = {} if collect_histories else None
    baselines = []
    cells = []
    for method in METHOD_ORDER:
        if method not in methods:
            continue
        if method in BASELINE_METHODS:
            records = []
            for fold in range(active_folds):
                ua, history, train_seed, sample_seed = by_key[(method, 0, fold, 0)]
                records.append(
                    TrialRecord(method, 0, fold, 0, ua, train_seed, sample_seed)
                )
                if collect_histories:
                    histories[(method, 0, fold, 0)] = history
            baselines.append(TrialReport.from_records(method, 0, records))
        else:
            for n in n_values:
                records = []
                for fold in range(active_folds):
                    if not feasible[(fold, n)]:
                        continue
                    for trial in range(trials):
                        ua, history, train_seed, sample_seed = by_key[
                            (method, n, fold, trial)
                        ]
                        records.append(
                            TrialRecord(
                                method, n, fold, trial, ua, train_seed, sample_seed
                            )
                        )
                        if collect_histories:
                            histories[(method, n, fold, trial)] = history
                if records:
                    cells.append(TrialReport.from_records(method, n, records))
                else:
                    warnings_list.append(f"no feasible folds for {method} at n={n}")

    return SweepReport(
        methods=tuple(methods),
        n_values=tuple(n_values),
        trials=trials,
        folds=active_folds,
        master_seed=master_seed,
        count_unit=count_unit,
        num_classes=source.num_classes,
        baselines=baselines,
        cells=cells,
        warnings=warnings_list,
        histories=histories,
    )


def _percent_cell(mean, std):
    return f"{round(mean * 100)}±{round(std * 100)}"


def _label_target_visible(n, count_unit, num_classes):
    per_class = n if count_unit == "per_class" else n // num_classes
    return per_class > LABEL_TARGET_MIN_PER_CLASS


def render_report(report, fmt="text"):
    """Render a sweep as a summary table or as the raw per-trial CSV.

    Text format shows UA in rounded percent as ``mean±std``. The
    few-shot-target baseline row only shows cells with more than
    ``LABEL_TARGET_MIN_PER_CLASS`` examples per class (and is dropped
    entirely when no cell qualifies); raw CSV always carries every record
    at full precision.
    """
    if not report.methods:
        raise ValueError("report has no methods")
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(RAW_CSV_HEADER + "\n")
        for cell in report.baselines + report.cells:
            for r in cell.records:
                buf.write(
                    f"{r.method},{r.n_per_class},{r.fold},{r.trial},{float(r.ua)!r}\n"
                )
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")

    lines = [
        "UA summary (percent, mean±std over folds and trials)",
        f"master_seed={report.master_seed} folds={report.folds} "
        f"trials={report.trials} count_unit={report.count_unit}",
        "",
    ]
    for baseline in report.baselines:
        lines.append(f"{baseline.method}: {_percent_cell(baseline.mean_ua, baseline.std_ua)}")
    sampled = [m for m in report.methods if m in SAMPLED_METHODS]
    if sampled and report.n_values:
        rows = []
        header = ["examples/class" if report.count_unit == "per_class" else "examples"]
        header += [str(n) for n in report.n_values]
        rows.append(header)
        for method in sampled:
            row = [method]
            for n in report.n_values:
                if method == LABEL_TARGET and not _label_target_visible(
                    n, report.count_unit, report.num_classes
                ):
                    row.append("-")
                    continue
                try:
                    cell = report.cell(method, n)
                except KeyError:
                    row.append("-")
                    continue
                row.append(_percent_cell(cell.mean_ua, cell.std_ua))
            if method == LABEL_TARGET and all(c == "-" for c in row[1:]):
                continue
            rows.append(row)
        if len(rows) > 1:
            lines.append("")
            widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
            for row in rows:
                lines.append(
                    "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                )
    if report.warnings:
        lines.append("")
        lines.extend(f"warning: {w}" for w in report.warnings)
    return "\n".join(lines) + "\n"


def parse_raw_csv(text):
    """Inverse of the CSV rendering; returns TrialRecords (seeds zeroed)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if ",".join(header) != RAW_CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    records = []
    for row in reader:
        if not row:
            continue
        records.append(
            TrialRecord(
                method=row[0],
                n_per_class=int(row[1]),
                fold=int(row[2]),
                trial=int(row[3]),
                ua=float(row[4]),
            )
        )
    return records
