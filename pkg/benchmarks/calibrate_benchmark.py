"""Calibration oracle for the shipped synthetic benchmark spec.

Searches the shift parameters (rotation, offset, inflation) by direct
simulation until the frozen-benchmark requirements hold with margin:

* all-source UA in [0.50, 0.65] (mid-band for safety)
* all-target UA >= 0.90, close to the generator's Bayes ceiling
* adversarial adaptation at n=4/class beats all-source by well over 5
  points and does not trail fine-tuning
* the adversarial UA curve over n=1..6 has no dip worse than 1 point

Bayes UA comes from classifying a large fresh target sample with the
generator's closed-form class densities. Run with ``--full`` to score a
candidate on the complete 20-trial protocol before freezing it.
"""

import argparse
import json
import time

import numpy as np

from cada.adaptation import TrainConfig
from cada.datasets import SyntheticShiftSpec, generate_synthetic_pair, rotation_matrix
from cada.evaluation import (
    ALL_SOURCE,
    ALL_TARGET,
    CADA,
    FINE_TUNE,
    run_experiment,
)
from cada.model import ModelConfig


def make_spec(rotation, offset_scale, inflation, seed=7071, sep=1.0, scale=0.8,
              n_source=150, n_target=120, dim=6):
    base_offset = np.array([0.5, -0.4, 0.3, 0.5, -0.3, 0.4])[:dim]
    means = np.zeros((2, dim))
    means[0, 0::2] = sep
    means[1, 0::2] = -sep
    return SyntheticShiftSpec(
        num_classes=2,
        feature_dim=dim,
        class_means=tuple(tuple(row) for row in means),
        class_scales=(scale, scale),
        target_offset=tuple(offset_scale * base_offset),
        target_rotation=rotation,
        target_scale_multiplier=inflation,
        examples_per_class_source=n_source,
        examples_per_class_target=n_target,
        seed=seed,
    )


def bayes_ua(spec, n_samples=20000, seed=999):
    """UA of the closed-form optimal classifier on a fresh target sample."""
    rng = np.random.default_rng(seed)
    rot = rotation_matrix(spec.feature_dim, spec.target_rotation)
    offset = np.asarray(spec.target_offset)
    recalls = []
    means = [rot @ np.asarray(m) + offset for m in spec.class_means]
    scales = [spec.target_class_scale(c) for c in range(spec.num_classes)]
    for cls in range(spec.num_classes):
        x = means[cls] + scales[cls] * rng.standard_normal(
            (n_samples, spec.feature_dim)
        )
        # log density per class, equal priors
        scores = np.stack(
            [
                -0.5 * np.sum((x - means[c]) ** 2, axis=1) / scales[c] ** 2
                - spec.feature_dim * np.log(scales[c])
                for c in range(spec.num_classes)
            ],
            axis=1,
        )
        recalls.append(float(np.mean(np.argmax(scores, axis=1) == cls)))
    return float(np.mean(recalls))


def score(spec, trials, n_values, model_config, train_config, master_seed, workers=1):
    source, target = generate_synthetic_pair(spec)
    report = run_experiment(
        source,
        target,
        methods=[ALL_SOURCE, ALL_TARGET, FINE_TUNE, CADA],
        n_values=n_values,
        trials=trials,
        folds=5,
        master_seed=master_seed,
        model_config=model_config,
        train_config=train_config,
        workers=workers,
    )
    out = {
        "all_source": report.cell(ALL_SOURCE, 0).mean_ua,
        "all_target": report.cell(ALL_TARGET, 0).mean_ua,
    }
    for n in n_values:
        out[f"cada@{n}"] = report.cell(CADA, n).mean_ua
        out[f"fine-tune@{n}"] = report.cell(FINE_TUNE, n).mean_ua
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full", action="store_true", help="20-trial scoring run")
    parser.add_argument("--rotation", type=float, default=None)
    parser.add_argument("--offset-scale", type=float, default=None)
    parser.add_argument("--inflation", type=float, default=None)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--trials", type=int, default=6)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=20260810)
    args = parser.parse_args()

    model_config = ModelConfig(input_dim=6, hidden_dim=args.hidden, num_classes=2)
    train_config = TrainConfig(max_epochs=300, patience=20)

    if args.rotation is not None:
        candidates = [(args.rotation, args.offset_scale or 1.0, args.inflation or 1.3)]
    else:
        candidates = [
            (rot, off, infl)
            for rot in (1.2, 1.35, 1.45, 1.571)
            for off in (1.0, 1.6)
            for infl in (1.3,)
        ]

    n_values = [1, 2, 3, 4, 5, 6] if args.full else [4]
    trials = 20 if args.full else args.trials

    for rot, off, infl in candidates:
        spec = make_spec(rot, off, infl)
        t0 = time.time()
        ua = bayes_ua(spec)
        result = score(
            spec, trials, n_values, model_config, train_config, args.seed, args.workers
        )
        took = time.time() - t0
        summary = " ".join(f"{k}={v:.3f}" for k, v in result.items())
        print(
            f"rot={rot:.3f} off={off:.2f} infl={infl:.2f} bayes={ua:.3f} "
            f"{summary} [{took:.0f}s]"
        )
        if args.full:
            print(json.dumps(spec.to_dict(), indent=2))


if __name__ == "__main__":
    main()
