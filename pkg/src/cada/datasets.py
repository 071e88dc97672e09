"""Feature tables, label algebra, splits, and the synthetic benchmark pair.

Feature CSV schema (header required, UTF-8, comma separated, '.' decimal
point)::

    utterance_id,speaker_id,label,f1,...,fD

``label`` is an integer in [0, K). Files are rejected, never repaired, on
the first malformed row; silent imputation would corrupt benchmarks.

Category convention for the domain-class discriminator: a class ``k`` from
the source domain maps to category ``k``; from the target domain to
``K + k``. The adversarial swap moves a category to the other domain while
preserving its class.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

SOURCE = "source"
TARGET = "target"

_FIXED_COLUMNS = ("utterance_id", "speaker_id", "label")


class FeatureTableError(ValueError):
    """A feature CSV violates the schema."""


@dataclass
class DomainDataset:
    """One corpus: features, class labels, speaker ids and a domain tag."""

    features: np.ndarray  # N x D float64
    labels: np.ndarray  # N int64, values in [0, num_classes)
    speaker_ids: np.ndarray  # N strings
    domain: str  # "source" or "target"
    name: str
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.speaker_ids = np.asarray(self.speaker_ids)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.speaker_ids.shape != (n,):
            raise ValueError(
                f"row counts differ: {n} features, {self.labels.shape[0]} labels, "
                f"{self.speaker_ids.shape[0]} speakers"
            )
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        present = set(np.unique(self.labels).tolist())
        missing = sorted(set(range(self.num_classes)) - present)
        if missing:
            warnings.warn(
                f"{self.name}: classes {missing} have no examples", stacklevel=2
            )

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return DomainDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            speaker_ids=self.speaker_ids[indices],
            domain=self.domain,
            name=name or self.name,
            num_classes=self.num_classes,
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def load_feature_csv(path, domain, num_classes, expected_features=None, name=None):
    """Parse a feature CSV into a :class:`DomainDataset`.

    Raises :class:`FeatureTableError` naming the offending file line for a
    missing column, a non-numeric or non-finite feature, or a label
    outside [0, num_classes).
    """
    rows = []
    labels = []
    speakers = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FeatureTableError(f"{path}: empty file") from None
        if tuple(header[:3]) != _FIXED_COLUMNS:
            raise FeatureTableError(
                f"{path}: header must start with {','.join(_FIXED_COLUMNS)}, "
                f"got {header[:3]}"
            )
        width = len(header) - 3
        if width < 1:
            raise FeatureTableError(f"{path}: no feature columns in header")
        if expected_features is not None and width != expected_features:
            raise FeatureTableError(
                f"{path}: expected {expected_features} feature columns, found {width}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FeatureTableError(
                    f"{path}:{line_no}: expected {len(header)} columns, got {len(row)}"
                )
            try:
                label = int(row[2])
            except ValueError:
                raise FeatureTableError(
                    f"{path}:{line_no}: label {row[2]!r} is not an integer"
                ) from None
            if not 0 <= label < num_classes:
                raise FeatureTableError(
                    f"{path}:{line_no}: label {label} outside [0, {num_classes})"
                )
            try:
                values = [float(v) for v in row[3:]]
            except ValueError:
                raise FeatureTableError(
                    f"{path}:{line_no}: non-numeric feature value"
                ) from None
            if not all(np.isfinite(values)):
                raise FeatureTableError(f"{path}:{line_no}: non-finite feature value")
            rows.append(values)
            labels.append(label)
            speakers.append(row[1])
    if not rows:
        raise FeatureTableError(f"{path}: no data rows")
    return DomainDataset(
        features=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        speaker_ids=np.array(speakers),
        domain=domain,
        name=name or str(path),
        num_classes=num_classes,
    )


def write_feature_csv(path, dataset, utterance_ids=None):
    """Write a dataset back out in the feature CSV schema (repr floats)."""
    n, d = dataset.features.shape
    if utterance_ids is None:
        utterance_ids = [f"{dataset.domain}_{i:05d}" for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_FIXED_COLUMNS) + [f"f{j + 1}" for j in range(d)])
        for i in range(n):
            writer.writerow(
                [utterance_ids[i], str(dataset.speaker_ids[i]), int(dataset.labels[i])]
                + [repr(float(v)) for v in dataset.features[i]]
            )


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationStats:
    feature_min: np.ndarray
    feature_max: np.ndarray

    def __post_init__(self):
        if np.any(self.feature_min > self.feature_max):
            raise ValueError("feature_min must be <= feature_max")


def fit_normalization(features):
    """Per-feature min/max over the fitting set."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("need at least one row of features")
    return NormalizationStats(
        feature_min=features.min(axis=0), feature_max=features.max(axis=0)
    )


def apply_normalization(features, stats):
    """Rescale to [-1, 1]: x' = 2(x - min)/(max - min) - 1.

    Constant features map to 0; values outside the fitted range (possible
    for held-out data) are clamped to [-1, 1].
    """
    features = np.asarray(features, dtype=np.float64)
    span = stats.feature_max - stats.feature_min
    safe_span = np.where(span > 0.0, span, 1.0)
    scaled = 2.0 * (features - stats.feature_min) / safe_span - 1.0
    scaled = np.where(span > 0.0, scaled, 0.0)
    return np.clip(scaled, -1.0, 1.0)


# ---------------------------------------------------------------------------
# label algebra


def relabel(class_label, domain, num_classes):
    """Domain-class category for a class label: source k -> k, target k -> K + k.

    Accepts scalars or integer arrays.
    """
    label = np.asarray(class_label, dtype=np.int64)
    if np.any(label < 0) or np.any(label >= num_classes):
        raise ValueError(f"class label outside [0, {num_classes})")
    if domain == SOURCE:
        offset = 0
    elif domain == TARGET:
        offset = num_classes
    else:
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    out = label + offset
    return int(out) if np.isscalar(class_label) else out


def adversarial_relabel(category, num_classes):
    """Swap a category's domain, preserving its class.

    Categories below K (source) move to K + k; categories at or above K
    (target) move back to k. An involution by construction.
    """
    cat = np.asarray(category, dtype=np.int64)
    if np.any(cat < 0) or np.any(cat >= 2 * num_classes):
        raise ValueError(f"category outside [0, {2 * num_classes})")
    out = np.where(cat < num_classes, cat + num_classes, cat - num_classes)
    return int(out) if np.isscalar(category) else out


# ---------------------------------------------------------------------------
# splits and sampling


def speaker_kfold(dataset, folds=5, seed=0, speaker_disjoint=False):
    """Deterministic k-fold partition of a dataset's indices.

    Default mode is a class-stratified utterance-level split, speakers
    free to appear in both sides of a fold. With ``speaker_disjoint`` the
    folds are built from whole speakers instead (balanced greedily by
    size), and exact class stratification is no longer guaranteed.

    Returns a list of (train_indices, test_indices) pairs; the test sides
    are disjoint and cover every index exactly once.
    """
    n = len(dataset)
    if n < folds:
        raise ValueError(f"cannot make {folds} folds from {n} examples")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    if speaker_disjoint:
        speakers = {}
        for i, spk in enumerate(dataset.speaker_ids):
            speakers.setdefault(str(spk), []).append(i)
        order = sorted(speakers, key=lambda s: (-len(speakers[s]), s))
        fold_sizes = np.zeros(folds, dtype=np.int64)
        for spk in order:
            target_fold = int(np.argmin(fold_sizes))
            assignment[speakers[spk]] = target_fold
            fold_sizes[target_fold] += len(speakers[spk])
        if np.any(fold_sizes == 0):
            raise ValueError(f"not enough speakers to fill {folds} disjoint folds")
    else:
        cursor = 0  # rotates the fold that receives the next index
        for cls in range(dataset.num_classes):
            idx = np.flatnonzero(dataset.labels == cls)
            rng.shuffle(idx)
            for i in idx:
                assignment[i] = cursor % folds
                cursor += 1
    result = []
    everything = np.arange(n)
    for f in range(folds):
        test = everything[assignment == f]
        train = everything[assignment != f]
        result.append((train, test))
    return result


def holdout_split(labels, fraction=0.10, seed=0):
    """Stratified split of positions into (fit, holdout).

    Per class the holdout take is round(fraction * n_c); classes that
    would contribute nothing still give one example (with a warning)
    unless they only have one, which always stays on the fit side.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < 10:
        raise ValueError(f"need >= 10 examples to hold out, got {labels.size}")
    rng = np.random.default_rng(seed)
    fit, hold = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        take = int(round(fraction * idx.size))
        if take == 0:
            if idx.size >= 2:
                warnings.warn(
                    f"class {cls}: holdout fraction rounds to zero, keeping one",
                    stacklevel=2,
                )
                take = 1
            else:
                warnings.warn(
                    f"class {cls}: single example, kept in the fit set",
                    stacklevel=2,
                )
        take = min(take, idx.size - 1)
        hold.extend(idx[:take])
        fit.extend(idx[take:])
    return np.sort(np.array(fit, dtype=np.int64)), np.sort(
        np.array(hold, dtype=np.int64)
    )


def class_quotas(num_classes, n, count_unit="per_class"):
    """Per-class draw counts for a labeled-example budget.

    ``per_class`` takes ``n`` from every class; ``total`` spreads ``n``
    across classes as evenly as possible, requiring at least one each.
    """
    if count_unit == "per_class":
        return [n] * num_classes
    if count_unit == "total":
        if n < num_classes:
            raise ValueError(f"total budget {n} cannot cover {num_classes} classes")
        base, extra = divmod(n, num_classes)
        return [base + (1 if c < extra else 0) for c in range(num_classes)]
    raise ValueError(f"count_unit must be 'per_class' or 'total', got {count_unit!r}")


def sample_target_examples(dataset, n_per_class, seed=0, count_unit="per_class"):
    """Pick the few labeled target examples for one trial.

    ``per_class`` draws exactly ``n_per_class`` examples per class,
    uniformly without replacement. ``total`` treats the count as an overall
    budget spread as evenly as possible with at least one per class.
    Deterministic per seed; indices are returned sorted.
    """
    quotas = class_quotas(dataset.num_classes, n_per_class, count_unit)
    rng = np.random.default_rng(seed)
    chosen = []
    for cls, quota in enumerate(quotas):
        idx = np.flatnonzero(dataset.labels == cls)
        if idx.size < quota:
            raise ValueError(
                f"class {cls} has {idx.size} examples, cannot sample {quota}"
            )
        chosen.extend(rng.choice(idx, size=quota, replace=False))
    return np.sort(np.array(chosen, dtype=np.int64))


# ---------------------------------------------------------------------------
# synthetic covariate-shift benchmark


@dataclass(frozen=True)
class SyntheticShiftSpec:
    """Gaussian-cluster pair with a controlled class-conditional shift.

    Source class ``k`` is an isotropic Gaussian at ``class_means[k]`` with
    scale ``class_scales[k]``. The target domain applies, per class, a
    variance inflation, a rotation (Givens rotations by ``rotation`` rad
    on consecutive feature pairs) and a mean offset, so class geometry is
    preserved while the marginal feature distribution moves. Label priors
    are identical across domains by construction.
    """

    num_classes: int
    feature_dim: int
    class_means: tuple  # K rows of feature_dim floats
    class_scales: tuple  # K positive floats
    target_offset: tuple  # feature_dim floats
    target_rotation: float  # radians
    target_scale_multiplier: float  # variance inflation factor, > 0
    examples_per_class_source: int
    examples_per_class_target: int
    seed: int
    speaker_block: int = 5

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.shape != (self.num_classes, self.feature_dim):
            raise ValueError(
                f"class_means must be {self.num_classes} x {self.feature_dim}, "
                f"got {means.shape}"
            )
        if len(self.class_scales) != self.num_classes:
            raise ValueError("need one scale per class")
        if any(s <= 0 for s in self.class_scales):
            raise ValueError("class_scales must be positive")
        if len(self.target_offset) != self.feature_dim:
            raise ValueError("target_offset length must equal feature_dim")
        if self.target_scale_multiplier <= 0:
            raise ValueError("target_scale_multiplier must be positive")
        if self.examples_per_class_source < 1 or self.examples_per_class_target < 1:
            raise ValueError("examples per class must be >= 1")
        if self.speaker_block < 1:
            raise ValueError("speaker_block must be >= 1")

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "class_means": [list(map(float, row)) for row in self.class_means],
            "class_scales": list(map(float, self.class_scales)),
            "target_offset": list(map(float, self.target_offset)),
            "target_rotation": self.target_rotation,
            "target_scale_multiplier": self.target_scale_multiplier,
            "examples_per_class_source": self.examples_per_class_source,
            "examples_per_class_target": self.examples_per_class_target,
            "seed": self.seed,
            "speaker_block": self.speaker_block,
        }

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        kwargs = dict(data)
        kwargs["class_means"] = tuple(tuple(row) for row in kwargs["class_means"])
        kwargs["class_scales"] = tuple(kwargs["class_scales"])
        kwargs["target_offset"] = tuple(kwargs["target_offset"])
        return cls(**kwargs)

    def target_class_mean(self, cls):
        """Closed-form target mean for a class: R @ mean + offset."""
        rot = rotation_matrix(self.feature_dim, self.target_rotation)
        return rot @ np.asarray(self.class_means[cls], dtype=np.float64) + np.asarray(
            self.target_offset
        )

    def target_class_scale(self, cls):
        """Closed-form target scale: sqrt(inflation) * source scale."""
        return float(self.class_scales[cls]) * np.sqrt(self.target_scale_multiplier)


def rotation_matrix(dim, angle):
    """Block-diagonal Givens rotation: angle applied to dims (0,1), (2,3), ..."""
    rot = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for i in range(0, dim - 1, 2):
        rot[i, i] = c
        rot[i, i + 1] = -s
        rot[i + 1, i] = s
        rot[i + 1, i + 1] = c
    return rot


def _draw_domain(spec, rng, domain, per_class, transform):
    parts_x, parts_y = [], []
    for cls in range(spec.num_classes):
        mean = np.asarray(spec.class_means[cls], dtype=np.float64)
        draws = mean + spec.class_scales[cls] * rng.standard_normal(
            (per_class, spec.feature_dim)
        )
        parts_x.append(transform(draws, mean))
        parts_y.append(np.full(per_class, cls, dtype=np.int64))
    features = np.vstack(parts_x)
    labels = np.concatenate(parts_y)
    order = rng.permutation(len(labels))  # mix classes before speaker blocking
    features, labels = features[order], labels[order]
    speakers = np.array(
        [f"{domain[:3]}_spk{i // spec.speaker_block:03d}" for i in range(len(labels))]
    )
    return DomainDataset(
        features=features,
        labels=labels,
        speaker_ids=speakers,
        domain=domain,
        name=f"synthetic-{domain}",
        num_classes=spec.num_classes,
    )


def generate_synthetic_pair(spec):
    """Draw the (source, target) dataset pair described by a spec.

    Bit-identical for a fixed spec. Target examples inflate the spread
    around the exact class mean, rotate, then offset, so the target
    class-conditional of class k is
    N(R @ mean_k + offset, inflation * scale_k^2 * I).
    """
    rng = np.random.default_rng(spec.seed)
    rot = rotation_matrix(spec.feature_dim, spec.target_rotation)
    sqrt_inflation = np.sqrt(spec.target_scale_multiplier)
    offset = np.asarray(spec.target_offset, dtype=np.float64)

    def identity(draws, mean):
        return draws

    def shift(draws, mean):
        inflated = mean + sqrt_inflation * (draws - mean)
        return inflated @ rot.T + offset

    source = _draw_domain(spec, rng, SOURCE, spec.examples_per_class_source, identity)
    target = _draw_domain(spec, rng, TARGET, spec.examples_per_class_target, shift)
    return source, target
