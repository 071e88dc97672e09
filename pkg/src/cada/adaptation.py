"""Training procedures: the class-wise adversarial loop and its baselines.

All procedures expect features that are already normalized; the experiment
harness owns normalization so that fit/apply boundaries stay in one place.
Losses are cross-entropies in sum convention; gradients are divided by the
batch size before each optimizer step, so the learning rate does not
depend on batch size.

The adversarial procedure alternates two updates. First the whole model
is trained to separate the 2K domain-class categories. Then, with the
predictor frozen, only the encoder is updated against domain-swapped
category targets, pushing each class's target examples toward the same
class's source region in feature space. Early stopping watches the
category loss on a holdout carved from the source side; the handful of
labeled target examples all stay in the fit pool.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .backends import active
from .datasets import SOURCE, TARGET, adversarial_relabel, holdout_split, relabel
from .model import init_params
from .numerics import one_hot
from .optimizer import Adam, AdamConfig, NonFiniteGradientError


class TrainingError(RuntimeError):
    """Training hit a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 500
    patience: int = 20
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    holdout_fraction: float = 0.10
    min_holdout_examples: int = 10  # below this, fixed budget instead of holdout
    fallback_epochs: int = 100  # budget used when no holdout is possible
    split_stage_optimizer: bool = True  # encoder moments per stage vs shared
    alternation: str = "batch"  # "batch": both stages per mini-batch; "epoch"
    target_oversample: int = 1  # copies of each target example in the pool

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.alternation not in ("batch", "epoch"):
            raise ValueError(f"alternation must be 'batch' or 'epoch', got {self.alternation!r}")
        if self.target_oversample < 1:
            raise ValueError("target_oversample must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")


@dataclass
class TrainHistory:
    """Per-epoch losses (mean per example) and the selected epoch.

    ``ld_holdout`` is NaN when the run had no holdout (then the chosen
    epoch is simply the last one); ``la_fit`` is NaN for non-adversarial
    runs. With a holdout, ``chosen_epoch`` is the argmin of ``ld_holdout``,
    earliest on ties, and the returned parameters are that epoch's
    snapshot.
    """

    ld_fit: np.ndarray
    ld_holdout: np.ndarray
    la_fit: np.ndarray
    chosen_epoch: int

    @property
    def n_epochs(self):
        return len(self.ld_fit)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,ld_fit,ld_holdout,la_fit\n")
            for e in range(self.n_epochs):
                fh.write(
                    f"{e},{float(self.ld_fit[e])!r},"
                    f"{float(self.ld_holdout[e])!r},{float(self.la_fit[e])!r}\n"
                )


def _subseeds(seed, n):
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def compute_ld(params, features, category_onehots):
    """Summed cross-entropy of the model's category predictions."""
    features = np.asarray(features, dtype=np.float64)
    category_onehots = np.asarray(category_onehots, dtype=np.float64)
    if category_onehots.shape != (features.shape[0], params.num_outputs):
        raise ValueError(
            f"targets {category_onehots.shape} do not match "
            f"{features.shape[0]} examples x {params.num_outputs} outputs"
        )
    _, probs = active.mlp_forward(
        features, params.w_enc, params.b_enc, params.w_pred, params.b_pred
    )
    return active.cross_entropy_sum(probs, category_onehots)


def compute_la(params, features, categories, num_classes):
    """Adversarial loss: the category loss against domain-swapped labels."""
    swapped = adversarial_relabel(np.asarray(categories, dtype=np.int64), num_classes)
    return compute_ld(params, features, one_hot(swapped, 2 * num_classes))


def _mean_ld(params, features, onehots):
    return compute_ld(params, features, onehots) / len(features)


class _EarlyStop:
    """Min-tracking with patience; snapshots the best parameters."""

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_params = None

    def update(self, epoch, loss, params):
        """Record the epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_params = params.copy()
        return epoch - self.best_epoch >= self.patience


def _check_finite(value, what, epoch):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}")


def _batches(order, batch_size):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _fit_loop(params, fit_x, fit_t, hold_x, hold_t, cfg, shuffle_seed, max_epochs):
    """Single-objective training with optional holdout-based early stopping.

    Mutates ``params`` in place and returns (params, TrainHistory). When
    ``hold_x`` is None the loop runs exactly ``max_epochs`` epochs.
    """
    rng = np.random.default_rng(shuffle_seed)
    adam = Adam(params.tensors(), cfg.adam)
    use_holdout = hold_x is not None
    stopper = _EarlyStop(cfg.patience) if use_holdout else None
    ld_fit, ld_hold = [], []
    n = len(fit_x)
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        for batch_no, sel in enumerate(_batches(order, cfg.batch_size)):
            bx, bt = fit_x[sel], fit_t[sel]
            hidden, probs = active.mlp_forward(
                bx, params.w_enc, params.b_enc, params.w_pred, params.b_pred
            )
            grads = active.mlp_backward(bx, hidden, probs, bt, params.w_pred)
            try:
                adam.step([g / len(sel) for g in grads])
            except NonFiniteGradientError as err:
                raise TrainingError(
                    f"epoch {epoch}, batch {batch_no}: {err}"
                ) from err
        fit_loss = _mean_ld(params, fit_x, fit_t)
        _check_finite(fit_loss, "fit loss", epoch)
        ld_fit.append(fit_loss)
        if use_holdout:
            hold_loss = _mean_ld(params, hold_x, hold_t)
            _check_finite(hold_loss, "holdout loss", epoch)
            ld_hold.append(hold_loss)
            if stopper.update(epoch, hold_loss, params):
                break
        else:
            ld_hold.append(np.nan)
    if use_holdout and stopper.best_params is not None:
        for dst, src in zip(params.tensors(), stopper.best_params.tensors()):
            dst[:] = src
        chosen = stopper.best_epoch
    else:
        chosen = len(ld_fit) - 1
    history = TrainHistory(
        ld_fit=np.array(ld_fit),
        ld_holdout=np.array(ld_hold),
        la_fit=np.full(len(ld_fit), np.nan),
        chosen_epoch=chosen,
    )
    return params, history


def _train_plain(features, labels, model_config, cfg):
    """K-way supervised training from fresh parameters."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    model_config = replace(model_config, domain_categories=False)
    init_seed, shuffle_seed, holdout_seed = _subseeds(cfg.seed, 3)
    params = init_params(model_config, init_seed)
    width = model_config.num_outputs
    if len(features) >= cfg.min_holdout_examples:
        fit_idx, hold_idx = holdout_split(labels, cfg.holdout_fraction, holdout_seed)
        fit_x, hold_x = features[fit_idx], features[hold_idx]
        fit_t = one_hot(labels[fit_idx], width)
        hold_t = one_hot(labels[hold_idx], width)
        max_epochs = cfg.max_epochs
    else:
        fit_x, fit_t = features, one_hot(labels, width)
        hold_x = hold_t = None
        max_epochs = min(cfg.fallback_epochs, cfg.max_epochs)
    return _fit_loop(params, fit_x, fit_t, hold_x, hold_t, cfg, shuffle_seed, max_epochs)


def train_source_only(source, model_config, cfg):
    """Baseline: supervised training on the source corpus alone."""
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    return _train_plain(source.features, source.labels, model_config, cfg)


def train_target_only(target_subset, model_config, cfg):
    """Baseline: supervised training on (all or few) labeled target data."""
    if len(target_subset) == 0:
        raise ValueError("target subset is empty")
    counts = target_subset.class_counts()
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"target subset is missing classes {missing}")
    return _train_plain(target_subset.features, target_subset.labels, model_config, cfg)


def train_finetune(source, target_examples, model_config, cfg):
    """Baseline: source training followed by a target-only refinement pass.

    Phase two updates all parameters with a fresh optimizer. It early-stops
    on a target holdout when at least ``min_holdout_examples`` target rows
    exist, otherwise it runs the fixed ``fallback_epochs`` budget. With a
    zero fallback budget and few target rows this degenerates to the
    source-only baseline exactly.
    """
    _check_adaptation_inputs(source, target_examples)
    params, _ = train_source_only(source, model_config, cfg)
    phase2_shuffle, phase2_holdout = _subseeds(cfg.seed, 5)[3:]
    width = params.num_outputs
    features = target_examples.features
    labels = target_examples.labels
    if len(features) >= cfg.min_holdout_examples:
        fit_idx, hold_idx = holdout_split(labels, cfg.holdout_fraction, phase2_holdout)
        fit_x, hold_x = features[fit_idx], features[hold_idx]
        fit_t = one_hot(labels[fit_idx], width)
        hold_t = one_hot(labels[hold_idx], width)
        max_epochs = cfg.max_epochs
    else:
        fit_x, fit_t = features, one_hot(labels, width)
        hold_x = hold_t = None
        max_epochs = min(cfg.fallback_epochs, cfg.max_epochs)
    return _fit_loop(
        params, fit_x, fit_t, hold_x, hold_t, cfg, phase2_shuffle, max_epochs
    )


def _check_adaptation_inputs(source, target_examples):
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if source.num_classes != target_examples.num_classes:
        raise ValueError("source and target disagree on the number of classes")
    counts = target_examples.class_counts()
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"target examples are missing classes {missing}")
    if source.feature_dim != target_examples.feature_dim:
        raise ValueError(
            f"feature dims differ: source {source.feature_dim}, "
            f"target {target_examples.feature_dim}"
        )


def train_cada(source, target_examples, model_config, cfg, observer=None):
    """Two-stage class-wise adversarial training.

    Returns (params, history). ``observer``, when given, is called after
    every encoder-only update as ``observer(epoch, batch_no, w_pred_before,
    b_pred_before, params)`` so callers can verify the predictor stayed
    frozen through stage two.
    """
    _check_adaptation_inputs(source, target_examples)
    num_classes = source.num_classes
    model_config = replace(
        model_config, num_classes=num_classes, domain_categories=True
    )
    init_seed, shuffle_seed, holdout_seed = _subseeds(cfg.seed, 3)
    params = init_params(model_config, init_seed)
    width = model_config.num_categories

    source_cats = relabel(source.labels, SOURCE, num_classes)
    target_cats = relabel(target_examples.labels, TARGET, num_classes)

    # Early stopping watches held-out source examples; the few labeled
    # target examples are too precious to hold out and stay in the pool.
    if len(source) >= cfg.min_holdout_examples:
        fit_idx, hold_idx = holdout_split(
            source.labels, cfg.holdout_fraction, holdout_seed
        )
        hold_x = source.features[hold_idx]
        hold_t = one_hot(source_cats[hold_idx], width)
        max_epochs = cfg.max_epochs
        use_holdout = True
    else:
        fit_idx = np.arange(len(source))
        hold_x = hold_t = None
        max_epochs = min(cfg.fallback_epochs, cfg.max_epochs)
        use_holdout = False

    reps = cfg.target_oversample
    pool_x = np.vstack([source.features[fit_idx]] + [target_examples.features] * reps)
    pool_cats = np.concatenate([source_cats[fit_idx]] + [target_cats] * reps)
    pool_t = one_hot(pool_cats, width)
    pool_adv_t = one_hot(adversarial_relabel(pool_cats, num_classes), width)

    rng = np.random.default_rng(shuffle_seed)
    # Splitting the optimizer over encoder/predictor groups is equivalent
    # to one instance over all four tensors (Adam is per-scalar and the
    # step counters advance together), and it lets the encoder-only stage
    # either carry its own moments (default) or share stage one's.
    adam_enc = Adam(params.encoder_tensors(), cfg.adam)
    adam_pred = Adam(params.predictor_tensors(), cfg.adam)
    adam_enc_stage2 = (
        Adam(params.encoder_tensors(), cfg.adam)
        if cfg.split_stage_optimizer
        else adam_enc
    )

    def category_step(sel, epoch, batch_no):
        bx, bt = pool_x[sel], pool_t[sel]
        hidden, probs = active.mlp_forward(
            bx, params.w_enc, params.b_enc, params.w_pred, params.b_pred
        )
        grads = active.mlp_backward(bx, hidden, probs, bt, params.w_pred)
        try:
            adam_enc.step([grads[0] / len(sel), grads[1] / len(sel)])
            adam_pred.step([grads[2] / len(sel), grads[3] / len(sel)])
        except NonFiniteGradientError as err:
            raise TrainingError(f"epoch {epoch}, batch {batch_no}: {err}") from err

    def adversarial_step(sel, epoch, batch_no):
        bx, bt = pool_x[sel], pool_adv_t[sel]
        if observer is not None:
            wp_before = params.w_pred.copy()
            bp_before = params.b_pred.copy()
        hidden, probs = active.mlp_forward(
            bx, params.w_enc, params.b_enc, params.w_pred, params.b_pred
        )
        d_w_enc, d_b_enc, _, _ = active.mlp_backward(
            bx, hidden, probs, bt, params.w_pred
        )
        try:
            adam_enc_stage2.step([d_w_enc / len(sel), d_b_enc / len(sel)])
        except NonFiniteGradientError as err:
            raise TrainingError(f"epoch {epoch}, batch {batch_no}: {err}") from err
        if observer is not None:
            observer(epoch, batch_no, wp_before, bp_before, params)

    stopper = _EarlyStop(cfg.patience) if use_holdout else None
    ld_fit, ld_hold, la_fit = [], [], []
    n_pool = len(pool_x)
    for epoch in range(max_epochs):
        order = rng.permutation(n_pool)
        if cfg.alternation == "batch":
            for batch_no, sel in enumerate(_batches(order, cfg.batch_size)):
                category_step(sel, epoch, batch_no)
                adversarial_step(sel, epoch, batch_no)
        else:
            for batch_no, sel in enumerate(_batches(order, cfg.batch_size)):
                category_step(sel, epoch, batch_no)
            for batch_no, sel in enumerate(_batches(order, cfg.batch_size)):
                adversarial_step(sel, epoch, batch_no)
        fit_loss = _mean_ld(params, pool_x, pool_t)
        adv_loss = _mean_ld(params, pool_x, pool_adv_t)
        _check_finite(fit_loss, "fit loss", epoch)
        _check_finite(adv_loss, "adversarial loss", epoch)
        ld_fit.append(fit_loss)
        la_fit.append(adv_loss)
        if use_holdout:
            hold_loss = _mean_ld(params, hold_x, hold_t)
            _check_finite(hold_loss, "holdout loss", epoch)
            ld_hold.append(hold_loss)
            if stopper.update(epoch, hold_loss, params):
                break
        else:
            ld_hold.append(np.nan)
    if use_holdout and stopper.best_params is not None:
        for dst, src in zip(params.tensors(), stopper.best_params.tensors()):
            dst[:] = src
        chosen = stopper.best_epoch
    else:
        chosen = len(ld_fit) - 1
    history = TrainHistory(
        ld_fit=np.array(ld_fit),
        ld_holdout=np.array(ld_hold),
        la_fit=np.array(la_fit),
        chosen_epoch=chosen,
    )
    return params, history
