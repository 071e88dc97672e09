"""Dense forward/backward math for the one-hidden-layer ReLU classifier.

All public functions take and return plain float64 ``numpy`` arrays
(row-major, examples along axis 0) and validate shapes and finiteness up
front, so the kernels underneath can stay check-free. Losses follow the
sum-over-batch convention; training divides by the batch size before the
optimizer step so the learning rate is batch-size invariant.
"""

from dataclasses import dataclass

import numpy as np

from .backends import active, numpy_backend

PROB_FLOOR = numpy_backend.PROB_FLOOR


class DimensionError(ValueError):
    """Operand shapes do not conform."""


def as_matrix(x, name="input"):
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _require_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def affine_forward(x, weights, bias):
    """Batched affine map ``x @ weights + bias``."""
    x = as_matrix(x, "input")
    weights = as_matrix(weights, "weights")
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"input width {x.shape} does not match weights {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise DimensionError(
            f"bias shape {bias.shape} does not match weights {weights.shape}"
        )
    _require_finite(x, "input")
    _require_finite(weights, "weights")
    _require_finite(bias, "bias")
    return numpy_backend.affine(x, weights, bias)


def relu(x):
    """Elementwise max(0, x)."""
    x = as_matrix(x)
    _require_finite(x, "input")
    return numpy_backend.relu(x)


def softmax(logits):
    """Row-wise softmax, computed with max-subtraction for stability."""
    logits = as_matrix(logits, "logits")
    _require_finite(logits, "logits")
    return numpy_backend.softmax(logits)


def cross_entropy(probabilities, targets):
    """Summed cross-entropy of probability rows against one-hot targets.

    Probabilities are clamped to ``PROB_FLOOR`` before the log, so a
    confident wrong prediction yields a large finite loss rather than inf.
    """
    probabilities = as_matrix(probabilities, "probabilities")
    targets = as_matrix(targets, "targets")
    if probabilities.shape != targets.shape:
        raise DimensionError(
            f"probabilities {probabilities.shape} and targets {targets.shape} differ"
        )
    row_sums = probabilities.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    if np.any((targets != 0.0) & (targets != 1.0)) or not np.all(
        targets.sum(axis=1) == 1.0
    ):
        raise ValueError("targets must be one-hot rows")
    return numpy_backend.cross_entropy_sum(probabilities, targets)


def one_hot(labels, width):
    """One-hot matrix for integer labels in [0, width)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        raise ValueError(f"labels must lie in [0, {width})")
    out = np.zeros((labels.size, width), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def backward_pass(batch, targets, params):
    """Analytic gradients of the summed cross-entropy for every tensor.

    Returns a :class:`cada.model.Gradients` tuple matching the layout of
    ``params``. Sum convention: the result scales linearly with duplicated
    rows in the batch.
    """
    from .model import Gradients

    batch = as_matrix(batch, "batch")
    targets = as_matrix(targets, "targets")
    if batch.shape[1] != params.w_enc.shape[0]:
        raise DimensionError(
            f"batch width {batch.shape} does not match encoder {params.w_enc.shape}"
        )
    if targets.shape != (batch.shape[0], params.w_pred.shape[1]):
        raise DimensionError(
            f"targets {targets.shape} do not match predictor {params.w_pred.shape}"
        )
    hidden, probs = active.mlp_forward(
        batch, params.w_enc, params.b_enc, params.w_pred, params.b_pred
    )
    grads = active.mlp_backward(batch, hidden, probs, targets, params.w_pred)
    return Gradients(*grads)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    parameter_count: int


def finite_difference_check(params, batch, targets, epsilon=1e-5):
    """Compare analytic gradients against central finite differences.

    Perturbs every parameter scalar by +/- epsilon and reports the worst
    relative error, with the denominator floored at 1e-6 so near-zero
    gradients do not blow the ratio up.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in (0, 1e-2], got {epsilon}")
    batch = as_matrix(batch, "batch")
    targets = as_matrix(targets, "targets")
    analytic = backward_pass(batch, targets, params)

    def loss_at(p):
        _, probs = active.mlp_forward(batch, p.w_enc, p.b_enc, p.w_pred, p.b_pred)
        return active.cross_entropy_sum(probs, targets)

    worst = 0.0
    count = 0
    for tensor, grad in zip(params.tensors(), analytic):
        flat = tensor.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_at(params)
            flat[i] = orig - epsilon
            down = loss_at(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(numeric), abs(gflat[i]), 1e-6)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
            count += 1
    return GradCheckReport(max_relative_error=worst, parameter_count=count)
