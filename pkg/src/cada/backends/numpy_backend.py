"""Pure-numpy compute kernels.

These are the reference implementations of every hot kernel. The numba
backend mirrors this module function-for-function; training code calls
whichever module :mod:`cada.backends` selected at import time.

No argument validation happens here. Callers (the public ops in
:mod:`cada.numerics` and the training loops) are responsible for shapes
and finiteness.
"""

import numpy as np

NAME = "numpy"

PROB_FLOOR = 1e-12  # clamp applied before log so confident mistakes stay finite


def affine(x, w, b):
    return x @ w + b


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_sum(probs, targets):
    clamped = np.maximum(probs, PROB_FLOOR)
    return float(-(targets * np.log(clamped)).sum())


def mlp_forward(x, w_enc, b_enc, w_pred, b_pred):
    """Forward pass of the one-hidden-layer net: returns (hidden, probs)."""
    hidden = relu(x @ w_enc + b_enc)
    probs = softmax(hidden @ w_pred + b_pred)
    return hidden, probs


def mlp_backward(x, hidden, probs, targets, w_pred):
    """Gradients of the summed cross-entropy w.r.t. all four parameter tensors.

    `hidden` and `probs` must come from `mlp_forward` on the same inputs.
    Returns (d_w_enc, d_b_enc, d_w_pred, d_b_pred) in sum-over-batch
    convention; divide by the batch size before an optimizer step.
    """
    delta = probs - targets
    d_w_pred = hidden.T @ delta
    d_b_pred = delta.sum(axis=0)
    d_hidden = delta @ w_pred.T
    d_hidden = np.where(hidden > 0.0, d_hidden, 0.0)
    d_w_enc = x.T @ d_hidden
    d_b_enc = d_hidden.sum(axis=0)
    return d_w_enc, d_b_enc, d_w_pred, d_b_pred


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step, applied in place to `param`, `m`, `v`."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def warmup():
    """No-op; mirrors the numba backend's JIT warmup hook."""
