"""Numba-compiled compute kernels.

Same call signatures and semantics as :mod:`cada.backends.numpy_backend`.
The win over numpy at this problem scale (batches of 64, feature dims in
the tens, hidden widths in the tens to hundreds) comes from fusing the
elementwise work into the matmul calls, removing per-op dispatch overhead
inside the training loops.

Results match the numpy backend to float64 rounding, not bit-exactly:
summation order differs in the reductions.
"""

import numpy as np
from numba import njit

NAME = "numba"

PROB_FLOOR = 1e-12


@njit(cache=True)
def mlp_forward(x, w_enc, b_enc, w_pred, b_pred):
    hidden = np.dot(x, w_enc)
    n, h = hidden.shape
    for i in range(n):
        for j in range(h):
            val = hidden[i, j] + b_enc[j]
            hidden[i, j] = val if val > 0.0 else 0.0
    logits = np.dot(hidden, w_pred)
    c = logits.shape[1]
    probs = np.empty_like(logits)
    for i in range(n):
        mx = logits[i, 0] + b_pred[0]
        for j in range(c):
            val = logits[i, j] + b_pred[j]
            probs[i, j] = val
            if val > mx:
                mx = val
        total = 0.0
        for j in range(c):
            e = np.exp(probs[i, j] - mx)
            probs[i, j] = e
            total += e
        for j in range(c):
            probs[i, j] /= total
    return hidden, probs


@njit(cache=True)
def cross_entropy_sum(probs, targets):
    n, c = probs.shape
    loss = 0.0
    for i in range(n):
        for j in range(c):
            if targets[i, j] != 0.0:
                p = probs[i, j]
                if p < PROB_FLOOR:
                    p = PROB_FLOOR
                loss -= targets[i, j] * np.log(p)
    return loss


@njit(cache=True)
def mlp_backward(x, hidden, probs, targets, w_pred):
    delta = probs - targets
    d_w_pred = np.dot(hidden.T, delta)
    d_b_pred = np.sum(delta, axis=0)
    d_hidden = np.dot(delta, w_pred.T)
    n, h = d_hidden.shape
    for i in range(n):
        for j in range(h):
            if hidden[i, j] <= 0.0:
                d_hidden[i, j] = 0.0
    d_w_enc = np.dot(x.T, d_hidden)
    d_b_enc = np.sum(d_hidden, axis=0)
    return d_w_enc, d_b_enc, d_w_pred, d_b_pred


@njit(cache=True)
def _adam_update_flat(param, grad, m, v, t, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(param.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        param[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    # Flat views keep one compiled specialization for 1-D and 2-D tensors.
    # The update must happen in place, so the state arrays have to reshape
    # into views rather than copies.
    if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update requires C-contiguous state arrays")
    _adam_update_flat(
        param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
        m.reshape(-1), v.reshape(-1), t, lr, beta1, beta2, eps,
    )


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    x = np.ones((2, 3))
    w1 = np.ones((3, 4))
    b1 = np.zeros(4)
    w2 = np.ones((4, 2))
    b2 = np.zeros(2)
    hidden, probs = mlp_forward(x, w1, b1, w2, b2)
    t = np.zeros((2, 2))
    t[:, 0] = 1.0
    cross_entropy_sum(probs, t)
    mlp_backward(x, hidden, probs, t, w2)
    p = np.zeros(3)
    adam_update(p, np.ones(3), np.zeros(3), np.zeros(3), 1, 0.001, 0.9, 0.999, 1e-8)
