"""Encoder-predictor MLP with domain-class categories.

The classifier has one hidden ReLU layer. In adaptation mode its output
layer has ``2 * num_classes`` units: one category per (class, domain)
pair, ordered source classes first (categories ``0 .. K-1``) then target
classes (``K .. 2K-1``). Plain mode (used by the non-adversarial
baselines) outputs ``num_classes`` units. Test-time predictions collapse
a category back to its class via ``category % K``, so the same predict
path serves both modes.
"""

import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .backends import active
from .numerics import DimensionError, as_matrix

MODEL_MAGIC = b"CADA-MLP1\n"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 256
    num_classes: int = 2
    domain_categories: bool = True  # False: plain K-way classifier

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    @property
    def num_categories(self):
        return 2 * self.num_classes

    @property
    def num_outputs(self):
        return self.num_categories if self.domain_categories else self.num_classes


class Gradients(NamedTuple):
    w_enc: np.ndarray
    b_enc: np.ndarray
    w_pred: np.ndarray
    b_pred: np.ndarray


@dataclass
class ModelParams:
    w_enc: np.ndarray  # input_dim x hidden_dim
    b_enc: np.ndarray  # hidden_dim
    w_pred: np.ndarray  # hidden_dim x num_outputs
    b_pred: np.ndarray  # num_outputs

    @property
    def input_dim(self):
        return self.w_enc.shape[0]

    @property
    def hidden_dim(self):
        return self.w_enc.shape[1]

    @property
    def num_outputs(self):
        return self.w_pred.shape[1]

    def tensors(self):
        return (self.w_enc, self.b_enc, self.w_pred, self.b_pred)

    def encoder_tensors(self):
        return (self.w_enc, self.b_enc)

    def predictor_tensors(self):
        return (self.w_pred, self.b_pred)

    def copy(self):
        return ModelParams(*(t.copy() for t in self.tensors()))

    def all_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.tensors())


def init_params(config, seed):
    """Fresh parameters: uniform Glorot weights, zero biases.

    Weights are drawn from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    encoder first, so a fixed seed gives bit-identical parameters.
    """
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return ModelParams(
        w_enc=glorot(config.input_dim, config.hidden_dim),
        b_enc=np.zeros(config.hidden_dim),
        w_pred=glorot(config.hidden_dim, config.num_outputs),
        b_pred=np.zeros(config.num_outputs),
    )


def forward(params, batch):
    """Category probabilities for a batch: softmax(W_p·relu(W_e·x + b_e) + b_p)."""
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != params.input_dim:
        raise DimensionError(
            f"batch width {batch.shape[1]} does not match model input_dim "
            f"{params.input_dim}"
        )
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite values")
    _, probs = active.mlp_forward(
        batch, params.w_enc, params.b_enc, params.w_pred, params.b_pred
    )
    return probs


def collapse_prediction(category, num_classes):
    """Map a domain-class category in [0, 2K) to its class: category mod K."""
    category = int(category)
    if not 0 <= category < 2 * num_classes:
        raise ValueError(
            f"category {category} out of range [0, {2 * num_classes})"
        )
    return category % num_classes


def predict_classes(params, batch, num_classes):
    """Argmax category per row (ties: lowest index), collapsed to a class."""
    probs = forward(params, batch)
    return np.argmax(probs, axis=1) % num_classes


def save_params(path, params, num_classes, seed, feature_min=None, feature_max=None):
    """Write a versioned flat binary parameter dump.

    Layout: 10-byte magic, then six little-endian int64 header fields
    (input_dim, hidden_dim, num_classes, num_outputs, seed, has_stats),
    then the four tensors as row-major float64, then, when present, the
    per-feature normalization min and max vectors.
    """
    header = struct.pack(
        "<6q",
        params.input_dim,
        params.hidden_dim,
        num_classes,
        params.num_outputs,
        seed,
        1 if feature_min is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(header)
        for tensor in params.tensors():
            fh.write(np.ascontiguousarray(tensor, dtype=np.float64).tobytes())
        if feature_min is not None:
            fh.write(np.ascontiguousarray(feature_min, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(feature_max, dtype=np.float64).tobytes())


def load_params(path):
    """Read a dump written by :func:`save_params`.

    Returns (params, meta) where meta holds num_classes, seed and the
    normalization vectors (None when absent).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a model file (bad magic)")
    offset = len(MODEL_MAGIC)
    input_dim, hidden_dim, num_classes, num_outputs, seed, has_stats = struct.unpack_from(
        "<6q", blob, offset
    )
    offset += struct.calcsize("<6q")

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        return arr.copy()

    params = ModelParams(
        w_enc=take((input_dim, hidden_dim)),
        b_enc=take((hidden_dim,)),
        w_pred=take((hidden_dim, num_outputs)),
        b_pred=take((num_outputs,)),
    )
    feature_min = feature_max = None
    if has_stats:
        feature_min = take((input_dim,))
        feature_max = take((input_dim,))
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes, file corrupt")
    meta = {
        "num_classes": int(num_classes),
        "seed": int(seed),
        "feature_min": feature_min,
        "feature_max": feature_max,
    }
    return params, meta
