"""Adam with the standard defaults (lr 0.001, betas 0.9/0.999, eps 1e-8).

Each training stage owns its own ``Adam`` instance so the two objectives
of the adversarial loop keep separate moment statistics; a config flag in
the training layer can share one instance instead.
"""

from dataclasses import dataclass

import numpy as np

from .backends import active


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class NonFiniteGradientError(RuntimeError):
    """A gradient tensor contained NaN or Inf."""


class Adam:
    """Adam state for a fixed group of parameter tensors.

    ``step`` applies one bias-corrected update in place to the tensors it
    was constructed over. The moment buffers mirror the tensor shapes and
    ``t`` counts completed steps.
    """

    def __init__(self, tensors, config=AdamConfig()):
        self.config = config
        self._tensors = tuple(tensors)
        self.t = 0
        self.m = tuple(np.zeros_like(p) for p in self._tensors)
        self.v = tuple(np.zeros_like(p) for p in self._tensors)

    def step(self, grads):
        """One update from gradients matching the construction-time tensors."""
        grads = tuple(grads)
        if len(grads) != len(self._tensors):
            raise ValueError(
                f"expected {len(self._tensors)} gradient tensors, got {len(grads)}"
            )
        for g, p in zip(grads, self._tensors):
            g = np.asarray(g)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient")
        self.t += 1
        cfg = self.config
        for p, g, m, v in zip(self._tensors, grads, self.m, self.v):
            active.adam_update(
                p, np.asarray(g, dtype=np.float64), m, v,
                self.t, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
            )

    def reset(self):
        """Zero the moments and the step counter; idempotent."""
        self.t = 0
        for m, v in zip(self.m, self.v):
            m[:] = 0.0
            v[:] = 0.0
