"""Plain SGD with global gradient-norm clipping and an optional linear decay."""

from __future__ import annotations

import math

import numpy as np


def global_norm(grads: dict) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: dict, clip_norm: float | None) -> tuple[dict, float]:
    """Scale every gradient by ``min(1, clip_norm / norm)``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if clip_norm is None or norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def linear_decay(start: float, end: float | None, steps: int, step: int) -> float:
    """Learning rate at ``step``: ``start`` falling linearly to ``end`` at the last step.

    ``end=None`` keeps the rate constant.
    """
    if end is None or steps <= 1:
        return start
    return start + (end - start) * step / (steps - 1)


class Sgd:
    """In-place SGD on a parameter dict, optionally with heavy-ball momentum.

    With ``learning_rate == 0`` parameters are left untouched bit for bit.
    """

    def __init__(self, learning_rate: float, clip_norm: float | None = 5.0, momentum: float = 0.0):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.momentum = momentum
        self._velocity: dict = {}

    def step(self, params: dict, grads: dict) -> float:
        """Apply one update; returns the gradient norm before clipping."""
        grads, norm = clip_by_global_norm(grads, self.clip_norm)
        if self.learning_rate == 0.0:
            return norm
        for name, g in grads.items():
            if self.momentum:
                v = self._velocity.get(name)
                v = g if v is None else self.momentum * v + g
                self._velocity[name] = v
                g = v
            params[name] -= self.learning_rate * g
        return norm
