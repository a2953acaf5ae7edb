"""Bijections between constrained parameters and the sampler's real space."""
from __future__ import annotations

import math

import numpy as np

from hiergp.errors import DomainError


def softplus(x):
    """log(1 + exp(x)), linear above 30 and exponential below -30."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 30.0, x, np.where(x < -30.0, np.exp(np.minimum(x, 0.0)),
                                         np.log1p(np.exp(np.clip(x, -30.0, 30.0)))))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def log_sigmoid(x):
    return -softplus(-x)


class Identity:
    kind = "identity"

    def unconstrain(self, x):
        if not np.isfinite(x):
            raise DomainError(f"value {x!r} is not finite")
        return float(x)

    def constrain(self, u):
        return float(u)

    def log_jacobian(self, u):
        return 0.0

    def dconstrain(self, u):
        """d constrain / du."""
        return 1.0

    def dlog_jacobian(self, u):
        return 0.0


class Log:
    """Positive reals via ``x = exp(u)``."""

    kind = "log"

    def unconstrain(self, x):
        if not (np.isfinite(x) and x > 0):
            raise DomainError(f"value {x!r} outside (0, inf)")
        return math.log(x)

    def constrain(self, u):
        return math.exp(u)

    def log_jacobian(self, u):
        return float(u)

    def dconstrain(self, u):
        return math.exp(u)

    def dlog_jacobian(self, u):
        return 1.0


class ScaledLogit:
    """Interval ``(low, high)`` via ``x = low + (high - low) * sigmoid(u)``."""

    kind = "scaled_logit"

    def __init__(self, low, high):
        if not low < high:
            raise DomainError("ScaledLogit needs low < high")
        self.low = float(low)
        self.high = float(high)
        self.width = self.high - self.low

    def unconstrain(self, x):
        if not (self.low < x < self.high):
            raise DomainError(f"value {x!r} outside ({self.low}, {self.high})")
        p = (x - self.low) / self.width
        return math.log(p) - math.log1p(-p)

    def constrain(self, u):
        return self.low + self.width * sigmoid(u)

    def log_jacobian(self, u):
        return math.log(self.width) + log_sigmoid(u) + log_sigmoid(-u)

    def dconstrain(self, u):
        s = sigmoid(u)
        return self.width * s * (1.0 - s)

    def dlog_jacobian(self, u):
        return 1.0 - 2.0 * sigmoid(u)


def unconstrain(params, transforms):
    """Map a dict of constrained values to an unconstrained vector.

    ``transforms`` is an ordered mapping name -> transform.
    """
    return np.array([t.unconstrain(params[name]) for name, t in transforms.items()])


def constrain(vector, transforms):
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (len(transforms),):
        raise DomainError(f"expected {len(transforms)} coordinates, got {vector.shape}")
    return {name: t.constrain(u) for (name, t), u in zip(transforms.items(), vector)}
