"""Prior distributions and their constants.

Scalar log-densities come with derivatives in the constrained variable so the
targets in :mod:`hiergp.model.targets` can chain them through transforms.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from hiergp.errors import ConfigError

LOG_2PI = math.log(2.0 * math.pi)


def gamma_logpdf(x, shape, rate):
    """Gamma(shape, rate) log-density (rate parameterisation)."""
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def gamma_dlogpdf(x, shape, rate):
    if x <= 0:  # underflowed exp(u); the log-density is already -inf here
        return math.inf
    return (shape - 1.0) / x - rate


def halfnormal_logpdf(x, scale):
    """Half-Normal with scale ``s``: density 2 N(x; 0, s^2) on x >= 0."""
    if x < 0:
        return -math.inf
    return math.log(2.0) - 0.5 * LOG_2PI - math.log(scale) - 0.5 * (x / scale) ** 2


def halfnormal_dlogpdf(x, scale):
    return -x / (scale * scale)


def normal_logpdf(x, loc, scale):
    return -0.5 * LOG_2PI - math.log(scale) - 0.5 * ((x - loc) / scale) ** 2


def normal_dlogpdf(x, loc, scale):
    return -(x - loc) / (scale * scale)


def uniform_logpdf(x, low, high):
    if x < low or x > high:
        return -math.inf
    return -math.log(high - low)


@dataclass(frozen=True)
class PriorConstants:
    """Constants of the hyperparameter priors.

    Defaults: Gamma(2, 1) lengthscales, Half-Normal(1) map amplitude,
    N(-0.9, 1) log-noise mean, Half-Normal(2) log-noise amplitude; for the
    intertask GPs Gamma(2, 1) amplitudes and lengthscales, Uniform(0, 10)
    slopes and Uniform(-1, 1) intercepts.
    """

    lengthscale_shape: float = 2.0
    lengthscale_rate: float = 1.0
    alpha_scale: float = 1.0
    noise_mean_loc: float = -0.9
    noise_mean_scale: float = 1.0
    noise_lengthscale_shape: float = 2.0
    noise_lengthscale_rate: float = 1.0
    noise_alpha_scale: float = 2.0
    inter_shape: float = 2.0
    inter_rate: float = 1.0
    slope_low: float = 0.0
    slope_high: float = 10.0
    intercept_low: float = -1.0
    intercept_high: float = 1.0

    def __post_init__(self):
        for name in ("lengthscale_shape", "lengthscale_rate", "alpha_scale",
                     "noise_mean_scale", "noise_lengthscale_shape",
                     "noise_lengthscale_rate", "noise_alpha_scale", "inter_shape",
                     "inter_rate"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"prior constant {name} must be positive, got {v!r}")
        if not self.slope_low < self.slope_high:
            raise ConfigError("slope_low must be below slope_high")
        if not self.intercept_low < self.intercept_high:
            raise ConfigError("intercept_low must be below intercept_high")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown prior constant(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def log_prior_stl(hypers, constants=None, jacobian=False):
    """Log prior density of one task's hyperparameters.

    Parameters
    ----------
    hypers : HyperParams
        Constrained values.
    constants : PriorConstants, optional
    jacobian : bool
        Add ``log x`` for every log-transformed positive parameter, giving the
        density of the unconstrained coordinates.
    """
    c = PriorConstants() if constants is None else constants
    lp = (gamma_logpdf(hypers.lengthscale, c.lengthscale_shape, c.lengthscale_rate)
          + halfnormal_logpdf(hypers.alpha, c.alpha_scale)
          + normal_logpdf(hypers.noise_mean, c.noise_mean_loc, c.noise_mean_scale)
          + gamma_logpdf(hypers.noise_lengthscale, c.noise_lengthscale_shape,
                         c.noise_lengthscale_rate)
          + halfnormal_logpdf(hypers.noise_alpha, c.noise_alpha_scale))
    if jacobian:
        lp += (math.log(hypers.lengthscale) + math.log(hypers.alpha)
               + math.log(hypers.noise_lengthscale) + math.log(hypers.noise_alpha))
    return lp


def sample_prior_stl(rng, size, constants=None):
    """Draw ``size`` hyperparameter sets from the single-task prior.

    Returns a dict of arrays keyed by HyperParams field name.
    """
    c = PriorConstants() if constants is None else constants
    return {
        "alpha": np.abs(rng.normal(0.0, c.alpha_scale, size)),
        "lengthscale": rng.gamma(c.lengthscale_shape, 1.0 / c.lengthscale_rate, size),
        "noise_mean": rng.normal(c.noise_mean_loc, c.noise_mean_scale, size),
        "noise_alpha": np.abs(rng.normal(0.0, c.noise_alpha_scale, size)),
        "noise_lengthscale": rng.gamma(c.noise_lengthscale_shape,
                                       1.0 / c.noise_lengthscale_rate, size),
    }
