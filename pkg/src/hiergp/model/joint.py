"""Constrained-space log-joint densities of the three pooling regimes.

The latent map ``f`` is integrated out analytically; the log-noise field
``r`` enters with its (centred) GP density. These functions are the
reference densities: the sampler works with the reparameterised targets in
:mod:`hiergp.model.targets`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hiergp.errors import DomainError
from hiergp.gp import (
    GramBundle,
    Matern32Kernel,
    as_points,
    gaussian_log_density,
    gram_matrix,
)
from hiergp.model.priors import (
    PriorConstants,
    gamma_logpdf,
    halfnormal_logpdf,
    log_prior_stl,
    normal_logpdf,
    uniform_logpdf,
)
from hiergp.model.transforms import softplus

REGIMES = ("STL", "MTL_A", "MTL_B")

# jitter for latent (noise-free) GP fields; the bare matrix is never tried
LATENT_LADDER = (1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def _positive(name, v):
    if not (np.isfinite(v) and v > 0):
        raise DomainError(f"{name} must be positive, got {v!r}")


@dataclass(frozen=True)
class HyperParams:
    """One task's hyperparameters: map amplitude/lengthscale and noise-GP set."""

    alpha: float
    lengthscale: float
    noise_mean: float
    noise_alpha: float
    noise_lengthscale: float

    def __post_init__(self):
        for name in ("alpha", "lengthscale", "noise_alpha", "noise_lengthscale"):
            _positive(name, getattr(self, name))
        if not np.isfinite(self.noise_mean):
            raise DomainError("noise_mean must be finite")

    @property
    def noise(self):
        return NoiseHypers(self.noise_mean, self.noise_alpha, self.noise_lengthscale)


@dataclass(frozen=True)
class NoiseHypers:
    mean: float
    alpha: float
    lengthscale: float


@dataclass
class IntertaskParams:
    """Hyperparameters and latent values of the intertask GPs ``g`` and ``h``.

    Per-task map amplitude is ``softplus(g_values[k])`` and lengthscale
    ``softplus(h_values[k])``.
    """

    g_amplitude: float
    g_lengthscale: float
    g_slope: float
    g_intercept: float
    h_amplitude: float
    h_lengthscale: float
    h_slope: float
    h_intercept: float
    g_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("g_amplitude", "g_lengthscale", "h_amplitude", "h_lengthscale"):
            _positive(name, getattr(self, name))
        self.g_values = np.asarray(self.g_values, dtype=float)
        self.h_values = np.asarray(self.h_values, dtype=float)

    @property
    def task_alphas(self):
        return softplus(self.g_values)

    @property
    def task_lengthscales(self):
        return softplus(self.h_values)


@dataclass
class LatentNoiseField:
    """Log noise std. dev. at each training observation of one task."""

    r_values: np.ndarray

    def __post_init__(self):
        self.r_values = np.asarray(self.r_values, dtype=float).ravel()

    @property
    def sigma(self):
        return np.exp(self.r_values)


@dataclass(frozen=True)
class ModelSpec:
    """Pooling regime plus prior constants."""

    regime: str = "STL"
    prior_constants: PriorConstants = field(default_factory=PriorConstants)
    task_count: int = 1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise DomainError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.task_count < 1:
            raise DomainError("task_count must be >= 1")
        if self.regime == "STL" and self.task_count != 1:
            raise DomainError("an STL model has exactly one task")


def train_xy(dataset):
    """Training inputs and outputs of a TaskDataset or an ``(X, y)`` pair."""
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.train_inputs, dataset.train_outputs
    return as_points(x), np.asarray(y, dtype=float).ravel()


def latent_gp_log_density(inputs, values, mean, amplitude, lengthscale):
    """log N(values; mean, K) under a Matern-3/2 prior over ``inputs``."""
    values = np.asarray(values, dtype=float).ravel()
    K = gram_matrix(inputs, Matern32Kernel(amplitude, lengthscale))
    if K.shape[0] != values.shape[0]:
        raise DomainError("latent values do not match the number of inputs")
    bundle = GramBundle.from_covariance(K, ladder=LATENT_LADDER)
    return gaussian_log_density(values, np.broadcast_to(mean, values.shape), bundle)


def marginal_log_likelihood(inputs, outputs, alpha, lengthscale, r_values):
    """log N(y; 0, K_f + diag(exp(r)^2)) with the map integrated out."""
    sigma = np.exp(np.asarray(r_values, dtype=float))
    cov = gram_matrix(inputs, Matern32Kernel(alpha, lengthscale), sigma)
    return gaussian_log_density(outputs, np.zeros_like(outputs),
                                GramBundle.from_covariance(cov))


def _task_terms(dataset, alpha, lengthscale, noise_hypers, noise_field):
    x, y = train_xy(dataset)
    r = noise_field.r_values
    if r.shape[0] != y.shape[0]:
        raise DomainError(
            f"noise field has {r.shape[0]} values for {y.shape[0]} observations")
    noise_lp = latent_gp_log_density(x, r, noise_hypers.mean, noise_hypers.alpha,
                                     noise_hypers.lengthscale)
    return noise_lp, marginal_log_likelihood(x, y, alpha, lengthscale, r)


def _noise_prior(noise_hypers, c):
    return (normal_logpdf(noise_hypers.mean, c.noise_mean_loc, c.noise_mean_scale)
            + gamma_logpdf(noise_hypers.lengthscale, c.noise_lengthscale_shape,
                           c.noise_lengthscale_rate)
            + halfnormal_logpdf(noise_hypers.alpha, c.noise_alpha_scale))


def _finish(parts, return_parts):
    total = sum(parts.values())
    return (total, parts) if return_parts else total


def log_joint_stl(dataset, hypers, noise, constants=None, return_parts=False):
    """Single-task log joint ``log p(y, r, theta)``.

    With ``return_parts`` also returns the dict of additive terms
    (``prior``, ``noise``, ``likelihood``).
    """
    c = PriorConstants() if constants is None else constants
    noise_lp, lik = _task_terms(dataset, hypers.alpha, hypers.lengthscale,
                                hypers.noise, noise)
    parts = {"prior": log_prior_stl(hypers, c), "noise": noise_lp, "likelihood": lik}
    return _finish(parts, return_parts)


def log_joint_mtl_a(datasets, hypers, noises, constants=None, return_parts=False):
    """All tasks share one hyperparameter set; each keeps its own noise field."""
    if len(datasets) != len(noises):
        raise DomainError("need one noise field per task")
    c = PriorConstants() if constants is None else constants
    noise_lp = lik = 0.0
    for ds, nf in zip(datasets, noises):
        a, b = _task_terms(ds, hypers.alpha, hypers.lengthscale, hypers.noise, nf)
        noise_lp += a
        lik += b
    parts = {"prior": log_prior_stl(hypers, c), "noise": noise_lp, "likelihood": lik}
    return _finish(parts, return_parts)


def log_joint_mtl_b(datasets, separations, inter, shared_noise_hypers, noises,
                    constants=None, return_parts=False):
    """Intertask-GP model: per-task amplitude/lengthscale follow g, h over separation.

    ``shared_noise_hypers`` is ``(m_r, alpha_r, l_r)`` or a NoiseHypers.
    Returns ``-inf`` when a slope or intercept lies outside its uniform support.
    """
    c = PriorConstants() if constants is None else constants
    seps = np.asarray(separations, dtype=float).ravel()
    K = len(datasets)
    if len(noises) != K or seps.shape[0] != K:
        raise DomainError("separations and noise fields must have one entry per task")
    if inter.g_values.shape[0] != K or inter.h_values.shape[0] != K:
        raise DomainError("g_values/h_values must align with separations")
    if not isinstance(shared_noise_hypers, NoiseHypers):
        shared_noise_hypers = NoiseHypers(*shared_noise_hypers)

    support = (uniform_logpdf(inter.g_slope, c.slope_low, c.slope_high)
               + uniform_logpdf(inter.h_slope, c.slope_low, c.slope_high)
               + uniform_logpdf(inter.g_intercept, c.intercept_low, c.intercept_high)
               + uniform_logpdf(inter.h_intercept, c.intercept_low, c.intercept_high))
    if not math.isfinite(support):
        parts = {"prior": -math.inf, "intertask": 0.0, "noise": 0.0, "likelihood": 0.0}
        return _finish(parts, return_parts)

    prior = support + sum(gamma_logpdf(v, c.inter_shape, c.inter_rate) for v in (
        inter.g_amplitude, inter.g_lengthscale, inter.h_amplitude, inter.h_lengthscale))
    prior += _noise_prior(shared_noise_hypers, c)

    intertask = (
        latent_gp_log_density(seps, inter.g_values, inter.g_slope * seps + inter.g_intercept,
                              inter.g_amplitude, inter.g_lengthscale)
        + latent_gp_log_density(seps, inter.h_values, inter.h_slope * seps + inter.h_intercept,
                                inter.h_amplitude, inter.h_lengthscale))

    alphas, lengthscales = inter.task_alphas, inter.task_lengthscales
    noise_lp = lik = 0.0
    for k, (ds, nf) in enumerate(zip(datasets, noises)):
        a, b = _task_terms(ds, float(alphas[k]), float(lengthscales[k]),
                           shared_noise_hypers, nf)
        noise_lp += a
        lik += b
    parts = {"prior": prior, "intertask": intertask, "noise": noise_lp, "likelihood": lik}
    return _finish(parts, return_parts)
