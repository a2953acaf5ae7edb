"""Matern-3/2 Gaussian-process primitives.

Kernel and mean functions, Cholesky factorisation with a jitter ladder,
the Gaussian log-density and block conditioning of a joint Gaussian.
Nothing here forms an explicit matrix inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from hiergp import _backend
from hiergp.errors import DomainError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

# relative jitter levels tried in order; 0 means the bare matrix
JITTER_LADDER = (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


def as_points(x):
    """Coerce inputs to a float (n, d) array; 1-D input becomes (n, 1)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    return x


@dataclass(frozen=True)
class Matern32Kernel:
    """Stationary Matern-3/2 covariance with a single isotropic lengthscale."""

    amplitude: float
    lengthscale: float

    def __post_init__(self):
        _check_positive("amplitude", self.amplitude)
        _check_positive("lengthscale", self.lengthscale)

    def __call__(self, x1, x2=None):
        x1 = as_points(x1)
        x2 = x1 if x2 is None else as_points(x2)
        return _backend.matern32_cross(x1, x2, self.amplitude, self.lengthscale)

    @property
    def variance(self):
        return self.amplitude * self.amplitude


@dataclass(frozen=True)
class MeanFunction:
    """Zero, constant or linear mean ``slope * x + intercept`` on scalar inputs."""

    kind: str = "zero"
    slope: float = 0.0
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "linear"):
            raise DomainError(f"unknown mean kind {self.kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c):
        return cls("constant", 0.0, float(c))

    @classmethod
    def linear(cls, slope, intercept):
        return cls("linear", float(slope), float(intercept))

    def __call__(self, x):
        x = as_points(x)
        n = x.shape[0]
        if self.kind == "zero":
            return np.zeros(n)
        if self.kind == "constant":
            return np.full(n, self.intercept)
        if x.shape[1] != 1:
            raise DomainError("linear mean is defined on scalar inputs only")
        return self.slope * x[:, 0] + self.intercept


def matern32(dist, amplitude, lengthscale):
    """Matern-3/2 covariance as a function of distance.

    Parameters
    ----------
    dist : float or array_like
        Non-negative distance(s).
    amplitude, lengthscale : float
        Process standard deviation and lengthscale, both positive.
    """
    _check_positive("amplitude", amplitude)
    _check_positive("lengthscale", lengthscale)
    d = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise DomainError("distances must be finite and non-negative")
    out = _backend.matern32_from_distance(d, float(amplitude), float(lengthscale))
    return float(out) if np.ndim(out) == 0 else out


def gram_matrix(inputs, kernel, noise_diag=None):
    """Kernel matrix over ``inputs`` plus optional per-point noise variance.

    ``noise_diag`` holds standard deviations; their squares are added to the
    diagonal.
    """
    x = as_points(inputs)
    K = kernel(x)
    if noise_diag is not None:
        s = np.asarray(noise_diag, dtype=float).ravel()
        if s.shape[0] != x.shape[0]:
            raise DomainError(
                f"noise_diag has {s.shape[0]} entries for {x.shape[0]} inputs")
        K[np.diag_indices_from(K)] += s * s
    return K


def jittered_cholesky(cov, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``cov + jitter * mean(diag) * I``.

    The jitter walks up ``ladder`` until the factorisation succeeds.

    Returns
    -------
    L : ndarray
    jitter : float
        Absolute jitter added to the diagonal.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    if not np.all(np.isfinite(cov)):
        raise NumericalError("covariance matrix has non-finite entries")
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        raise NumericalError(f"covariance diagonal mean is {scale!r}")
    for rel in ladder:
        jitter = rel * scale
        mat = cov if jitter == 0.0 else cov + jitter * np.eye(n)
        try:
            return np.linalg.cholesky(mat), jitter
        except np.linalg.LinAlgError:
            continue
    try:
        cond = float(np.linalg.cond(cov))
    except np.linalg.LinAlgError:
        cond = float("inf")
    raise NumericalError(
        f"Cholesky failed after jitter up to {ladder[-1]:g}*mean(diag); "
        f"n={n}, condition number ~{cond:.3e}")


@dataclass
class GramBundle:
    """Cached factorisation of a covariance and the whitened residual.

    Attributes
    ----------
    chol_lower : ndarray
        Lower factor of the (jittered) covariance.
    log_det : float
        log-determinant of the factored matrix.
    alpha_vec : ndarray or None
        ``cov^{-1} (y - m)`` when a residual was supplied.
    jitter : float
    """

    chol_lower: np.ndarray
    log_det: float
    alpha_vec: np.ndarray | None = None
    jitter: float = 0.0

    @classmethod
    def from_covariance(cls, cov, residual=None, ladder=JITTER_LADDER):
        L, jitter = jittered_cholesky(cov, ladder)
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        alpha = None
        if residual is not None:
            alpha = cho_solve((L, True), np.asarray(residual, dtype=float))
        return cls(L, log_det, alpha, jitter)

    @property
    def size(self):
        return self.chol_lower.shape[0]

    def solve(self, b):
        return cho_solve((self.chol_lower, True), b)

    def inverse(self):
        """Dense inverse of the factored matrix (from the Cholesky factor)."""
        return self.solve(np.eye(self.size))

    def reconstruct(self):
        return self.chol_lower @ self.chol_lower.T


def gaussian_log_density(y, mean, bundle):
    """log N(y; mean, Sigma) for the covariance factored in ``bundle``."""
    r = np.asarray(y, dtype=float) - np.asarray(mean, dtype=float)
    n = r.shape[0]
    if n != bundle.size:
        raise DomainError(f"residual length {n} does not match covariance size {bundle.size}")
    if n == 0:
        return 0.0
    w = solve_triangular(bundle.chol_lower, r, lower=True, check_finite=False)
    return float(-0.5 * w @ w - 0.5 * bundle.log_det - 0.5 * n * LOG_2PI)


def condition(joint_mean_x, joint_mean_y, A, B, C, y_obs):
    """Condition the x-block of a joint Gaussian on observing ``y = y_obs``.

    The joint covariance is ``[[A, C], [C^T, B]]``. Returns the conditional
    mean ``mu_x + C B^{-1}(y_obs - mu_y)`` and the symmetrised covariance
    ``A - C B^{-1} C^T``.
    """
    mu_x = np.atleast_1d(np.asarray(joint_mean_x, dtype=float))
    mu_y = np.atleast_1d(np.asarray(joint_mean_y, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    y_obs = np.atleast_1d(np.asarray(y_obs, dtype=float))
    nx, ny = mu_x.shape[0], mu_y.shape[0]
    if A.shape != (nx, nx) or B.shape != (ny, ny) or C.shape != (nx, ny) or y_obs.shape != (ny,):
        raise DomainError("block shapes are inconsistent with the mean vectors")
    if ny == 0:
        return mu_x.copy(), A.copy()
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("conditioning block B is not positive definite") from exc
    w = solve_triangular(L, y_obs - mu_y, lower=True, check_finite=False)
    V = solve_triangular(L, C.T, lower=True, check_finite=False)
    mean = mu_x + V.T @ w
    cov = A - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def gp_predict(train_inputs, train_outputs, test_inputs, kernel, noise_at_train=None,
               noise_at_test=None, mean=None, full_cov=True):
    """Posterior predictive of a GP at ``test_inputs`` given training data.

    Parameters
    ----------
    train_inputs, train_outputs : array_like
        Observed locations (n, d) and values (n,). ``n`` may be zero.
    test_inputs : array_like
        Prediction locations (m, d).
    kernel : Matern32Kernel
    noise_at_train : array_like, optional
        Observation noise std. dev. at the training inputs.
    noise_at_test : array_like, optional
        Noise std. dev. at the test inputs; when given, the result is the
        predictive of *observations* rather than of the latent function.
    mean : MeanFunction, optional
        Prior mean; zero by default.
    full_cov : bool
        Return the (m, m) covariance, or only its diagonal.

    Returns
    -------
    pred_mean : ndarray
    pred_cov : ndarray
        (m, m) covariance, or (m,) variances when ``full_cov`` is False.
    """
    mean = MeanFunction.zero() if mean is None else mean
    xt = as_points(train_inputs)
    xs = as_points(test_inputs)
    y = np.asarray(train_outputs, dtype=float).ravel()
    if y.shape[0] != xt.shape[0]:
        raise DomainError("train_inputs and train_outputs differ in length")
    n, m = xt.shape[0], xs.shape[0]
    mu_s = mean(xs) if m else np.zeros(0)

    if full_cov:
        A = kernel(xs) if m else np.zeros((0, 0))
    else:
        A = np.full(m, kernel.variance)

    if n:
        L, _ = jittered_cholesky(gram_matrix(xt, kernel, noise_at_train))
        C = kernel(xs, xt)
        w = solve_triangular(L, y - mean(xt), lower=True, check_finite=False)
        V = solve_triangular(L, C.T, lower=True, check_finite=False)
        f_mean = mu_s + V.T @ w
        if full_cov:
            f_cov = A - V.T @ V
            f_cov = 0.5 * (f_cov + f_cov.T)
        else:
            f_cov = A - np.einsum("ij,ij->j", V, V)
    else:
        f_mean, f_cov = mu_s, A

    if noise_at_test is not None:
        s = np.asarray(noise_at_test, dtype=float).ravel()
        if s.shape[0] != m:
            raise DomainError("noise_at_test must have one entry per test input")
        if full_cov:
            f_cov = f_cov.copy()
            f_cov[np.diag_indices_from(f_cov)] += s * s
        else:
            f_cov = f_cov + s * s
    if not full_cov:
        f_cov = np.maximum(f_cov, 0.0)
    return f_mean, f_cov
