"""Unconstrained log-joint densities and their exact gradients.

Each regime is exposed as a target over a flat real vector: positive
hyperparameters are log-transformed, bounded slopes and intercepts go through
a scaled logit, and every latent GP field (the log-noise ``r`` of each task,
and ``g``, ``h`` in the intertask model) is non-centred as
``mean + chol(K) @ z`` with ``z`` standard normal.

Gradients of the marginal likelihood use
``d/dtheta log N(y; 0, S) = 0.5 * tr[(a a^T - S^{-1}) dS/dtheta]`` with
``a = S^{-1} y``; gradients through a non-centred field need the derivative
of its Cholesky factor, ``dL = L Phi(L^{-1} dK L^{-T})`` where ``Phi`` keeps
the lower triangle and halves the diagonal.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

from hiergp import _backend
from hiergp.errors import DomainError, NumericalError
from hiergp.gp import JITTER_LADDER, as_points, jittered_cholesky
from hiergp.model.joint import LATENT_LADDER, ModelSpec, train_xy
from hiergp.model.priors import (
    PriorConstants,
    gamma_dlogpdf,
    gamma_logpdf,
    halfnormal_dlogpdf,
    halfnormal_logpdf,
    normal_dlogpdf,
    normal_logpdf,
)
from hiergp.model.transforms import ScaledLogit, sigmoid, softplus

LOG_2PI = math.log(2.0 * math.pi)

NOISE_TRIPLE = ("noise_mean", "noise_alpha", "noise_lengthscale")
STL_HYPERS = ("alpha", "lengthscale") + NOISE_TRIPLE
INTERTASK_HYPERS = ("g_amplitude", "g_lengthscale", "g_slope", "g_intercept",
                    "h_amplitude", "h_lengthscale", "h_slope", "h_intercept")


def _spd_inverse(L):
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError("inverse from Cholesky factor failed")
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def marginal_lik_and_grad(x, y, alpha, lengthscale, r):
    """log N(y; 0, K + diag(exp(2r))) and its gradient.

    Returns ``(lp, d/dlog alpha, d/dlog lengthscale, d/dr)``.
    """
    n = y.shape[0]
    K, dK = _backend.matern32_sym_with_grad(x, alpha, lengthscale)
    s2 = np.exp(2.0 * r)
    S = K.copy()
    S[np.diag_indices(n)] += s2
    L, _ = jittered_cholesky(S, JITTER_LADDER)
    a = cho_solve((L, True), y, check_finite=False)
    lp = -0.5 * float(y @ a) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
    W = np.outer(a, a)
    W -= _spd_inverse(L)
    g_la = float(np.sum(W * K))
    g_ll = 0.5 * float(np.sum(W * dK))
    g_r = np.diag(W) * s2
    return lp, g_la, g_ll, g_r


class LatentField:
    """Non-centred Matern-3/2 field ``L z`` over fixed inputs (mean excluded)."""

    def __init__(self, inputs):
        self.x = np.ascontiguousarray(as_points(inputs))

    def forward(self, amplitude, lengthscale, z):
        K, dK = _backend.matern32_sym_with_grad(self.x, amplitude, lengthscale)
        L, _ = jittered_cholesky(K, LATENT_LADDER)
        Lz = L @ z
        return Lz, (L, dK, z, Lz)

    @staticmethod
    def backward(cache, g_values):
        """Pull ``dF/dvalues`` back to ``(dF/dz, dF/dlog amp, dF/dlog ls)``."""
        L, dK, z, Lz = cache
        g_z = L.T @ g_values
        g_la = float(g_values @ Lz)
        A = solve_triangular(L, dK, lower=True, check_finite=False)
        P = solve_triangular(L, A.T, lower=True, check_finite=False)
        phi = np.tril(P)
        phi[np.diag_indices_from(phi)] *= 0.5
        g_ll = float(g_z @ (phi @ z))
        return g_z, g_la, g_ll


def _std_normal(z):
    return -0.5 * float(z @ z) - 0.5 * z.shape[0] * LOG_2PI


class _Target:
    """Shared plumbing: coordinate bookkeeping and the safe evaluation wrapper."""

    regime = None

    def __init__(self, constants=None):
        self.constants = PriorConstants() if constants is None else constants
        self.names = []
        self.param_names = []
        self.slices = {}

    def _add(self, name, size=None, labels=None):
        start = len(self.names)
        if size is None:
            self.names.append(name)
            self.slices[name] = start
        else:
            self.names.extend(labels)
            self.slices[name] = slice(start, start + size)

    @property
    def dim(self):
        return len(self.names)

    def log_density(self, u):
        return self.log_density_and_grad(u)[0]

    def __call__(self, u):
        """Log density and gradient; numerical failure maps to ``-inf``."""
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lp, g = self.log_density_and_grad(u)
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError, OverflowError):
            return -math.inf, np.zeros(self.dim)
        if not (math.isfinite(lp) and np.all(np.isfinite(g))):
            return -math.inf, np.zeros(self.dim)
        return lp, g

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise DomainError(f"state must have shape ({self.dim},), got {u.shape}")
        return u

    # hyperparameter prior pieces, each returning (lp, d/du) in unconstrained space
    def _log_pos(self, u, logpdf, dlogpdf, *args):
        x = math.exp(u)
        return logpdf(x, *args) + u, dlogpdf(x, *args) * x + 1.0

    def _noise_prior(self, u_mr, u_ar, u_lr):
        c = self.constants
        lp_m = normal_logpdf(u_mr, c.noise_mean_loc, c.noise_mean_scale)
        g_m = normal_dlogpdf(u_mr, c.noise_mean_loc, c.noise_mean_scale)
        lp_a, g_a = self._log_pos(u_ar, halfnormal_logpdf, halfnormal_dlogpdf,
                                  c.noise_alpha_scale)
        lp_l, g_l = self._log_pos(u_lr, gamma_logpdf, gamma_dlogpdf,
                                  c.noise_lengthscale_shape, c.noise_lengthscale_rate)
        return lp_m + lp_a + lp_l, g_m, g_a, g_l

    def _task_block(self, field, x, y, alpha, lengthscale, u_mr, noise_amp, noise_ls, z):
        """Noise field + marginal likelihood for one task.

        Returns ``lp`` and gradients w.r.t. log alpha, log lengthscale, m_r,
        log alpha_r, log l_r and z.
        """
        Lz, cache = field.forward(noise_amp, noise_ls, z)
        r = u_mr + Lz
        lik, g_la, g_ll, g_r = marginal_lik_and_grad(x, y, alpha, lengthscale, r)
        g_z, g_lar, g_llr = field.backward(cache, g_r)
        lp = lik + _std_normal(z)
        return lp, g_la, g_ll, float(np.sum(g_r)), g_lar, g_llr, g_z - z

    def constrain(self, u):
        raise NotImplementedError


class STLTarget(_Target):
    """One task with its own five hyperparameters."""

    regime = "STL"

    def __init__(self, dataset, constants=None, task_id=0):
        super().__init__(constants)
        self.x, self.y = train_xy(dataset)
        self.x = np.ascontiguousarray(self.x)
        self.task_id = task_id
        n = self.y.shape[0]
        self.field = LatentField(self.x)
        for name in ("log_alpha", "log_lengthscale", "noise_mean", "log_noise_alpha",
                     "log_noise_lengthscale"):
            self._add(name)
        self._add("z", n, [f"z[{task_id},{i}]" for i in range(n)])
        k = task_id
        self.param_names = [f"{p}[{k}]" for p in STL_HYPERS] + [f"r[{k},{i}]" for i in range(n)]

    def log_density_and_grad(self, u):
        u = self._check(u)
        c = self.constants
        g = np.zeros(self.dim)
        lp_a, g[0] = self._log_pos(u[0], halfnormal_logpdf, halfnormal_dlogpdf, c.alpha_scale)
        lp_l, g[1] = self._log_pos(u[1], gamma_logpdf, gamma_dlogpdf,
                                   c.lengthscale_shape, c.lengthscale_rate)
        lp_n, g[2], g[3], g[4] = self._noise_prior(u[2], u[3], u[4])
        z = u[5:]
        lp_t, ga, gl, gm, gar, glr, gz = self._task_block(
            self.field, self.x, self.y, math.exp(u[0]), math.exp(u[1]),
            u[2], math.exp(u[3]), math.exp(u[4]), z)
        g[0] += ga
        g[1] += gl
        g[2] += gm
        g[3] += gar
        g[4] += glr
        g[5:] = gz
        return lp_a + lp_l + lp_n + lp_t, g

    def constrain(self, u):
        u = self._check(u)
        Lz, _ = self.field.forward(math.exp(u[3]), math.exp(u[4]), u[5:])
        return np.concatenate([[math.exp(u[0]), math.exp(u[1]), u[2], math.exp(u[3]),
                                math.exp(u[4])], u[2] + Lz])


class MTLATarget(_Target):
    """All tasks share one set of hyperparameters; per-task noise fields."""

    regime = "MTL_A"

    def __init__(self, datasets, constants=None, task_ids=None):
        super().__init__(constants)
        self.task_ids = list(range(len(datasets))) if task_ids is None else list(task_ids)
        self.data = [train_xy(ds) for ds in datasets]
        self.fields = [LatentField(x) for x, _ in self.data]
        for name in ("log_alpha", "log_lengthscale", "noise_mean", "log_noise_alpha",
                     "log_noise_lengthscale"):
            self._add(name)
        self.z_slices = []
        for k, (_, y) in zip(self.task_ids, self.data):
            n = y.shape[0]
            self._add(f"z{k}", n, [f"z[{k},{i}]" for i in range(n)])
            self.z_slices.append(self.slices[f"z{k}"])
        self.param_names = list(STL_HYPERS) + [
            f"r[{k},{i}]" for k, (_, y) in zip(self.task_ids, self.data)
            for i in range(y.shape[0])]

    def log_density_and_grad(self, u):
        u = self._check(u)
        c = self.constants
        g = np.zeros(self.dim)
        lp_a, g[0] = self._log_pos(u[0], halfnormal_logpdf, halfnormal_dlogpdf, c.alpha_scale)
        lp_l, g[1] = self._log_pos(u[1], gamma_logpdf, gamma_dlogpdf,
                                   c.lengthscale_shape, c.lengthscale_rate)
        lp_n, g[2], g[3], g[4] = self._noise_prior(u[2], u[3], u[4])
        lp = lp_a + lp_l + lp_n
        alpha, ls, ar, lr = math.exp(u[0]), math.exp(u[1]), math.exp(u[3]), math.exp(u[4])
        for (x, y), field, sl in zip(self.data, self.fields, self.z_slices):
            lp_t, ga, gl, gm, gar, glr, gz = self._task_block(
                field, x, y, alpha, ls, u[2], ar, lr, u[sl])
            lp += lp_t
            g[0] += ga
            g[1] += gl
            g[2] += gm
            g[3] += gar
            g[4] += glr
            g[sl] = gz
        return lp, g

    def constrain(self, u):
        u = self._check(u)
        ar, lr = math.exp(u[3]), math.exp(u[4])
        rs = [u[2] + f.forward(ar, lr, u[sl])[0] for f, sl in zip(self.fields, self.z_slices)]
        head = [math.exp(u[0]), math.exp(u[1]), u[2], ar, lr]
        return np.concatenate([head] + rs)


class MTLBTarget(_Target):
    """Per-task amplitude and lengthscale from intertask GPs over sensor separation."""

    regime = "MTL_B"

    def __init__(self, datasets, separations, constants=None, task_ids=None):
        super().__init__(constants)
        c = self.constants
        K = len(datasets)
        self.seps = np.asarray(separations, dtype=float).ravel()
        if self.seps.shape[0] != K:
            raise DomainError("need one separation per task")
        self.task_ids = list(range(K)) if task_ids is None else list(task_ids)
        self.data = [train_xy(ds) for ds in datasets]
        self.fields = [LatentField(x) for x, _ in self.data]
        self.inter_field = LatentField(self.seps)
        self.slope_t = ScaledLogit(c.slope_low, c.slope_high)
        self.intercept_t = ScaledLogit(c.intercept_low, c.intercept_high)
        for f in ("g", "h"):
            for name in (f"log_{f}_amplitude", f"log_{f}_lengthscale",
                         f"logit_{f}_slope", f"logit_{f}_intercept"):
                self._add(name)
        self._add("zg", K, [f"zg[{k}]" for k in self.task_ids])
        self._add("zh", K, [f"zh[{k}]" for k in self.task_ids])
        for name in ("noise_mean", "log_noise_alpha", "log_noise_lengthscale"):
            self._add(name)
        self.z_slices = []
        for k, (_, y) in zip(self.task_ids, self.data):
            n = y.shape[0]
            self._add(f"z{k}", n, [f"z[{k},{i}]" for i in range(n)])
            self.z_slices.append(self.slices[f"z{k}"])
        self.param_names = (list(INTERTASK_HYPERS)
                            + [f"g[{k}]" for k in self.task_ids]
                            + [f"h[{k}]" for k in self.task_ids]
                            + list(NOISE_TRIPLE)
                            + [f"r[{k},{i}]" for k, (_, y) in zip(self.task_ids, self.data)
                               for i in range(y.shape[0])])

    def _intertask_prior(self, u, offset):
        """Priors for (amplitude, lengthscale, slope, intercept) of one intertask GP."""
        c = self.constants
        g = np.zeros(4)
        lp_a, g[0] = self._log_pos(u[offset], gamma_logpdf, gamma_dlogpdf,
                                   c.inter_shape, c.inter_rate)
        lp_l, g[1] = self._log_pos(u[offset + 1], gamma_logpdf, gamma_dlogpdf,
                                   c.inter_shape, c.inter_rate)
        lp = lp_a + lp_l
        for j, t in ((2, self.slope_t), (3, self.intercept_t)):
            uj = u[offset + j]
            lp += -math.log(t.width) + t.log_jacobian(uj)
            g[j] = t.dlog_jacobian(uj)
        return lp, g

    def _intertask_values(self, u, offset, z):
        amp, ls = math.exp(u[offset]), math.exp(u[offset + 1])
        slope = self.slope_t.constrain(u[offset + 2])
        intercept = self.intercept_t.constrain(u[offset + 3])
        Lz, cache = self.inter_field.forward(amp, ls, z)
        return slope * self.seps + intercept + Lz, cache

    def log_density_and_grad(self, u):
        u = self._check(u)
        g = np.zeros(self.dim)
        zg, zh = u[self.slices["zg"]], u[self.slices["zh"]]
        lp = 0.0
        lp_g, g[0:4] = self._intertask_prior(u, 0)
        lp_h, g[4:8] = self._intertask_prior(u, 4)
        lp += lp_g + lp_h + _std_normal(zg) + _std_normal(zh)
        gv, g_cache = self._intertask_values(u, 0, zg)
        hv, h_cache = self._intertask_values(u, 4, zh)
        alphas, lss = softplus(gv), softplus(hv)

        i_mr = self.slices["noise_mean"]
        i_ar = self.slices["log_noise_alpha"]
        i_lr = self.slices["log_noise_lengthscale"]
        lp_n, g[i_mr], g[i_ar], g[i_lr] = self._noise_prior(u[i_mr], u[i_ar], u[i_lr])
        lp += lp_n
        ar, lr = math.exp(u[i_ar]), math.exp(u[i_lr])

        K = len(self.data)
        dg = np.zeros(K)
        dh = np.zeros(K)
        for k, ((x, y), field, sl) in enumerate(zip(self.data, self.fields, self.z_slices)):
            lp_t, ga, gl, gm, gar, glr, gz = self._task_block(
                field, x, y, float(alphas[k]), float(lss[k]), u[i_mr], ar, lr, u[sl])
            lp += lp_t
            dg[k] = ga
            dh[k] = gl
            g[i_mr] += gm
            g[i_ar] += gar
            g[i_lr] += glr
            g[sl] = gz
        # d/dlog(softplus(v)) -> d/dv
        dg *= sigmoid(gv) / alphas
        dh *= sigmoid(hv) / lss

        for offset, cache, upstream, zsl in ((0, g_cache, dg, "zg"), (4, h_cache, dh, "zh")):
            g_z, g_la, g_ll = self.inter_field.backward(cache, upstream)
            g[offset] += g_la
            g[offset + 1] += g_ll
            g[offset + 2] += float(upstream @ self.seps) * self.slope_t.dconstrain(u[offset + 2])
            g[offset + 3] += float(np.sum(upstream)) * self.intercept_t.dconstrain(u[offset + 3])
            g[self.slices[zsl]] = g_z - u[self.slices[zsl]]
        return lp, g

    def constrain(self, u):
        u = self._check(u)
        gv, _ = self._intertask_values(u, 0, u[self.slices["zg"]])
        hv, _ = self._intertask_values(u, 4, u[self.slices["zh"]])
        head = []
        for offset in (0, 4):
            head += [math.exp(u[offset]), math.exp(u[offset + 1]),
                     self.slope_t.constrain(u[offset + 2]),
                     self.intercept_t.constrain(u[offset + 3])]
        mr = u[self.slices["noise_mean"]]
        ar = math.exp(u[self.slices["log_noise_alpha"]])
        lr = math.exp(u[self.slices["log_noise_lengthscale"]])
        rs = [mr + f.forward(ar, lr, u[sl])[0] for f, sl in zip(self.fields, self.z_slices)]
        return np.concatenate([head, gv, hv, [mr, ar, lr]] + rs)


def make_target(spec, datasets, separations=None, task_ids=None):
    """Build the unconstrained target for ``spec.regime``."""
    if not isinstance(spec, ModelSpec):
        raise DomainError("spec must be a ModelSpec")
    datasets = list(datasets)
    if len(datasets) != spec.task_count:
        raise DomainError(f"spec expects {spec.task_count} task(s), got {len(datasets)}")
    c = spec.prior_constants
    if spec.regime == "STL":
        tid = 0 if task_ids is None else list(task_ids)[0]
        return STLTarget(datasets[0], c, task_id=tid)
    if spec.regime == "MTL_A":
        return MTLATarget(datasets, c, task_ids)
    if separations is None:
        raise DomainError("MTL_B needs task separations")
    return MTLBTarget(datasets, separations, c, task_ids)


def grad_log_joint(spec, state, data, separations=None):
    """Gradient of the unconstrained log joint at ``state``.

    ``data`` is a list of datasets (or ``(X, y)`` pairs), or an already built
    target. Raises NumericalError naming the first non-finite coordinate.
    """
    target = data if isinstance(data, _Target) else make_target(spec, data, separations)
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise DomainError("state must be finite")
    _, grad = target.log_density_and_grad(state)
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NumericalError(f"non-finite gradient for parameter {target.names[bad[0]]!r}")
    return grad
