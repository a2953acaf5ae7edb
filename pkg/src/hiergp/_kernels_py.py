"""Pure-NumPy Matern-3/2 kernel routines.

Reference implementation and fallback for :mod:`hiergp._ckernels`. Both
modules expose the same four functions with identical semantics.
"""
import numpy as np

SQRT3 = np.sqrt(3.0)


def pairwise_distance(x1, x2):
    """Euclidean distance matrix between rows of ``x1`` (n, d) and ``x2`` (m, d)."""
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    diff = x1[:, None, :] - x2[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def matern32_from_distance(dist, amplitude, lengthscale):
    u = SQRT3 * np.asarray(dist, dtype=float) / lengthscale
    return amplitude * amplitude * (1.0 + u) * np.exp(-u)


def matern32_cross(x1, x2, amplitude, lengthscale):
    """Cross-covariance matrix k(x1_i, x2_j)."""
    return matern32_from_distance(pairwise_distance(x1, x2), amplitude, lengthscale)


def matern32_sym_with_grad(x, amplitude, lengthscale):
    """Symmetric Gram matrix and its derivative w.r.t. log(lengthscale).

    Returns ``(K, dK)``. The derivative w.r.t. log(amplitude) is ``2 K``
    and is left to the caller.
    """
    u = SQRT3 * pairwise_distance(x, x) / lengthscale
    e = np.exp(-u)
    a2 = amplitude * amplitude
    return a2 * (1.0 + u) * e, a2 * u * u * e
