"""Convergence diagnostics: split-R-hat and rank-normalised bulk ESS."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from hiergp.errors import DomainError


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergence_count: int
    n_draws: int
    caveats: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)

    @property
    def max_rhat(self):
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")

    @property
    def min_ess(self):
        finite = self.ess_bulk[np.isfinite(self.ess_bulk)]
        return float(finite.min()) if finite.size else float("nan")

    def converged(self, threshold=1.05):
        finite = self.rhat[np.isfinite(self.rhat)]
        return bool(np.all(finite <= threshold))

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "names": list(self.names),
            "rhat": clean(self.rhat),
            "ess_bulk": clean(self.ess_bulk),
            "divergence_count": int(self.divergence_count),
            "n_draws": int(self.n_draws),
            "max_rhat": None if not np.isfinite(self.max_rhat) else self.max_rhat,
            "min_ess_bulk": None if not np.isfinite(self.min_ess) else self.min_ess,
            "caveats": list(self.caveats),
            "degenerate": list(self.degenerate),
        }


def _split(x):
    """(chains, n) -> (2 * chains, n // 2), dropping the middle draw if n is odd."""
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def split_rhat(x):
    """Split potential scale reduction of draws shaped (chains, n)."""
    s = _split(np.asarray(x, dtype=float))
    m, n = s.shape
    if m < 2 or n < 2:
        return float("nan")
    w = np.mean(np.var(s, axis=1, ddof=1))
    b = n * np.var(np.mean(s, axis=1), ddof=1)
    if w == 0:
        return float("nan")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _autocov(x):
    n = x.shape[0]
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def ess(x):
    """Effective sample size of draws shaped (chains, n) with Geyer's monotone rule."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = np.stack([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if not var_plus > 0:
        return float("nan")
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pairs of consecutive autocorrelations, truncated at the first negative pair
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pair_sums.append(p)
        t += 2
    pair_sums = np.minimum.accumulate(np.asarray(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pair_sums.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def rank_normalise(x):
    x = np.asarray(x, dtype=float)
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def ess_bulk(x):
    x = np.asarray(x, dtype=float)
    return ess(_split(rank_normalise(x)))


def diagnose(draws):
    """Per-parameter split-R-hat, bulk ESS and divergence total.

    Needs at least 4 draws per chain. With a single chain R-hat is not
    reported (NaN) and a caveat is recorded. Constant parameters are listed
    in ``degenerate`` with NaN statistics.
    """
    arr = np.asarray(draws.draws, dtype=float)
    m, n, d = arr.shape
    if n < 4:
        raise DomainError("diagnostics need at least 4 draws per chain")
    caveats = []
    if m < 2:
        caveats.append("single chain: R-hat not computed, ESS only")
    rhat = np.full(d, np.nan)
    bulk = np.full(d, np.nan)
    degenerate = []
    total = m * n
    for j in range(d):
        x = arr[:, :, j]
        if np.ptp(x) == 0:
            degenerate.append(draws.names[j])
            continue
        if m >= 2:
            rhat[j] = split_rhat(x)
        bulk[j] = min(ess_bulk(x), float(total))
    if degenerate:
        caveats.append(f"{len(degenerate)} constant parameter(s): ESS undefined")
    flags = draws.divergence_flags
    n_div = int(np.sum(flags)) if flags is not None else 0
    if flags is not None and flags.size and n_div / flags.size > 0.2:
        caveats.append(f"divergence rate {100.0 * n_div / flags.size:.1f}% exceeds 20%")
    return Diagnostics(list(draws.names), rhat, bulk, n_div, total, caveats, degenerate)
