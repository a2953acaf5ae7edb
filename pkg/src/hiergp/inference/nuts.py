"""Multinomial No-U-Turn sampler with windowed warmup.

Trajectories are extended by repeated doubling; a state is drawn from each
trajectory by multinomial weights ``exp(-H)`` (progressive biased sampling
at the top level, uniform within subtrees). Expansion stops when the
generalised no-U-turn criterion fails for the whole trajectory or for any
pair of merged subtrees, on divergence, or at ``max_tree_depth``.

Warmup follows the usual three-phase layout: a fast window adapting only the
step size, doubling slow windows that also estimate a diagonal inverse
metric, and a final fast window.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from hiergp.errors import DomainError, InitializationError

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0
INIT_RADIUS = 2.0
INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.warmup_iters < 1 or self.sampling_iters < 1:
            raise DomainError("chains, warmup_iters and sampling_iters must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise DomainError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise DomainError("max_tree_depth must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")


@dataclass
class PosteriorDraws:
    """Post-warmup draws in constrained space, shaped (chains, iters, dim)."""

    names: list
    draws: np.ndarray
    divergence_flags: np.ndarray
    step_size: np.ndarray
    accept_stat: np.ndarray = None
    tree_depth: np.ndarray = None
    n_leapfrog: np.ndarray = None
    inv_metric: np.ndarray = None
    warmup_accept_stat: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_iters(self):
        return self.draws.shape[1]

    @property
    def n_draws(self):
        return self.n_chains * self.n_iters

    def index(self, name):
        return self.names.index(name)

    def __getitem__(self, name):
        """All draws of one parameter, chains stacked: shape (chains * iters,)."""
        return self.draws[:, :, self.index(name)].reshape(-1)

    def flat(self):
        return self.draws.reshape(-1, self.draws.shape[2])

    def mean(self, name):
        return float(np.mean(self[name]))

    def select(self, pattern_fn):
        idx = [i for i, n in enumerate(self.names) if pattern_fn(n)]
        return [self.names[i] for i in idx], self.draws[:, :, idx]


class _Tree:
    """Summary of a (sub)trajectory in build order."""

    __slots__ = ("q_end", "p_end", "g_end", "lp_end", "p_begin", "ps_begin", "ps_end",
                 "rho", "log_w", "q_s", "lp_s", "g_s")


def _u_turn_ok(ps_a, ps_b, rho):
    return float(ps_a @ rho) > 0.0 and float(ps_b @ rho) > 0.0


class NutsChain:
    """One Markov chain over an unconstrained target.

    ``target(q)`` must return ``(log_density, gradient)``; a log density of
    ``-inf`` marks an invalid point.
    """

    def __init__(self, target, dim, rng, max_tree_depth=10):
        self.target = target
        self.dim = dim
        self.rng = rng
        self.max_tree_depth = max_tree_depth
        self.inv_metric = np.ones(dim)
        self.step_size = 1.0

    # -- dynamics ---------------------------------------------------------
    def _kinetic(self, p):
        with np.errstate(over="ignore", invalid="ignore"):  # inf energy -> divergence
            return 0.5 * float(p @ (self.inv_metric * p))

    def _sample_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def leapfrog(self, q, p, g, eps):
        p = p + 0.5 * eps * g
        q = q + eps * (self.inv_metric * p)
        lp, g = self.target(q)
        p = p + 0.5 * eps * g
        return q, p, g, lp

    def _build(self, q, p, g, depth, eps, H0, stats):
        if depth == 0:
            q1, p1, g1, lp1 = self.leapfrog(q, p, g, eps)
            H = -lp1 + self._kinetic(p1)
            if not math.isfinite(H):
                H = math.inf
            stats["n_leapfrog"] += 1
            dH = H0 - H
            stats["sum_accept"] += 1.0 if dH > 0 else math.exp(dH)
            if H - H0 > DIVERGENCE_THRESHOLD:
                stats["divergent"] = True
                return None
            t = _Tree()
            ps = self.inv_metric * p1
            t.q_end, t.p_end, t.g_end, t.lp_end = q1, p1, g1, lp1
            t.p_begin, t.ps_begin, t.ps_end = p1, ps, ps
            t.rho = p1.copy()
            t.log_w = dH
            t.q_s, t.lp_s, t.g_s = q1, lp1, g1
            return t

        init = self._build(q, p, g, depth - 1, eps, H0, stats)
        if init is None:
            return None
        final = self._build(init.q_end, init.p_end, init.g_end, depth - 1, eps, H0, stats)
        if final is None:
            return None

        t = _Tree()
        t.log_w = np.logaddexp(init.log_w, final.log_w)
        if math.log1p(-self.rng.uniform()) < final.log_w - t.log_w:
            t.q_s, t.lp_s, t.g_s = final.q_s, final.lp_s, final.g_s
        else:
            t.q_s, t.lp_s, t.g_s = init.q_s, init.lp_s, init.g_s
        t.rho = init.rho + final.rho
        t.q_end, t.p_end, t.g_end, t.lp_end = final.q_end, final.p_end, final.g_end, final.lp_end
        t.p_begin, t.ps_begin, t.ps_end = init.p_begin, init.ps_begin, final.ps_end

        ok = _u_turn_ok(t.ps_begin, t.ps_end, t.rho)
        ok = ok and _u_turn_ok(init.ps_begin, final.ps_begin, init.rho + final.p_begin)
        ok = ok and _u_turn_ok(init.ps_end, final.ps_end, final.rho + init.p_end)
        return t if ok else None

    def transition(self, q, lp, g):
        """One NUTS transition from ``q``; returns the new state and statistics."""
        p0 = self._sample_momentum()
        H0 = -lp + self._kinetic(p0)
        stats = {"n_leapfrog": 0, "sum_accept": 0.0, "divergent": False}

        # ends of the full trajectory: backward (minus) and forward (plus)
        q_m = q_p = q
        p_m = p_p = p0
        g_m = g_p = g
        ps_m = ps_p = self.inv_metric * p0
        rho = p0.copy()
        log_w = 0.0
        q_s, lp_s, g_s = q, lp, g
        depth = 0

        while depth < self.max_tree_depth:
            forward = self.rng.uniform() > 0.5
            if forward:
                sub = self._build(q_p, p_p, g_p, depth, self.step_size, H0, stats)
            else:
                sub = self._build(q_m, p_m, g_m, depth, -self.step_size, H0, stats)
            depth += 1
            if sub is None:
                break

            if math.log1p(-self.rng.uniform()) < sub.log_w - log_w:
                q_s, lp_s, g_s = sub.q_s, sub.lp_s, sub.g_s
            log_w = np.logaddexp(log_w, sub.log_w)

            if forward:
                rho_bck, rho_fwd = rho, sub.rho
                p_bck_fwd, ps_bck_fwd = p_p, ps_p
                p_fwd_bck, ps_fwd_bck = sub.p_begin, sub.ps_begin
                q_p, p_p, g_p, ps_p = sub.q_end, sub.p_end, sub.g_end, sub.ps_end
            else:
                rho_bck, rho_fwd = sub.rho, rho
                p_bck_fwd, ps_bck_fwd = sub.p_begin, sub.ps_begin
                p_fwd_bck, ps_fwd_bck = p_m, ps_m
                q_m, p_m, g_m, ps_m = sub.q_end, sub.p_end, sub.g_end, sub.ps_end
            rho = rho_bck + rho_fwd
            ok = _u_turn_ok(ps_m, ps_p, rho)
            ok = ok and _u_turn_ok(ps_m, ps_fwd_bck, rho_bck + p_fwd_bck)
            ok = ok and _u_turn_ok(ps_bck_fwd, ps_p, rho_fwd + p_bck_fwd)
            if not ok:
                break

        n = max(stats["n_leapfrog"], 1)
        info = {
            "accept_stat": stats["sum_accept"] / n,
            "n_leapfrog": stats["n_leapfrog"],
            "tree_depth": depth,
            "divergent": stats["divergent"],
        }
        return q_s, lp_s, g_s, info

    # -- step size --------------------------------------------------------
    def find_reasonable_step_size(self, q, lp, g):
        """Double or halve the step size until one-step acceptance crosses 0.5."""
        eps = self.step_size
        threshold = math.log(0.5)

        def delta_h(eps):
            p = self._sample_momentum()
            H0 = -lp + self._kinetic(p)
            _, p1, _, lp1 = self.leapfrog(q, p, g, eps)
            H = -lp1 + self._kinetic(p1)
            return H0 - H if math.isfinite(H) else -math.inf

        direction = 1 if delta_h(eps) > threshold else -1
        for _ in range(100):
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
            dh = delta_h(eps)
            if direction == 1 and not dh > threshold:
                break
            if direction == -1 and not dh < threshold:
                break
        self.step_size = float(np.clip(eps, 1e-12, 1e7))
        return self.step_size


class DualAveraging:
    """Step-size adaptation toward a target mean acceptance statistic."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept_stat):
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** -self.kappa
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    @property
    def final_step_size(self):
        return math.exp(self.x_bar)


def warmup_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Iteration indices at which each slow (metric) window ends.

    Returns ``(init_buffer, window_ends)``; window end indices are exclusive.
    """
    if n_warmup < 20:
        return n_warmup, []
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    ends = []
    start, size = init_buffer, base_window
    slow_end = n_warmup - term_buffer
    while start < slow_end:
        end = start + size
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end)
        start, size = end, 2 * size
    return init_buffer, ends


def regularised_variance(samples):
    n = samples.shape[0]
    var = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def initialize(target, rng, dim=None, radius=INIT_RADIUS, attempts=INIT_ATTEMPTS):
    """Uniform draw on ``[-radius, radius]^dim`` with a finite log density.

    Redraws up to ``attempts`` times; then raises InitializationError naming
    the offending coordinate or term.
    """
    dim = target.dim if dim is None else dim
    first_problem = None
    for _ in range(attempts):
        q = rng.uniform(-radius, radius, dim)
        lp, g = target(q)
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return q
        if first_problem is None:
            first_problem = _describe_failure(target, q)
    raise InitializationError(
        f"no finite initial point after {attempts} attempts ({first_problem})")


def _describe_failure(target, q):
    names = getattr(target, "names", None)
    try:
        lp, g = target.log_density_and_grad(q) if hasattr(target, "log_density_and_grad") \
            else target(q)
    except Exception as exc:  # noqa: BLE001
        return f"{type(exc).__name__}: {exc}"
    if not math.isfinite(lp):
        return f"log density {lp}"
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size and names:
        return f"non-finite gradient for {names[bad[0]]!r}"
    return "non-finite gradient"


def _run_chain(target, dim, init, cfg, rng, chain_id, constrain):
    chain = NutsChain(target, dim, rng, cfg.max_tree_depth)
    q = np.asarray(init, dtype=float).copy()
    lp, g = target(q)
    if not math.isfinite(lp):
        raise InitializationError(f"chain {chain_id}: log density at init is {lp}")
    chain.find_reasonable_step_size(q, lp, g)
    da = DualAveraging(chain.step_size, cfg.target_accept)
    init_buffer, ends = warmup_windows(cfg.warmup_iters)
    window_start = init_buffer
    window = []
    warm_accept = np.empty(cfg.warmup_iters)

    for it in range(cfg.warmup_iters):
        q, lp, g, info = chain.transition(q, lp, g)
        warm_accept[it] = info["accept_stat"]
        chain.step_size = da.update(info["accept_stat"])
        if ends and window_start <= it < ends[0]:
            window.append(q.copy())
        if ends and it + 1 == ends[0]:
            chain.inv_metric = regularised_variance(np.asarray(window))
            window = []
            window_start = ends.pop(0)
            chain.find_reasonable_step_size(q, lp, g)
            da.restart(chain.step_size)
            log.info("chain %d: metric window ending at %d, step size %.3g",
                     chain_id, it + 1, chain.step_size)
    chain.step_size = da.final_step_size
    log.info("chain %d: warmup done, step size %.4g", chain_id, chain.step_size)

    n = cfg.sampling_iters
    dim_out = len(constrain(q))
    draws = np.empty((n, dim_out))
    accept = np.empty(n)
    depth = np.empty(n, dtype=int)
    nleap = np.empty(n, dtype=int)
    div = np.zeros(n, dtype=bool)
    for it in range(n):
        q, lp, g, info = chain.transition(q, lp, g)
        draws[it] = constrain(q)
        accept[it] = info["accept_stat"]
        depth[it] = info["tree_depth"]
        nleap[it] = info["n_leapfrog"]
        div[it] = info["divergent"]
    log.info("chain %d: sampling done, %d divergences, mean accept %.3f",
             chain_id, int(div.sum()), float(accept.mean()))
    return (draws, div, chain.step_size, accept, depth, nleap, chain.inv_metric.copy(),
            warm_accept)


def sample(target, init=None, config=None, names=None, dim=None):
    """Draw from ``target`` with NUTS.

    Parameters
    ----------
    target : callable
        ``target(q) -> (log_density, gradient)`` on unconstrained space. If it
        has ``param_names`` and ``constrain`` (the model targets do), draws
        are reported in constrained space under those names.
    init : array_like, optional
        Common initial point (1-D) or one row per chain (2-D). Drawn by
        :func:`initialize` when omitted.
    config : SamplerConfig
    names : list of str, optional
        Parameter names when ``target`` is a plain callable.

    Returns
    -------
    PosteriorDraws
    """
    cfg = SamplerConfig() if config is None else config
    if dim is None:
        dim = getattr(target, "dim", None)
        if dim is None:
            if init is None:
                raise DomainError("dim or init is needed for a plain callable target")
            dim = np.atleast_2d(init).shape[-1]
    constrain = getattr(target, "constrain", lambda q: np.asarray(q, dtype=float).copy())
    if names is None:
        names = getattr(target, "param_names", None) or [f"x[{i}]" for i in range(dim)]

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    outs = []
    for c in range(cfg.chains):
        rng = np.random.default_rng(seeds[c])
        if init is None:
            q0 = initialize(target, rng, dim)
        else:
            arr = np.asarray(init, dtype=float)
            q0 = arr[c] if arr.ndim == 2 else arr
        outs.append(_run_chain(target, dim, q0, cfg, rng, c, constrain))

    draws = np.stack([o[0] for o in outs])
    if not np.all(np.isfinite(draws)):
        raise InitializationError("sampler produced non-finite draws")
    result = PosteriorDraws(
        names=list(names),
        draws=draws,
        divergence_flags=np.stack([o[1] for o in outs]),
        step_size=np.array([o[2] for o in outs]),
        accept_stat=np.stack([o[3] for o in outs]),
        tree_depth=np.stack([o[4] for o in outs]),
        n_leapfrog=np.stack([o[5] for o in outs]),
        inv_metric=np.stack([o[6] for o in outs]),
        warmup_accept_stat=np.stack([o[7] for o in outs]),
    )
    rate = result.divergence_flags.mean()
    if rate > 0.2:
        log.warning("divergence rate %.1f%% exceeds 20%%", 100 * rate)
    return result
