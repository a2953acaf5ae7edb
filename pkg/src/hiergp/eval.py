"""Posterior-predictive scoring and hyperparameter transfer.

The score of a task is the predictive log-likelihood of its held-out points,

    lpY_k = sum_i log( (1/S) sum_s p(y_i | theta_s) ),

with each ``p(y_i | theta_s)`` the Gaussian predictive of one posterior draw:
the map GP conditioned on the training data, plus the noise variance implied
by the log-noise GP's predictive mean at the test input.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from hiergp.errors import DomainError
from hiergp.gp import Matern32Kernel, MeanFunction, gp_predict
from hiergp.inference.nuts import PosteriorDraws, SamplerConfig, sample
from hiergp.model.joint import LATENT_LADDER, ModelSpec
from hiergp.model.targets import STLTarget
from hiergp.model.transforms import softplus

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PredictiveSummary:
    per_task_lpy: np.ndarray
    total_lpy: float
    per_point_mean: list = field(default_factory=list)
    per_point_var: list = field(default_factory=list)
    task_ids: list = field(default_factory=list)


@dataclass
class TransferCurve:
    budgets: list
    mean_lpy: np.ndarray
    repeats: int
    method_tag: str
    task_id: int = 0
    inference_runs: int = 0
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])):
            raise DomainError("budgets must be strictly increasing")
        if self.repeats < 1:
            raise DomainError("repeats must be >= 1")


def split_fingerprint(tasks):
    """Stable hash of the train/test masks of a list of tasks."""
    h = hashlib.sha256()
    for t in tasks:
        h.update(t.label.encode())
        h.update(np.packbits(t.split_mask).tobytes())
    return h.hexdigest()[:16]


def thin_indices(total, max_draws):
    if max_draws is None or max_draws >= total:
        return np.arange(total)
    return np.unique(np.linspace(0, total - 1, max_draws).round().astype(int))


def task_parameter_draws(draws, task_id, n_train, regime=None, max_draws=None):
    """Per-draw hyperparameters and training noise field for one task.

    Returns a dict with arrays ``alpha``, ``lengthscale``, ``noise_mean``,
    ``noise_alpha``, ``noise_lengthscale`` (S,) and ``r`` (S, n_train).
    """
    regime = regime or draws.meta.get("regime")
    flat = draws.flat()
    idx = thin_indices(flat.shape[0], max_draws)
    flat = flat[idx]
    col = {n: i for i, n in enumerate(draws.names)}
    k = task_id

    def get(name):
        if name not in col:
            raise DomainError(f"draws have no parameter {name!r} (regime {regime})")
        return flat[:, col[name]]

    out = {}
    if regime == "STL":
        for p in ("alpha", "lengthscale", "noise_mean", "noise_alpha", "noise_lengthscale"):
            out[p] = get(f"{p}[{k}]")
    elif regime == "MTL_A":
        for p in ("alpha", "lengthscale", "noise_mean", "noise_alpha", "noise_lengthscale"):
            out[p] = get(p)
    elif regime == "MTL_B":
        out["alpha"] = softplus(get(f"g[{k}]"))
        out["lengthscale"] = softplus(get(f"h[{k}]"))
        for p in ("noise_mean", "noise_alpha", "noise_lengthscale"):
            out[p] = get(p)
    else:
        raise DomainError(f"unknown regime {regime!r}")
    out["r"] = (np.column_stack([get(f"r[{k},{i}]") for i in range(n_train)])
                if n_train else np.zeros((flat.shape[0], 0)))
    return out


def _noise_at_test(x_train, r_train, x_test, mean, amp, ls):
    """Posterior mean of the log-noise GP at ``x_test`` given its training values."""
    kern = Matern32Kernel(amp, ls)
    if x_train.shape[0] == 0:
        return np.full(x_test.shape[0], mean)
    # latent values are noise-free: condition with latent jitter only
    jitter = math.sqrt(LATENT_LADDER[0]) * amp
    m, _ = gp_predict(x_train, r_train, x_test, kern,
                      noise_at_train=np.full(x_train.shape[0], jitter),
                      mean=MeanFunction.constant(mean), full_cov=False)
    return m


def predicted_noise_std(dataset, draws, task_index, inputs, regime=None, max_draws=None):
    """Posterior mean of the noise std. dev. ``exp(r)`` at ``inputs``."""
    params = task_parameter_draws(draws, task_index, dataset.n_train, regime, max_draws)
    x_tr = dataset.train_inputs
    x = np.asarray(inputs, dtype=float).reshape(-1, 2)
    sig = np.zeros(x.shape[0])
    S = params["alpha"].shape[0]
    for s in range(S):
        sig += np.exp(_noise_at_test(x_tr, params["r"][s], x, params["noise_mean"][s],
                                     params["noise_alpha"][s], params["noise_lengthscale"][s]))
    return sig / S


def pointwise_log_densities(dataset, params, x_test=None, y_test=None):
    """(S, m) matrix of per-draw predictive log-densities at the test points."""
    x_tr, y_tr = dataset.train_inputs, dataset.train_outputs
    x_te = dataset.test_inputs if x_test is None else x_test
    y_te = dataset.test_outputs if y_test is None else y_test
    S = params["alpha"].shape[0]
    out = np.empty((S, x_te.shape[0]))
    means = np.empty_like(out)
    variances = np.empty_like(out)
    for s in range(S):
        r_tr = params["r"][s]
        r_te = _noise_at_test(x_tr, r_tr, x_te, params["noise_mean"][s],
                              params["noise_alpha"][s], params["noise_lengthscale"][s])
        mu, var = gp_predict(x_tr, y_tr, x_te,
                             Matern32Kernel(params["alpha"][s], params["lengthscale"][s]),
                             noise_at_train=np.exp(r_tr), noise_at_test=np.exp(r_te),
                             full_cov=False)
        out[s] = -0.5 * (LOG_2PI + np.log(var) + (y_te - mu) ** 2 / var)
        means[s] = mu
        variances[s] = var
    return out, means, variances


def mixture_log_likelihood(log_dens):
    """sum_i log mean_s exp(log_dens[s, i]) via log-sum-exp."""
    log_dens = np.asarray(log_dens, dtype=float)
    if log_dens.ndim != 2 or log_dens.shape[0] == 0:
        raise DomainError("need at least one posterior sample")
    per_point = logsumexp(log_dens, axis=0) - math.log(log_dens.shape[0])
    return float(np.sum(per_point)), per_point


def predictive_log_likelihood(test, draws, task_index, regime=None, max_draws=None,
                              return_details=False):
    """Predictive log-likelihood of ``test``'s held-out points under ``draws``.

    Parameters
    ----------
    test : TaskDataset
        Training rows condition the GPs; test rows are scored.
    draws : PosteriorDraws
    task_index : int
        Task id used in the draws' parameter names.
    regime : str, optional
        Defaults to ``draws.meta["regime"]``.
    max_draws : int, optional
        Evenly thin the posterior to at most this many draws.

    Returns
    -------
    float, or ``(lpy, per_point_lpy, mixture_mean, mixture_var)`` when
    ``return_details`` is set.
    """
    if draws.n_draws == 0:
        raise DomainError("no posterior samples")
    params = task_parameter_draws(draws, task_index, test.n_train, regime, max_draws)
    logp, means, variances = pointwise_log_densities(test, params)
    lpy, per_point = mixture_log_likelihood(logp)
    if not return_details:
        return lpy
    mix_mean = means.mean(axis=0)
    mix_var = (variances + means ** 2).mean(axis=0) - mix_mean ** 2
    return lpy, per_point, mix_mean, mix_var


def point_estimate_draws(values, task_id, n_train, regime="MTL_A"):
    """A one-sample PosteriorDraws holding fixed hyperparameters.

    The noise field at the training inputs is set to the noise-GP mean.
    """
    k = task_id
    names = [f"{p}[{k}]" for p in ("alpha", "lengthscale", "noise_mean", "noise_alpha",
                                   "noise_lengthscale")]
    row = [values["alpha"], values["lengthscale"], values["noise_mean"],
           values["noise_alpha"], values["noise_lengthscale"]]
    names += [f"r[{k},{i}]" for i in range(n_train)]
    row += [values["noise_mean"]] * n_train
    return PosteriorDraws(names, np.asarray(row, dtype=float).reshape(1, 1, -1),
                          np.zeros((1, 1), dtype=bool), np.array([np.nan]),
                          meta={"regime": "STL", "point_estimate_of": regime})


def predict_hyperparams(inter_draws, train_seps, target_sep, task_ids=None, max_draws=None,
                        return_samples=False):
    """Point estimates of amplitude and lengthscale at an unseen separation.

    For every draw the intertask GPs ``g`` and ``h`` are conditioned on their
    sampled values at ``train_seps``; the predictive mean at ``target_sep``
    is mapped through softplus, and the results are averaged over draws.
    """
    if inter_draws.n_draws == 0:
        raise DomainError("empty posterior")
    if not (np.isfinite(target_sep) and target_sep >= 0):
        raise DomainError("target_sep must be finite and non-negative")
    seps = np.asarray(train_seps, dtype=float).ravel()
    task_ids = list(range(seps.shape[0])) if task_ids is None else list(task_ids)
    flat = inter_draws.flat()[thin_indices(inter_draws.n_draws, max_draws)]
    col = {n: i for i, n in enumerate(inter_draws.names)}
    results = {}
    for f in ("g", "h"):
        vals = flat[:, [col[f"{f}[{k}]"] for k in task_ids]]
        amp = flat[:, col[f"{f}_amplitude"]]
        ls = flat[:, col[f"{f}_lengthscale"]]
        slope = flat[:, col[f"{f}_slope"]]
        icpt = flat[:, col[f"{f}_intercept"]]
        pred = np.empty(flat.shape[0])
        for s in range(flat.shape[0]):
            mean = MeanFunction.linear(slope[s], icpt[s])
            jitter = math.sqrt(LATENT_LADDER[0]) * amp[s]
            m, _ = gp_predict(seps, vals[s], np.array([target_sep]),
                              Matern32Kernel(amp[s], ls[s]),
                              noise_at_train=np.full(seps.shape[0], jitter), mean=mean,
                              full_cov=False)
            pred[s] = softplus(m[0])
        results[f] = pred
    if return_samples:
        return results["g"], results["h"]
    return float(np.mean(results["g"])), float(np.mean(results["h"]))


def posterior_mean_hypers(draws, regime=None):
    regime = regime or draws.meta.get("regime")
    out = {}
    for p in ("noise_mean", "noise_alpha", "noise_lengthscale"):
        out[p] = draws.mean(p)
    if regime == "MTL_A":
        out["alpha"] = draws.mean("alpha")
        out["lengthscale"] = draws.mean("lengthscale")
    return out


def fit_stl(dataset, config, constants=None, task_id=0):
    """NUTS fit of the single-task model on ``dataset``'s training rows."""
    target = STLTarget(dataset, constants, task_id=task_id)
    draws = sample(target, config=config)
    draws.meta.update({"regime": "STL", "task_ids": [task_id]})
    return draws


def transfer_experiment(population, holdout_ids, budgets, repeats, methods, fits=None,
                        sampler_config=None, constants=None, seed=0, max_draws=None,
                        max_test=None):
    """Budget curves on held-out tasks.

    Parameters
    ----------
    population : Population or list of TaskDataset
        Each hold-out task's ``split`` training rows form the pool that
        budgets are drawn from; its test rows are the fixed test set.
    holdout_ids : list of int
    budgets : list of int
        Strictly increasing training budgets ``N``.
    repeats : int
    methods : list of str
        Any of ``STL``, ``MTL_A``, ``MTL_B``.
    fits : dict
        PosteriorDraws for ``MTL_A`` / ``MTL_B`` fitted without the hold-outs.
    sampler_config : SamplerConfig
        Used for the per-budget STL re-fits.

    Returns
    -------
    list of TransferCurve
        One per (method, hold-out task); ``rows`` holds per-repeat values.
    """
    tasks = population.tasks if hasattr(population, "tasks") else list(population)
    budgets = list(budgets)
    fits = fits or {}
    cfg = sampler_config or SamplerConfig(chains=2, warmup_iters=300, sampling_iters=300)
    curves = []
    for k in holdout_ids:
        task = tasks[k]
        pool = np.flatnonzero(task.split_mask)
        test_idx = np.flatnonzero(~task.split_mask)
        if max_test is not None and test_idx.shape[0] > max_test:
            test_idx = np.sort(np.random.default_rng([seed, k, 7]).choice(
                test_idx, max_test, replace=False))
        if budgets and budgets[-1] > pool.shape[0]:
            raise DomainError(
                f"budget {budgets[-1]} exceeds the {pool.shape[0]} training points of task {k}")
        hypers = {}
        for m in methods:
            if m == "MTL_A":
                hypers[m] = posterior_mean_hypers(fits["MTL_A"], "MTL_A")
            elif m == "MTL_B":
                fb = fits["MTL_B"]
                tids = fb.meta["task_ids"]
                seps = fb.meta["separations"]
                a, l = predict_hyperparams(fb, seps, task.separation, tids, max_draws)
                hypers[m] = dict(posterior_mean_hypers(fb, "MTL_B"), alpha=a, lengthscale=l)
            elif m != "STL":
                raise DomainError(f"unknown method {m!r}")

        # one subset per (repeat, budget), shared by every method
        subsets = {}
        for rep in range(repeats):
            rng = np.random.default_rng([seed, k, rep])
            perm = rng.permutation(pool)
            for n in budgets:
                subsets[rep, n] = task.subset(np.sort(perm[:n]), test_idx)

        for m in methods:
            rows = []
            runs = 0
            for n in budgets:
                for rep in range(repeats):
                    sub = subsets[rep, n]
                    if m == "STL":
                        c = SamplerConfig(cfg.chains, cfg.warmup_iters, cfg.sampling_iters,
                                          cfg.target_accept, cfg.max_tree_depth,
                                          int(np.random.SeedSequence([seed, k, rep, n])
                                              .generate_state(1, np.uint64)[0]))
                        draws = fit_stl(sub, c, constants, task_id=k)
                        runs += 1
                    else:
                        draws = point_estimate_draws(hypers[m], k, n, m)
                    lpy = predictive_log_likelihood(sub, draws, k, "STL", max_draws)
                    rows.append({"method": m, "task": k, "budget": n, "repeat": rep,
                                 "lpy": lpy})
                    log.info("transfer %s task %d N=%d repeat %d: lpY %.3f", m, k, n, rep, lpy)
            mean = np.array([np.mean([r["lpy"] for r in rows if r["budget"] == n])
                             for n in budgets])
            curves.append(TransferCurve(budgets, mean, repeats, m, k, runs, rows))
    return curves


def compare_methods(population, fits, task_ids=None, max_draws=None):
    """Per-task and total lpY for each fitted method.

    ``fits`` maps a method tag to its PosteriorDraws. Every fit must have
    been made on the same train/test split as ``population``.

    Returns
    -------
    dict
        ``{"tasks": [...], "per_task": {method: array}, "total": {method: float}}``
    """
    tasks = population.tasks if hasattr(population, "tasks") else list(population)
    fp = split_fingerprint(tasks)
    available = None
    for tag, draws in fits.items():
        got = draws.meta.get("split_fingerprint")
        if got is not None and got != fp:
            raise DomainError(f"fit {tag!r} was made on a different train/test split")
        ids = set(draws.meta.get("task_ids", range(len(tasks))))
        available = ids if available is None else available & ids
    if task_ids is None:
        task_ids = sorted(available or [])
    per_task = {}
    total = {}
    for tag, draws in fits.items():
        regime = draws.meta.get("regime", tag)
        vals = np.array([predictive_log_likelihood(tasks[k], draws, k, regime, max_draws)
                         for k in task_ids])
        per_task[tag] = vals
        total[tag] = float(np.sum(vals))
    return {"tasks": list(task_ids), "per_task": per_task, "total": total}


def summarise(population, draws, task_ids=None, max_draws=None):
    """PredictiveSummary of one fit over ``task_ids``."""
    tasks = population.tasks if hasattr(population, "tasks") else list(population)
    regime = draws.meta.get("regime")
    task_ids = draws.meta.get("task_ids") if task_ids is None else task_ids
    lpys, means, variances = [], [], []
    for k in task_ids:
        lpy, _, mu, var = predictive_log_likelihood(tasks[k], draws, k, regime, max_draws,
                                                    return_details=True)
        lpys.append(lpy)
        means.append(mu)
        variances.append(var)
    lpys = np.asarray(lpys)
    return PredictiveSummary(lpys, float(lpys.sum()), means, variances, list(task_ids))


def model_spec_for(regime, n_tasks, constants=None):
    from hiergp.model.priors import PriorConstants

    return ModelSpec(regime, constants or PriorConstants(), 1 if regime == "STL" else n_tasks)
