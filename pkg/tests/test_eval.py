import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hiergp import eval as ev
from hiergp.datagen import Population, NormalisationRecord, TaskDataset
from hiergp.errors import DomainError
from hiergp.gp import Matern32Kernel, MeanFunction, gp_predict
from hiergp.inference.nuts import PosteriorDraws, SamplerConfig

from conftest import toy_task
from oracles import brute_gp_predict, naive_lpy, softplus

HYP = ("alpha", "lengthscale", "noise_mean", "noise_alpha", "noise_lengthscale")


def stl_draws(rows, task_id=0, n_train=0, chains=1):
    """PosteriorDraws in the single-task layout from a list of dicts."""
    names = [f"{p}[{task_id}]" for p in HYP] + [f"r[{task_id},{i}]" for i in range(n_train)]
    arr = np.array([[d[p] for p in HYP] + list(d.get("r", [])) for d in rows])
    arr = arr.reshape(chains, -1, len(names))
    return PosteriorDraws(names, arr, np.zeros(arr.shape[:2], bool), np.ones(chains),
                          meta={"regime": "STL", "task_ids": [task_id]})


def random_rows(rng, S, n_train):
    return [{"alpha": rng.uniform(0.5, 1.5), "lengthscale": rng.uniform(0.2, 0.8),
             "noise_mean": rng.uniform(-2, -1), "noise_alpha": rng.uniform(0.2, 0.8),
             "noise_lengthscale": rng.uniform(0.2, 0.8),
             "r": rng.normal(-1.5, 0.3, n_train)} for _ in range(S)]


def test_single_sample_standard_normal():
    t = TaskDataset((0, 1), 0.5, [[0.3, 0.2]], [0.0], [False])
    d = stl_draws([{"alpha": math.sqrt(0.5), "lengthscale": 1.0,
                    "noise_mean": 0.5 * math.log(0.5), "noise_alpha": 1.0,
                    "noise_lengthscale": 1.0}])
    assert ev.predictive_log_likelihood(t, d, 0) == pytest.approx(-0.918939, abs=1e-6)


def test_two_samples_average_densities():
    t = TaskDataset((0, 1), 0.5, [[0.3, 0.2]], [0.4], [False])
    rows = [{"alpha": 0.6, "lengthscale": 1.0, "noise_mean": -1.0, "noise_alpha": 1.0,
             "noise_lengthscale": 1.0},
            {"alpha": 1.3, "lengthscale": 1.0, "noise_mean": -0.2, "noise_alpha": 1.0,
             "noise_lengthscale": 1.0}]
    p = stats.norm(0, math.sqrt(0.36 + math.exp(-2.0))).pdf(0.4)
    q = stats.norm(0, math.sqrt(1.69 + math.exp(-0.4))).pdf(0.4)
    got = ev.predictive_log_likelihood(t, stl_draws(rows), 0)
    assert got == pytest.approx(math.log((p + q) / 2), rel=1e-12)


def test_mixture_log_likelihood_handles_underflow():
    lp = np.array([[-1000.0], [-1001.0]])
    total, _ = ev.mixture_log_likelihood(lp)
    assert total == pytest.approx(-1000.0 + math.log((1 + math.exp(-1)) / 2))
    with pytest.raises(DomainError):
        ev.mixture_log_likelihood(np.zeros((0, 3)))


def test_matches_naive_double_loop():
    rng = np.random.default_rng(42)
    t = toy_task(5, seed=2, n_test=3)
    rows = random_rows(rng, 10, 5)
    got = ev.predictive_log_likelihood(t, stl_draws(rows, n_train=5), 0)
    ref = naive_lpy(t.train_inputs, t.train_outputs, t.test_inputs, t.test_outputs, rows)
    assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_invariant_to_sample_and_point_order():
    rng = np.random.default_rng(7)
    t = toy_task(6, seed=3, n_test=5)
    rows = random_rows(rng, 8, 6)
    base = ev.predictive_log_likelihood(t, stl_draws(rows, n_train=6), 0)
    shuffled = [rows[i] for i in rng.permutation(8)]
    assert ev.predictive_log_likelihood(t, stl_draws(shuffled, n_train=6), 0) == \
        pytest.approx(base, abs=1e-12)
    perm = rng.permutation(5)
    t2 = t.subset(np.arange(6), 6 + perm)
    assert ev.predictive_log_likelihood(t2, stl_draws(rows, n_train=6), 0) == \
        pytest.approx(base, abs=1e-12)


def test_zero_samples_is_domain_error():
    t = toy_task(3, n_test=2)
    d = PosteriorDraws(["alpha[0]"], np.zeros((1, 0, 1)), np.zeros((1, 0), bool), np.ones(1),
                       meta={"regime": "STL"})
    with pytest.raises(DomainError):
        ev.predictive_log_likelihood(t, d, 0)


def test_conjugate_scale_mixture_converges_to_student_t():
    # precision ~ Gamma(a, b), y ~ N(0, 1/precision)  =>  y ~ t_{2a}(0, sqrt(b/a))
    a, b, S = 3.0, 2.0, 10_000
    rng = np.random.default_rng(0)
    tau = rng.gamma(a, 1.0 / b, S)
    rows = [{"alpha": 1e-7, "lengthscale": 1.0, "noise_mean": -0.5 * math.log(v),
             "noise_alpha": 1.0, "noise_lengthscale": 1.0} for v in tau]
    y = np.array([-1.2, 0.1, 0.7])
    t = TaskDataset((0, 1), 0.5, np.zeros((3, 2)) + [[0.1, 0.1]], y, np.zeros(3, bool))
    got = ev.predictive_log_likelihood(t, stl_draws(rows), 0)
    exact = stats.t(2 * a, 0.0, math.sqrt(b / a)).logpdf(y).sum()
    assert abs(got - exact) < 0.01


def test_details_and_summary():
    rng = np.random.default_rng(1)
    tasks = [toy_task(4, seed=k, task_id=k, n_test=3) for k in range(2)]
    rows = random_rows(rng, 4, 4)
    names = []
    cols = []
    for k in range(2):
        d = stl_draws(rows, task_id=k, n_train=4)
        names += d.names
        cols.append(d.draws)
    draws = PosteriorDraws(names, np.concatenate(cols, axis=2), np.zeros((1, 4), bool),
                           np.ones(1), meta={"regime": "STL", "task_ids": [0, 1]})
    pop = Population(tasks, NormalisationRecord(1, 0, 1))
    s = ev.summarise(pop, draws)
    assert s.total_lpy == pytest.approx(s.per_task_lpy.sum(), abs=1e-10)
    assert len(s.per_point_mean) == 2 and s.per_point_var[0].shape == (3,)
    assert np.all(s.per_point_var[0] > 0)


def test_interpolating_fit_reproduces_training_outputs():
    t = toy_task(6, seed=5)
    rows = [{"alpha": 1.0, "lengthscale": 0.5, "noise_mean": -12.0, "noise_alpha": 0.1,
             "noise_lengthscale": 0.5, "r": np.full(6, -12.0)}]
    params = ev.task_parameter_draws(stl_draws(rows, n_train=6), 0, 6)
    _, mu, _ = ev.pointwise_log_densities(t, params, t.train_inputs, t.train_outputs)
    np.testing.assert_allclose(mu[0], t.train_outputs, atol=1e-4)


# --- intertask prediction ---------------------------------------------------

INTER = ("g_amplitude", "g_lengthscale", "g_slope", "g_intercept",
         "h_amplitude", "h_lengthscale", "h_slope", "h_intercept")


def inter_draws(rows, K):
    names = list(INTER) + [f"g[{k}]" for k in range(K)] + [f"h[{k}]" for k in range(K)]
    arr = np.array([[r[n] for n in INTER] + list(r["g"]) + list(r["h"]) for r in rows])
    return PosteriorDraws(names, arr[None], np.zeros((1, len(rows)), bool), np.ones(1),
                          meta={"regime": "MTL_B"})


def random_inter(rng, S, K, amp=None):
    out = []
    for _ in range(S):
        r = {n: rng.uniform(0.3, 1.5) for n in INTER}
        r["g_slope"], r["h_slope"] = rng.uniform(0, 3, 2)
        r["g_intercept"], r["h_intercept"] = rng.uniform(-1, 1, 2)
        if amp is not None:
            r["g_amplitude"] = r["h_amplitude"] = amp
        r["g"], r["h"] = rng.normal(0.5, 0.5, K), rng.normal(0.0, 0.5, K)
        out.append(r)
    return out


def test_predict_hyperparams_interpolates_at_a_knot():
    rng = np.random.default_rng(0)
    seps = np.array([0.2, 0.5, 0.9])
    rows = random_inter(rng, 1, 3)
    a, l = ev.predict_hyperparams(inter_draws(rows, 3), seps, 0.5)
    assert a == pytest.approx(softplus(rows[0]["g"][1]), abs=1e-5)
    assert l == pytest.approx(softplus(rows[0]["h"][1]), abs=1e-5)


def test_predict_hyperparams_prior_mean_limit():
    rng = np.random.default_rng(1)
    seps = np.array([0.2, 0.5, 0.9])
    rows = random_inter(rng, 1, 3, amp=1e-8)
    r = rows[0]
    # latents drawn from the vanishing-amplitude prior sit on the linear mean
    r["g"] = r["g_slope"] * seps + r["g_intercept"] + 1e-8 * rng.normal(size=3)
    a, _ = ev.predict_hyperparams(inter_draws(rows, 3), seps, 1.3)
    assert a == pytest.approx(softplus(r["g_slope"] * 1.3 + r["g_intercept"]), rel=1e-6)


def test_predict_hyperparams_matches_dense_conditioning():
    rng = np.random.default_rng(2)
    seps = np.array([0.25, 0.4, 0.7])
    rows = random_inter(rng, 6, 3)
    a, l = ev.predict_hyperparams(inter_draws(rows, 3), seps, 0.95)
    ref_a, ref_l = [], []
    for r in rows:
        for f, acc in (("g", ref_a), ("h", ref_l)):
            amp = r[f"{f}_amplitude"]
            mf = lambda x, r=r, f=f: r[f"{f}_slope"] * np.ravel(x) + r[f"{f}_intercept"]  # noqa: E731
            mu, _ = brute_gp_predict(seps[:, None], r[f], np.array([[0.95]]), amp,
                                     r[f"{f}_lengthscale"], np.full(3, math.sqrt(1e-9) * amp),
                                     mean_fn=mf)
            acc.append(softplus(mu[0]))
    assert a == pytest.approx(np.mean(ref_a), rel=1e-9)
    assert l == pytest.approx(np.mean(ref_l), rel=1e-9)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31), st.floats(0.0, 50.0))
def test_predict_hyperparams_positive(seed, target):
    rows = random_inter(np.random.default_rng(seed), 2, 3)
    for r in rows:
        r["g"] = r["g"] - 40.0
    a, l = ev.predict_hyperparams(inter_draws(rows, 3), [0.1, 0.2, 0.3], target)
    assert a > 0 and l > 0


def test_predict_hyperparams_errors():
    rows = random_inter(np.random.default_rng(0), 1, 2)
    d = inter_draws(rows, 2)
    with pytest.raises(DomainError):
        ev.predict_hyperparams(d, [0.1, 0.2], -0.5)
    with pytest.raises(DomainError):
        ev.predict_hyperparams(d, [0.1, 0.2], float("nan"))
    empty = PosteriorDraws(d.names, np.zeros((1, 0, len(d.names))), np.zeros((1, 0), bool),
                           np.ones(1))
    with pytest.raises(DomainError):
        ev.predict_hyperparams(empty, [0.1, 0.2], 0.3)


def test_mtl_b_task_parameters_are_softplus_of_latents():
    rows = random_inter(np.random.default_rng(3), 2, 2)
    d = inter_draws(rows, 2)
    extra = ["noise_mean", "noise_alpha", "noise_lengthscale", "r[1,0]"]
    arr = np.concatenate([d.draws, np.ones((1, 2, 4))], axis=2)
    d = PosteriorDraws(d.names + extra, arr, d.divergence_flags, d.step_size,
                       meta={"regime": "MTL_B"})
    p = ev.task_parameter_draws(d, 1, 1)
    np.testing.assert_allclose(p["alpha"], [softplus(r["g"][1]) for r in rows])
    np.testing.assert_allclose(p["lengthscale"], [softplus(r["h"][1]) for r in rows])


# --- transfer and comparison ------------------------------------------------

def small_population(n=6, K=3, pool=12, n_test=5):
    tasks = []
    for k in range(K):
        t = toy_task(pool, seed=20 + k, task_id=k, separation=0.2 + 0.2 * k, n_test=n_test)
        tasks.append(t)
    return Population(tasks, NormalisationRecord(1, 0, 1))


def mtl_a_fit():
    rows = [{"alpha": 1.0, "lengthscale": 0.4, "noise_mean": -2.0, "noise_alpha": 0.5,
             "noise_lengthscale": 0.4}] * 3
    arr = np.array([[r[p] for p in HYP] for r in rows])[None]
    return PosteriorDraws(list(HYP), arr, np.zeros((1, 3), bool), np.ones(1),
                          meta={"regime": "MTL_A", "task_ids": [0, 1]})


def test_transfer_experiment_structure_and_determinism():
    pop = small_population()
    cfg = SamplerConfig(chains=1, warmup_iters=30, sampling_iters=30)
    kw = dict(population=pop, holdout_ids=[2], budgets=[3, 6], repeats=2,
              methods=["STL", "MTL_A"], fits={"MTL_A": mtl_a_fit()}, sampler_config=cfg,
              seed=5, max_draws=10)
    curves = ev.transfer_experiment(**kw)
    assert [c.method_tag for c in curves] == ["STL", "MTL_A"]
    stl, mtl = curves
    assert stl.inference_runs == 4 and mtl.inference_runs == 0
    assert len(stl.rows) == len(mtl.rows) == 4
    assert stl.mean_lpy.shape == (2,)
    again = ev.transfer_experiment(**kw)
    for c1, c2 in zip(curves, again):
        assert np.array_equal(c1.mean_lpy, c2.mean_lpy)
    with pytest.raises(DomainError):
        ev.transfer_experiment(**dict(kw, budgets=[3, 50]))
    with pytest.raises(DomainError):
        ev.transfer_experiment(**dict(kw, methods=["MTL_X"]))


def test_transfer_curve_invariants():
    with pytest.raises(DomainError):
        ev.TransferCurve([5, 5], np.zeros(2), 1, "STL")
    with pytest.raises(DomainError):
        ev.TransferCurve([5, 10], np.zeros(2), 0, "STL")


def test_compare_methods_identical_draws_and_additivity():
    pop = small_population()
    rows = random_rows(np.random.default_rng(0), 3, 12)
    d = stl_draws(rows, task_id=0, n_train=12)
    d.meta["split_fingerprint"] = ev.split_fingerprint(pop.tasks)
    rep = ev.compare_methods(pop, {"STL": d, "MTL_A": d}, task_ids=[0])
    assert rep["total"]["STL"] == rep["total"]["MTL_A"]
    assert rep["total"]["STL"] == pytest.approx(rep["per_task"]["STL"].sum(), abs=1e-10)
    d2 = stl_draws(rows, task_id=0, n_train=12)
    d2.meta["split_fingerprint"] = "0000"
    with pytest.raises(DomainError):
        ev.compare_methods(pop, {"STL": d, "other": d2}, task_ids=[0])


def test_point_estimate_draws_layout():
    d = ev.point_estimate_draws({"alpha": 1, "lengthscale": 2, "noise_mean": -1,
                                 "noise_alpha": 0.5, "noise_lengthscale": 0.3}, 4, 3)
    assert d.n_draws == 1
    assert d.names[0] == "alpha[4]" and d.names[-1] == "r[4,2]"
    assert d["r[4,1]"][0] == -1


def test_noise_prediction_recovers_training_values():
    x = np.array([[0.1, 0.1], [0.5, 0.3], [0.8, 0.6]])
    r = np.array([-2.0, -1.0, -0.5])
    got = ev._noise_at_test(x, r, x, -1.0, 0.7, 0.4)
    np.testing.assert_allclose(got, r, atol=1e-6)
    m, _ = gp_predict(x, r, x[:1] + 0.05, Matern32Kernel(0.7, 0.4),
                      noise_at_train=np.full(3, math.sqrt(1e-9) * 0.7),
                      mean=MeanFunction.constant(-1.0), full_cov=False)
    assert ev._noise_at_test(x, r, x[:1] + 0.05, -1.0, 0.7, 0.4)[0] == pytest.approx(m[0])
