import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from fidcov import diagnostics as dg
from fidcov import mcmc
from fidcov.linalg import ObservationSet
from fidcov.models import CliqueModel
from fidcov.samplers import sample_inverse_wishart_batch
from fidcov.scenarios import simulate_scenario


def states_from(sigmas, start=1):
    return [mcmc.ChainState(CliqueModel.full(s.shape[0]), sigma=s, log_density=0.0, iteration=start + k)
            for k, s in enumerate(sigmas)]


# -- statistics ------------------------------------------------------------------------

def test_truth_draw_has_zero_distance_and_angle(rng):
    sig0 = random_spd(rng, 3)
    obs = ObservationSet(rng.standard_normal((20, 3)))
    tab = dg.compute_statistics(states_from([sig0]), obs, sig0)
    assert len(tab) == 1
    assert tab["D2Sig"][0] == pytest.approx(0.0, abs=1e-7)
    assert tab["EigvecAngle"][0] == pytest.approx(0.0, abs=1e-6)
    assert tab["LogD"][0] == pytest.approx(np.linalg.slogdet(sig0)[1])


def test_statistics_need_truth(rng):
    obs = ObservationSet(rng.standard_normal((20, 2)))
    states = states_from([np.eye(2)])
    with pytest.raises(ValueError, match="sigma0"):
        dg.compute_statistics(states, obs, statistics=["D2Sig"])
    tab = dg.compute_statistics(states, obs)
    assert set(tab.columns) == {"SlogGFD", "LogD"}
    with pytest.raises(ValueError):
        dg.compute_statistics(states, obs, statistics=["Volume"])


def test_slog_gfd_for_clique_draws_is_iw_density(rng):
    from fidcov.density import log_clique_covariance_density
    obs = ObservationSet(rng.standard_normal((30, 3)))
    M = CliqueModel.parse("1 2|3")
    draws = [np.diag([1.0, 2.0, 3.0]), np.eye(3)]
    states = [mcmc.ChainState(M, sigma=s, iteration=1) for s in draws]
    tab = dg.compute_statistics(states, obs)
    for k, s in enumerate(draws):
        assert tab["SlogGFD"][k] == pytest.approx(log_clique_covariance_density(s, obs, M))


def test_statistics_are_pure(rng):
    sc = simulate_scenario(4, 50, "clique", seed=1, k=2)
    cfg = mcmc.ChainConfig("gibbs", burn_in=10, window=30)
    tr = mcmc.run_chain(sc.obs, cfg, mcmc.ChainState(CliqueModel.singletons(4)), 0)
    a = dg.compute_statistics(tr, sc.obs, sc.sigma0)
    b = dg.compute_statistics(tr, sc.obs, sc.sigma0)
    for k in a.columns:
        np.testing.assert_array_equal(a[k], b[k])


def test_baseline_statistics(rng):
    sig0 = random_spd(rng, 3)
    obs = ObservationSet(rng.standard_normal((40, 3)))
    base = dg.baseline_statistics(obs, sig0)
    from fidcov.linalg import fm_distance
    assert base["D2Sig"] == pytest.approx(fm_distance(obs.scatter, sig0))
    singular = dg.baseline_statistics(ObservationSet(rng.standard_normal((2, 3))), sig0)
    assert singular["D2Sig"] == np.inf


def test_statistics_csv_is_tidy(tmp_path, rng):
    obs = ObservationSet(rng.standard_normal((20, 2)))
    tab = dg.compute_statistics(states_from([np.eye(2), 2 * np.eye(2)]), obs, np.eye(2))
    tab.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["iteration", "statistic", "value"]
    assert len(rows) == 1 + 2 * 4


# -- confidence curves ----------------------------------------------------------------------

@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.floats(0, 1), st.floats(0, 1))
def test_confidence_intervals_nest(values, a1, a2):
    cc = dg.ConfidenceCurve("LogD", values)
    lo, hi = sorted((a1, a2))
    l1, u1 = cc.interval(lo)
    l2, u2 = cc.interval(hi)
    assert l1 <= l2 <= u2 <= u1


def test_confidence_curve_examples():
    cc = dg.ConfidenceCurve("D2Sig", np.arange(101.0))
    assert cc.interval(0.0) == (0.0, 100.0)
    assert cc.interval(0.1) == pytest.approx((5.0, 95.0))
    assert cc.interval(1.0) == (50.0, 50.0)
    assert cc.depth(50.0) == pytest.approx(1.0, abs=0.02)
    assert cc.depth(-1.0) == 0.0
    rows = cc.curve([0.0, 0.5])
    assert rows.shape == (2, 3)
    with pytest.raises(ValueError):
        cc.interval(1.5)
    with pytest.raises(ValueError):
        dg.ConfidenceCurve("LogD", [])


def test_confidence_curves_from_table(rng):
    obs = ObservationSet(rng.standard_normal((20, 2)))
    tab = dg.compute_statistics(states_from([np.eye(2) * c for c in (1, 2, 3)]), obs)
    curves = dg.confidence_curves(tab)
    assert set(curves) == {"SlogGFD", "LogD"}


# -- co-membership --------------------------------------------------------------------------

def test_co_membership_examples():
    np.testing.assert_array_equal(dg.co_membership([CliqueModel.full(3)] * 4), np.ones((3, 3)))
    np.testing.assert_array_equal(dg.co_membership([CliqueModel.singletons(3)] * 4), np.eye(3))
    C = dg.co_membership([CliqueModel.parse("1 2|3"), CliqueModel.parse("1|2 3")])
    np.testing.assert_array_equal(C, [[1, 0.5, 0], [0.5, 1, 0.5], [0, 0.5, 1]])
    np.testing.assert_array_equal(C, C.T)
    with pytest.raises(ValueError):
        dg.co_membership([])


def test_co_membership_pools_chains_and_thresholds():
    sc = simulate_scenario(6, 1000, "clique", seed=0, k=2)
    traces = []
    for s in range(3):
        cfg = mcmc.ChainConfig("gibbs", burn_in=20, window=50, draw_covariance=False)
        traces.append(mcmc.run_chain(sc.obs, cfg, mcmc.ChainState(CliqueModel.singletons(6)), s))
    C = dg.co_membership(traces)
    truth = sc.model0.same_clique()
    assert np.all(C[truth] > 0.9) and np.all(C[~truth] < 0.1)
    assert dg.threshold_partition(C) == sc.model0


# -- p-values and QQ coverage -----------------------------------------------------------------

def test_pvalue_examples():
    v = np.arange(1.0, 201.0)
    assert dg.one_sided_pvalue(v, 0.0) == 0.0
    assert dg.one_sided_pvalue(v, 1000.0) == 1.0
    assert dg.one_sided_pvalue(v, 100.0) == pytest.approx(99.5 / 200)
    with pytest.raises(ValueError):
        dg.one_sided_pvalue(v[:50], 1.0)


def test_qq_examples():
    m = 200
    grid = (np.arange(1, m + 1) - 0.5) / m
    q = dg.qq_coverage(grid)
    np.testing.assert_array_equal(q.empirical, q.uniform)
    assert not q.violated
    assert q.band == pytest.approx(1.358 / math.sqrt(200))
    assert dg.qq_coverage(np.full(m, 0.3)).violated
    with pytest.raises(ValueError):
        dg.qq_coverage(grid[:10])
    with pytest.raises(ValueError):
        dg.qq_coverage(np.full(30, 1.5))


def test_qq_csv(tmp_path):
    q = dg.qq_coverage(np.random.default_rng(0).random(50))
    q.write_csv(tmp_path / "qq.csv")
    rows = list(csv.reader(open(tmp_path / "qq.csv")))
    assert len(rows) == 51


def test_pivot_pvalues_uniform_under_iw():
    # under the full model, the fiducial log-det p-value of a draw from the
    # data distribution is exactly uniform; check the plumbing end to end
    rng = np.random.default_rng(3)
    sig0 = np.array([[1.0, 0.3], [0.3, 2.0]])
    L = np.linalg.cholesky(sig0)
    pv = []
    for _ in range(100):
        obs = ObservationSet(rng.standard_normal((40, 2)) @ L.T)
        d = sample_inverse_wishart_batch(40, 40 * obs.scatter, rng, 400)
        pv.append(dg.one_sided_pvalue(np.linalg.slogdet(d)[1], np.linalg.slogdet(sig0)[1]))
    assert not dg.qq_coverage(pv).violated


# -- chain summaries -----------------------------------------------------------------------------

def test_effective_sample_size():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal(5000)
    assert 4000 < dg.effective_sample_size(iid) < 6500
    ar = np.empty(5000)
    ar[0] = 0
    for t in range(1, 5000):
        ar[t] = 0.9 * ar[t - 1] + rng.standard_normal()
    # AR(1) with phi = 0.9: ESS ~ m (1 - phi)/(1 + phi) ~ 263
    assert 150 < dg.effective_sample_size(ar) < 450
    assert dg.effective_sample_size(np.ones(10)) == 10


def test_bernstein_von_mises_normality():
    rng = np.random.default_rng(12)
    n = 5000
    obs = ObservationSet(rng.standard_normal((n, 2)) @ np.array([[1.0, 0.0], [0.5, 1.2]]).T)
    S = np.asarray(obs.scatter)
    d = sample_inverse_wishart_batch(n, n * S, rng, 2000)
    iu = np.triu_indices(2)
    Z = math.sqrt(n) * (d[:, iu[0], iu[1]] - S[iu])
    _, pval = dg.mardia_skewness(Z)
    assert pval > 0.01


def test_mardia_detects_skew():
    rng = np.random.default_rng(0)
    _, pval = dg.mardia_skewness(rng.exponential(size=(500, 3)))
    assert pval < 1e-6


def test_summary_and_json(tmp_path, rng):
    obs = ObservationSet(rng.standard_normal((20, 2)))
    tab = dg.compute_statistics(states_from([np.eye(2) * c for c in np.linspace(1, 2, 50)]), obs, np.eye(2))
    out = dg.summarize(tab, dg.baseline_statistics(obs, np.eye(2)))
    assert out["draws"] == 50
    assert set(out["LogD"]["intervals"]) == {"0.95", "0.50"}
    dg.write_json(tmp_path / "s.json", {"x": np.inf, "y": np.arange(3), "z": out})
    back = json.load(open(tmp_path / "s.json"))
    assert back["x"] == "inf" and back["y"] == [0, 1, 2]
