import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fidcov import kernels
from fidcov.density import clique_term_constants

NB = kernels.IMPLEMENTATIONS["numba"]
NP = kernels.IMPLEMENTATIONS["numpy"]


def problem(seed, p, n=None, density=0.5):
    rng = np.random.default_rng(seed)
    n = n or 3 * p
    Y = rng.standard_normal((n, p))
    S = np.ascontiguousarray(Y.T @ Y / n)
    free = rng.random((p, p)) < density
    np.fill_diagonal(free, True)
    A = np.where(free, 0.3 * rng.standard_normal((p, p)), 0.0)
    np.fill_diagonal(A, rng.uniform(0.5, 1.5, p))
    return rng, np.ascontiguousarray(A), S, np.ascontiguousarray(free), float(n)


@given(st.integers(0, 10_000), st.integers(1, 7))
def test_gfd_backends_agree(seed, p):
    _, A, S, free, n = problem(seed, p)
    a = NB["gfd_l2"](A, S, free, n)
    b = NP["gfd_l2"](A, S, free, n)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_gfd_singular_is_minus_inf():
    _, A, S, free, n = problem(0, 3)
    A[:, 0] = 0.0
    for impl in (NB, NP):
        assert impl["gfd_l2"](A, S, free, n)[0] == -np.inf


@pytest.mark.parametrize("seed", range(5))
def test_mh_sweep_backends_agree(seed):
    rng, A, S, free, n = problem(seed, 6)
    rows, cols = (x.astype(np.int64) for x in np.nonzero(free))
    m = rows.size
    ls = np.full(m, np.log(0.1))
    normals = rng.standard_normal(m)
    log_u = np.log(rng.random(m))
    cur = sum(NP["gfd_l2"](A, S, free, n))
    A1, A2 = A.copy(), A.copy()
    c1, acc1 = NB["mh_sweep_l2"](A1, S, free, n, rows, cols, ls, normals, log_u, cur)
    c2, acc2 = NP["mh_sweep_l2"](A2, S, free, n, rows, cols, ls, normals, log_u, cur)
    np.testing.assert_array_equal(acc1, acc2)
    np.testing.assert_allclose(A1, A2, rtol=1e-12)
    assert c1 == pytest.approx(c2, rel=1e-10)


def test_mh_run_backends_agree():
    rng, A, S, free, n = problem(3, 4)
    rows, cols = (x.astype(np.int64) for x in np.nonzero(free))
    m = rows.size
    T = 50
    normals = rng.standard_normal((T, m))
    log_u = np.log(rng.random((T, m)))
    ls = np.full(m, np.log(0.1))
    cur = sum(NP["gfd_l2"](A, S, free, n))
    outs = []
    for impl in (NB, NP):
        A1 = A.copy()
        kept = np.empty((T // 3 + 1, 4, 4))
        logd = np.empty(T)
        c, acc, nk = impl["mh_run_l2"](A1, S, free, n, rows, cols, ls, normals, log_u, cur, 3, 1, kept, logd)
        outs.append((c, acc, nk, kept[:nk].copy(), logd))
    assert outs[0][1] == outs[1][1] and outs[0][2] == outs[1][2]
    np.testing.assert_allclose(outs[0][3], outs[1][3], rtol=1e-12)
    np.testing.assert_allclose(outs[0][4], outs[1][4], rtol=1e-10)


def test_mean_abs_subdet_backends_agree():
    rng = np.random.default_rng(1)
    U = rng.standard_normal((9, 3))
    combos = np.array(list(itertools.combinations(range(9), 3)), dtype=np.int64)
    ref = np.mean([abs(np.linalg.det(U[list(c)])) for c in combos])
    assert NB["mean_abs_subdet"](U, combos) == pytest.approx(ref, rel=1e-12)
    assert NP["mean_abs_subdet"](U, combos) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gibbs_sweep_backends_agree(seed):
    rng = np.random.default_rng(seed)
    p, n = 8, 60
    Y = rng.standard_normal((n, p)) @ (np.eye(p) + 0.4 * rng.standard_normal((p, p)))
    S = np.ascontiguousarray(Y.T @ Y / n)
    const = clique_term_constants(p, n, True)
    labels = rng.integers(0, 3, p).astype(np.int64)
    order = rng.permutation(p).astype(np.int64)
    u = rng.random(p)
    l1, l2 = labels.copy(), labels.copy()
    t1 = NB["gibbs_sweep_l2"](S, l1, const, float(n), order, u)
    t2 = NP["gibbs_sweep_l2"](S, l2, const, float(n), order, u)
    np.testing.assert_array_equal(l1, l2)
    assert t1 == pytest.approx(t2, rel=1e-10)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, FIDCOV_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from fidcov import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
