import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg as sla

from conftest import random_spd
from fidcov.linalg import (NotPositiveDefiniteError, ObservationSet, SpdMatrix, cholesky, eigvec_angle,
                           fm_distance, generalized_eigvals, inverse, is_positive_definite, log_det,
                           sample_covariance, sqrtm_spd)


def spd_from_seed(seed, p):
    return random_spd(np.random.default_rng(seed), p)


# -- sample covariance -------------------------------------------------------

def test_sample_covariance_identity_rows():
    S = sample_covariance([[1, 0], [0, 1]])
    np.testing.assert_array_equal(S.matrix, [[0.5, 0], [0, 0.5]])
    assert not S.singular


def test_sample_covariance_scalar():
    S = sample_covariance([[3.0], [4.0]])
    assert S.matrix[0, 0] == pytest.approx(12.5)


def test_sample_covariance_rank_deficient_flagged():
    S = sample_covariance(np.ones((2, 3)) * [1, 2, 3])
    assert S.singular
    assert np.all(np.linalg.eigvalsh(S.matrix) > -1e-12)


def test_sample_covariance_uncentered_by_default(rng):
    y = rng.standard_normal((50, 3)) + 5.0
    np.testing.assert_allclose(sample_covariance(y).matrix, y.T @ y / 50)
    c = y - y.mean(0)
    np.testing.assert_allclose(sample_covariance(y, center=True).matrix, c.T @ c / 50)


def test_empty_observation_set_rejected():
    with pytest.raises(ValueError):
        ObservationSet(np.empty((0, 2)))


def test_scatter_is_read_only(rng):
    obs = ObservationSet(rng.standard_normal((5, 2)))
    with pytest.raises(ValueError):
        obs.scatter[0, 0] = 1.0


# -- SpdMatrix ----------------------------------------------------------------

def test_spd_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        SpdMatrix([[1.0, 0.2], [0.0, 1.0]])


def test_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        SpdMatrix([[1.0, 2.0], [2.0, 1.0]])
    assert not is_positive_definite(np.diag([1.0, 1e-14]))


def test_spd_pivot_tolerance_is_relative():
    assert is_positive_definite(np.diag([1e-8, 1e-8]))
    assert not is_positive_definite(np.diag([1.0, 1e-13]))


def test_log_det_diagonal():
    assert log_det(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_cholesky_round_trip_and_log_det(seed, p):
    M = spd_from_seed(seed, p)
    L = cholesky(M)
    np.testing.assert_allclose(L @ L.T, M, rtol=1e-10, atol=1e-12)
    ld = np.linalg.slogdet(M)[1]
    assert log_det(M) == pytest.approx(ld, rel=1e-10, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_inverse(seed, p):
    M = spd_from_seed(seed, p)
    np.testing.assert_allclose(inverse(M).entries @ M, np.eye(p), atol=1e-8)


def test_spd_entries_immutable():
    M = SpdMatrix(np.eye(2))
    with pytest.raises(ValueError):
        M.entries[0, 0] = 3.0


# -- FM distance ----------------------------------------------------------------

def test_fm_identity_zero():
    assert fm_distance(np.eye(4), np.eye(4)) == 0.0


def test_fm_scaled_identity():
    assert fm_distance(2 * np.eye(2), np.eye(2)) == pytest.approx(math.sqrt(2) * math.log(2), abs=1e-12)
    assert fm_distance(2 * np.eye(2), np.eye(2)) == pytest.approx(0.980258, abs=1e-6)


def test_fm_dimension_mismatch():
    with pytest.raises(ValueError):
        fm_distance(np.eye(2), np.eye(3))


def test_fm_non_pd_rejected():
    with pytest.raises(NotPositiveDefiniteError):
        fm_distance(np.eye(2), np.diag([1.0, -1.0]))


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_generalized_eigvals_match_direct_eigensolve(seed, p):
    rng = np.random.default_rng(seed)
    M, N = random_spd(rng, p), random_spd(rng, p)
    ref = np.sort(sla.eigh(N, M, eigvals_only=True))
    np.testing.assert_allclose(generalized_eigvals(M, N), ref, rtol=1e-8)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fm_affine_and_inversion_invariance(seed, p):
    rng = np.random.default_rng(seed)
    M, N = random_spd(rng, p), random_spd(rng, p)
    T = rng.standard_normal((p, p)) + 2 * np.eye(p)
    d = fm_distance(M, N)
    assert fm_distance(T @ M @ T.T, T @ N @ T.T) == pytest.approx(d, abs=1e-8)
    assert fm_distance(np.linalg.inv(M), np.linalg.inv(N)) == pytest.approx(d, abs=1e-8)


def test_fm_metric_axioms_random_ensemble():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = int(rng.integers(1, 7))
        A, B, C = (random_spd(rng, p) for _ in range(3))
        dab, dba = fm_distance(A, B), fm_distance(B, A)
        assert dab >= 0
        assert dab == pytest.approx(dba, abs=1e-8)
        assert fm_distance(A, C) <= dab + fm_distance(B, C) + 1e-8
        assert fm_distance(A, A) < 1e-8
        if not np.allclose(A, B):
            assert dab > 0


# -- eigenvector angle -------------------------------------------------------------

def test_eigvec_angle_examples():
    M = spd_from_seed(1, 3)
    assert eigvec_angle(M, M) == pytest.approx(0.0, abs=1e-7)
    assert eigvec_angle(np.diag([2.0, 1.0]), np.diag([1.0, 2.0])) == pytest.approx(math.pi / 2)


@given(st.integers(0, 10_000))
def test_eigvec_angle_range(seed):
    rng = np.random.default_rng(seed)
    a = eigvec_angle(random_spd(rng, 4), random_spd(rng, 4))
    assert 0.0 <= a <= math.pi / 2


def test_sqrtm_spd(rng):
    M = random_spd(rng, 4)
    R = sqrtm_spd(M)
    np.testing.assert_allclose(R @ R, M, atol=1e-10)
    np.testing.assert_allclose(R, R.T)
