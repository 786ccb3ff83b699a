import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from fidcov.linalg import is_positive_definite
from fidcov.models import (CliqueModel, CovariateMatrix, SparsityPattern, enumerate_partitions, is_compatible,
                           is_submodel, pattern_to_clique, restrict_to_model)

partitions = st.integers(1, 7).flatmap(lambda p: st.lists(st.integers(0, p - 1), min_size=p, max_size=p))


# -- SparsityPattern / CovariateMatrix -----------------------------------------

def test_pattern_rejects_empty_row():
    with pytest.raises(ValueError):
        SparsityPattern([[True, False], [False, False]])


def test_pattern_max_col():
    free = np.eye(3, dtype=bool)
    free[:, 0] = True
    SparsityPattern(free, max_col=3)
    with pytest.raises(ValueError, match="maxC"):
        SparsityPattern(free, max_col=2)


def test_pattern_zero_sets_and_counts():
    P = SparsityPattern([[1, 0, 0], [1, 1, 0], [0, 1, 1]])
    assert P.zero_set(0) == {1, 2}
    assert P.zero_set(2) == {0}
    assert P.row_free_counts.tolist() == [1, 2, 2]
    assert P.col_counts.tolist() == [2, 2, 1]
    assert str(P) == "1;1 2;2 3"
    assert SparsityPattern.full(3).is_full
    assert P == SparsityPattern(P.free.copy()) and hash(P) == hash(SparsityPattern(P.free.copy()))


def test_covariate_matrix_invariants():
    P = SparsityPattern([[1, 0], [1, 1]])
    A = CovariateMatrix([[1.0, 0.0], [0.5, 2.0]], P)
    np.testing.assert_allclose(A.covariance().entries, [[1.0, 0.5], [0.5, 4.25]])
    with pytest.raises(ValueError, match="structural zero"):
        CovariateMatrix([[1.0, 0.3], [0.5, 2.0]], P)
    with pytest.raises(ValueError, match="positive"):
        CovariateMatrix([[-1.0, 0.0], [0.5, 2.0]], P)
    with pytest.raises(ValueError, match="singular"):
        CovariateMatrix([[1.0, 1.0], [1.0, 1.0]])


# -- CliqueModel ---------------------------------------------------------------

def test_canonical_labels():
    assert CliqueModel([5, 5, 2, 9]).labels.tolist() == [0, 0, 1, 2]
    assert CliqueModel([1, 0, 1]) == CliqueModel([0, 1, 0])


@given(partitions)
def test_string_round_trip(labels):
    M = CliqueModel(labels)
    assert CliqueModel.parse(str(M)) == M
    assert M.sizes.sum() == M.dim
    assert sorted(np.concatenate(M.blocks).tolist()) == list(range(M.dim))


def test_text_format():
    M = CliqueModel.from_blocks([[0], [1, 2], [3, 4, 5]])
    assert str(M) == "1|2 3|4 5 6"
    assert M.count == 3
    with pytest.raises(ValueError):
        CliqueModel.from_blocks([[0, 1], [1]])


# -- restrict_to_model ------------------------------------------------------------

def test_restrict_examples():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(restrict_to_model(S, CliqueModel.singletons(2)), np.eye(2))
    np.testing.assert_array_equal(restrict_to_model(S, CliqueModel.full(2)), S)
    with pytest.raises(ValueError):
        restrict_to_model(np.eye(3), CliqueModel.full(2))


def test_restrict_singletons_is_diagonal(rng):
    S = random_spd(rng, 5)
    np.testing.assert_array_equal(restrict_to_model(S, CliqueModel.singletons(5)), np.diag(np.diag(S)))


def test_restrict_preserves_spd_and_fischer_hadamard():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p = int(rng.integers(2, 8))
        S = random_spd(rng, p)
        M = CliqueModel(rng.integers(0, p, size=p))
        SM = restrict_to_model(S, M)
        assert is_positive_definite(SM)
        assert np.linalg.slogdet(S)[1] <= np.linalg.slogdet(SM)[1] + 1e-12


# -- relations --------------------------------------------------------------------

def test_submodel_examples():
    a = CliqueModel.parse("1|2|3")
    b = CliqueModel.parse("1 2|3")
    c = CliqueModel.parse("1 3|2")
    assert is_submodel(a, a)
    assert is_submodel(a, b)
    assert not is_submodel(b, c)
    assert not is_submodel(b, a)


def test_submodel_partial_order_over_p5():
    models = enumerate_partitions(5)
    rel = np.array([[is_submodel(x, y) for y in models] for x in models])
    assert rel.diagonal().all()
    anti = rel & rel.T
    np.fill_diagonal(anti, False)
    assert not anti.any()
    # transitivity: rel o rel subset of rel
    comp = (rel.astype(int) @ rel.astype(int)) > 0
    assert not (comp & ~rel).any()


def test_compatibility_examples(rng):
    D = np.diag(rng.uniform(0.5, 2, 4))
    assert all(is_compatible(M, D) for M in enumerate_partitions(4))
    M0 = CliqueModel.parse("1 2|3 4")
    sigma0 = np.where(M0.same_clique(), 0.5, 0.0) + 0.5 * np.eye(4)
    assert is_compatible(M0, sigma0)
    assert is_compatible(CliqueModel.full(4), sigma0)
    assert not is_compatible(CliqueModel.singletons(4), sigma0)


# -- enumeration / pattern conversion -----------------------------------------------

@pytest.mark.parametrize("p,bell", [(1, 1), (3, 5), (4, 15), (5, 52), (6, 203)])
def test_enumerate_partitions_counts(p, bell):
    parts = enumerate_partitions(p)
    assert len(parts) == bell
    assert len(set(parts)) == bell


def test_enumerate_partitions_capped():
    with pytest.raises(ValueError):
        enumerate_partitions(9)


def test_pattern_to_clique():
    M = CliqueModel.parse("1 3|2|4 5")
    assert pattern_to_clique(M.to_pattern()) == M
    assert pattern_to_clique(SparsityPattern([[1, 1], [0, 1]])) is None
    chain = np.eye(3, dtype=bool)
    chain[0, 1] = chain[1, 0] = chain[1, 2] = chain[2, 1] = True
    assert pattern_to_clique(SparsityPattern(chain)) is None


def test_pattern_to_clique_all_p4():
    for M in enumerate_partitions(4):
        assert pattern_to_clique(M.to_pattern()) == M
    # every symmetric 0/1 pattern on 3 nodes either maps back exactly or is rejected
    for bits in itertools.product([0, 1], repeat=3):
        f = np.eye(3, dtype=bool)
        f[0, 1] = f[1, 0] = bits[0]
        f[0, 2] = f[2, 0] = bits[1]
        f[1, 2] = f[2, 1] = bits[2]
        M = pattern_to_clique(SparsityPattern(f))
        if M is not None:
            np.testing.assert_array_equal(M.same_clique(), f)
