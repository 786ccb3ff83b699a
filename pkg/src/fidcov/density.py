"""Log-density evaluation for the fiducial distribution of a covariate matrix.

Every function returns a natural-log value. Impossible states (singular
``A``, rank-deficient Jacobian blocks) evaluate to ``-inf``, never NaN.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import kernels
from .linalg import as_observations
from .models import CliqueModel, CovariateMatrix, SparsityPattern

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)


@dataclass(frozen=True)
class NormChoice:
    """Norm used to collapse the data Jacobian.

    For ``linf`` the per-row average of absolute sub-determinants is exact
    when the number of row subsets is at most ``enumeration_cap``; otherwise
    it is estimated from ``mc_samples`` uniformly drawn subsets.
    """

    kind: str = "l2"
    enumeration_cap: int = 10_000
    mc_samples: int = 2_000

    def __post_init__(self):
        if self.kind not in ("l2", "linf"):
            raise ValueError(f"unknown norm {self.kind!r}")
        if self.enumeration_cap < 1:
            raise ValueError("enumeration_cap must be >= 1")
        if self.mc_samples < 100:
            raise ValueError("mc_samples must be >= 100")

    @classmethod
    def coerce(cls, norm) -> "NormChoice":
        if isinstance(norm, NormChoice):
            return norm
        return cls(kind=str(norm).lower())


L2 = NormChoice("l2")
LINF = NormChoice("linf")


class SubsetDraws:
    """Row subsets used by the l-infinity Jacobian.

    Exact enumerations are cached for good. Monte Carlo draws are cached
    until :meth:`refresh`, so every density evaluated between two refreshes
    (for example within one MCMC sweep) sees the same subsets.
    """

    def __init__(self, n: int, norm: NormChoice = LINF, rng: np.random.Generator | None = None):
        self.n = n
        self.norm = NormChoice.coerce(norm)
        self.rng = rng
        self._exact = {}
        self._mc = {}

    def is_exact(self, k: int) -> bool:
        return math.comb(self.n, k) <= self.norm.enumeration_cap

    def get(self, k: int) -> np.ndarray:
        if k > self.n:
            raise ValueError(f"need at least {k} observations, have {self.n}")
        if self.is_exact(k):
            if k not in self._exact:
                combos = np.array(list(itertools.combinations(range(self.n), k)), dtype=np.int64)
                self._exact[k] = combos.reshape(-1, k)
            return self._exact[k]
        if k not in self._mc:
            if self.rng is None:
                raise ValueError("Monte Carlo subset estimate needs an rng")
            keys = self.rng.random((self.norm.mc_samples, self.n))
            self._mc[k] = np.sort(np.argsort(keys, axis=1)[:, :k], axis=1).astype(np.int64)
        return self._mc[k]

    def refresh(self):
        self._mc.clear()


def _subsets_for(obs, norm, subsets, rng):
    if subsets is None:
        subsets = SubsetDraws(obs.n, norm, rng)
    return subsets


def _unpack(A, pattern):
    if isinstance(A, CovariateMatrix):
        return A.entries, pattern if pattern is not None else A.pattern
    a = np.asarray(A, dtype=float)
    return a, pattern if pattern is not None else SparsityPattern.full(a.shape[0])


def log_likelihood(obs, A) -> float:
    """Gaussian log-likelihood of zero-mean data with covariance ``A A^T``."""
    obs = as_observations(obs)
    a, _ = _unpack(A, None)
    if a.shape != (obs.p, obs.p):
        raise ValueError(f"A has shape {a.shape}, data has p={obs.p}")
    sign, logabsdet = np.linalg.slogdet(a)
    if sign == 0 or not np.isfinite(logabsdet):
        return -np.inf
    U = np.linalg.solve(a, obs.rows.T)
    return float(-0.5 * obs.n * obs.p * LOG_2PI - obs.n * logabsdet - 0.5 * np.sum(U * U))


def log_mean_abs_subdet(M: np.ndarray, subsets: SubsetDraws) -> float:
    k = M.shape[1]
    m = kernels.mean_abs_subdet(np.ascontiguousarray(M), subsets.get(k))
    return math.log(m) if m > 0.0 else -np.inf


def log_jacobian_constant(obs, norm=L2, subsets=None, rng=None) -> float:
    """``log C(y)`` of the full-model Jacobian ``C(y) |det A|^{-p}``."""
    obs = as_observations(obs)
    norm = NormChoice.coerce(norm)
    p = obs.p
    if norm.kind == "l2":
        sign, ld = np.linalg.slogdet(obs.scatter)
        return 0.5 * p * ld if sign > 0 else -np.inf
    subsets = _subsets_for(obs, norm, subsets, rng)
    return p * log_mean_abs_subdet(obs.rows, subsets)


def log_jacobian(obs, A, norm=L2, pattern: SparsityPattern | None = None,
                 subsets: SubsetDraws | None = None, rng=None) -> float:
    obs = as_observations(obs)
    norm = NormChoice.coerce(norm)
    a, pattern = _unpack(A, pattern)
    p = obs.p
    if a.shape != (p, p) or pattern.dim != p:
        raise ValueError("dimension mismatch between A, pattern and data")
    if obs.n < pattern.row_free_counts.max():
        raise ValueError(f"n={obs.n} is smaller than the largest row count {pattern.row_free_counts.max()}")
    sign, logabsdet = np.linalg.slogdet(a)
    if sign == 0 or not np.isfinite(logabsdet):
        return -np.inf
    if pattern.is_full:
        return log_jacobian_constant(obs, norm, subsets, rng) - p * logabsdet
    if norm.kind == "l2":
        _, lj = kernels.gfd_l2(np.ascontiguousarray(a), np.ascontiguousarray(obs.scatter),
                               np.ascontiguousarray(pattern.free), float(obs.n))
        return float(lj)
    return log_jacobian_linf_general(obs, a, pattern, _subsets_for(obs, norm, subsets, rng))


def _free_columns_of_U(obs, a, pattern):
    U = np.linalg.solve(a, obs.rows.T).T
    return [np.ascontiguousarray(U[:, pattern.free[i]]) for i in range(pattern.dim)]


def log_jacobian_linf_general(obs, a, pattern, subsets) -> float:
    """Product over rows of the average absolute sub-determinant of ``U_i``."""
    total = 0.0
    for Ui in _free_columns_of_U(obs, a, pattern):
        total += log_mean_abs_subdet(Ui, subsets)
    return total


def log_jacobian_linf_sum(obs, A, pattern: SparsityPattern) -> float:
    """The l-infinity Jacobian as one combinatorial sum over joint subset tuples.

    Cost is the product over rows of ``C(n, p_i)``; intended for tiny checks.
    """
    obs = as_observations(obs)
    a = np.asarray(A, dtype=float)
    blocks = _free_columns_of_U(obs, a, pattern)
    per_row = []
    for Ui in blocks:
        k = Ui.shape[1]
        combos = list(itertools.combinations(range(obs.n), k))
        per_row.append([abs(np.linalg.det(Ui[list(c)])) for c in combos])
    total = 0.0
    count = 0
    for tup in itertools.product(*per_row):
        total += math.prod(tup)
        count += 1
    return math.log(total / count) if total > 0 else -np.inf


def log_gfd(obs, A, norm=L2, pattern: SparsityPattern | None = None,
            subsets: SubsetDraws | None = None, rng=None) -> float:
    """Unnormalized log fiducial density of ``A``: likelihood plus Jacobian."""
    ll = log_likelihood(obs, A)
    if ll == -np.inf:
        return -np.inf
    lj = log_jacobian(obs, A, norm, pattern, subsets, rng)
    return ll + lj


def log_multivariate_gamma(p: int, a: float) -> float:
    if p < 1:
        raise ValueError("order must be >= 1")
    if a <= 0.5 * (p - 1):
        raise ValueError(f"multivariate gamma of order {p} needs a > {(p - 1) / 2}, got {a}")
    j = np.arange(1, p + 1)
    return float(0.25 * p * (p - 1) * LOG_PI + np.sum(gammaln(a + 0.5 * (1 - j))))


def log_normalizing_constant_full(obs, norm=L2, subsets=None, rng=None) -> float:
    """log of the integral of ``J(y, A) f(y, A)`` over all of ``R^{p x p}``."""
    obs = as_observations(obs)
    n, p = obs.n, obs.p
    if n <= p:
        raise ValueError(f"need n > p, got n={n}, p={p}")
    sign, ld = np.linalg.slogdet(n * obs.scatter)
    if sign <= 0:
        raise ValueError("sample covariance is singular")
    logC = log_jacobian_constant(obs, norm, subsets, rng)
    return (0.5 * (p * p - n * p) * LOG_PI + logC + log_multivariate_gamma(p, 0.5 * n)
            - 0.5 * n * ld - log_multivariate_gamma(p, 0.5 * p))


def log_abs_det_moment(p: int, k: float) -> float:
    """``log E|det Z|^k`` for a ``p x p`` matrix of iid standard normals."""
    return 0.5 * k * p * math.log(2.0) + log_multivariate_gamma(p, 0.5 * (k + p)) - log_multivariate_gamma(p, 0.5 * p)


# ---------------------------------------------------------------------------
# clique models
# ---------------------------------------------------------------------------

def clique_term_constants(p: int, n: int, penalty: bool) -> np.ndarray:
    """Size-only part of the per-clique log term under the l2 norm.

    Entry ``g`` holds ``(g^2/2) log pi + log Gamma_g(n/2) - log Gamma_g(g/2)``
    plus the clique penalty when requested. The full per-clique term is then
    ``const[g] + (g - n)/2 * log det S_block``. Index 0 is unused.
    """
    const = np.full(p + 1, -np.inf)
    for g in range(1, p + 1):
        if n <= g - 1:
            continue
        c = 0.5 * g * g * LOG_PI + log_multivariate_gamma(g, 0.5 * n) - log_multivariate_gamma(g, 0.5 * g)
        if penalty:
            c += _clique_penalty_size(g, n)
        const[g] = c
    return const


def _clique_penalty_size(g: int, n: int) -> float:
    return -(0.25 * g * g * math.log(n) - 0.5 * g * g * math.log(g))


def log_clique_constant(obs, block, norm=L2, subsets=None, rng=None) -> float:
    """``log C_{M,i}(y)`` computed from the coordinates in ``block`` only."""
    obs = as_observations(obs)
    return log_jacobian_constant(obs.subset(block), norm, subsets, rng)


def log_clique_term(obs, block, norm=L2, penalty: bool = False, subsets=None, rng=None) -> float:
    """Contribution of one clique to the (optionally penalized) model log-GFD."""
    obs = as_observations(obs)
    block = np.asarray(block, dtype=int)
    g, n = block.size, obs.n
    if n <= g:
        raise ValueError(f"need n > clique size, got n={n}, g={g}")
    S = obs.scatter[np.ix_(block, block)]
    ld = kernels._chol_logdet_np(S)
    if ld == -np.inf:
        return -np.inf
    logC = 0.5 * g * ld if NormChoice.coerce(norm).kind == "l2" else log_clique_constant(obs, block, norm, subsets, rng)
    t = (0.5 * g * g * LOG_PI - 0.5 * n * ld + logC
         + log_multivariate_gamma(g, 0.5 * n) - log_multivariate_gamma(g, 0.5 * g))
    if penalty:
        t += _clique_penalty_size(g, n)
    return t


def log_clique_model_gfd(obs, M: CliqueModel, norm=L2, subsets=None, rng=None) -> float:
    """Unnormalized log fiducial probability of clique model ``M``."""
    obs = as_observations(obs)
    if M.dim != obs.p:
        raise ValueError(f"model has p={M.dim}, data has p={obs.p}")
    return float(sum(log_clique_term(obs, b, norm, False, subsets, rng) for b in M.blocks))


def log_clique_penalty(M: CliqueModel, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(sum(_clique_penalty_size(int(g), n) for g in M.sizes))


def log_mdl_penalty(P: SparsityPattern, n: int) -> float:
    """Minimum-description-length penalty on a sparsity pattern."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = P.dim
    k = P.row_free_counts.astype(float)
    log_binom = gammaln(p + 1) - gammaln(k + 1) - gammaln(p - k + 1)
    return float(-np.sum(0.5 * k * math.log(n * p) + log_binom))


def log_penalized_gfd(obs, A, pattern: SparsityPattern, norm=L2, subsets=None, rng=None) -> float:
    obs = as_observations(obs)
    val = log_gfd(obs, A, norm, pattern, subsets, rng)
    return val + log_mdl_penalty(pattern, obs.n) if val > -np.inf else -np.inf


def log_clique_covariance_density(sigma, obs, M: CliqueModel) -> float:
    """Log of the composite inverse-Wishart fiducial density of ``sigma`` given ``M``.

    Off-clique entries of ``sigma`` are ignored.
    """
    obs = as_observations(obs)
    s = np.asarray(sigma, dtype=float)
    n = obs.n
    total = 0.0
    for b in M.blocks:
        g = b.size
        psi = n * obs.scatter[np.ix_(b, b)]
        sig = s[np.ix_(b, b)]
        L = np.linalg.cholesky(sig)
        ld_sig = 2.0 * np.sum(np.log(np.diag(L)))
        _, ld_psi = np.linalg.slogdet(psi)
        X = np.linalg.solve(L, psi)
        tr = np.trace(np.linalg.solve(L, X.T))
        total += (0.5 * n * ld_psi - 0.5 * n * g * math.log(2.0) - log_multivariate_gamma(g, 0.5 * n)
                  - 0.5 * (n + g + 1) * ld_sig - 0.5 * tr)
    return float(total)
