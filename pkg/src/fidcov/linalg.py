"""Dense SPD linear algebra, sample covariance and the Förstner-Moonen distance."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

SYM_RTOL = 1e-10
PIVOT_RTOL = 1e-12


class NotPositiveDefiniteError(ValueError):
    pass


def _as_array(M) -> np.ndarray:
    if isinstance(M, SpdMatrix):
        return M.entries
    return np.asarray(M, dtype=float)


def cholesky(M) -> np.ndarray:
    """Lower Cholesky factor of ``M`` with the package-wide PD tolerance.

    A matrix is rejected when its smallest pivot ``L_ii**2`` falls below
    ``1e-12`` times its largest diagonal entry.
    """
    a = _as_array(M)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    pivots = np.diag(L) ** 2
    scale = np.max(np.diag(a)) if a.size else 1.0
    if a.size and (not np.all(np.isfinite(pivots)) or pivots.min() <= PIVOT_RTOL * scale):
        raise NotPositiveDefiniteError("smallest Cholesky pivot below tolerance")
    return L


def is_positive_definite(M) -> bool:
    try:
        cholesky(M)
    except NotPositiveDefiniteError:
        return False
    return True


class SpdMatrix:
    """Symmetric positive-definite matrix with a lazily cached Cholesky factor."""

    def __init__(self, entries, check: bool = True):
        a = np.array(_as_array(entries), dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > SYM_RTOL * max(1.0, np.max(np.abs(a))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        self._a = a
        if check:
            self.chol

    @property
    def entries(self) -> np.ndarray:
        return self._a

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        L = cholesky(self._a)
        L.setflags(write=False)
        return L

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inverse(self) -> "SpdMatrix":
        Linv = sla.solve_triangular(self.chol, np.eye(self.dim), lower=True)
        return SpdMatrix(Linv.T @ Linv, check=False)

    def __array__(self, dtype=None, copy=None):
        return self._a if dtype is None else self._a.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, SpdMatrix):
            return NotImplemented
        return self._a.shape == other._a.shape and np.array_equal(self._a, other._a)

    __hash__ = None

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"


def log_det(M) -> float:
    if not isinstance(M, SpdMatrix):
        M = SpdMatrix(M)
    return M.log_det()


def inverse(M) -> SpdMatrix:
    if not isinstance(M, SpdMatrix):
        M = SpdMatrix(M)
    return M.inverse()


def _chol_of(M) -> np.ndarray:
    return M.chol if isinstance(M, SpdMatrix) else cholesky(M)


def generalized_eigvals(M, N) -> np.ndarray:
    """Roots of ``det(lam*M - N) = 0`` via two-sided Cholesky whitening of ``N``."""
    LM = _chol_of(M)
    _chol_of(N)
    b = _as_array(N)
    if LM.shape != b.shape:
        raise ValueError(f"dimension mismatch: {LM.shape} vs {b.shape}")
    X = sla.solve_triangular(LM, b, lower=True)
    W = sla.solve_triangular(LM, X.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (W + W.T))


def fm_distance(M, N) -> float:
    """Förstner-Moonen distance ``sqrt(sum(log(lam_i)**2))`` between SPD matrices."""
    lam = generalized_eigvals(M, N)
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def leading_eigvec(M) -> np.ndarray:
    _, vecs = np.linalg.eigh(_as_array(M))
    return vecs[:, -1]


def eigvec_angle(M, N) -> float:
    """Angle in radians, within [0, pi/2], between the leading eigenvectors."""
    _chol_of(M)
    _chol_of(N)
    c = abs(float(leading_eigvec(M) @ leading_eigvec(N)))
    return float(np.arccos(min(1.0, c)))


def sqrtm_spd(M) -> np.ndarray:
    """Symmetric square root of a symmetric PSD matrix (negative eigenvalues clipped)."""
    w, v = np.linalg.eigh(_as_array(M))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """``n`` observations of a ``p``-vector stacked as rows."""

    rows: np.ndarray

    def __post_init__(self):
        y = np.array(self.rows, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] == 0 or y.shape[1] == 0:
            raise ValueError("observation set is empty")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations contain non-finite values")
        y.setflags(write=False)
        object.__setattr__(self, "rows", y)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    @cached_property
    def scatter(self) -> np.ndarray:
        """Uncentered sample covariance ``(1/n) sum y_i y_i^T``."""
        S = self.rows.T @ self.rows / self.n
        S = 0.5 * (S + S.T)
        S.setflags(write=False)
        return S

    def subset(self, cols) -> "ObservationSet":
        return ObservationSet(self.rows[:, np.asarray(cols, dtype=int)])


def as_observations(y) -> ObservationSet:
    return y if isinstance(y, ObservationSet) else ObservationSet(y)


class SampleCovariance(NamedTuple):
    matrix: np.ndarray
    singular: bool


def sample_covariance(obs, center: bool = False) -> SampleCovariance:
    """Sample covariance of ``obs``; uncentered unless ``center`` is set.

    The ``singular`` flag is raised when the result is not positive definite
    (for instance when ``n < p``).
    """
    obs = as_observations(obs)
    if center:
        y = obs.rows - obs.rows.mean(axis=0)
        S = y.T @ y / obs.n
        S = 0.5 * (S + S.T)
    else:
        S = np.array(obs.scatter)
    return SampleCovariance(S, not is_positive_definite(S))
