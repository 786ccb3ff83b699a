"""Synthetic data with known truth: clique covariances and sparse covariate matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ObservationSet, is_positive_definite
from .models import CliqueModel, SparsityPattern
from .samplers import as_generator


@dataclass
class Scenario:
    obs: ObservationSet
    sigma0: np.ndarray
    A0: np.ndarray
    model0: CliqueModel | SparsityPattern
    params: dict


def clique_sizes(p: int, k: int, sizes=None) -> list:
    if sizes is not None:
        sizes = [int(s) for s in sizes]
        if sum(sizes) != p or min(sizes) < 1:
            raise ValueError(f"clique sizes {sizes} do not partition p={p}")
        return sizes
    if not 1 <= k <= p:
        raise ValueError(f"need 1 <= k <= p, got k={k}, p={p}")
    base, extra = divmod(p, k)
    return [base + (i < extra) for i in range(k)]


def clique_covariance(sizes, intra_corr: float) -> tuple:
    """Unit-diagonal block covariance with ``intra_corr`` inside each clique."""
    p = sum(sizes)
    for g in sizes:
        if g > 1 and not (-1.0 / (g - 1) < intra_corr < 1.0):
            raise ValueError(f"intra_corr={intra_corr} is not positive definite for a clique of size {g}")
    M = CliqueModel(np.repeat(np.arange(len(sizes)), sizes))
    sigma = np.where(M.same_clique(), intra_corr, 0.0)
    np.fill_diagonal(sigma, 1.0)
    return sigma, M


def sparse_covariate(p: int, max_col: int, rng, low: float = 0.5, high: float = 1.0,
                     fill: str = "random") -> np.ndarray:
    """Unit-diagonal ``A0`` with at most ``max_col - 1`` off-diagonal entries per column.

    ``fill="random"`` draws each column's off-diagonal count uniformly from
    ``0..max_col-1``; ``fill="max"`` saturates every column.
    """
    rng = as_generator(rng)
    if fill not in ("random", "max"):
        raise ValueError(f"unknown fill {fill!r}")
    cap = min(max_col - 1, p - 1)
    for _ in range(100):
        A = np.eye(p)
        for j in range(p):
            others = np.delete(np.arange(p), j)
            k = cap if fill == "max" else int(rng.integers(0, cap + 1))
            rows = rng.choice(others, size=k, replace=False)
            A[rows, j] = rng.uniform(low, high, rows.size) * rng.choice([-1.0, 1.0], rows.size)
        if np.linalg.cond(A) < 1e3:
            return A
    raise RuntimeError("could not draw a well-conditioned sparse covariate matrix")


def simulate_scenario(p: int, n: int, generator: str = "clique", seed: int = 0, k: int = 1,
                      sizes=None, intra_corr: float = 0.5, max_col: int = 3, rng=None) -> Scenario:
    """Draw ``Y_i = A0 Z_i`` for a clique or sparse-covariate truth.

    ``rng`` overrides ``seed`` when given.
    """
    rng = as_generator(rng if rng is not None else seed)
    params = {"p": p, "n": n, "generator": generator, "seed": seed}
    if generator == "clique":
        sizes = clique_sizes(p, k, sizes)
        sigma0, model0 = clique_covariance(sizes, intra_corr)
        A0 = np.linalg.cholesky(sigma0)
        params.update(k=len(sizes), sizes=sizes, intra_corr=intra_corr)
    elif generator == "sparse":
        if not 1 <= max_col <= p:
            raise ValueError(f"max_col must lie in [1, p], got {max_col}")
        A0 = sparse_covariate(p, max_col, rng)
        sigma0 = A0 @ A0.T
        model0 = SparsityPattern.from_matrix(A0)
        params.update(max_col=max_col)
    else:
        raise ValueError(f"unknown generator {generator!r}")
    if not is_positive_definite(sigma0):
        raise ValueError("true covariance is not positive definite")
    Z = rng.standard_normal((n, p))
    return Scenario(ObservationSet(Z @ A0.T), sigma0, A0, model0, params)
