"""Random streams and exact (non-MCMC) samplers for full and clique models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SpdMatrix, as_observations, cholesky
from .models import CliqueModel


@dataclass(frozen=True)
class RngStream:
    """Reproducible generator: the same ``(seed, stream_id)`` gives the same draws."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def sample_inverse_wishart_batch(dof: float, scale, rng, size: int) -> np.ndarray:
    """``size`` draws of ``IW(dof, scale)``, stacked as ``(size, p, p)``.

    The Wishart draw of the inverse scale is built with the Bartlett
    decomposition and inverted through triangular factors, so no explicit
    inverse of ``scale`` is formed.
    """
    rng = as_generator(rng)
    C = cholesky(scale)
    p = C.shape[0]
    if dof < p:
        raise ValueError(f"degrees of freedom {dof} below dimension {p}")
    B = np.zeros((size, p, p))
    ii = np.arange(p)
    B[:, ii, ii] = np.sqrt(rng.chisquare(dof - ii, size=(size, p)))
    lo = np.tril_indices(p, -1)
    B[:, lo[0], lo[1]] = rng.standard_normal((size, lo[0].size))
    # X = C B^{-T}, Sigma = X X^T
    Xt = np.linalg.solve(B, np.broadcast_to(C.T, (size, p, p)))
    X = np.swapaxes(Xt, 1, 2)
    out = X @ Xt
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def sample_inverse_wishart(dof: float, scale, rng) -> SpdMatrix:
    return SpdMatrix(sample_inverse_wishart_batch(dof, scale, rng, 1)[0])


def sample_clique_covariance_batch(obs, M: CliqueModel, rng, size: int) -> np.ndarray:
    """Block-diagonal draws with block ``i`` from ``IW(n, n S_n^i)``."""
    obs = as_observations(obs)
    rng = as_generator(rng)
    n, p = obs.n, obs.p
    if M.dim != p:
        raise ValueError(f"model has p={M.dim}, data has p={p}")
    if n <= M.sizes.max():
        raise ValueError(f"need n > largest clique size, got n={n}")
    out = np.zeros((size, p, p))
    for b in M.blocks:
        draws = sample_inverse_wishart_batch(n, n * obs.scatter[np.ix_(b, b)], rng, size)
        out[:, b[:, None], b[None, :]] = draws
    return out


def sample_clique_covariance(obs, M: CliqueModel, rng) -> SpdMatrix:
    return SpdMatrix(sample_clique_covariance_batch(obs, M, rng, 1)[0])


def iw_mean(dof: float, scale) -> np.ndarray:
    p = np.shape(scale)[0]
    return np.asarray(scale, dtype=float) / (dof - p - 1)
