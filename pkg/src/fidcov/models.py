"""Sparsity patterns, clique partitions and the relations between them."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .linalg import SpdMatrix

COMPAT_ATOL = 1e-12
MAX_ENUM_DIM = 8


class SparsityPattern:
    """Which entries of a square covariate matrix are free (may be nonzero).

    ``free[i, j]`` is False when entry ``(i, j)`` is a structural zero, so
    ``zero_set(i)`` is the set of columns fixed at zero in row ``i``.
    """

    def __init__(self, free, max_col: int | None = None):
        f = np.array(free, dtype=bool)
        if f.ndim != 2 or f.shape[0] != f.shape[1] or f.shape[0] == 0:
            raise ValueError(f"pattern must be a non-empty square mask, got shape {f.shape}")
        if not f.any(axis=1).all():
            raise ValueError("every row needs at least one free entry")
        f.setflags(write=False)
        self.free = f
        self.max_col = max_col
        if max_col is not None and self.col_counts.max() > max_col:
            raise ValueError(f"column nonzero count exceeds maxC={max_col}")

    @classmethod
    def full(cls, p: int) -> "SparsityPattern":
        return cls(np.ones((p, p), dtype=bool))

    @classmethod
    def diagonal(cls, p: int) -> "SparsityPattern":
        return cls(np.eye(p, dtype=bool))

    @classmethod
    def from_matrix(cls, A, tol: float = 0.0) -> "SparsityPattern":
        return cls(np.abs(np.asarray(A, dtype=float)) > tol)

    @property
    def dim(self) -> int:
        return self.free.shape[0]

    def zero_set(self, i: int) -> set:
        return set(np.flatnonzero(~self.free[i]).tolist())

    @cached_property
    def row_free_counts(self) -> np.ndarray:
        return self.free.sum(axis=1)

    @cached_property
    def col_counts(self) -> np.ndarray:
        return self.free.sum(axis=0)

    @property
    def is_full(self) -> bool:
        return bool(self.free.all())

    def __eq__(self, other):
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return np.array_equal(self.free, other.free)

    def __hash__(self):
        return hash((self.free.shape, self.free.tobytes()))

    def __str__(self):
        return ";".join(" ".join(str(j + 1) for j in np.flatnonzero(row)) for row in self.free)

    def __repr__(self):
        return f"SparsityPattern(dim={self.dim}, nnz={int(self.free.sum())})"


class CovariateMatrix:
    """Square full-rank matrix ``A`` (so that ``Sigma = A A^T``) with its pattern."""

    def __init__(self, entries, pattern: SparsityPattern | None = None):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if pattern is None:
            pattern = SparsityPattern.from_matrix(a)
        if pattern.dim != a.shape[0]:
            raise ValueError("pattern dimension does not match matrix")
        if np.any(a[~pattern.free] != 0.0):
            raise ValueError("nonzero entry at a structural zero")
        if np.any(np.diag(a) <= 0.0):
            raise ValueError("diagonal entries must be strictly positive")
        if np.linalg.matrix_rank(a) < a.shape[0]:
            raise ValueError("covariate matrix is singular")
        a.setflags(write=False)
        self.entries = a
        self.pattern = pattern

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def covariance(self) -> SpdMatrix:
        return SpdMatrix(self.entries @ self.entries.T)


class CliqueModel:
    """Partition of ``{0..p-1}`` into cliques, stored as a canonical label vector.

    Labels are numbered in order of each clique's smallest member, so two
    equal partitions always have identical label vectors.
    """

    def __init__(self, labels):
        lab = np.asarray(labels)
        if lab.ndim != 1 or lab.size == 0:
            raise ValueError("labels must be a non-empty vector")
        _, first, inv = np.unique(lab, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int64)
        rank[np.argsort(first)] = np.arange(first.size)
        canon = rank[inv.ravel()]
        canon.setflags(write=False)
        self.labels = canon

    @classmethod
    def singletons(cls, p: int) -> "CliqueModel":
        return cls(np.arange(p))

    @classmethod
    def full(cls, p: int) -> "CliqueModel":
        return cls(np.zeros(p, dtype=int))

    @classmethod
    def from_blocks(cls, blocks, p: int | None = None) -> "CliqueModel":
        members = [int(i) for b in blocks for i in b]
        if p is None:
            p = len(members)
        if sorted(members) != list(range(p)):
            raise ValueError("blocks must partition 0..p-1 exactly once")
        lab = np.empty(p, dtype=np.int64)
        for c, b in enumerate(blocks):
            lab[list(b)] = c
        return cls(lab)

    @classmethod
    def parse(cls, text: str) -> "CliqueModel":
        """Inverse of ``str``: pipe-separated cliques of 1-based indices."""
        blocks = [[int(t) - 1 for t in part.split()] for part in text.strip().split("|")]
        if any(not b for b in blocks):
            raise ValueError(f"empty clique in {text!r}")
        return cls.from_blocks(blocks)

    @property
    def dim(self) -> int:
        return self.labels.size

    @property
    def count(self) -> int:
        return int(self.labels.max()) + 1

    @cached_property
    def blocks(self) -> tuple:
        return tuple(np.flatnonzero(self.labels == c) for c in range(self.count))

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels)

    def same_clique(self) -> np.ndarray:
        return self.labels[:, None] == self.labels[None, :]

    def to_pattern(self) -> SparsityPattern:
        return SparsityPattern(self.same_clique())

    def __eq__(self, other):
        if not isinstance(other, CliqueModel):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    def __str__(self):
        return "|".join(" ".join(str(i + 1) for i in b) for b in self.blocks)

    def __repr__(self):
        return f"CliqueModel({str(self)!r})"


def _check_dims(M: CliqueModel, S):
    if S.shape != (M.dim, M.dim):
        raise ValueError(f"dimension mismatch: model has p={M.dim}, matrix {S.shape}")


def restrict_to_model(S, M: CliqueModel):
    """Zero the entries of ``S`` linking coordinates in different cliques."""
    a = np.asarray(S.entries if isinstance(S, SpdMatrix) else S, dtype=float)
    _check_dims(M, a)
    out = np.where(M.same_clique(), a, 0.0)
    return SpdMatrix(out) if isinstance(S, SpdMatrix) else out


def is_submodel(M1: CliqueModel, M2: CliqueModel) -> bool:
    """True when every clique of ``M1`` lies inside a clique of ``M2``."""
    if M1.dim != M2.dim:
        return False
    return all(np.all(M2.labels[b] == M2.labels[b[0]]) for b in M1.blocks)


def is_compatible(M: CliqueModel, sigma0) -> bool:
    a = np.asarray(sigma0.entries if isinstance(sigma0, SpdMatrix) else sigma0, dtype=float)
    _check_dims(M, a)
    return bool(np.max(np.abs(restrict_to_model(a, M) - a)) <= COMPAT_ATOL)


def pattern_to_clique(P: SparsityPattern) -> CliqueModel | None:
    """The clique model whose block pattern equals ``P``, or None if there is none."""
    f = P.free
    if not (np.array_equal(f, f.T) and f.diagonal().all()):
        return None
    p = P.dim
    labels = -np.ones(p, dtype=np.int64)
    for i in range(p):
        if labels[i] < 0:
            labels[f[i]] = i
    M = CliqueModel(labels)
    return M if np.array_equal(M.same_clique(), f) else None


def enumerate_partitions(p: int) -> list:
    """All set partitions of ``p`` coordinates in canonical form (``p <= 8``)."""
    if p < 1:
        raise ValueError("p must be positive")
    if p > MAX_ENUM_DIM:
        raise ValueError(f"enumeration capped at p={MAX_ENUM_DIM}, got {p}")
    out = []
    labels = [0] * p

    def grow(i, top):
        if i == p:
            out.append(CliqueModel(labels))
            return
        for c in range(top + 2):
            labels[i] = c
            grow(i + 1, max(top, c))

    labels[0] = 0
    grow(1, 0)
    return out
