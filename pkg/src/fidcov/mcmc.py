"""Markov chains over clique partitions, fixed sparsity patterns and unknown patterns."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import density, kernels
from .density import L2, NormChoice, SubsetDraws
from .linalg import as_observations, cholesky, sqrtm_spd
from .models import CliqueModel, SparsityPattern
from .samplers import as_generator, sample_clique_covariance_batch

INITIALIZERS = ("SnPa", "chol", "dcho", "diag", "oracle")
SAMPLERS = ("gibbs", "mh", "rjmcmc")


@dataclass
class ChainState:
    model: CliqueModel | SparsityPattern
    A: np.ndarray | None = None
    log_density: float = -np.inf
    iteration: int = 0
    sigma: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def covariance(self) -> np.ndarray:
        if self.sigma is not None:
            return self.sigma
        if self.A is None:
            raise ValueError("state carries neither a covariance nor a covariate matrix")
        return self.A @ self.A.T


@dataclass
class ChainConfig:
    sampler: str = "rjmcmc"
    burn_in: int = 5000
    window: int = 10000
    thin: int = 1
    norm: NormChoice | str = "l2"
    penalty: str = "auto"
    max_col: int | None = None
    target_accept: float = 0.3
    random_scan: bool = False
    draw_covariance: bool = True

    def __post_init__(self):
        self.norm = NormChoice.coerce(self.norm)
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.penalty == "auto":
            self.penalty = "clique" if self.sampler == "gibbs" else "mdl"
        if self.penalty not in ("clique", "mdl", "none"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.sampler == "gibbs" and self.penalty == "mdl":
            raise ValueError("the MDL penalty applies to sparsity patterns, not clique models")
        if self.sampler != "gibbs" and self.penalty == "clique":
            raise ValueError("the clique penalty applies to clique models only")
        if self.sampler == "rjmcmc" and self.max_col is None:
            raise ValueError("rjmcmc needs max_col")


@dataclass
class ChainTrace:
    log_density: np.ndarray
    states: list
    accept_rate: float | None = None
    move_counts: dict = field(default_factory=dict)

    def records(self):
        for s in self.states:
            rec = {"iteration": s.iteration, "log_density": s.log_density, "model_string": str(s.model)}
            rec.update({k: v for k, v in s.stats.items() if isinstance(v, (int, float, str))})
            yield rec

    def write_ndjson(self, path):
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    def covariances(self) -> np.ndarray:
        return np.stack([s.covariance() for s in self.states])


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------

def _cap_columns(R: np.ndarray, max_col: int | None) -> np.ndarray:
    """Keep the diagonal and the largest ``max_col - 1`` off-diagonals per column."""
    if max_col is None:
        return R.copy()
    p = R.shape[0]
    out = np.diag(np.diag(R)).astype(float)
    for j in range(p):
        col = np.abs(R[:, j]).astype(float)
        col[j] = -1.0
        keep = [i for i in np.argsort(-col, kind="stable")[: max(max_col - 1, 0)] if col[i] > 0]
        out[keep, j] = R[keep, j]
    return out


def _regularized_scatter(obs) -> np.ndarray:
    S = np.array(obs.scatter)
    try:
        cholesky(S)
    except ValueError:
        S = S + 1e-8 * np.trace(S) / S.shape[0] * np.eye(S.shape[0])
    return S


def initial_covariate(kind: str, obs, max_col: int | None = None, A0=None) -> np.ndarray:
    """Starting covariate matrix for the pattern samplers.

    ``SnPa`` (alias ``MaxC``) is the symmetric root of ``S_n``, ``chol`` its
    Cholesky factor, both cut to ``max_col`` entries per column; ``dcho`` and
    ``diag`` are diagonal; ``oracle`` is the supplied truth ``A0``.
    """
    obs = as_observations(obs)
    S = _regularized_scatter(obs)
    if kind in ("SnPa", "MaxC"):
        A = _cap_columns(sqrtm_spd(S), max_col)
        sign, _ = np.linalg.slogdet(A)
        if sign == 0 or np.any(np.diag(A) <= 0) or np.linalg.cond(A) > 1e12:
            A = np.diag(np.sqrt(np.diag(S)))
    elif kind == "chol":
        A = _cap_columns(np.linalg.cholesky(S), max_col)
    elif kind == "dcho":
        A = np.diag(np.diag(np.linalg.cholesky(S)))
    elif kind == "diag":
        A = np.diag(np.sqrt(np.diag(S)))
    elif kind == "oracle":
        if A0 is None:
            raise ValueError("oracle initialization needs the true covariate matrix")
        A = np.array(A0, dtype=float)
        if max_col is not None and (A != 0).sum(axis=0).max() > max_col:
            raise ValueError("oracle matrix violates max_col")
    else:
        raise ValueError(f"unknown initializer {kind!r}; choose from {INITIALIZERS}")
    return A


def random_partition(p: int, rng) -> CliqueModel:
    rng = as_generator(rng)
    return CliqueModel(rng.integers(0, p, size=p))


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

class GeneralTarget:
    """Penalized log-GFD of ``(pattern, A)`` with cached data summaries."""

    def __init__(self, obs, norm=L2, penalty: str = "mdl", subsets: SubsetDraws | None = None, rng=None):
        self.obs = as_observations(obs)
        self.norm = NormChoice.coerce(norm)
        self.penalty = penalty
        self.S = np.ascontiguousarray(self.obs.scatter)
        self.n = float(self.obs.n)
        if self.norm.kind == "linf" and subsets is None:
            subsets = SubsetDraws(self.obs.n, self.norm, as_generator(rng))
        self.subsets = subsets

    def log_penalty(self, pattern: SparsityPattern) -> float:
        return density.log_mdl_penalty(pattern, self.obs.n) if self.penalty == "mdl" else 0.0

    def unpenalized(self, A, free) -> float:
        if self.norm.kind == "l2":
            ll, lj = kernels.gfd_l2(A, self.S, free, self.n)
            return ll + lj
        ll = density.log_likelihood(self.obs, A)
        if ll == -np.inf:
            return -np.inf
        return ll + density.log_jacobian(self.obs, A, self.norm, SparsityPattern(free), self.subsets)

    def __call__(self, A, pattern: SparsityPattern) -> float:
        v = self.unpenalized(A, np.ascontiguousarray(pattern.free))
        return v + self.log_penalty(pattern) if v > -np.inf else -np.inf

    def refresh(self):
        if self.subsets is not None:
            self.subsets.refresh()

    def _linf_gfd(self, pattern):
        def gfd(A, S, free, n):
            ll = density.log_likelihood(self.obs, A)
            if ll == -np.inf:
                return -np.inf, -np.inf
            return ll, density.log_jacobian(self.obs, A, self.norm, pattern, self.subsets)
        return gfd


def general_state(obs, A, pattern: SparsityPattern | None = None, norm=L2, penalty="mdl",
                  target: GeneralTarget | None = None) -> ChainState:
    A = np.ascontiguousarray(np.array(A, dtype=float))
    if pattern is None:
        pattern = SparsityPattern.from_matrix(A)
    target = target or GeneralTarget(obs, norm, penalty)
    return ChainState(pattern, A, target(A, pattern), 0)


# ---------------------------------------------------------------------------
# fixed-pattern Metropolis-Hastings
# ---------------------------------------------------------------------------

def default_log_steps(obs) -> np.ndarray:
    """Initial proposal scales: ``1/sqrt(n)`` relative for diagonals, absolute elsewhere."""
    obs = as_observations(obs)
    scale = math.sqrt(np.mean(np.diag(obs.scatter)))
    steps = np.full((obs.p, obs.p), math.log(scale / math.sqrt(obs.n)))
    np.fill_diagonal(steps, math.log(1.0 / math.sqrt(2.0 * obs.n)))
    return steps


def _log_steps_matrix(step_scale, p):
    if np.isscalar(step_scale):
        with np.errstate(divide="ignore"):
            return np.full((p, p), math.log(step_scale) if step_scale > 0 else -np.inf)
    return np.asarray(step_scale, dtype=float)


def mh_fixed_pattern_step(obs, state: ChainState, norm=L2, step_scale=0.1, rng=None,
                          penalty: str = "mdl", target: GeneralTarget | None = None) -> ChainState:
    """One sweep of single-site random-walk Metropolis over the free entries of ``A``.

    ``step_scale`` is a scalar or a ``p x p`` array of *log* step sizes
    (the array form is what the burn-in tuner maintains). Diagonal entries
    are proposed multiplicatively, keeping them positive.
    """
    rng = as_generator(rng)
    target = target or GeneralTarget(obs, norm, penalty, rng=rng)
    pattern = state.model
    p = pattern.dim
    log_steps = _log_steps_matrix(step_scale, p)
    rows, cols = np.nonzero(pattern.free)
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    m = rows.size
    normals = rng.standard_normal(m)
    log_u = np.log(rng.random(m))
    A = np.ascontiguousarray(state.A.copy())
    free = np.ascontiguousarray(pattern.free)
    pen = target.log_penalty(pattern)
    target.refresh()
    cur = target.unpenalized(A, free)
    ls = np.ascontiguousarray(log_steps[rows, cols])
    if target.norm.kind == "l2":
        cur, acc = kernels.mh_sweep_l2(A, target.S, free, target.n, rows, cols, ls, normals, log_u, cur)
    else:
        sweep = kernels.make_mh_sweep(target._linf_gfd(pattern))
        cur, acc = sweep(A, target.S, free, target.n, rows, cols, ls, normals, log_u, cur)
    return ChainState(pattern, A, cur + pen, state.iteration + 1,
                      stats={"move": "within", "accepted": acc, "rows": rows, "cols": cols})


# ---------------------------------------------------------------------------
# reversible jump over sparsity patterns
# ---------------------------------------------------------------------------

def _column_rms(A, free, j):
    v = A[free[:, j], j]
    if v.size:
        return float(np.sqrt(np.mean(v * v)))
    vals = A[free]
    return float(np.sqrt(np.mean(vals * vals)))


def _birth_sites(free, max_col, n):
    p = free.shape[0]
    col_ok = free.sum(axis=0) < max_col
    row_ok = free.sum(axis=1) < n
    cand = ~free & col_ok[None, :] & row_ok[:, None]
    cand[np.arange(p), np.arange(p)] = False
    return np.argwhere(cand)


def _death_sites(free):
    off = free.copy()
    np.fill_diagonal(off, False)
    return np.argwhere(off)


def _log_normal_pdf(x, sd):
    return -0.5 * math.log(2.0 * math.pi) - math.log(sd) - 0.5 * (x / sd) ** 2


def rjmcmc_step(obs, state: ChainState, norm=L2, max_col: int | None = None, rng=None,
                log_steps=None, target: GeneralTarget | None = None) -> ChainState:
    """Within-model sweep (probability 1/2) or a birth/death move on one entry.

    Births switch on a structural zero in a column holding fewer than
    ``max_col`` nonzeros and draw its value from ``N(0, s^2)``, where ``s`` is
    the RMS of the active entries of that column. Deaths zero one active
    off-diagonal entry. Diagonal entries are never removed.
    """
    rng = as_generator(rng)
    target = target or GeneralTarget(obs, norm, "mdl", rng=rng)
    pattern = state.model
    p = pattern.dim
    if max_col is None:
        max_col = p
    if log_steps is None:
        log_steps = default_log_steps(target.obs)
    if rng.random() < 0.5:
        return mh_fixed_pattern_step(obs, state, target.norm, log_steps, rng, target.penalty, target)

    birth = rng.random() < 0.5
    free = pattern.free
    A = state.A
    n = target.obs.n
    sites = _birth_sites(free, max_col, n) if birth else _death_sites(free)
    move = "birth" if birth else "death"
    if len(sites) == 0:
        return ChainState(pattern, A, state.log_density, state.iteration + 1,
                          stats={"move": move, "accepted": False})
    i, j = sites[rng.integers(len(sites))]
    log_u = math.log(rng.random())
    target.refresh()
    cur = target(A, pattern)
    A_new = A.copy()
    free_new = free.copy()
    if birth:
        sd = _column_rms(A, free, j)
        value = sd * rng.standard_normal()
        A_new[i, j] = value
        free_new[i, j] = True
        new_pattern = SparsityPattern(free_new)
        n_rev = len(_death_sites(free_new))
        log_prop = -math.log(n_rev) + math.log(len(sites)) - _log_normal_pdf(value, sd)
    else:
        value = A[i, j]
        A_new[i, j] = 0.0
        free_new[i, j] = False
        new_pattern = SparsityPattern(free_new)
        sd = _column_rms(A_new, free_new, j)
        n_rev = len(_birth_sites(free_new, max_col, n))
        log_prop = -math.log(n_rev) + math.log(len(sites)) + _log_normal_pdf(value, sd)
    prop = target(A_new, new_pattern)
    if prop > -np.inf and log_u < prop - cur + log_prop:
        return ChainState(new_pattern, A_new, prop, state.iteration + 1,
                          stats={"move": move, "accepted": True})
    return ChainState(pattern, A, cur, state.iteration + 1, stats={"move": move, "accepted": False})


# ---------------------------------------------------------------------------
# Gibbs over clique partitions
# ---------------------------------------------------------------------------

class CliqueTarget:
    """Per-clique log terms of the (optionally penalized) clique-model GFD."""

    def __init__(self, obs, norm=L2, penalty: bool = True, subsets=None, rng=None):
        self.obs = as_observations(obs)
        self.norm = NormChoice.coerce(norm)
        self.penalty = penalty
        self.S = np.ascontiguousarray(self.obs.scatter)
        if np.any(np.diag(self.S) <= 0):
            raise ValueError("a coordinate has zero sample variance")
        self.const = density.clique_term_constants(self.obs.p, self.obs.n, penalty)
        if self.norm.kind == "linf" and subsets is None:
            subsets = SubsetDraws(self.obs.n, self.norm, as_generator(rng))
        self.subsets = subsets
        self._memo = {}

    def term(self, members: tuple) -> float:
        t = self._memo.get(members)
        if t is None:
            t = density.log_clique_term(self.obs, list(members), self.norm, self.penalty, self.subsets)
            self._memo[members] = t
        return t

    def __call__(self, M: CliqueModel) -> float:
        return float(sum(self.term(tuple(b.tolist())) for b in M.blocks))


def _gibbs_sweep_generic(target: CliqueTarget, labels, order, uniforms) -> float:
    p = labels.size
    for t, j in enumerate(order):
        j = int(j)
        labels[j] = -1
        used = sorted(set(labels.tolist()) - {-1})
        cands, logw = [], []
        for c in used:
            members = tuple(np.flatnonzero(labels == c).tolist())
            with_j = tuple(sorted(members + (j,)))
            a, b = target.term(with_j), target.term(members)
            cands.append(c)
            logw.append(a - b if a > -np.inf and b > -np.inf else -np.inf)
        cands.append(min(set(range(p)) - set(used)))
        logw.append(target.term((j,)))
        labels[j] = cands[kernels._pick(np.array(logw), len(logw), uniforms[t])]
    return target(CliqueModel(labels))


def gibbs_clique_sweep(obs, state: ChainState, penalty: bool = True, rng=None, norm=L2,
                       random_scan: bool = False, target: CliqueTarget | None = None) -> ChainState:
    """Reassign every coordinate in turn from its full conditional over partitions."""
    rng = as_generator(rng)
    target = target or CliqueTarget(obs, norm, penalty, rng=rng)
    p = target.obs.p
    order = rng.permutation(p) if random_scan else np.arange(p)
    order = order.astype(np.int64)
    uniforms = rng.random(p)
    labels = np.array(state.model.labels, dtype=np.int64)
    if target.norm.kind == "l2":
        total = kernels.gibbs_sweep_l2(target.S, labels, target.const, float(target.obs.n), order, uniforms)
    else:
        total = _gibbs_sweep_generic(target, labels, order, uniforms)
    return ChainState(CliqueModel(labels), None, float(total), state.iteration + 1)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run_chain(obs, config: ChainConfig, init: ChainState, rng) -> ChainTrace:
    """Run burn-in plus ``window`` iterations and keep every ``thin``-th state after burn-in.

    Proposal scales of the Metropolis moves adapt by Robbins-Monro toward
    ``config.target_accept`` during burn-in and are frozen afterwards.
    """
    obs = as_observations(obs)
    rng = as_generator(rng)
    total = config.burn_in + config.window
    logd = np.empty(total)
    kept = []
    state = init
    accepted = attempted = 0
    moves = {}

    if config.sampler == "gibbs":
        target = CliqueTarget(obs, config.norm, config.penalty == "clique", rng=rng)
        if not np.isfinite(state.log_density):
            state = ChainState(state.model, None, target(state.model), state.iteration)
    else:
        target = GeneralTarget(obs, config.norm, config.penalty, rng=rng)
        log_steps = default_log_steps(obs)
        state = ChainState(state.model, np.ascontiguousarray(state.A, dtype=float),
                           target(state.A, state.model), state.iteration)
        if not np.isfinite(state.log_density):
            raise ValueError("initial state has zero fiducial density")

    fast = config.sampler == "mh" and config.norm.kind == "l2"
    for it in range(config.burn_in if fast else total):
        if config.sampler == "gibbs":
            state = gibbs_clique_sweep(obs, state, rng=rng, random_scan=config.random_scan, target=target)
        elif config.sampler == "mh":
            state = mh_fixed_pattern_step(obs, state, rng=rng, step_scale=log_steps, target=target)
        else:
            state = rjmcmc_step(obs, state, max_col=config.max_col, rng=rng, log_steps=log_steps, target=target)
        state.iteration = it + 1
        move = state.stats.get("move")
        if move is not None:
            c = moves.setdefault(move, [0, 0])
            acc = state.stats["accepted"]
            c[0] += int(np.size(acc))
            c[1] += int(np.sum(acc))
        if move == "within":
            acc = state.stats["accepted"]
            if it < config.burn_in:
                gain = (it + 1.0) ** -0.6
                r, c = state.stats["rows"], state.stats["cols"]
                log_steps[r, c] += gain * (acc.astype(float) - config.target_accept)
            else:
                accepted += int(acc.sum())
                attempted += acc.size
        logd[it] = state.log_density
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            if config.sampler == "gibbs" and config.draw_covariance:
                state.sigma = sample_clique_covariance_batch(obs, state.model, rng, 1)[0]
            kept.append(state)
    if fast:
        state, acc, att = _mh_window_l2(state, target, log_steps, config, rng, logd, kept)
        accepted += acc
        attempted += att
        c = moves.setdefault("within", [0, 0])
        c[0] += att
        c[1] += acc
    rate = accepted / attempted if attempted else None
    return ChainTrace(logd, kept, rate, {k: tuple(v) for k, v in moves.items()})


def _mh_window_l2(state, target, log_steps, config, rng, logd, kept, chunk=2000):
    """Post-burn-in fixed-pattern sweeps run in compiled chunks."""
    pattern = state.model
    pen = target.log_penalty(pattern)
    free = np.ascontiguousarray(pattern.free)
    rows, cols = (np.ascontiguousarray(x, dtype=np.int64) for x in np.nonzero(free))
    ls = np.ascontiguousarray(log_steps[rows, cols])
    A = np.ascontiguousarray(state.A.copy())
    cur = target.unpenalized(A, free)
    m = rows.size
    p = A.shape[0]
    accepted = 0
    base = config.burn_in
    done = 0
    while done < config.window:
        T = min(chunk, config.window - done)
        normals = rng.standard_normal((T, m))
        log_u = np.log(rng.random((T, m)))
        store = np.empty((T // config.thin + 1, p, p))
        seg = np.empty(T)
        cur, acc, nk = kernels.mh_run_l2(A, target.S, free, target.n, rows, cols, ls, normals, log_u,
                                         cur, config.thin, done, store, seg)
        accepted += int(acc)
        logd[base + done: base + done + T] = seg + pen
        first = (-done) % config.thin
        for k in range(nk):
            it = base + done + first + k * config.thin + 1
            kept.append(ChainState(pattern, store[k].copy(), float(seg[first + k * config.thin] + pen), it))
        done += T
    final = ChainState(pattern, A, cur + pen, base + config.window)
    return final, accepted, config.window * m
