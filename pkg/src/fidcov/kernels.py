"""Hot inner loops, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom of the module (``gfd_l2``, ``mh_sweep_l2``,
``mean_abs_subdet``, ``gibbs_sweep_l2``) are bound to the numba versions
unless ``FIDCOV_NUMBA=0``. Both flavours consume the same pre-drawn random
numbers, so a chain is reproducible whichever path runs it.
"""
import math
import types

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)
PIVOT_RTOL = 1e-12


# ---------------------------------------------------------------------------
# numba building blocks
# ---------------------------------------------------------------------------

@njit
def _lu_inplace(a, piv):
    """Partial-pivot LU of ``a`` in place. Returns log|det|, -inf if singular."""
    p = a.shape[0]
    logdet = 0.0
    for k in range(p):
        m = k
        big = abs(a[k, k])
        for r in range(k + 1, p):
            v = abs(a[r, k])
            if v > big:
                big = v
                m = r
        piv[k] = m
        if big == 0.0:
            return -np.inf
        if m != k:
            for c in range(p):
                t = a[k, c]
                a[k, c] = a[m, c]
                a[m, c] = t
        d = a[k, k]
        logdet += math.log(abs(d))
        for r in range(k + 1, p):
            f = a[r, k] / d
            a[r, k] = f
            for c in range(k + 1, p):
                a[r, c] -= f * a[k, c]
    return logdet


@njit
def _lu_solve_inplace(lu, piv, b):
    """Overwrite ``b`` (p x m) with ``A^{-1} b`` given the factors of ``A``."""
    p = lu.shape[0]
    m = b.shape[1]
    for k in range(p):
        r = piv[k]
        if r != k:
            for c in range(m):
                t = b[k, c]
                b[k, c] = b[r, c]
                b[r, c] = t
    for c in range(m):
        for i in range(p):
            s = b[i, c]
            for k in range(i):
                s -= lu[i, k] * b[k, c]
            b[i, c] = s
        for i in range(p - 1, -1, -1):
            s = b[i, c]
            for k in range(i + 1, p):
                s -= lu[i, k] * b[k, c]
            b[i, c] = s / lu[i, i]


@njit
def _chol_logdet_idx(G, idx, m, work):
    """log det of ``G[idx[:m], idx[:m]]`` by Cholesky; -inf if not PD."""
    big = 0.0
    for a in range(m):
        v = G[idx[a], idx[a]]
        if v > big:
            big = v
    if not big > 0.0:
        return -np.inf
    tol = PIVOT_RTOL * big
    out = 0.0
    for a in range(m):
        for b in range(a + 1):
            s = G[idx[a], idx[b]]
            for k in range(b):
                s -= work[a, k] * work[b, k]
            if a == b:
                if not s > tol:
                    return -np.inf
                work[a, a] = math.sqrt(s)
                out += math.log(s)
            else:
                work[a, b] = s / work[b, b]
    return out


@njit
def _pivoted_chol(S, R):
    """Fill ``R[:, :r]`` with a factor ``S = R R^T`` of a PSD ``S``; returns the rank ``r``.

    Columns are picked by largest remaining diagonal and the factorization
    stops once that falls below ``PIVOT_RTOL`` times the largest diagonal.
    """
    p = S.shape[0]
    d = np.empty(p)
    big = 0.0
    for i in range(p):
        d[i] = S[i, i]
        if d[i] > big:
            big = d[i]
    if not big > 0.0:
        return 0
    tol = PIVOT_RTOL * big
    used = np.zeros(p, dtype=np.bool_)
    for k in range(p):
        j = -1
        best = tol
        for i in range(p):
            if not used[i] and d[i] > best:
                best = d[i]
                j = i
        if j < 0:
            return k
        used[j] = True
        root = math.sqrt(d[j])
        for i in range(p):
            if used[i] and i != j:
                R[i, k] = 0.0
                continue
            s = S[i, j]
            for m in range(k):
                s -= R[i, m] * R[j, m]
            R[i, k] = s / root
        R[j, k] = root
        for i in range(p):
            if not used[i]:
                d[i] -= R[i, k] * R[i, k]
    return p


@njit
def _gram_logdet_rows(W, idx, m, r, work):
    """log det of ``W_F W_F^T`` for rows ``F = idx[:m]`` of ``W`` (p x r), by
    Householder QR of ``W_F^T``; -inf when rank deficient."""
    if m > r:
        return -np.inf
    big = 0.0
    for a in range(m):
        s = 0.0
        for t in range(r):
            v = W[idx[a], t]
            work[t, a] = v
            s += v * v
        if s > big:
            big = s
    if not big > 0.0:
        return -np.inf
    tol = PIVOT_RTOL * big
    out = 0.0
    for k in range(m):
        nrm2 = 0.0
        for t in range(k, r):
            nrm2 += work[t, k] * work[t, k]
        if not nrm2 > tol:
            return -np.inf
        out += math.log(nrm2)
        x0 = work[k, k]
        alpha = -math.sqrt(nrm2) if x0 >= 0.0 else math.sqrt(nrm2)
        work[k, k] = x0 - alpha
        vv = nrm2 - x0 * x0 + work[k, k] * work[k, k]
        for c in range(k + 1, m):
            dot = 0.0
            for t in range(k, r):
                dot += work[t, k] * work[t, c]
            f = 2.0 * dot / vv
            for t in range(k, r):
                work[t, c] -= f * work[t, k]
    return out


@njit
def _gfd_l2_nb(A, S, free, n):
    # with S = R R^T and W = A^{-1} R, G = W W^T is never formed, so each
    # log det G[F, F] loses cond(W) rather than cond(W)^2 digits
    p = A.shape[0]
    lu = A.copy()
    piv = np.empty(p, dtype=np.int64)
    logabsdet = _lu_inplace(lu, piv)
    if logabsdet == -np.inf:
        return -np.inf, -np.inf
    R = np.zeros((p, p))
    r = _pivoted_chol(S, R)
    W = np.ascontiguousarray(R[:, :r])
    _lu_solve_inplace(lu, piv, W)
    tr = 0.0
    for i in range(p):
        for t in range(r):
            tr += W[i, t] * W[i, t]
    loglik = -0.5 * n * p * LOG_2PI - n * logabsdet - 0.5 * n * tr
    idx = np.empty(p, dtype=np.int64)
    work = np.empty((max(r, 1), p))
    logjac = 0.0
    for i in range(p):
        m = 0
        for j in range(p):
            if free[i, j]:
                idx[m] = j
                m += 1
        ld = _gram_logdet_rows(W, idx, m, r, work)
        if ld == -np.inf:
            return loglik, -np.inf
        logjac += 0.5 * ld
    return loglik, logjac


def _pivoted_chol_np(S):
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    d = np.diag(S).copy()
    big = d.max() if p else 0.0
    R = np.zeros((p, p))
    if not big > 0.0:
        return R[:, :0]
    tol = PIVOT_RTOL * big
    used = np.zeros(p, dtype=bool)
    for k in range(p):
        cand = np.where(used, -np.inf, d)
        j = int(np.argmax(cand))
        if not cand[j] > tol:
            return R[:, :k]
        used[j] = True
        root = math.sqrt(d[j])
        col = (S[:, j] - R[:, :k] @ R[j, :k]) / root
        col[used] = 0.0
        col[j] = root
        R[:, k] = col
        d[~used] -= col[~used] ** 2
    return R


def _gfd_l2_np(A, S, free, n):
    p = A.shape[0]
    sign, logabsdet = np.linalg.slogdet(A)
    if sign == 0 or not np.isfinite(logabsdet):
        return -np.inf, -np.inf
    W = np.linalg.solve(A, _pivoted_chol_np(S))
    r = W.shape[1]
    loglik = -0.5 * n * p * LOG_2PI - n * logabsdet - 0.5 * n * float(np.sum(W * W))
    logjac = 0.0
    for i in range(p):
        idx = np.flatnonzero(free[i])
        if idx.size > r:
            return float(loglik), -np.inf
        Wf = W[idx]
        big = float(np.max(np.sum(Wf * Wf, axis=1)))
        d = np.diag(np.linalg.qr(Wf.T, mode="r")) ** 2
        if not (big > 0.0 and np.all(d > PIVOT_RTOL * big)):
            return float(loglik), -np.inf
        logjac += 0.5 * float(np.sum(np.log(d)))
    return float(loglik), float(logjac)


def _chol_logdet_np(M):
    d = np.diag(M)
    big = d.max() if d.size else 0.0
    if not big > 0.0:
        return -np.inf
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return -np.inf
    piv = np.diag(L) ** 2
    if not np.all(piv > PIVOT_RTOL * big):
        return -np.inf
    return float(np.sum(np.log(piv)))


# ---------------------------------------------------------------------------
# Metropolis sweep over the free entries of A (l2 norm)
# ---------------------------------------------------------------------------

def _rebind(func, **names):
    """Copy of ``func`` whose global lookups of ``names`` are redirected.

    One source body serves both flavours, and unlike a closure the numba copy
    can be cached on disk.
    """
    g = dict(func.__globals__)
    g.update(names)
    return types.FunctionType(func.__code__, g, func.__name__, func.__defaults__)


def _mh_sweep(A, S, free, n, rows, cols, log_steps, normals, log_u, cur):
    """Single-site random-walk Metropolis over entries ``(rows[k], cols[k])``.

    Diagonal entries move on the log scale. ``cur`` is the current log
    target (likelihood + Jacobian). Returns (new target, accept flags).
    """
    m = rows.shape[0]
    acc = np.zeros(m, dtype=np.bool_)
    for k in range(m):
        i = rows[k]
        j = cols[k]
        old = A[i, j]
        step = math.exp(log_steps[k])
        if i == j:
            new = old * math.exp(step * normals[k])
            log_q = math.log(new / old)
        else:
            new = old + step * normals[k]
            log_q = 0.0
        A[i, j] = new
        ll, lj = _gfd(A, S, free, n)
        prop = ll + lj
        if prop > -np.inf and log_u[k] < prop - cur + log_q:
            cur = prop
            acc[k] = True
        else:
            A[i, j] = old
    return cur, acc


def _mh_run(A, S, free, n, rows, cols, log_steps, normals, log_u, cur, thin, phase, kept, logd):
    """``normals.shape[0]`` sweeps; after sweep ``t`` the state is stored in
    ``kept`` whenever ``(phase + t) % thin == 0``. Returns (target, accepted, stored)."""
    accepted = 0
    nk = 0
    for t in range(normals.shape[0]):
        cur, acc = _sweep(A, S, free, n, rows, cols, log_steps, normals[t], log_u[t], cur)
        accepted += acc.sum()
        logd[t] = cur
        if (phase + t) % thin == 0:
            kept[nk] = A
            nk += 1
    return cur, accepted, nk


def make_mh_sweep(gfd):
    """Uncompiled sweep for an arbitrary ``gfd(A, S, free, n) -> (loglik, logjac)``."""
    return _rebind(_mh_sweep, _gfd=gfd)


_mh_sweep_np = make_mh_sweep(_gfd_l2_np)
_mh_sweep_nb = njit(make_mh_sweep(_gfd_l2_nb))
_mh_run_np = _rebind(_mh_run, _sweep=_mh_sweep_np)
_mh_run_nb = njit(_rebind(_mh_run, _sweep=_mh_sweep_nb))


# ---------------------------------------------------------------------------
# Mean absolute sub-determinant over row subsets (l-infinity Jacobian)
# ---------------------------------------------------------------------------

@njit
def _mean_abs_subdet_nb(U, combos):
    m, k = combos.shape
    a = np.empty((k, k))
    piv = np.empty(k, dtype=np.int64)
    total = 0.0
    for t in range(m):
        for r in range(k):
            row = combos[t, r]
            for c in range(k):
                a[r, c] = U[row, c]
        ld = _lu_inplace(a, piv)
        if ld > -np.inf:
            total += math.exp(ld)
    return total / m


def _mean_abs_subdet_np(U, combos, chunk=200_000):
    total = 0.0
    for s in range(0, combos.shape[0], chunk):
        sub = U[combos[s:s + chunk]]
        total += np.abs(np.linalg.det(sub)).sum()
    return total / combos.shape[0]


# ---------------------------------------------------------------------------
# Gibbs sweep over clique partitions (l2 norm)
# ---------------------------------------------------------------------------

def _pick(logw, count, u):
    top = -np.inf
    for c in range(count):
        if logw[c] > top:
            top = logw[c]
    total = 0.0
    for c in range(count):
        total += math.exp(logw[c] - top) if logw[c] > -np.inf else 0.0
    target = u * total
    acc = 0.0
    last = 0
    for c in range(count):
        if logw[c] > -np.inf:
            acc += math.exp(logw[c] - top)
            last = c
            if acc > target:
                return c
    return last


_pick_nb = njit(_pick)


@njit
def _block_logdet_nb(S, labels, lab, extra, idx, work):
    m = 0
    p = labels.shape[0]
    for i in range(p):
        if labels[i] == lab:
            idx[m] = i
            m += 1
    if extra >= 0:
        idx[m] = extra
        m += 1
    return _chol_logdet_idx(S, idx, m, work), m


@njit
def _gibbs_sweep_l2_nb(S, labels, const, n, order, uniforms):
    p = labels.shape[0]
    counts = np.zeros(p, dtype=np.int64)
    for i in range(p):
        counts[labels[i]] += 1
    ld = np.zeros(p)
    idx = np.empty(p, dtype=np.int64)
    work = np.empty((p, p))
    for c in range(p):
        if counts[c] > 0:
            ld[c], _ = _block_logdet_nb(S, labels, c, -1, idx, work)
    cand = np.empty(p + 1, dtype=np.int64)
    logw = np.empty(p + 1)
    newld = np.empty(p + 1)
    for t in range(order.shape[0]):
        j = order[t]
        c0 = labels[j]
        labels[j] = -1
        counts[c0] -= 1
        if counts[c0] > 0:
            ld[c0], _ = _block_logdet_nb(S, labels, c0, -1, idx, work)
        free_slot = -1
        nc = 0
        for c in range(p):
            if counts[c] > 0:
                g = counts[c]
                l1, _ = _block_logdet_nb(S, labels, c, j, idx, work)
                cand[nc] = c
                newld[nc] = l1
                if l1 == -np.inf or ld[c] == -np.inf:
                    logw[nc] = -np.inf
                else:
                    logw[nc] = (const[g + 1] + 0.5 * (g + 1 - n) * l1) - (const[g] + 0.5 * (g - n) * ld[c])
                nc += 1
            elif free_slot < 0:
                free_slot = c
        l1 = math.log(S[j, j])
        cand[nc] = free_slot
        newld[nc] = l1
        logw[nc] = const[1] + 0.5 * (1 - n) * l1
        nc += 1
        k = _pick_nb(logw, nc, uniforms[t])
        c = cand[k]
        labels[j] = c
        counts[c] += 1
        ld[c] = newld[k]
    total = 0.0
    for c in range(p):
        if counts[c] > 0:
            total += const[counts[c]] + 0.5 * (counts[c] - n) * ld[c]
    return total


def _gibbs_sweep_l2_np(S, labels, const, n, order, uniforms):
    p = labels.shape[0]

    def block_ld(members):
        return _chol_logdet_np(S[np.ix_(members, members)])

    def term(g, l):
        return const[g] + 0.5 * (g - n) * l

    ld = {}
    for c in np.unique(labels):
        ld[int(c)] = block_ld(np.flatnonzero(labels == c))
    for t in range(order.shape[0]):
        j = int(order[t])
        c0 = int(labels[j])
        labels[j] = -1
        rest = np.flatnonzero(labels == c0)
        if rest.size:
            ld[c0] = block_ld(rest)
        else:
            del ld[c0]
        cands, logw, newld = [], [], []
        for c in sorted(ld):
            members = np.flatnonzero(labels == c)
            l1 = block_ld(np.append(members, j))
            g = members.size
            cands.append(c)
            newld.append(l1)
            if l1 == -np.inf or ld[c] == -np.inf:
                logw.append(-np.inf)
            else:
                logw.append(term(g + 1, l1) - term(g, ld[c]))
        free_slot = min(set(range(p)) - set(ld))
        l1 = math.log(S[j, j])
        cands.append(free_slot)
        newld.append(l1)
        logw.append(term(1, l1))
        k = _pick(np.array(logw), len(logw), uniforms[t])
        labels[j] = cands[k]
        ld[cands[k]] = newld[k]
    total = 0.0
    for c, l in ld.items():
        total += term(int(np.sum(labels == c)), l)
    return total


# ---------------------------------------------------------------------------
# public bindings
# ---------------------------------------------------------------------------

IMPLEMENTATIONS = {
    "numba": {
        "gfd_l2": _gfd_l2_nb,
        "mh_sweep_l2": _mh_sweep_nb,
        "mh_run_l2": _mh_run_nb,
        "mean_abs_subdet": _mean_abs_subdet_nb,
        "gibbs_sweep_l2": _gibbs_sweep_l2_nb,
    },
    "numpy": {
        "gfd_l2": _gfd_l2_np,
        "mh_sweep_l2": _mh_sweep_np,
        "mh_run_l2": _mh_run_np,
        "mean_abs_subdet": _mean_abs_subdet_np,
        "gibbs_sweep_l2": _gibbs_sweep_l2_np,
    },
}
BACKEND = "numba" if USE_NUMBA else "numpy"

gfd_l2 = IMPLEMENTATIONS[BACKEND]["gfd_l2"]
mh_sweep_l2 = IMPLEMENTATIONS[BACKEND]["mh_sweep_l2"]
mh_run_l2 = IMPLEMENTATIONS[BACKEND]["mh_run_l2"]
mean_abs_subdet = IMPLEMENTATIONS[BACKEND]["mean_abs_subdet"]
gibbs_sweep_l2 = IMPLEMENTATIONS[BACKEND]["gibbs_sweep_l2"]
