"""Per-draw statistics, confidence curves, co-membership and coverage checks."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import density
from .linalg import as_observations, eigvec_angle, fm_distance, leading_eigvec, log_det
from .models import CliqueModel

STATISTICS = ("SlogGFD", "D2Sig", "LogD", "EigvecAngle")
NEEDS_TRUTH = ("D2Sig", "EigvecAngle")
MIN_PVALUE_DRAWS = 100
MIN_REPLICATIONS = 20
KS_COEF_95 = 1.358


# ---------------------------------------------------------------------------
# per-draw statistics
# ---------------------------------------------------------------------------

@dataclass
class StatisticsTable:
    iteration: np.ndarray
    columns: dict

    def __len__(self):
        return int(self.iteration.size)

    def __getitem__(self, name):
        return self.columns[name]

    def tidy_rows(self):
        for name, vals in self.columns.items():
            for it, v in zip(self.iteration, vals):
                yield int(it), name, float(v)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "statistic", "value"])
            w.writerows(self.tidy_rows())


def _state_log_gfd(state, obs):
    if isinstance(state.model, CliqueModel) and state.sigma is not None:
        return density.log_clique_covariance_density(state.sigma, obs, state.model)
    return float(state.log_density)


def _safe_log_det(M):
    sign, ld = np.linalg.slogdet(M)
    return ld if sign > 0 else -np.inf


def compute_statistics(trace, obs, sigma0=None, statistics=None) -> StatisticsTable:
    """Table of SlogGFD, D2Sig, LogD and EigvecAngle for every kept draw.

    ``trace`` is a ``ChainTrace`` or a list of chain states.  The distance
    and angle columns need the truth ``sigma0``.
    """
    obs = as_observations(obs)
    states = list(getattr(trace, "states", trace))
    if statistics is None:
        statistics = STATISTICS if sigma0 is not None else ("SlogGFD", "LogD")
    statistics = tuple(statistics)
    unknown = set(statistics) - set(STATISTICS)
    if unknown:
        raise ValueError(f"unknown statistics {sorted(unknown)}")
    if sigma0 is None and any(s in NEEDS_TRUTH for s in statistics):
        raise ValueError("D2Sig and EigvecAngle need the true covariance sigma0")
    sig0 = None if sigma0 is None else np.asarray(sigma0, dtype=float)

    cols = {s: np.empty(len(states)) for s in statistics}
    for k, st in enumerate(states):
        sig = st.covariance()
        if "SlogGFD" in cols:
            cols["SlogGFD"][k] = _state_log_gfd(st, obs)
        if "D2Sig" in cols:
            cols["D2Sig"][k] = fm_distance(sig, sig0)
        if "LogD" in cols:
            cols["LogD"][k] = log_det(sig)
        if "EigvecAngle" in cols:
            cols["EigvecAngle"][k] = eigvec_angle(sig, sig0)
    iters = np.array([st.iteration for st in states], dtype=int)
    return StatisticsTable(iters, cols)


def baseline_statistics(obs, sigma0) -> dict:
    """The sample-covariance comparator: D2Sig, LogD and EigvecAngle of ``S_n``."""
    obs = as_observations(obs)
    S = obs.scatter
    ld = _safe_log_det(S)
    # S_n may be singular when n < p; its leading eigenvector is still defined
    c = abs(float(leading_eigvec(S) @ leading_eigvec(sigma0)))
    out = {"LogD": ld, "EigvecAngle": float(np.arccos(min(1.0, c)))}
    out["D2Sig"] = fm_distance(S, sigma0) if np.isfinite(ld) else np.inf
    return out


# ---------------------------------------------------------------------------
# confidence curves
# ---------------------------------------------------------------------------

@dataclass
class ConfidenceCurve:
    """Equal-tailed empirical intervals of a scalar statistic at every level.

    ``interval(alpha)`` is the central ``1 - alpha`` interval, so larger
    ``alpha`` gives a shorter interval nested in the longer ones.
    """

    statistic_name: str
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ValueError("confidence curve needs at least one value")
        if np.isnan(v).any():
            raise ValueError("confidence curve values contain NaN")
        self.values = v

    def interval(self, alpha: float) -> tuple:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        lo, hi = np.quantile(self.values, [alpha / 2.0, 1.0 - alpha / 2.0])
        return float(lo), float(hi)

    def curve(self, levels=None) -> np.ndarray:
        """Rows of ``(alpha, lower, upper)``."""
        if levels is None:
            levels = np.linspace(0.0, 1.0, 101)
        return np.array([(a, *self.interval(a)) for a in levels])

    def depth(self, x: float) -> float:
        """Smallest ``alpha`` whose interval excludes ``x``: ``2 min(F, 1 - F)``."""
        m = self.values.size
        F = (np.searchsorted(self.values, x, "left") + np.searchsorted(self.values, x, "right")) / (2.0 * m)
        return float(2.0 * min(F, 1.0 - F))


def confidence_curves(table: StatisticsTable) -> dict:
    return {name: ConfidenceCurve(name, vals[np.isfinite(vals)]) for name, vals in table.columns.items()
            if np.isfinite(vals).any()}


# ---------------------------------------------------------------------------
# clique co-membership
# ---------------------------------------------------------------------------

def _models_of(item):
    if isinstance(item, CliqueModel):
        return [item]
    states = getattr(item, "states", None)
    if states is not None:
        return [s.model for s in states]
    model = getattr(item, "model", None)
    if model is not None:
        return [model]
    out = []
    for sub in item:
        out.extend(_models_of(sub))
    return out


def co_membership(draws) -> np.ndarray:
    """Fraction of draws in which ``i`` and ``j`` share a clique.

    Accepts clique models, chain states, one trace or a list of traces;
    draws from several chains are pooled with equal weight per draw.
    """
    models = _models_of(draws)
    if not models:
        raise ValueError("co-membership needs at least one draw")
    p = models[0].dim
    acc = np.zeros((p, p))
    for M in models:
        if not isinstance(M, CliqueModel):
            raise TypeError(f"co-membership needs clique models, got {type(M).__name__}")
        if M.dim != p:
            raise ValueError("draws have different dimensions")
        acc += M.same_clique()
    return acc / len(models)


def threshold_partition(C, level: float = 0.5) -> CliqueModel:
    """Clique model from the connected components of ``C > level``."""
    from scipy.sparse.csgraph import connected_components

    C = np.asarray(C, dtype=float)
    _, labels = connected_components(C > level, directed=False)
    return CliqueModel(labels)


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

def one_sided_pvalue(values, reference: float) -> float:
    """Mid-rank fraction of draws at or below ``reference``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < MIN_PVALUE_DRAWS:
        raise ValueError(f"need at least {MIN_PVALUE_DRAWS} draws, got {v.size}")
    below = np.count_nonzero(v < reference)
    ties = np.count_nonzero(v == reference)
    return float((below + 0.5 * ties) / v.size)


@dataclass
class QQTable:
    uniform: np.ndarray
    empirical: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ks_distance: float
    band: float

    @property
    def violated(self) -> bool:
        return bool(self.ks_distance >= self.band)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["uniform_quantile", "empirical_quantile", "band_lower", "band_upper"])
            w.writerows(zip(self.uniform, self.empirical, self.lower, self.upper))


def ks_band(m: int) -> float:
    return KS_COEF_95 / math.sqrt(m)


def qq_coverage(pvalues) -> QQTable:
    """QQ table of p-values against Uniform(0,1) with the 95% KS envelope."""
    pv = np.sort(np.asarray(pvalues, dtype=float).ravel())
    m = pv.size
    if m < MIN_REPLICATIONS:
        raise ValueError(f"need at least {MIN_REPLICATIONS} p-values, got {m}")
    if ((pv < 0) | (pv > 1)).any():
        raise ValueError("p-values must lie in [0, 1]")
    u = (np.arange(1, m + 1) - 0.5) / m
    band = ks_band(m)
    ks = sps.kstest(pv, "uniform").statistic
    return QQTable(u, pv, np.clip(u - band, 0, 1), np.clip(u + band, 0, 1), float(ks), band)


# ---------------------------------------------------------------------------
# chain summaries and checks
# ---------------------------------------------------------------------------

def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of paired autocorrelations."""
    x = np.asarray(x, dtype=float).ravel()
    m = x.size
    if m < 4:
        return float(m)
    x = x - x.mean()
    var = x.dot(x) / m
    if var == 0:
        return float(m)
    f = np.fft.rfft(x, 2 * m)
    acf = np.fft.irfft(f * np.conj(f))[:m] / (m * var)
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(m / max(tau, 1.0 / m))


def mardia_skewness(X) -> tuple:
    """Mardia's multivariate skewness statistic and its chi-square p-value."""
    X = np.asarray(X, dtype=float)
    m, k = X.shape
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / m
    D = Xc @ np.linalg.solve(S, Xc.T)
    b1 = np.sum(D ** 3) / m ** 2
    stat = m * b1 / 6.0
    dof = k * (k + 1) * (k + 2) / 6.0
    return float(stat), float(sps.chi2.sf(stat, dof))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def summarize(table: StatisticsTable, baseline: dict | None = None, levels=(0.05, 0.5)) -> dict:
    out = {"draws": len(table)}
    for name, vals in table.columns.items():
        finite = vals[np.isfinite(vals)]
        entry = {"mean": float(np.mean(finite)) if finite.size else None,
                 "median": float(np.median(finite)) if finite.size else None,
                 "ess": effective_sample_size(finite) if finite.size else 0.0}
        if finite.size:
            cc = ConfidenceCurve(name, finite)
            entry["intervals"] = {f"{1 - a:.2f}": cc.interval(a) for a in levels}
        out[name] = entry
    if baseline is not None:
        out["baseline_sample_covariance"] = baseline
    return out
