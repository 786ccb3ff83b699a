"""Command-line front end.

Subcommands ``fit-full``, ``fit-clique``, ``fit-general``, ``simulate`` and
``coverage``.  Settings come from an optional flat config file
(``key = value`` per line, ``#`` starts a comment, keys spelled like the long
flags with or without dashes) and are overridden by command-line flags.

Every run writes one directory::

    out/manifest.json      resolved configuration, seed and backend
    out/traces/            one NDJSON file per chain
    out/diagnostics/       tidy per-draw statistics and derived tables
    out/summary.json
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, kernels, mcmc, scenarios
from .density import NormChoice
from .io import IngestError, ingest_csv, read_square, write_matrix
from .linalg import ObservationSet, cholesky, log_det
from .models import CliqueModel, SparsityPattern
from .samplers import RngStream, sample_inverse_wishart_batch

MODES = ("fit-full", "fit-clique", "fit-general", "simulate", "coverage")


@dataclass
class RunConfig:
    mode: str
    input: str | None = None
    out: str = "fidcov-run"
    norm: str = "l2"
    chains: int = 1
    burn_in: int = 5000
    window: int = 10000
    thin: int = 1
    seed: int = 0
    maxc: int | None = None
    init: str = "SnPa"
    penalty: str = "auto"
    sigma0: str | None = None
    a0: str | None = None
    workers: int = 1
    # simulation / coverage scenario
    p: int = 10
    n: int = 1000
    generator: str = "clique"
    k: int = 2
    sizes: str | None = None
    intra_corr: float = 0.5
    reps: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        NormChoice.coerce(self.norm)
        for name in ("chains", "window", "thin", "workers", "reps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.init not in mcmc.INITIALIZERS + ("MaxC",):
            raise ValueError(f"unknown init {self.init!r}")
        if self.penalty not in ("auto", "clique", "mdl", "none"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.mode == "fit-general" and self.maxc is None:
            raise ValueError("fit-general needs --maxc")
        if self.init == "oracle" and self.mode == "fit-general" and self.sigma0 is None and self.a0 is None:
            raise ValueError("oracle init needs --sigma0 or --a0")
        if self.mode.startswith("fit") and self.input is None:
            raise ValueError(f"{self.mode} needs --input")

    @property
    def size_list(self):
        if self.sizes is None:
            return None
        return [int(s) for s in str(self.sizes).replace(",", " ").split()]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, value):
    t = str(_TYPES[key])
    if value is None or (isinstance(value, str) and value.lower() in ("none", "")):
        return None
    if "int" in t:
        return int(value)
    if "float" in t:
        return float(value)
    return str(value)


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _TYPES or key == "mode":
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValueError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fidcov", description="Fiducial inference for sparse covariance matrices.")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.error = ap.error
        sp.add_argument("--config")
        sp.add_argument("--input")
        sp.add_argument("--out")
        sp.add_argument("--norm", choices=("l2", "linf"))
        sp.add_argument("--chains", type=int)
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--window", type=int)
        sp.add_argument("--thin", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--maxc", type=int)
        sp.add_argument("--init", choices=mcmc.INITIALIZERS + ("MaxC",))
        sp.add_argument("--penalty", choices=("auto", "clique", "mdl", "none"))
        sp.add_argument("--sigma0", help="CSV of the true covariance, for diagnostics")
        sp.add_argument("--a0", help="CSV of the true covariate matrix")
        sp.add_argument("--workers", type=int, help="processes running chains concurrently")
        sp.add_argument("--p", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--generator", choices=("clique", "sparse"))
        sp.add_argument("--k", type=int)
        sp.add_argument("--sizes")
        sp.add_argument("--intra-corr", type=float)
        sp.add_argument("--reps", type=int)
    return ap


def resolve_config(argv=None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    values = {}
    if args.get("config"):
        values.update(parse_config_file(args["config"]))
    values.update({k: v for k, v in args.items() if v is not None and k != "config"})
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# chain workers (top-level so they can run in a process pool)
# ---------------------------------------------------------------------------

def _clique_chain(rows, cfg_dict, chain_id):
    cfg = RunConfig(**cfg_dict)
    obs = ObservationSet(rows)
    rng = RngStream(cfg.seed, chain_id).generator()
    ccfg = mcmc.ChainConfig("gibbs", cfg.burn_in, cfg.window, cfg.thin, cfg.norm,
                            "clique" if cfg.penalty == "auto" else cfg.penalty)
    init = mcmc.ChainState(CliqueModel.singletons(obs.p) if cfg.init == "diag"
                           else mcmc.random_partition(obs.p, rng))
    return mcmc.run_chain(obs, ccfg, init, rng)


def _general_chain(rows, cfg_dict, chain_id, A0):
    cfg = RunConfig(**cfg_dict)
    obs = ObservationSet(rows)
    rng = RngStream(cfg.seed, chain_id).generator()
    ccfg = mcmc.ChainConfig("rjmcmc", cfg.burn_in, cfg.window, cfg.thin, cfg.norm,
                            "mdl" if cfg.penalty == "auto" else cfg.penalty, max_col=cfg.maxc)
    A = mcmc.initial_covariate(cfg.init, obs, cfg.maxc, A0)
    target = mcmc.GeneralTarget(obs, ccfg.norm, ccfg.penalty, rng=rng)
    return mcmc.run_chain(obs, ccfg, mcmc.general_state(obs, A, target=target), rng)


def _run_chains(func, cfg, extra=()):
    args = [(cfg.rows, cfg.as_dict, c, *extra) for c in range(cfg.chains)]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(min(cfg.workers, cfg.chains)) as pool:
            futures = [pool.submit(func, *a) for a in args]
            return [f.result() for f in futures]
    return [func(*a) for a in args]


class _Job:
    def __init__(self, cfg: RunConfig, obs):
        self.cfg = cfg
        self.rows = np.asarray(obs.rows)
        self.as_dict = asdict(cfg)
        self.chains = cfg.chains
        self.workers = cfg.workers


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _truth(cfg):
    sigma0 = read_square(cfg.sigma0) if cfg.sigma0 else None
    A0 = read_square(cfg.a0) if cfg.a0 else None
    if sigma0 is None and A0 is not None:
        sigma0 = A0 @ A0.T
    return sigma0, A0


def _write_traces(out, traces):
    for c, tr in enumerate(traces):
        tr.write_ndjson(out / "traces" / f"chain_{c:03d}.ndjson")


def _statistics(out, obs, traces, sigma0):
    tables = [diagnostics.compute_statistics(tr, obs, sigma0) for tr in traces]
    for c, tab in enumerate(tables):
        tab.write_csv(out / "diagnostics" / f"statistics_chain_{c:03d}.csv")
    pooled = diagnostics.StatisticsTable(
        np.concatenate([t.iteration for t in tables]),
        {k: np.concatenate([t[k] for t in tables]) for k in tables[0].columns})
    base = diagnostics.baseline_statistics(obs, sigma0) if sigma0 is not None else None
    return diagnostics.summarize(pooled, base)


def run_fit_full(cfg, out):
    obs = ingest_csv(cfg.input)
    if obs.n <= obs.p:
        raise ValueError(f"fit-full needs n > p, got n={obs.n}, p={obs.p}")
    sigma0, _ = _truth(cfg)
    M = CliqueModel.full(obs.p)
    traces = []
    for c in range(cfg.chains):
        rng = RngStream(cfg.seed, c).generator()
        draws = sample_inverse_wishart_batch(obs.n, obs.n * np.asarray(obs.scatter), rng, cfg.window)
        states = [mcmc.ChainState(M, None, np.nan, i + 1, sigma=d) for i, d in enumerate(draws)]
        for s in states:
            s.log_density = diagnostics._state_log_gfd(s, obs)
        traces.append(mcmc.ChainTrace(np.array([s.log_density for s in states]), states))
    _write_traces(out, traces)
    summary = _statistics(out, obs, traces, sigma0)
    summary["sampler"] = "inverse-wishart"
    return summary


def run_fit_clique(cfg, out):
    obs = ingest_csv(cfg.input)
    sigma0, _ = _truth(cfg)
    job = _Job(cfg, obs)
    traces = _run_chains(_clique_chain, job)
    _write_traces(out, traces)
    summary = _statistics(out, obs, traces, sigma0)
    C = diagnostics.co_membership(traces)
    write_matrix(out / "diagnostics" / "co_membership.csv", C)
    summary["estimated_model"] = str(diagnostics.threshold_partition(C))
    return summary


def run_fit_general(cfg, out):
    obs = ingest_csv(cfg.input)
    sigma0, A0 = _truth(cfg)
    if cfg.init == "oracle" and A0 is None:
        A0 = cholesky(sigma0)
    job = _Job(cfg, obs)
    traces = _run_chains(_general_chain, job, (A0,))
    _write_traces(out, traces)
    summary = _statistics(out, obs, traces, sigma0)
    summary["accept_rate"] = [tr.accept_rate for tr in traces]
    summary["move_counts"] = [tr.move_counts for tr in traces]
    freq = np.mean([s.A != 0 for tr in traces for s in tr.states], axis=0)
    write_matrix(out / "diagnostics" / "entry_inclusion.csv", freq)
    return summary


def run_simulate(cfg, out):
    sc = scenarios.simulate_scenario(cfg.p, cfg.n, cfg.generator, cfg.seed, k=cfg.k, sizes=cfg.size_list,
                                     intra_corr=cfg.intra_corr, max_col=cfg.maxc or 3,
                                     rng=RngStream(cfg.seed, 0).generator())
    write_matrix(out / "data.csv", sc.obs.rows)
    write_matrix(out / "sigma0.csv", sc.sigma0)
    write_matrix(out / "A0.csv", sc.A0)
    return {"params": sc.params, "model0": str(sc.model0), "data": "data.csv",
            "sigma0": "sigma0.csv", "A0": "A0.csv"}


def coverage_replication(cfg_dict, rep):
    """One clique-scenario replication: the one-sided p-value of ``log det Sigma0``."""
    cfg = RunConfig(**cfg_dict)
    sc = scenarios.simulate_scenario(cfg.p, cfg.n, "clique", k=cfg.k, sizes=cfg.size_list,
                                     intra_corr=cfg.intra_corr, rng=RngStream(cfg.seed, 2 * rep).generator())
    rng = RngStream(cfg.seed, 2 * rep + 1).generator()
    ccfg = mcmc.ChainConfig("gibbs", cfg.burn_in, cfg.window, cfg.thin, cfg.norm,
                            "clique" if cfg.penalty == "auto" else cfg.penalty)
    tr = mcmc.run_chain(sc.obs, ccfg, mcmc.ChainState(mcmc.random_partition(cfg.p, rng)), rng)
    logd = np.array([log_det(s.sigma) for s in tr.states])
    return diagnostics.one_sided_pvalue(logd, log_det(sc.sigma0))


def run_coverage(cfg, out):
    d = asdict(cfg)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            pv = list(pool.map(coverage_replication, [d] * cfg.reps, range(cfg.reps)))
    else:
        pv = [coverage_replication(d, r) for r in range(cfg.reps)]
    write_matrix(out / "diagnostics" / "pvalues.csv", np.column_stack([np.arange(cfg.reps), pv]),
                 header=["replication", "pvalue"])
    qq = diagnostics.qq_coverage(pv)
    qq.write_csv(out / "diagnostics" / "qq_band.csv")
    return {"replications": cfg.reps, "ks_distance": qq.ks_distance, "ks_band": qq.band,
            "inside_band": not qq.violated}


RUNNERS = {"fit-full": run_fit_full, "fit-clique": run_fit_clique, "fit-general": run_fit_general,
           "simulate": run_simulate, "coverage": run_coverage}


def run(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    for sub in ("traces", "diagnostics"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = {"config": asdict(cfg), "version": __version__, "backend": kernels.BACKEND,
                "numpy": np.__version__, "started": time.strftime("%Y-%m-%dT%H:%M:%S")}
    diagnostics.write_json(out / "manifest.json", manifest)
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.mode](cfg, out)
    summary["mode"] = cfg.mode
    summary["elapsed_seconds"] = time.perf_counter() - t0
    diagnostics.write_json(out / "summary.json", summary)
    return summary


def main(argv=None) -> int:
    cfg = None
    try:
        cfg = resolve_config(argv)
        summary = run(cfg)
        print(json.dumps({"status": "ok", "out": cfg.out, "mode": cfg.mode,
                          "elapsed_seconds": round(summary["elapsed_seconds"], 3)}))
        return 0
    except SystemExit:
        raise
    except Exception as exc:
        err = {"status": "error", "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, IngestError):
            err["error"] = "IngestError"
        if os.environ.get("FIDCOV_DEBUG"):
            err["traceback"] = traceback.format_exc()
        print(json.dumps(err), file=sys.stderr)
        if cfg is not None:
            try:
                Path(cfg.out).mkdir(parents=True, exist_ok=True)
                diagnostics.write_json(Path(cfg.out) / "error.json", err)
            except OSError:
                pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
