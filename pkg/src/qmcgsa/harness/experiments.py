"""Experiment drivers behind the CLI subcommands.

Each driver takes a validated :class:`ExperimentConfig` and a
:class:`RunManifest`, writes its CSV files to ``run.out`` and returns the
report objects. Work is split into (instrument, method) tasks whose blocks
and seeds are fixed by the configuration, so the thread count never changes
the numbers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from itertools import permutations

import numpy as np

from ..analysis import (ConvergenceReport, SpeedUpReport, StabilityReport, bias_dominated, fit_power_law,
                        n_star, rmse, speed_up, stability)
from ..engine import FUNCTIONS, Method, PathFunctional, run_means, shift_size, simulate, summarize
from ..greeks import bias_constant, null_greek
from ..gsa import GsaThresholds, estimate_indices, normal_target, report_rows
from ..instruments import (ConfigurationError, Kind, ReferenceCache, analytic_reference, reference_key,
                           simulated_reference)
from .config import ExperimentConfig
from .manifest import RunManifest

log = logging.getLogger(__name__)


class MissingReferenceError(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


def _map(cfg: ExperimentConfig, fn, tasks):
    """Ordered map over tasks, threaded when ``run.threads > 1``."""
    if cfg["run.threads"] == 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=cfg["run.threads"]) as pool:
        return list(pool.map(fn, tasks))


def _functions(cfg: ExperimentConfig, kind: Kind) -> tuple:
    spec = cfg.spec(kind)
    return tuple(f for f in FUNCTIONS if f in cfg["run.functions"] and not null_greek(spec, f))


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise NumericalFailure(f"non-finite result in {what}")
    return value


def _cache(cfg: ExperimentConfig) -> ReferenceCache:
    path = cfg["reference.cache"]
    if not os.path.isabs(path):
        path = os.path.join(cfg["run.out"], path)
    return ReferenceCache(path)


def reference_values(cfg: ExperimentConfig, kind: Kind, cache: ReferenceCache | None = None) -> dict:
    """Reference price and greeks with provenance: ``{function: (value, stderr, source)}``.

    Analytic formulas are used where they exist unless the policy is
    ``cached``; otherwise the 2^23-path QMC reference is looked up and, under
    the ``auto`` policy, computed on a miss.
    """
    spec, params, grid = cfg.spec(kind), cfg.params, cfg.grid
    policy = cfg["reference.policy"]
    exact = analytic_reference(spec, params, grid)
    if exact is not None and policy != "cached":
        return {f: (exact[f], 0.0, "analytic") for f in FUNCTIONS}
    if policy == "analytic":
        raise MissingReferenceError(f"no analytic reference for {kind.value}; use reference.policy=auto")
    cache = cache or _cache(cfg)
    eps, n = cfg.eps(kind), cfg["reference.n"]
    if policy == "cached" and cache.get(reference_key(spec, params, grid, eps, n)) is None:
        raise MissingReferenceError(f"reference for {kind.value} not in cache {cache.path}; "
                                    "run the 'reference' subcommand first")
    if cache.get(reference_key(spec, params, grid, eps, n)) is None:
        log.info("no cached reference for %s, simulating %d paths", kind.value, n)
    entry = simulated_reference(spec, params, grid, eps=eps, n=n, cache=cache, return_entry=True)
    return {f: (entry["values"][f], entry["stderr"][f], f"simulated {entry['method']} n={entry['n']}")
            for f in FUNCTIONS}


# --- price / greeks -----------------------------------------------------------

def run_price(cfg: ExperimentConfig, manifest: RunManifest) -> list[dict]:
    n = cfg["price.n"]
    for method in cfg.methods:
        if method.is_qmc and n & (n - 1):
            raise ConfigurationError(f"QMC sample size must be a power of two, got price.n={n}")
        if not method.is_qmc and n % 2:
            raise ConfigurationError(f"MC+SD needs an even sample size, got price.n={n}")
    tasks = [(kind, method) for kind in cfg.kinds for method in cfg.methods]

    def task(t):
        kind, method = t
        spec = cfg.spec(kind)
        f = PathFunctional(spec, cfg.params, cfg.grid, method.scheme, ("price",))
        return summarize(simulate(f, method, n, seed=cfg["run.seed"])[0], method)

    values = _map(cfg, task, tasks)
    rows, out = [], []
    for (kind, method), (value, stderr) in zip(tasks, values):
        _finite(value, f"{kind.value} price")
        exact = analytic_reference(cfg.spec(kind), cfg.params, cfg.grid)
        ref = exact["price"] if exact else None
        rec = {"instrument": kind.value, "method": method.value, "n": n, "value": value, "stderr": stderr,
               "reference": ref, "rel_error": None if ref in (None, 0) else (value - ref) / ref}
        out.append(rec)
        rows.append([kind.value, method.value, n, value, stderr, ref, rec["rel_error"]])
    manifest.write_csv(cfg["run.out"], "price.csv",
                       ["instrument", "method", "N", "value", "stderr", "reference", "rel_error"], rows)
    return out


def run_greeks(cfg: ExperimentConfig, manifest: RunManifest) -> list[dict]:
    n = cfg["price.n"]
    greeks = [g for g in ("delta", "gamma", "vega") if g in cfg["run.functions"]]
    tasks = [(kind, method) for kind in cfg.kinds for method in cfg.methods]

    def task(t):
        kind, method = t
        spec = cfg.spec(kind)
        live = tuple(g for g in greeks if not null_greek(spec, g))
        if not live:
            return {}
        f = PathFunctional(spec, cfg.params, cfg.grid, method.scheme, live, cfg.eps(kind))
        samples = simulate(f, method, n, seed=cfg["run.seed"])
        return {g: summarize(samples[i], method) for i, g in enumerate(live)}

    results = _map(cfg, task, tasks)
    rows, out = [], []
    for (kind, method), est in zip(tasks, results):
        spec = cfg.spec(kind)
        exact = analytic_reference(spec, cfg.params, cfg.grid)
        for g in greeks:
            if null_greek(spec, g):
                value, stderr, note = 0.0, 0.0, "analytically null"
            else:
                value, stderr = est[g]
                _finite(value, f"{kind.value} {g}")
                note = ""
            ref = exact[g] if exact else None
            out.append({"instrument": kind.value, "function": g, "method": method.value, "value": value,
                        "stderr": stderr, "reference": ref, "note": note})
            rows.append([kind.value, g, method.value, cfg.eps(kind), n, value, stderr, ref, note])
    manifest.write_csv(cfg["run.out"], "greeks.csv",
                       ["instrument", "function", "method", "eps", "N", "value", "stderr", "reference", "note"],
                       rows)
    return out


def run_reference(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    cache = _cache(cfg)
    rows, out = [], {}
    for kind in cfg.kinds:
        # this command fills the cache, so a cache-only policy is upgraded to auto
        policy = "auto" if cfg["reference.policy"] == "cached" else cfg["reference.policy"]
        vals = reference_values(cfg.replace(reference__policy=policy), kind, cache)
        out[kind.value] = vals
        for f in FUNCTIONS:
            if null_greek(cfg.spec(kind), f):
                continue
            value, stderr, source = vals[f]
            rows.append([kind.value, f, cfg.eps(kind) if f != "price" else None, value, stderr, source])
    manifest.write_csv(cfg["run.out"], "reference.csv",
                       ["instrument", "function", "eps", "value", "stderr", "source"], rows)
    return out


# --- GSA --------------------------------------------------------------------------

def gsa_thresholds(cfg: ExperimentConfig) -> GsaThresholds:
    return GsaThresholds(cfg["gsa.truncation"], cfg["gsa.type_a_truncation"], cfg["gsa.type_a_fraction"],
                         cfg["gsa.type_b_ratio"], cfg["gsa.type_b_trim"], cfg["gsa.type_b_sum"])


def run_gsa(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    """Sobol' indices for every (instrument, function, scheme, shift)."""
    thresholds = gsa_thresholds(cfg)
    n = cfg["gsa.n"]
    tasks = [(kind, scheme) for kind in cfg.kinds for scheme in cfg["gsa.schemes"]]

    def task(t):
        kind, scheme = t
        funcs = _functions(cfg, kind)
        if not funcs:
            return []
        f = PathFunctional(cfg.spec(kind), cfg.params, cfg.grid, scheme, funcs, cfg["gsa.eps"])
        reports = estimate_indices(normal_target(f, scheme=scheme), n, sampler=cfg["gsa.sampler"],
                                   seed=cfg["run.seed"], thresholds=thresholds)
        for rep, (_, e) in zip(reports, f.outputs):
            rep.eps = e
        return reports

    results = _map(cfg, task, tasks)
    out, rows, summary = {}, [], []
    evaluations = 0
    for (kind, scheme), reports in zip(tasks, results):
        for rep in reports:
            function = rep.label.split("@")[0]
            out[(kind.value, function, scheme, rep.eps)] = rep
            rows.extend(report_rows(kind.value, function, rep))
            evaluations += rep.evaluations
            if rep.degenerate:
                summary.append([kind.value, function, scheme, rep.eps, n, rep.evaluations, rep.f0, rep.variance,
                                None, None, None, None, None, None, "variance~0"])
                continue
            summary.append([kind.value, function, scheme, rep.eps, n, rep.evaluations, rep.f0, rep.variance,
                            rep.sum_S, rep.min_ratio(), rep.d_T, rep.d_S_class, rep.d_A, rep.qmc_favorable,
                            rep.type])
    log.info("GSA used %d path evaluations per output (N=%d, D=%d)", evaluations // max(len(out), 1), n,
             cfg.grid.steps)
    manifest.write_csv(cfg["run.out"], "gsa_indices.csv",
                       ["instrument", "function", "scheme", "eps", "i", "S_i_raw", "S_i", "S_tot_i_raw", "S_tot_i"],
                       rows)
    manifest.write_csv(cfg["run.out"], "gsa_summary.csv",
                       ["instrument", "function", "scheme", "eps", "N", "evaluations", "f0", "variance", "sum_S",
                        "min_ratio", "d_T", "d_S_class", "d_A", "qmc_favorable", "type"], summary)
    return out


# --- convergence and speed-up -------------------------------------------------------

def _convergence_reports(cfg: ExperimentConfig, cache: ReferenceCache | None = None) -> list[ConvergenceReport]:
    sizes = cfg.n_schedule
    runs = cfg["convergence.runs"]
    refs = {kind: reference_values(cfg, kind, cache) for kind in cfg.kinds}
    tasks = [(kind, method) for kind in cfg.kinds for method in cfg.methods if _functions(cfg, kind)]

    def task(t):
        kind, method = t
        f = PathFunctional(cfg.spec(kind), cfg.params, cfg.grid, method.scheme, _functions(cfg, kind),
                           cfg.eps(kind))
        return _finite(run_means(f, method, sizes, runs, seed=cfg["run.seed"]), f"{kind.value} convergence")

    estimates = _map(cfg, task, tasks)
    reports = []
    for (kind, method), est in zip(tasks, estimates):
        spec = cfg.spec(kind)
        for i, function in enumerate(_functions(cfg, kind)):
            ref, _, source = refs[kind][function]
            err = np.array([rmse(ref, est[j, :, i]) for j in range(len(sizes))])
            eps = None if function == "price" else cfg.eps(kind)
            excluded = []
            bias = 0.0
            if eps is not None and source == "analytic":
                # the FD bias is part of the error only against an exact reference
                b = bias_constant(spec, cfg.params, function, cfg.grid)
                bias = abs(b) * shift_size(function, eps, cfg.params) ** 2
                mask = bias_dominated(err, bias, cfg["convergence.bias_fraction"])
                excluded = [n for n, m in zip(sizes, mask) if m]
                if excluded:
                    log.info("%s %s %s: bias %.2e excludes N=%s from the fit", kind.value, function,
                             method.value, bias, excluded)
            keep = [j for j, n in enumerate(sizes) if n not in excluded]
            fit = None
            if len(keep) >= 4:
                fit = fit_power_law(np.array(sizes)[keep], err[keep])
            else:
                log.warning("%s %s %s: fewer than 4 bias-free sizes, no fit", kind.value, function, method.value)
            reports.append(ConvergenceReport(kind.value, function, method.value, np.array(sizes), err, runs, ref,
                                             fit, excluded, eps, bias))
    return reports


def _write_convergence(cfg, manifest, reports):
    rows, reg = [], []
    for r in reports:
        for n, e in zip(r.n, r.rmse):
            rel = e / abs(r.reference) if r.reference else None
            rows.append([r.instrument, r.function, r.method, r.eps, int(n), float(e), rel,
                         r.reference - 3 * float(e), r.reference + 3 * float(e), int(n) in r.excluded])
        f = r.fit
        reg.append([r.instrument, r.function, r.method, r.eps, r.runs,
                    f and f.alpha, f and f.alpha_se, f and f.k, f and f.k_se, f and f.k10,
                    f and f.log10_error_at(), f and f.points, ";".join(map(str, r.excluded))])
    manifest.write_csv(cfg["run.out"], "convergence.csv",
                       ["instrument", "function", "method", "eps", "N", "rmse", "rmse_rel", "band_lo", "band_hi",
                        "excluded"], rows)
    manifest.write_csv(cfg["run.out"], "regression.csv",
                       ["instrument", "function", "method", "eps", "runs", "alpha", "alpha_se", "k", "k_se",
                        "k10", "log10_rmse_at_N_10^2.5", "points", "excluded_N"], reg)


def run_convergence(cfg: ExperimentConfig, manifest: RunManifest) -> list[ConvergenceReport]:
    reports = _convergence_reports(cfg)
    _write_convergence(cfg, manifest, reports)
    return reports


def speedup_from(cfg: ExperimentConfig, reports: list[ConvergenceReport]) -> list[SpeedUpReport]:
    targets = cfg["speedup.targets"]
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.instrument, r.function), []).append(r)
    out = []
    for (instrument, function), reps in groups.items():
        kind = Kind(instrument)
        spec = cfg.spec(kind)
        ref = reps[0].reference
        greek = function != "price"
        b = bias_constant(spec, cfg.params, function, cfg.grid) if greek else 0.0
        h = shift_size(function, cfg.eps(kind), cfg.params) if greek else 0.0
        absolute = {a: a * abs(ref) for a in targets}
        stars = {}
        for r in reps:
            for a in targets:
                stars[(r.method, a)] = (None if r.fit is None or not r.fit.alpha > 0 else
                                        n_star(r.fit.k, r.fit.alpha, absolute[a], b, h, greek=greek))
        ratios = {}
        for mi, mj in permutations([r.method for r in reps], 2):
            for a in targets:
                ratios[(mi, mj, a)] = speed_up(stars[(mi, a)], stars[(mj, a)])
        out.append(SpeedUpReport(instrument, function, absolute, stars, ratios))
    return out


def run_speedup(cfg: ExperimentConfig, manifest: RunManifest) -> list[SpeedUpReport]:
    reports = _convergence_reports(cfg)
    _write_convergence(cfg, manifest, reports)
    speed = speedup_from(cfg, reports)
    rows = []
    for s in speed:
        for (mi, mj, a), ratio in s.ratios.items():
            rows.append([s.instrument, s.function, f"{mi} vs {mj}", a, s.targets[a], s.n_star[(mi, a)],
                         s.n_star[(mj, a)], ratio])
    manifest.write_csv(cfg["run.out"], "speedup.csv",
                       ["instrument", "function", "pair", "a", "a_abs", "n_star_i", "n_star_j", "S_star"], rows)
    return speed


# --- stability ---------------------------------------------------------------------

def running_estimates(functional, method: Method, sizes, seed: int = 0) -> np.ndarray:
    """Single-run estimates ``V_N`` for increasing ``N`` (prefixes of one stream)."""
    sizes = np.asarray(sizes)
    top = int(sizes.max())
    if method.is_qmc:
        vals = simulate(functional, method, top, start=0)
        csum = np.cumsum(vals, axis=1)
        return csum[:, sizes - 1] / sizes
    vals = simulate(functional, method, top + top % 2, seed=seed)
    csum = np.cumsum(vals, axis=1)
    pairs = sizes // 2
    return csum[:, pairs - 1] / pairs


def run_stability(cfg: ExperimentConfig, manifest: RunManifest) -> dict:
    sizes = np.array(cfg.stability_n)
    tasks = [(kind, method) for kind in cfg.kinds for method in cfg.methods if _functions(cfg, kind)]

    def task(t):
        kind, method = t
        f = PathFunctional(cfg.spec(kind), cfg.params, cfg.grid, method.scheme, _functions(cfg, kind),
                           cfg.eps(kind))
        return _finite(running_estimates(f, method, sizes, cfg["run.seed"]), f"{kind.value} stability")

    results = _map(cfg, task, tasks)
    out: dict = {}
    rows, samples = [], []
    for (kind, method), est in zip(tasks, results):
        for i, function in enumerate(_functions(cfg, kind)):
            rep: StabilityReport = stability(sizes, est[i], cfg["stability.windows"])
            out[(kind.value, function, method.value)] = rep
            for w in range(len(rep.means)):
                logret = rep.log_returns[w - 1] if w else None
                rows.append([kind.value, function, method.value, cfg.grid.steps, w + 1, rep.edges[w],
                             rep.edges[w + 1], rep.means[w], rep.vols[w], logret])
            samples.extend([kind.value, function, method.value, int(n), float(v)] for n, v in zip(sizes, est[i]))
    manifest.write_csv(cfg["run.out"], "stability.csv",
                       ["instrument", "function", "method", "D", "window", "n_lo", "n_hi", "mean", "vol", "logret"],
                       rows)
    manifest.write_csv(cfg["run.out"], "stability_samples.csv",
                       ["instrument", "function", "method", "N", "value"], samples)
    return out
