"""End-to-end acceptance checks at full experiment size.

Each test prints one ``PASS``/``FAIL`` line for its criterion, then asserts.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also printed when output is captured.
"""

import math

import numpy as np
import pytest

import oracles
from qmcgsa.analysis import fit_power_law, rmse
from qmcgsa.diffusion import ModelParams, TimeGrid, brownian_path
from qmcgsa.engine import PathFunctional, run_means, simulate
from qmcgsa.greeks import bias_constant, central_difference, self_consistent_shift
from qmcgsa.gsa import GsaTarget, estimate_indices, normal_target
from qmcgsa.harness import ExperimentConfig, RunManifest
from qmcgsa.harness.cli import main
from qmcgsa.harness.experiments import _convergence_reports, gsa_thresholds, run_stability, speedup_from
from qmcgsa.instruments import InstrumentSpec, asian_geometric_reference, bs_reference
from qmcgsa.sequence import SobolSequence

pytestmark = pytest.mark.acceptance

GSA_N = 2 ** 17

# (instrument, function) -> (type under SD, type under BBD)
EXPECTED_TYPES = {
    ("european", "price"): ("B", "A"), ("european", "delta"): ("B", "A"),
    ("european", "gamma"): ("C", "A"), ("european", "vega"): ("B", "A"),
    ("asian", "price"): ("B", "A"), ("asian", "delta"): ("C", "A"),
    ("asian", "gamma"): ("C", "C"), ("asian", "vega"): ("B", "A"),
    ("dko", "price"): ("C", "A"), ("dko", "delta"): ("C", "A"),
    ("dko", "gamma"): ("C", "A"), ("dko", "vega"): ("C", "C"),
    ("cliquet", "price"): ("B", "A"), ("cliquet", "vega"): ("B", "C"),
}


def verdict(capsys, number, checks):
    """Print one line for the criterion and fail with the failing sub-checks."""
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{text} [{'ok' if passed else 'MISS'}]" for text, passed in checks)
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def within(value, target, tol):
    return abs(value - target) <= tol


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def convergence(workdir):
    """Convergence reports keyed by (instrument, function, method) over N = 2^9..2^18, L = 30."""
    runs = [("european", "price", "mc-sd,qmc-sd,qmc-bbd"),
            ("cliquet", "price", "mc-sd,qmc-sd"),
            ("asian", "gamma", "mc-sd,qmc-sd,qmc-bbd")]
    out, cfgs = {}, {}
    for kind, function, methods in runs:
        cfg = ExperimentConfig.load(overrides={"instrument.kinds": kind, "run.functions": function,
                                               "run.methods": methods, "run.out": str(workdir)})
        reports = _convergence_reports(cfg)
        cfgs[(kind, function)] = (cfg, reports)
        for r in reports:
            out[(r.instrument, r.function, r.method)] = r
    return out, cfgs


@pytest.fixture(scope="module")
def gsa_reports():
    """Indices for every (instrument, function, scheme) at the instrument's configured shift."""
    cfg = ExperimentConfig.load()
    thresholds = gsa_thresholds(cfg)
    out = {}
    for kind in cfg.kinds:
        spec = cfg.spec(kind)
        functions = tuple(f for f in ("price", "delta", "gamma", "vega") if (kind.value, f) in EXPECTED_TYPES)
        for scheme in ("SD", "BBD"):
            f = PathFunctional(spec, cfg.params, cfg.grid, scheme, functions, cfg.eps(kind))
            reports = estimate_indices(normal_target(f, scheme=scheme), GSA_N, thresholds=thresholds)
            for (function, _), rep in zip(f.outputs, reports):
                out[(kind.value, function, scheme)] = rep
    return out


def test_criterion_1_convergence_rates(convergence, capsys):
    reports, _ = convergence
    slope = lambda k, f, m: -reports[(k, f, m)].fit.alpha
    checks = []
    for method, target in (("MC_SD", -0.46), ("QMC_SD", -0.71), ("QMC_BBD", -0.901)):
        s = slope("european", "price", method)
        checks.append((f"European price {method} slope {s:.3f} vs {target}+-0.08", within(s, target, 0.08)))
    s = slope("cliquet", "price", "QMC_SD")
    checks.append((f"Cliquet price QMC_SD slope {s:.3f} vs -1.00+-0.1", within(s, -1.0, 0.1)))
    for method in ("MC_SD", "QMC_SD", "QMC_BBD"):
        s = slope("asian", "gamma", method)
        checks.append((f"Asian gamma {method} slope {s:.3f} vs -0.5+-0.1", within(s, -0.5, 0.1)))
    verdict(capsys, 1, checks)


def test_criterion_2_gsa_headline(gsa_reports, capsys):
    g = lambda k, f, s: gsa_reports[(k, f, s)]
    checks = []
    r = g("european", "price", "SD")
    checks.append((f"European price SD d_A {r.d_A:.3f} vs 1.40+-0.15", within(r.d_A, 1.40, 0.15)))
    r = g("european", "price", "BBD")
    checks.append((f"European price BBD d_A {r.d_A:.3f} vs 1.00+-0.05, d_T {r.d_T}",
                   within(r.d_A, 1.0, 0.05) and r.d_T == 1))
    r = g("dko", "price", "SD")
    checks.append((f"DKO price SD d_A {r.d_A:.2f} vs 8.5+-1.0", within(r.d_A, 8.5, 1.0)))
    r = g("dko", "price", "BBD")
    checks.append((f"DKO price BBD d_A {r.d_A:.3f} vs 1.63+-0.2", within(r.d_A, 1.63, 0.2)))
    r = g("cliquet", "price", "SD")
    checks.append((f"Cliquet price SD sum S {r.sum_S:.3f} >= 0.95, d_A {r.d_A:.3f} <= 1.1",
                   r.sum_S >= 0.95 and r.d_A <= 1.1))
    bbd, sd = g("cliquet", "vega", "BBD"), g("cliquet", "vega", "SD")
    checks.append((f"Cliquet vega BBD d_A {bbd.d_A:.3f} vs 2.6+-0.5 above SD d_A {sd.d_A:.3f} vs 1.0+-0.1",
                   within(bbd.d_A, 2.6, 0.5) and within(sd.d_A, 1.0, 0.1) and bbd.d_A > sd.d_A))
    verdict(capsys, 2, checks)


def test_criterion_3_classification(gsa_reports, capsys):
    checks = []
    for (kind, function), types in EXPECTED_TYPES.items():
        for scheme, want in zip(("SD", "BBD"), types):
            got = gsa_reports[(kind, function, scheme)].type
            if got != want:
                checks.append((f"{kind} {function} {scheme} type {got} vs {want}", False))
    matched = 2 * len(EXPECTED_TYPES) - len(checks)
    checks.insert(0, (f"{matched}/{2 * len(EXPECTED_TYPES)} rows match", not checks))
    verdict(capsys, 3, checks)


def test_criterion_4_speedup(convergence, capsys):
    _, cfgs = convergence
    cfg, reports = cfgs[("european", "price")]
    (eur,) = speedup_from(cfg, reports)
    cfg, reports = cfgs[("asian", "gamma")]
    (asi,) = speedup_from(cfg, reports)
    checks = []
    for a, target in ((0.01, 30), (0.001, 140)):
        s = eur.ratios[("QMC_BBD", "MC_SD", a)]
        checks.append((f"European price QMC_BBD vs MC_SD at a={a:g}: {s:.1f} vs {target} (factor 2)",
                       s is not None and target / 2 <= s <= target * 2))
    undefined = {m: asi.n_star[(m, 0.001)] is None for m in ("MC_SD", "QMC_SD", "QMC_BBD")}
    shown = ", ".join(f"{m} {'-' if u else format(asi.n_star[(m, 0.001)], '.3g')}" for m, u in undefined.items())
    checks.append((f"Asian gamma N* at a=0.1% undefined ({shown})", all(undefined.values())))
    worst = 0.0
    for rep in (eur, asi):
        for (mi, mj, a), s in rep.ratios.items():
            back = rep.ratios[(mj, mi, a)]
            if s is not None and back is not None:
                worst = max(worst, abs(s * back - 1.0))
    checks.append((f"antisymmetry max |S_ij S_ji - 1| = {worst:.1e}", worst <= 1e-12))
    verdict(capsys, 4, checks)


def test_criterion_5_oracles(capsys):
    checks = []
    additive = np.array([1.0, 2.0, 0.5, 1.5])
    r = estimate_indices(GsaTarget(lambda x: x @ additive, 4), 2 ** 16)[0]
    s, s_tot = oracles.additive_indices(additive)
    err = max(np.max(np.abs(r.S - s)), np.max(np.abs(r.S_tot - s_tot)))
    checks.append((f"additive ANOVA max error {err:.1e} <= 0.01", err <= 0.01))
    c = np.array([2.0, 1.0, 0.5, 0.25, 0.1])
    r = estimate_indices(GsaTarget(lambda x: np.prod(1 + c * (x - 0.5), axis=1), 5), 2 ** 16)[0]
    s, s_tot = oracles.product_indices(c)
    err = max(np.max(np.abs(r.S - s)), np.max(np.abs(r.S_tot - s_tot)))
    checks.append((f"product ANOVA max error {err:.1e} <= 0.01", err <= 0.01))
    mine, ref = SobolSequence(64).draw(2 ** 12), oracles.sobol_points(64, 2 ** 12)
    checks.append(("Sobol' 2^12 x 64 bit-exact vs scipy", np.array_equal(mine, ref)))
    grid, params, worst = TimeGrid.uniform(1.0, 32), ModelParams(), 0.0
    for strike in (80.0, 100.0, 120.0):
        spec = InstrumentSpec("asian", strike, 1.0)
        closed = asian_geometric_reference(spec, params, grid)["price"]
        worst = max(worst, abs(closed - oracles.geometric_asian_quad(100.0, strike, 0.3, grid.times)))
    checks.append((f"geometric Asian closed form vs quadrature {worst:.1e} <= 1e-10", worst <= 1e-10))
    verdict(capsys, 5, checks)


def test_criterion_6_numerical_analysis(capsys):
    checks = []
    spec, params = InstrumentSpec.default("european"), ModelParams()
    pricer = lambda p: bs_reference(spec, p)["price"]
    exact = bs_reference(spec, params)
    for which in ("delta", "gamma", "vega"):
        scale = params.vol if which == "vega" else params.spot
        h = scale * np.logspace(-2.5, -1.0, 8)
        err = [abs(central_difference(pricer, params, which, x) - exact[which]) for x in h]
        fit = fit_power_law(h, err)
        checks.append((f"{which} FD bias slope {-fit.alpha:.3f} vs 2.0+-0.1", within(-fit.alpha, 2.0, 0.1)))

    # h_N for European delta at N = 2^14 against a grid search over the shift
    grid, n, runs = TimeGrid.uniform(1.0, 32), 2 ** 14, 1024
    eps = np.logspace(-4, -1, 25)
    f = PathFunctional(spec, params, grid, "SD", ("delta",), eps)
    est = run_means(f, "mc-sd", [n], runs, seed=7)[0]
    err = np.array([rmse(exact["delta"], est[:, i]) for i in range(eps.size)])
    h_emp = params.spot * eps[np.argmin(err)]

    def variance_at(h):
        one = PathFunctional(spec, params, grid, "SD", ("delta",), h / params.spot)
        pairs = simulate(one, "mc-sd", 2 ** 18, seed=3)[0]
        return pairs.var(ddof=1) / (n // 2)

    b = bias_constant(spec, params, "delta", grid)
    h_n, _ = self_consistent_shift(variance_at, b, "delta", n)
    ratio = h_n / h_emp
    checks.append((f"h_N {h_n:.3f} vs grid optimum {h_emp:.3f} (ratio {ratio:.2f}, factor 2)", 0.5 <= ratio <= 2))

    z = np.random.default_rng(12345).standard_normal((2 ** 16, 32))
    target = np.minimum.outer(grid.times, grid.times)
    for scheme in ("SD", "BBD"):
        w = brownian_path(z, grid, scheme)
        prod = w[:, :, None] * w[:, None, :]
        se = prod.std(axis=0, ddof=1) / math.sqrt(len(w))
        worst = float(np.max(np.abs(prod.mean(axis=0) - target) / se))
        checks.append((f"{scheme} covariance max deviation {worst:.2f} SE <= 3", worst <= 3))
    verdict(capsys, 6, checks)


def test_criterion_7_stability_and_reproducibility(workdir, capsys):
    cfg = ExperimentConfig.load(overrides={"instrument.kinds": "european", "run.functions": "price",
                                           "run.methods": "mc-sd,qmc-bbd", "run.out": str(workdir / "stab")})
    out = run_stability(cfg, RunManifest(cfg.hash()))
    mc, qmc = out[("european", "price", "MC_SD")], out[("european", "price", "QMC_BBD")]
    # windows 2..10, the ones that also carry a log-return
    wins = int(np.sum(qmc.vols[1:] < mc.vols[1:]))
    checks = [(f"QMC_BBD window vol below MC_SD in {wins}/9 windows (need 8)", wins >= 8)]

    identical = True
    for command, extra in (("stability", []), ("gsa", ["--set", "gsa.n=4096"]),
                           ("convergence", ["--set", "convergence.runs=4", "--set", "convergence.log2_n_max=13"])):
        digests = []
        for threads in ("1", "4"):
            target = workdir / f"{command}-{threads}"
            assert main([command, "--instrument", "european,asian", "--seed", "123", "--threads", threads,
                         "--out", str(target), *extra]) == 0
            digests.append({p.name: p.read_bytes() for p in sorted(target.glob("*.csv"))})
        identical &= bool(digests[0]) and digests[0] == digests[1]
    checks.append(("CSV outputs byte-identical for threads 1 vs 4", identical))
    verdict(capsys, 7, checks)
