"""Test instruments: payoffs, MC/QMC price estimator and reference values."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .diffusion import ModelParams, TimeGrid

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class Kind(str, Enum):
    EUROPEAN = "european"
    ASIAN_GEOMETRIC = "asian"
    DOUBLE_KO = "dko"
    CLIQUET = "cliquet"


@dataclass(frozen=True)
class InstrumentSpec:
    kind: Kind
    strike: float | None = 100.0
    maturity: float = 1.0
    lower_barrier: float | None = None
    upper_barrier: float | None = None
    cap: float | None = None
    floor: float | None = None
    # "relative": barriers are fractions of spot and move with spot bumps
    barrier_style: str = "absolute"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.maturity > 0:
            raise ConfigurationError("maturity must be positive")
        if self.kind is Kind.CLIQUET:
            if self.cap is None or self.floor is None:
                raise ConfigurationError("cliquet needs a local cap and a global floor")
            if self.cap < 0 or self.floor < 0:
                raise ConfigurationError("cliquet cap and floor must be non-negative")
            return
        if self.strike is None or not self.strike > 0:
            raise ConfigurationError(f"{self.kind.value} needs a positive strike")
        if self.kind is Kind.DOUBLE_KO:
            if self.lower_barrier is None or self.upper_barrier is None:
                raise ConfigurationError("double knock-out needs both barriers")
            if not 0 <= self.lower_barrier < self.upper_barrier:
                raise ConfigurationError("barriers must satisfy 0 <= lower < upper")
            if self.barrier_style not in ("absolute", "relative"):
                raise ConfigurationError(f"unknown barrier style {self.barrier_style!r}")

    @classmethod
    def default(cls, kind: Kind | str, spot: float = 100.0, maturity: float = 1.0) -> "InstrumentSpec":
        """Contract terms of the benchmark set: K=100, barriers at 50%/150% of spot, C=8%, F=16%."""
        kind = Kind(kind)
        if kind is Kind.DOUBLE_KO:
            return cls(kind, 100.0, maturity, 0.5, 1.5, barrier_style="relative")
        if kind is Kind.CLIQUET:
            return cls(kind, None, maturity, cap=0.08, floor=0.16)
        return cls(kind, 100.0, maturity)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    def barriers(self, spot: float) -> tuple[float, float]:
        """Barrier levels in currency for a given spot."""
        scale = spot if self.barrier_style == "relative" else 1.0
        return self.lower_barrier * scale, self.upper_barrier * scale

    def check_spot(self, spot: float):
        if self.kind is Kind.DOUBLE_KO:
            lo, hi = self.barriers(spot)
            if not lo < spot < hi:
                raise ConfigurationError("spot must lie strictly between the barriers")


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    stderr: float  # nan for a single deterministic QMC block
    n: int
    method: str


def payoff_from_log(spec: InstrumentSpec, spots, x) -> np.ndarray:
    """Undiscounted payoffs for log paths ``x = log(S/S_0)`` at several spots.

    ``x`` has shape ``(n, D)``; the result has shape ``(len(spots), n)``.
    Spot enters the path multiplicatively, so bumped spots share ``x``.
    """
    spots = np.atleast_1d(np.asarray(spots, dtype=np.float64))
    x = np.atleast_2d(x)
    kind = spec.kind
    if kind is Kind.CLIQUET:
        steps = np.diff(x, axis=-1, prepend=0.0)
        returns = np.expm1(steps)
        total = np.clip(returns, 0.0, spec.cap).sum(axis=-1)
        single = np.maximum(total, spec.floor)
        return np.broadcast_to(single, (spots.size,) + single.shape).copy()
    if kind is Kind.ASIAN_GEOMETRIC:
        growth = np.exp(x.mean(axis=-1))
    else:
        growth = np.exp(x[..., -1])
    out = np.maximum(spots[:, None] * growth[None, :] - spec.strike, 0.0)
    if kind is Kind.DOUBLE_KO:
        lo, hi = x.min(axis=-1), x.max(axis=-1)
        with np.errstate(divide="ignore"):
            log_lo = np.log([spec.barriers(s)[0] / s for s in spots])
            log_hi = np.log([spec.barriers(s)[1] / s for s in spots])
        alive = (lo[None, :] > log_lo[:, None]) & (hi[None, :] < log_hi[:, None])
        out *= alive
    return out


def payoff(spec: InstrumentSpec, path, spot: float):
    """Payoff of asset path(s) ``S_1..S_D`` (shape ``(D,)`` or ``(n, D)``)."""
    path = np.asarray(path, dtype=np.float64)
    if path.shape[-1] < 1:
        raise ConfigurationError("path must contain at least one fixing")
    if spec.kind is Kind.DOUBLE_KO:
        s_d = path[..., -1]
        b_lo, b_hi = spec.barriers(spot)
        alive = np.all((path > b_lo) & (path < b_hi), axis=-1)
        out = np.maximum(s_d - spec.strike, 0.0) * alive
    elif spec.kind is Kind.CLIQUET:
        prev = np.concatenate([np.full(path.shape[:-1] + (1,), spot), path[..., :-1]], axis=-1)
        total = np.clip((path - prev) / prev, 0.0, spec.cap).sum(axis=-1)
        out = np.maximum(total, spec.floor)
    elif spec.kind is Kind.ASIAN_GEOMETRIC:
        out = np.maximum(np.exp(np.log(path).mean(axis=-1)) - spec.strike, 0.0)
    else:
        out = np.maximum(path[..., -1] - spec.strike, 0.0)
    return out if path.ndim > 1 else float(out)


def discount(params: ModelParams, maturity: float) -> float:
    return math.exp(-params.rate * maturity)


# --- closed forms -----------------------------------------------------------

def _phi(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2.0 * math.pi)


def lognormal_call(m: float, s: float, strike: float):
    """E[max(e^Y - K, 0)] for Y ~ N(m, s^2), with partials in m and s.

    Returns ``(value, d_dm, d2_dm2, d_ds)``.
    """
    fwd = math.exp(m + 0.5 * s * s)
    if s == 0.0:
        itm = fwd > strike
        return max(fwd - strike, 0.0), fwd * itm, 0.0, 0.0
    d2 = (m - math.log(strike)) / s
    d1 = d2 + s
    n1 = float(ndtr(d1))
    value = fwd * n1 - strike * float(ndtr(d2))
    d_dm = fwd * n1
    d2_dm2 = fwd * (n1 + float(_phi(d1)) / s)
    d_ds = fwd * (s * n1 + float(_phi(d1)))
    return value, d_dm, d2_dm2, d_ds


def bs_reference(spec: InstrumentSpec, params: ModelParams) -> dict:
    """Black-Scholes price, delta, gamma and vega of the European call."""
    if spec.kind is not Kind.EUROPEAN:
        raise ConfigurationError("bs_reference applies to the European call only")
    T, S, sig, r = spec.maturity, params.spot, params.vol, params.rate
    df = math.exp(-r * T)
    m = math.log(S) + (r - 0.5 * sig * sig) * T
    s = sig * math.sqrt(T)
    value, d_dm, d2_dm2, d_ds = lognormal_call(m, s, spec.strike)
    return {
        "price": df * value,
        "delta": df * d_dm / S,
        "gamma": df * (d2_dm2 - d_dm) / (S * S),
        "vega": df * (d_ds * math.sqrt(T) - d_dm * sig * T),
    }


def _geometric_unit_std(grid: TimeGrid) -> float:
    # sqrt(sum_{j,k} min(t_j, t_k)) / D; for sorted t the pair count with
    # minimum at 0-based index j is 2(D - j) - 1
    t = grid.times
    D = t.size
    return math.sqrt(float(np.dot(2.0 * (D - np.arange(D)) - 1.0, t))) / D


def geometric_mean_moments(params: ModelParams, grid: TimeGrid) -> tuple[float, float]:
    """Mean and standard deviation of ``log((prod S_j)^(1/D))``."""
    m = math.log(params.spot) + (params.rate - 0.5 * params.vol ** 2) * float(grid.times.mean())
    return m, params.vol * _geometric_unit_std(grid)


def asian_geometric_reference(spec: InstrumentSpec, params: ModelParams, grid: TimeGrid) -> dict:
    """Closed form for the discretely monitored geometric-average call."""
    if spec.kind is not Kind.ASIAN_GEOMETRIC:
        raise ConfigurationError("asian_geometric_reference applies to the geometric Asian only")
    S, sig = params.spot, params.vol
    df = math.exp(-params.rate * spec.maturity)
    m, s = geometric_mean_moments(params, grid)
    value, d_dm, d2_dm2, d_ds = lognormal_call(m, s, spec.strike)
    return {
        "price": df * value,
        "delta": df * d_dm / S,
        "gamma": df * (d2_dm2 - d_dm) / (S * S),
        "vega": df * (d_ds * _geometric_unit_std(grid) - d_dm * sig * float(grid.times.mean())),
    }


def analytic_reference(spec: InstrumentSpec, params: ModelParams, grid: TimeGrid) -> dict | None:
    if spec.kind is Kind.EUROPEAN:
        return bs_reference(spec, params)
    if spec.kind is Kind.ASIAN_GEOMETRIC:
        return asian_geometric_reference(spec, params, grid)
    return None


# --- estimators -------------------------------------------------------------

def price(spec: InstrumentSpec, params: ModelParams, grid: TimeGrid, method: str, n: int,
          block: int = 0, seed: int = 0) -> PriceEstimate:
    """Discounted MC/QMC price from block ``block`` of the chosen sampler."""
    from .engine import PathFunctional, Method, simulate, summarize

    method = Method.parse(method)
    spec.check_spot(params.spot)
    functional = PathFunctional(spec, params, grid, method.scheme, ("price",))
    samples = simulate(functional, method, n, block=block, seed=seed)
    value, stderr = summarize(samples[0], method)
    return PriceEstimate(value, stderr, n, method.value)


class ReferenceCache:
    """JSON file mapping a content hash to simulated reference values."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self._entries = self._load()

    def _load(self) -> dict:
        try:
            with open(self.path) as fh:
                data = json.load(fh)
            if not isinstance(data, dict):
                raise ValueError("cache root must be an object")
            return data
        except FileNotFoundError:
            return {}
        except (ValueError, OSError) as exc:
            log.warning("reference cache %s unreadable (%s); recomputing", self.path, exc)
            return {}

    @staticmethod
    def key(payload: dict) -> str:
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, key: str) -> dict | None:
        entry = self._entries.get(key)
        if not isinstance(entry, dict) or "values" not in entry:
            return None
        return entry

    def put(self, key: str, entry: dict):
        self._entries[key] = entry
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        tmp = self.path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(self._entries, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.path)


REFERENCE_PATHS = 2 ** 23
# reference block sits past every convergence run (30 * 2**18 < 2**23)
REFERENCE_OFFSET = 2 ** 23


def reference_method(spec: InstrumentSpec) -> str:
    # the bridge raises the effective dimension of cliquet functions
    return "QMC_SD" if spec.kind is Kind.CLIQUET else "QMC_BBD"


def reference_key(spec: InstrumentSpec, params: ModelParams, grid: TimeGrid, eps: float,
                  n: int = REFERENCE_PATHS) -> str:
    """Cache key covering contract, model, grid, method, shift, size and generator."""
    from .sequence import load_direction_table

    payload = {
        "spec": spec.as_dict(), "params": asdict(params), "times": grid.times.tolist(),
        "method": reference_method(spec), "eps": eps, "n": n, "offset": REFERENCE_OFFSET,
        "generator": load_direction_table().sha256,
    }
    return ReferenceCache.key(payload)


def simulated_reference(spec: InstrumentSpec, params: ModelParams, grid: TimeGrid,
                        function: str = "price", eps: float = 5e-3, n: int = REFERENCE_PATHS,
                        cache: ReferenceCache | None = None, return_entry: bool = False):
    """Large-sample QMC reference for price and FD greeks at shift ``eps``.

    All four functions are computed in one pass and cached together under a
    key covering contract, model, grid, method, shift, size and generator.
    The standard error comes from 32 equal sub-blocks.
    """
    from .engine import PathFunctional, Method, simulate, FUNCTIONS
    from .sequence import load_direction_table

    method = Method.parse(reference_method(spec))
    key = reference_key(spec, params, grid, eps, n)
    entry = cache.get(key) if cache is not None else None
    if entry is None:
        t0 = time.perf_counter()
        functional = PathFunctional(spec, params, grid, method.scheme, FUNCTIONS, eps)
        samples = simulate(functional, method, n, start=REFERENCE_OFFSET)
        nb = 32
        blocks = samples.reshape(samples.shape[0], nb, -1).mean(axis=2)
        values = samples.mean(axis=1)
        errs = blocks.std(axis=1, ddof=1) / math.sqrt(nb)
        entry = {
            "values": dict(zip(FUNCTIONS, map(float, values))),
            "stderr": dict(zip(FUNCTIONS, map(float, errs))),
            "n": n, "method": method.value, "eps": eps,
            "generator": load_direction_table().sha256,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        log.info("simulated reference %s/%s n=%d computed in %.1fs",
                 spec.kind.value, method.value, n, time.perf_counter() - t0)
        if cache is not None:
            cache.put(key, entry)
    if return_entry:
        return entry
    return entry["values"][function]
