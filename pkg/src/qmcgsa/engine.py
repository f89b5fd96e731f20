"""Sampling methods and per-path evaluation of prices and recycled FD greeks."""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .diffusion import ModelParams, TimeGrid, brownian_path, log_path
from .instruments import InstrumentSpec, discount, payoff_from_log
from .sequence import PrngSequence, SobolSequence, to_normals

FUNCTIONS = ("price", "delta", "gamma", "vega")
GREEKS = ("delta", "gamma", "vega")
CHUNK = 2 ** 15


class ShiftTooLargeError(ValueError):
    pass


class Method(str, Enum):
    MC_SD = "MC_SD"
    QMC_SD = "QMC_SD"
    QMC_BBD = "QMC_BBD"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper().replace("-", "_").replace("+", "_"))

    @property
    def scheme(self) -> str:
        return "BBD" if self is Method.QMC_BBD else "SD"

    @property
    def is_qmc(self) -> bool:
        return self is not Method.MC_SD

    @property
    def label(self) -> str:
        return self.value.replace("_", "+")


def shift_size(function: str, eps: float, params: ModelParams) -> float:
    return eps if function == "vega" else eps * params.spot


class PathFunctional:
    """Per-path discounted price and central-difference greeks.

    Every bumped valuation reuses the same normals (path recycling), so the
    mean of each greek row equals the finite difference of the bumped means.
    Rows are ordered as :attr:`outputs`: ``("price", None)`` first when
    requested, then each greek for each shift.
    """

    def __init__(self, spec: InstrumentSpec, params: ModelParams, grid: TimeGrid, scheme: str,
                 functions=FUNCTIONS, eps=1e-3):
        self.spec, self.params, self.grid, self.scheme = spec, params, grid, scheme
        eps_list = tuple(np.atleast_1d(eps).astype(float))
        unknown = set(functions) - set(FUNCTIONS)
        if unknown:
            raise ValueError(f"unknown functions {sorted(unknown)}")
        self.outputs: list[tuple[str, float | None]] = []
        if "price" in functions:
            self.outputs.append(("price", None))
        for e in eps_list:
            if not e > 0:
                raise ValueError("shift parameter must be positive")
            for g in GREEKS:
                if g in functions:
                    self.outputs.append((g, e))
        for g, e in self.outputs:
            if g == "vega" and params.vol - e <= 0:
                raise ShiftTooLargeError(f"vega shift {e} not below volatility {params.vol}")
        self._df = discount(params, spec.maturity)

    @property
    def dimension(self) -> int:
        return len(self.grid)

    @property
    def labels(self) -> list[str]:
        return [f if e is None else f"{f}@{e:g}" for f, e in self.outputs]

    def _payoffs(self, w, vol, spots):
        x = log_path(w, vol, self.params.rate, self.grid)
        return self._df * payoff_from_log(self.spec, spots, x)

    def __call__(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        w = brownian_path(z, self.grid, self.scheme)
        S0, vol = self.params.spot, self.params.vol
        spot_shifts = sorted({e * S0 for f, e in self.outputs if f in ("delta", "gamma")})
        spots = [S0] + [S0 + h for h in spot_shifts] + [S0 - h for h in spot_shifts]
        need_base = any(f != "vega" for f, _ in self.outputs)
        base = dict(zip(spots, self._payoffs(w, vol, spots))) if need_base else {}
        out = np.empty((len(self.outputs), z.shape[0]))
        for row, (f, e) in enumerate(self.outputs):
            if f == "price":
                out[row] = base[S0]
                continue
            h = shift_size(f, e, self.params)
            if f == "delta":
                out[row] = (base[S0 + h] - base[S0 - h]) / (2 * h)
            elif f == "gamma":
                out[row] = (base[S0 + h] - 2 * base[S0] + base[S0 - h]) / (h * h)
            else:
                up = self._payoffs(w, vol + h, [S0])[0]
                down = self._payoffs(w, vol - h, [S0])[0]
                out[row] = (up - down) / (2 * h)
        return out


def sequence_for(method: Method, dimension: int, start: int, seed: int = 0, run: int = 0):
    """Uniform stream positioned at point ``start``.

    QMC runs are non-overlapping Sobol' blocks; MC run ``run`` draws from a
    PCG64 stream seeded with the entropy pair ``(seed, run)``.
    """
    if method.is_qmc:
        return SobolSequence(dimension, index=start)
    return PrngSequence(dimension, seed=(seed, run), index=start)


def simulate(functional, method, n: int, block: int = 0, seed: int = 0,
             start: int | None = None, chunk: int = CHUNK) -> np.ndarray:
    """Per-sample values of ``functional`` over ``n`` paths.

    QMC returns ``n`` samples from Sobol' points ``[start, start + n)`` with
    ``start = block * n`` by default. MC+SD draws ``n/2`` normal vectors and
    returns the ``n/2`` antithetic pair averages.
    """
    method = Method.parse(method)
    if n < 2:
        raise ValueError("need at least two paths")
    if method.is_qmc:
        m = n
        if start is None:
            start = block * n
        seq = sequence_for(method, functional.dimension, start)
    else:
        if n % 2:
            raise ValueError("MC+SD with antithetic pairs needs an even number of paths")
        m = n // 2
        seq = sequence_for(method, functional.dimension, start or 0, seed=seed, run=block)
    out = None
    for lo in range(0, m, chunk):
        c = min(chunk, m - lo)
        z = to_normals(seq.draw(c))
        vals = functional(z)
        if not method.is_qmc:
            vals = 0.5 * (vals + functional(-z))
        if out is None:
            out = np.empty((vals.shape[0], m))
        out[:, lo:lo + c] = vals
    return out


def summarize(samples: np.ndarray, method) -> tuple[float, float]:
    """Mean and standard error (nan for a single deterministic QMC block)."""
    method = Method.parse(method)
    mean = float(np.mean(samples))
    if method.is_qmc:
        return mean, math.nan
    return mean, float(np.std(samples, ddof=1) / math.sqrt(samples.size))


def run_means(functional, method, sizes, runs: int, seed: int = 0, chunk: int = CHUNK) -> np.ndarray:
    """Estimates of every output for ``runs`` independent runs at each size.

    Returns shape ``(len(sizes), runs, outputs)``. QMC run ``l`` at size ``N``
    uses Sobol' points ``[l N, (l + 1) N)``, so all runs at one size are
    disjoint. MC run ``l`` uses its own PCG64 stream; smaller sizes are
    prefixes of that stream.
    """
    method = Method.parse(method)
    sizes = [int(s) for s in sizes]
    if method.is_qmc:
        total = runs * max(sizes)
        sums = None
        for lo in range(0, total, chunk):
            c = min(chunk, total - lo)
            vals = simulate(functional, method, c, start=lo, chunk=chunk)
            if sums is None:
                sums = [np.zeros((runs, vals.shape[0])) for _ in sizes]
            pos = np.arange(lo, lo + c)
            for acc, n in zip(sums, sizes):
                keep = pos < runs * n
                if keep.any():
                    np.add.at(acc, pos[keep] // n, vals[:, keep].T)
        return np.stack([acc / n for acc, n in zip(sums, sizes)])
    if any(n % 2 for n in sizes):
        raise ValueError("MC+SD with antithetic pairs needs even sample sizes")
    pairs = [n // 2 for n in sizes]
    top = max(pairs)
    out = None
    for run in range(runs):
        seq = sequence_for(method, functional.dimension, 0, seed=seed, run=run)
        csum = None
        done = 0
        marks = {}
        while done < top:
            c = min(chunk, top - done)
            z = to_normals(seq.draw(c))
            vals = 0.5 * (functional(z) + functional(-z))
            if csum is None:
                csum = np.zeros(vals.shape[0])
            run_sum = csum[:, None] + np.cumsum(vals, axis=1)
            for p in pairs:
                if done < p <= done + c:
                    marks[p] = run_sum[:, p - done - 1]
            csum = run_sum[:, -1]
            done += c
        if out is None:
            out = np.empty((len(sizes), runs, csum.size))
        for i, p in enumerate(pairs):
            out[i, run] = marks[p] / p
    return out
