"""Central finite-difference greeks and the shift/bias error model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .diffusion import ModelParams, TimeGrid, brownian_path, log_path
from .engine import (GREEKS, Method, PathFunctional, ShiftTooLargeError, shift_size, simulate,
                     summarize)
from .instruments import (InstrumentSpec, Kind, PriceEstimate, analytic_reference, discount,
                          payoff_from_log, reference_method)

log = logging.getLogger(__name__)

# default shift parameter per instrument
DEFAULT_EPS = {Kind.EUROPEAN: 1e-3, Kind.ASIAN_GEOMETRIC: 5e-3, Kind.DOUBLE_KO: 5e-3,
               Kind.CLIQUET: 5e-3}
GSA_EPS = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class GreekRequest:
    which: str
    eps: float
    spec: InstrumentSpec
    params: ModelParams
    grid: TimeGrid
    method: str = "QMC_BBD"
    n: int = 2 ** 14
    block: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.which not in GREEKS:
            raise ValueError(f"unknown greek {self.which!r}")
        if not self.eps > 0:
            raise ValueError("shift parameter must be positive")


@dataclass(frozen=True)
class FdErrorModel:
    """RMSE model ``sqrt(c / (N^(2 alpha) h^beta) + b^2 h^4)``."""

    c: float
    b: float
    alpha: float
    beta: int

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("variance constant must be non-negative")
        if self.beta not in (1, 3):
            raise ValueError("beta is 1 for first derivatives and 3 for second derivatives")

    def rmse(self, h, n):
        h = np.asarray(h, dtype=float)
        return np.sqrt(self.c / (n ** (2 * self.alpha) * h ** self.beta) + self.b ** 2 * h ** 4)


def null_greek(spec: InstrumentSpec, which: str) -> bool:
    """Greeks that vanish identically (spot does not enter the cliquet payoff)."""
    return spec.kind is Kind.CLIQUET and which in ("delta", "gamma")


def fd_greek(req: GreekRequest) -> PriceEstimate:
    """Recycled central difference: all bumped pricings share one uniform block."""
    method = Method.parse(req.method)
    req.spec.check_spot(req.params.spot)
    functional = PathFunctional(req.spec, req.params, req.grid, method.scheme, (req.which,), req.eps)
    samples = simulate(functional, method, req.n, block=req.block, seed=req.seed)
    value, stderr = summarize(samples[0], method)
    return PriceEstimate(value, stderr, req.n, method.value)


def central_difference(pricer, params: ModelParams, which: str, h: float) -> float:
    """Apply the central-difference formula to an arbitrary ``pricer(params)``."""
    if which == "vega":
        if params.vol - h <= 0:
            raise ShiftTooLargeError(f"vega shift {h} not below volatility {params.vol}")
        return (pricer(params.bumped(vol=params.vol + h))
                - pricer(params.bumped(vol=params.vol - h))) / (2 * h)
    up = pricer(params.bumped(spot=params.spot + h))
    down = pricer(params.bumped(spot=params.spot - h))
    if which == "delta":
        return (up - down) / (2 * h)
    if which == "gamma":
        return (up - 2 * pricer(params) + down) / (h * h)
    raise ValueError(f"unknown greek {which!r}")


def optimal_shift(model: FdErrorModel, n: int) -> float:
    """Shift minimizing the model RMSE; ``inf`` when the difference is bias-free."""
    if model.b == 0:
        return math.inf
    if not model.c > 0:
        raise ValueError("variance constant must be positive")
    return (model.beta * model.c / (4 * model.b ** 2 * n ** (2 * model.alpha))) ** (1.0 / (model.beta + 4))


def self_consistent_shift(variance_at, b: float, which: str, n: int, alpha: float = 0.5,
                          h0: float = 1.0, iterations: int = 20, rtol: float = 1e-3) -> tuple[float, FdErrorModel]:
    """Optimal shift with the variance constant measured at the shift itself.

    ``variance_at(h)`` returns the estimator variance at absolute shift ``h``
    and ``n`` paths. Recycling makes ``c`` depend weakly on ``h``, so the
    model is refitted at each new optimum until it stops moving.
    """
    beta = 3 if which == "gamma" else 1
    h = h0
    model = None
    for _ in range(iterations):
        c = variance_at(h) * n ** (2 * alpha) * h ** beta
        model = FdErrorModel(c, b, alpha, beta)
        h_new = optimal_shift(model, n)
        if not math.isfinite(h_new):
            return h_new, model
        done = abs(h_new - h) <= rtol * h
        h = h_new
        if done:
            break
    return h, model


# 7-point central stencils, O(H^4) accurate, offsets -3..3
_D3 = np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0
_D4 = np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0
_OFFSETS = np.arange(-3, 4)


def stencil_derivative(values, step: float, order: int) -> float:
    values = np.asarray(values, dtype=float)
    if order == 3:
        return float(np.dot(_D3, values)) / step ** 3
    if order == 4:
        return float(np.dot(_D4, values)) / step ** 4
    raise ValueError("only third and fourth derivatives are supported")


def _theta(which: str, params: ModelParams) -> float:
    return params.vol if which == "vega" else params.spot


def default_stencil_step(which: str, params: ModelParams, maturity: float, wide: bool = False) -> float:
    # a fraction of the natural scale S0*vol*sqrt(T) (spot) or vol (volatility)
    frac = 0.1 if wide else 0.02
    if which == "vega":
        return frac * params.vol
    return frac * params.spot * max(params.vol, 0.05) * math.sqrt(maturity)


class _StencilFunctional:
    """Per-path discounted payoffs on a 7-point grid in spot or volatility."""

    def __init__(self, spec, params, grid, scheme, which, step):
        self.spec, self.params, self.grid, self.scheme = spec, params, grid, scheme
        self.which, self.step = which, step
        if which == "vega" and params.vol - 3 * step <= 0:
            raise ShiftTooLargeError("stencil reaches non-positive volatility")

    @property
    def dimension(self):
        return len(self.grid)

    def __call__(self, z):
        w = brownian_path(np.atleast_2d(z), self.grid, self.scheme)
        df = discount(self.params, self.spec.maturity)
        p = self.params
        if self.which == "vega":
            rows = [payoff_from_log(self.spec, [p.spot], log_path(w, p.vol + k * self.step, p.rate, self.grid))[0]
                    for k in _OFFSETS]
            return df * np.array(rows)
        x = log_path(w, p.vol, p.rate, self.grid)
        return df * payoff_from_log(self.spec, p.spot + _OFFSETS * self.step, x)


def bias_constant(spec: InstrumentSpec, params: ModelParams, which: str, grid: TimeGrid | None = None,
                  step: float | None = None, n_sim: int = 2 ** 23, return_stderr: bool = False):
    """Leading FD bias coefficient: V'''/6 for delta and vega, V''''/12 for gamma.

    Derivatives come from an O(H^4) stencil on the noise-free closed form when
    one exists; otherwise on a recycled QMC reference with a wide stencil,
    whose uncertainty is estimated from 32 sub-blocks.
    """
    if which not in GREEKS:
        raise ValueError(f"unknown greek {which!r}")
    grid = grid or TimeGrid.uniform(spec.maturity, 32)
    order, scale = (4, 1 / 12) if which == "gamma" else (3, 1 / 6)
    if null_greek(spec, which):
        return (0.0, 0.0) if return_stderr else 0.0
    if analytic_reference(spec, params, grid) is not None:
        step = step or default_stencil_step(which, params, spec.maturity)
        theta = _theta(which, params)
        values = []
        for k in _OFFSETS:
            bumped = params.bumped(vol=theta + k * step) if which == "vega" else params.bumped(spot=theta + k * step)
            values.append(analytic_reference(spec, bumped, grid)["price"])
        b = scale * stencil_derivative(values, step, order)
        return (b, 0.0) if return_stderr else b
    step = step or default_stencil_step(which, params, spec.maturity, wide=True)
    method = Method.parse(reference_method(spec))
    functional = _StencilFunctional(spec, params, grid, method.scheme, which, step)
    samples = simulate(functional, method, n_sim)
    nb = 32
    blocks = samples.reshape(samples.shape[0], nb, -1).mean(axis=2)
    per_block = np.array([stencil_derivative(blocks[:, i], step, order) for i in range(nb)])
    b = scale * stencil_derivative(samples.mean(axis=1), step, order)
    err = scale * float(per_block.std(ddof=1)) / math.sqrt(nb)
    log.info("simulated bias constant %s/%s = %.3g +- %.2g (wide stencil H=%g)",
             spec.kind.value, which, b, err, step)
    return (b, err) if return_stderr else b


def bias_floor(b: float, which: str, eps: float, params: ModelParams) -> float:
    """Magnitude of the FD bias term ``|b| h^2``."""
    return abs(b) * shift_size(which, eps, params) ** 2
