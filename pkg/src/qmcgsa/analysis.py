"""Error statistics: RMSE over runs, power-law fits, N*(a), speed-ups and window stability."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# abscissa at which fitted intercepts are quoted, log10 N = 2.5
REFERENCE_LOG10_N = 2.5


def rmse(reference: float, runs) -> float:
    """Root mean squared deviation of independent run estimates from ``reference``."""
    runs = np.asarray(runs, dtype=float)
    if runs.size == 0:
        raise ValueError("need at least one run")
    return float(np.sqrt(np.mean((runs - reference) ** 2)))


@dataclass(frozen=True)
class PowerLawFit:
    """``log eps = k - alpha log N`` in natural logarithms."""

    k: float
    alpha: float
    k_se: float
    alpha_se: float
    points: int

    @property
    def slope(self) -> float:
        return -self.alpha

    @property
    def k10(self) -> float:
        """Intercept in base 10 (the slope is base independent)."""
        return self.k / math.log(10)

    @property
    def k10_se(self) -> float:
        return self.k_se / math.log(10)

    def log10_error_at(self, log10_n: float = REFERENCE_LOG10_N) -> float:
        return self.k10 - self.alpha * log10_n

    def predict(self, n):
        return np.exp(self.k - self.alpha * np.log(n))


def fit_power_law(n, eps) -> PowerLawFit:
    """Ordinary least squares of ``log eps`` on ``log N``.

    Points with non-positive error are dropped with a warning; at least four
    usable points are required.
    """
    n = np.asarray(n, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if n.shape != eps.shape:
        raise ValueError("N and error arrays must have the same shape")
    ok = np.isfinite(eps) & (eps > 0)
    if not ok.all():
        warnings.warn(f"dropping {int((~ok).sum())} non-positive error values from the fit", RuntimeWarning,
                      stacklevel=2)
    x, y = np.log(n[ok]), np.log(eps[ok])
    m = x.size
    if m < 4:
        raise ValueError(f"power-law fit needs at least 4 positive points, got {m}")
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - y.mean())) / sxx
    k = y.mean() - slope * xm
    resid = y - (k + slope * x)
    s2 = np.sum(resid ** 2) / (m - 2)
    alpha_se = math.sqrt(s2 / sxx)
    k_se = math.sqrt(s2 * (1.0 / m + xm ** 2 / sxx))
    return PowerLawFit(float(k), float(-slope), k_se, alpha_se, m)


def n_star(k: float, alpha: float, a: float, b: float = 0.0, h: float = 0.0, greek: bool = False):
    """Paths needed to reach and hold accuracy ``a``; ``None`` when unreachable.

    Prices: ``(3 e^k / a)^(1/alpha)``. Greeks with FD bias ``b h^2``:
    ``(9 e^(2k) / (a^2 - 9 b^2 h^4))^(1/(2 alpha))``, undefined for ``a <= 3|b|h^2``.
    """
    if not alpha > 0:
        raise ValueError("convergence rate must be positive")
    if not a > 0:
        raise ValueError("accuracy target must be positive")
    if not greek:
        return (3 * math.exp(k) / a) ** (1 / alpha)
    floor = 3 * abs(b) * h * h
    if a <= floor:
        return None
    return (9 * math.exp(2 * k) / (a * a - floor * floor)) ** (1 / (2 * alpha))


def speed_up(n_i, n_j):
    """``N*_j / N*_i`` (> 1 when method i is cheaper); ``None`` if either is undefined."""
    if n_i is None or n_j is None:
        return None
    return n_j / n_i


def bias_dominated(rmse_values, bias: float, fraction: float = 0.1) -> np.ndarray:
    """Mask of points whose FD bias exceeds ``fraction`` of the measured RMSE."""
    return abs(bias) > fraction * np.asarray(rmse_values, dtype=float)


@dataclass
class ConvergenceReport:
    instrument: str
    function: str
    method: str
    n: np.ndarray
    rmse: np.ndarray
    runs: int
    reference: float
    fit: PowerLawFit | None = None
    excluded: list = field(default_factory=list)
    eps: float | None = None
    bias: float = 0.0


@dataclass
class SpeedUpReport:
    instrument: str
    function: str
    targets: dict  # relative accuracy -> absolute accuracy
    n_star: dict   # (method, relative accuracy) -> N* or None
    ratios: dict   # (method_i, method_j, relative accuracy) -> S* or None


@dataclass
class StabilityReport:
    edges: np.ndarray
    means: np.ndarray
    vols: np.ndarray
    log_returns: np.ndarray  # nan where a window mean is non-positive
    flagged: list = field(default_factory=list)


def stability(n, values, windows: int = 10, min_per_window: int = 2) -> StabilityReport:
    """Window means, volatilities and log-returns over equal-length windows of N."""
    n = np.asarray(n, dtype=float)
    values = np.asarray(values, dtype=float)
    if n.shape != values.shape:
        raise ValueError("N and value arrays must have the same shape")
    if n.size < windows * min_per_window:
        raise ValueError(f"need at least {windows * min_per_window} samples")
    edges = np.linspace(n.min(), n.max(), windows + 1)
    idx = np.clip(np.searchsorted(edges, n, side="right") - 1, 0, windows - 1)
    means = np.empty(windows)
    vols = np.empty(windows)
    for w in range(windows):
        sel = values[idx == w]
        if sel.size < min_per_window:
            raise ValueError(f"window {w} holds {sel.size} samples, need {min_per_window}")
        # centred on a member so that a constant window has exactly zero spread
        dev = sel - sel[0]
        means[w] = sel[0] + dev.mean()
        vols[w] = dev.std(ddof=1)
    log_returns = np.full(windows - 1, np.nan)
    flagged = []
    for w in range(1, windows):
        if means[w] > 0 and means[w - 1] > 0:
            log_returns[w - 1] = math.log(means[w] / means[w - 1])
        else:
            flagged.append(w)
    if flagged:
        log.warning("log-return undefined for windows %s (non-positive mean)", flagged)
    return StabilityReport(edges, means, vols, log_returns, flagged)
