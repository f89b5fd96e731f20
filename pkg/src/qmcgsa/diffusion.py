"""Brownian path construction (sequential and bridge) and exact GBM steps.

All functions accept a single vector of length ``D`` or a batch of shape
``(n, D)``; the last axis is always time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    spot: float = 100.0
    rate: float = 0.0
    vol: float = 0.3

    def __post_init__(self):
        if not self.spot > 0:
            raise ValueError("spot must be positive")
        if self.vol < 0:
            raise ValueError("volatility must be non-negative")

    def bumped(self, *, spot: float | None = None, vol: float | None = None) -> "ModelParams":
        return ModelParams(self.spot if spot is None else spot, self.rate,
                           self.vol if vol is None else vol)


class TimeGrid:
    """Strictly increasing fixing times ``t_1 < ... < t_D`` with implicit ``t_0 = 0``."""

    def __init__(self, times):
        times = np.asarray(times, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("time grid must be a non-empty vector")
        if not times[0] > 0 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing with t_1 > 0")
        self.times = times
        self.times.setflags(write=False)

    @classmethod
    def uniform(cls, maturity: float, steps: int) -> "TimeGrid":
        return cls(maturity * np.arange(1, steps + 1) / steps)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self) -> int:
        return hash(self.times.tobytes())

    def __repr__(self) -> str:
        return f"TimeGrid(D={len(self)}, T={self.maturity:g})"

    @property
    def steps(self) -> int:
        return self.times.size

    @property
    def maturity(self) -> float:
        return float(self.times[-1])

    @cached_property
    def dt(self) -> np.ndarray:
        return np.diff(self.times, prepend=0.0)

    @cached_property
    def bridge_schedule(self) -> "BridgeSchedule":
        return BridgeSchedule.build(self.times)


@dataclass(frozen=True)
class BridgeSchedule:
    """Fill order for the Brownian bridge.

    Step ``l`` fixes grid point ``target[l]`` (1-based, 0 is ``t_0``) from the
    already known points ``left[l]`` and ``right[l]`` using normal ``Z_{l+1}``.
    Step 0 is the terminal point, later steps bisect index ranges breadth-first
    at ``(i + k) // 2``.
    """

    target: np.ndarray
    left: np.ndarray
    right: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    scale: np.ndarray

    @classmethod
    def build(cls, times: np.ndarray) -> "BridgeSchedule":
        D = times.size
        t = np.concatenate(([0.0], times))
        target, left, right = [D], [0], [D]
        queue = [(0, D)]
        while queue:
            nxt = []
            for i, k in queue:
                if k - i < 2:
                    continue
                j = (i + k) // 2
                target.append(j)
                left.append(i)
                right.append(k)
                nxt.extend([(i, j), (j, k)])
            queue = nxt
        target, left, right = map(np.asarray, (target, left, right))
        t_i, t_j, t_k = t[left], t[target], t[right]
        # the terminal step has no right anchor: W_D = sqrt(t_D) Z_1
        w_left = np.where(target == right, 0.0, (t_k - t_j) / (t_k - t_i))
        w_right = np.where(target == right, 0.0, (t_j - t_i) / (t_k - t_i))
        scale = np.where(target == right, np.sqrt(t_j),
                         np.sqrt((t_k - t_j) * (t_j - t_i) / (t_k - t_i)))
        return cls(target, left, right, w_left, w_right, scale)


def _check(z: np.ndarray, grid: TimeGrid) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != len(grid):
        raise ValueError(f"expected {len(grid)} normals per path, got {z.shape[-1]}")
    return z


def path_sd(z, grid: TimeGrid) -> np.ndarray:
    """Sequential increments: ``W_j = sum_{i<=j} sqrt(dt_i) Z_i``."""
    z = _check(z, grid)
    return np.cumsum(z * np.sqrt(grid.dt), axis=-1)


def path_bbd(z, grid: TimeGrid) -> np.ndarray:
    """Brownian bridge: ``Z_1`` sets ``W_D``, later normals fill midpoints."""
    z = _check(z, grid)
    sched = grid.bridge_schedule
    w = np.zeros(z.shape[:-1] + (len(grid) + 1,))
    for l in range(len(grid)):
        j = sched.target[l]
        w[..., j] = sched.scale[l] * z[..., l]
        if l:
            w[..., j] += sched.w_left[l] * w[..., sched.left[l]] + sched.w_right[l] * w[..., sched.right[l]]
    return w[..., 1:]


def brownian_path(z, grid: TimeGrid, scheme: str) -> np.ndarray:
    if scheme == "SD":
        return path_sd(z, grid)
    if scheme == "BBD":
        return path_bbd(z, grid)
    raise ValueError(f"unknown discretization scheme {scheme!r}")


def log_path(w, vol: float, rate: float, grid: TimeGrid) -> np.ndarray:
    """``log(S_j / S_0)`` under the exact log-normal step."""
    return (rate - 0.5 * vol * vol) * grid.times + vol * np.asarray(w)


def gbm_path(w, params: ModelParams, grid: TimeGrid) -> np.ndarray:
    """Asset values ``S_1..S_D`` from Brownian values ``W_1..W_D``.

    ``S_j = S_{j-1} exp((r - vol^2/2) dt_j + vol dW_j)``; summing the
    exponents telescopes, so the path is evaluated in closed form.
    """
    return params.spot * np.exp(log_path(w, params.vol, params.rate, grid))
