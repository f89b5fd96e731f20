"""Uniform variate streams (Sobol' and pseudo-random) and the normal transform.

Both generators are value-like: their output is a pure function of the
initialization and the number of points already emitted, so independent
runs can be placed on disjoint blocks with :meth:`skip`.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from numba import njit

BITS = 32
_SCALE = 2.0 ** -BITS
# numpy's Generator.random() returns multiples of 2**-53
PRNG_TINY = 2.0 ** -53


class UnsupportedDimensionError(ValueError):
    pass


class SequenceOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class DirectionTable:
    """Primitive-polynomial data and initial direction numbers per dimension."""

    degrees: tuple[int, ...]
    coeffs: tuple[int, ...]
    m_init: tuple[tuple[int, ...], ...]
    sha256: str

    @property
    def max_dimension(self) -> int:
        return len(self.degrees)


@lru_cache(maxsize=None)
def load_direction_table(path: str | None = None) -> DirectionTable:
    """Parse a ``d s a m_1..m_s`` table; the bundled Joe-Kuo file by default."""
    if path is None:
        raw = resources.files("qmcgsa.data").joinpath("sobol_directions.txt").read_bytes()
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    degrees, coeffs, m_init = [], [], []
    for line in raw.decode("ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [int(t) for t in line.split()]
        d, s, a, ms = fields[0], fields[1], fields[2], tuple(fields[3:])
        if d != len(degrees) + 1 or len(ms) != s:
            raise ValueError(f"malformed direction table line: {line!r}")
        degrees.append(s)
        coeffs.append(a)
        m_init.append(ms)
    return DirectionTable(tuple(degrees), tuple(coeffs), tuple(m_init),
                          hashlib.sha256(raw).hexdigest())


@lru_cache(maxsize=32)
def _direction_matrix(dimension: int, table: DirectionTable) -> np.ndarray:
    # V[k, j] is the k-th direction integer of dimension j, scaled to BITS bits
    if dimension > table.max_dimension:
        raise UnsupportedDimensionError(
            f"dimension {dimension} exceeds direction table ({table.max_dimension})")
    V = np.zeros((BITS, dimension), dtype=np.uint64)
    for j in range(dimension):
        s, a, m = table.degrees[j], table.coeffs[j], table.m_init[j]
        if s == 0:
            for k in range(BITS):
                V[k, j] = 1 << (BITS - k - 1)
            continue
        v = [0] * BITS
        for k in range(min(s, BITS)):
            v[k] = m[k] << (BITS - k - 1)
        for k in range(s, BITS):
            x = v[k - s] ^ (v[k - s] >> s)
            for q in range(1, s):
                if (a >> (s - 1 - q)) & 1:
                    x ^= v[k - q]
            v[k] = x
        V[:, j] = v
    V = V.astype(np.uint32)
    V.setflags(write=False)
    return V


def _trailing_zeros(r: np.ndarray) -> np.ndarray:
    low = (r & -r).astype(np.float64)
    return np.log2(low).astype(np.intp)


class SobolSequence:
    """Sobol' stream in Gray-code order, with the all-zero point dropped.

    ``index`` counts emitted points, so the first call to :meth:`next` returns
    the point at raw position 1, which is ``(0.5, ..., 0.5)``.
    """

    kind = "SOBOL"

    def __init__(self, dimension: int, index: int = 0, table: DirectionTable | None = None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.table = table or load_direction_table()
        self.dimension = dimension
        self._V = _direction_matrix(dimension, self.table)
        self.index = 0
        self.skip(index)

    def __repr__(self) -> str:
        return f"SobolSequence(dimension={self.dimension}, index={self.index})"

    def copy(self) -> "SobolSequence":
        return copy.copy(self)

    @property
    def table_hash(self) -> str:
        return self.table.sha256

    def _integers_at(self, raw: int) -> np.ndarray:
        gray = raw ^ (raw >> 1)
        x = np.zeros(self.dimension, dtype=np.uint32)
        k = 0
        while gray:
            if gray & 1:
                x ^= self._V[k]
            gray >>= 1
            k += 1
        return x

    def skip(self, n: int) -> "SobolSequence":
        if n < 0:
            raise ValueError("cannot skip a negative number of points")
        if self.index + n + 1 >= 2 ** BITS:
            raise SequenceOverflowError("Sobol' counter exceeds 2**32 points")
        self.index += n
        return self

    def draw_integers(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        if self.index + n >= 2 ** BITS:
            raise SequenceOverflowError("Sobol' counter exceeds 2**32 points")
        out = np.empty((n, self.dimension), dtype=np.uint32)
        if n == 0:
            return out
        r0 = self.index + 1
        out[0] = self._integers_at(r0)
        if n > 1:
            raws = np.arange(r0 + 1, r0 + n, dtype=np.int64)
            out[1:] = self._V[_trailing_zeros(raws)]
            np.bitwise_xor.accumulate(out, axis=0, out=out)
        self.index += n
        return out

    def draw(self, n: int) -> np.ndarray:
        """Next ``n`` points as an ``(n, dimension)`` float array in [0, 1)."""
        return self.draw_integers(n) * _SCALE

    def next(self) -> np.ndarray:
        return self.draw(1)[0]


class PrngSequence:
    """PCG64 stream (period 2**128) addressed by (seed, index)."""

    kind = "PRNG"

    def __init__(self, dimension: int, seed: int | tuple[int, ...] = 0, index: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.seed = seed
        self._bitgen = np.random.PCG64(np.random.SeedSequence(seed))
        self._gen = np.random.Generator(self._bitgen)
        self.index = 0
        self.skip(index)

    def __repr__(self) -> str:
        return f"PrngSequence(dimension={self.dimension}, seed={self.seed!r}, index={self.index})"

    def copy(self) -> "PrngSequence":
        other = PrngSequence(self.dimension, self.seed)
        other._bitgen.state = self._bitgen.state
        other.index = self.index
        return other

    def skip(self, n: int) -> "PrngSequence":
        if n < 0:
            raise ValueError("cannot skip a negative number of points")
        # one 64-bit draw per double
        self._bitgen.advance(n * self.dimension)
        self.index += n
        return self

    def draw(self, n: int) -> np.ndarray:
        out = self._gen.random((n, self.dimension))
        self.index += n
        return out

    def next(self) -> np.ndarray:
        return self.draw(1)[0]


def sobol_next(state: SobolSequence) -> np.ndarray:
    return state.next()


def sobol_skip(state: SobolSequence, n: int) -> SobolSequence:
    return state.skip(n)


def prng_next(state: PrngSequence) -> np.ndarray:
    return state.next()


# Acklam's rational approximation: central region and lower tail
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True)
def _icdf_scalar(u):
    # work in the lower half: 1 - u is exact for u in [0.5, 1)
    p = 1.0 - u if u > 0.5 else u
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        x /= (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        x /= ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    # one Halley step against the erfc-based CDF
    e = 0.5 * math.erfc(-x / _SQRT2) - p
    w = e * _SQRT2PI * math.exp(0.5 * x * x)
    x = x - w / (1.0 + 0.5 * x * w)
    return -x if u > 0.5 else x


@njit(cache=True)
def _icdf_array(u, out):
    for k in range(u.size):
        out[k] = _icdf_scalar(u[k])


def norm_ppf(u) -> np.ndarray:
    """Inverse standard normal CDF, ~1e-15 absolute accuracy on (1e-300, 1)."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    if np.any(~(u > 0.0) | ~(u < 1.0)):
        raise ValueError("norm_ppf requires arguments strictly inside (0, 1)")
    out = np.empty_like(u)
    _icdf_array(u.reshape(-1), out.reshape(-1))
    return out


def to_normals(points) -> np.ndarray:
    """Map uniforms in [0, 1) to standard normals; exact zeros become 2**-53."""
    points = np.asarray(points, dtype=np.float64)
    if np.any(~(points >= 0.0) | ~(points < 1.0)):
        raise ValueError("uniform coordinates must lie in [0, 1)")
    return norm_ppf(np.where(points == 0.0, PRNG_TINY, points))


def antithetic(z) -> np.ndarray:
    return -np.asarray(z, dtype=np.float64)
