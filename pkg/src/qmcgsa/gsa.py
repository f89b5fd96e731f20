"""Sobol' sensitivity indices, effective dimensions and the A/B/C classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .sequence import PrngSequence, SobolSequence, to_normals

CHUNK = 2 ** 12


@dataclass(frozen=True)
class GsaThresholds:
    """Decision thresholds for effective dimensions and function types.

    ``truncation`` is the prefix-rule cutoff of the reported d_T. Type A
    holds when the prefix rule at the looser ``type_a_truncation`` cutoff
    needs at most ``type_a_fraction * D`` inputs. Type B needs
    ``min S_i/S_i^tot >= type_b_ratio``, the minimum taken over inputs whose
    total index is at least ``type_b_trim`` times the largest one, and
    ``sum S_i >= type_b_sum``. Everything else is type C.
    """

    truncation: float = 0.01
    type_a_truncation: float = 0.05
    type_a_fraction: float = 0.25
    type_b_ratio: float = 0.15
    type_b_trim: float = 0.1
    type_b_sum: float = 0.5
    qmc_favorable_da: float = 3.0


DEFAULT_THRESHOLDS = GsaThresholds()


@dataclass
class GsaTarget:
    """Scalar or vector function on the unit cube.

    ``func`` acts on transformed coordinates ``transform(u)``; the transform
    must act coordinate-wise, so mixing points after transforming is
    equivalent to mixing the uniforms.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dimension: int
    transform: Callable[[np.ndarray], np.ndarray] | None = None
    labels: Sequence[str] = ("f",)
    scheme: str = ""

    def evaluate(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        t = self.transform(u) if self.transform is not None else u
        return np.atleast_2d(self.func(t))


def normal_target(functional, labels=None, scheme: str = "") -> GsaTarget:
    """Wrap a normals-to-values functional (e.g. a path functional) as a GSA target."""
    return GsaTarget(functional, functional.dimension, to_normals,
                     labels or getattr(functional, "labels", ("f",)), scheme)


@dataclass
class GsaReport:
    label: str
    f0: float
    variance: float
    S_raw: np.ndarray
    S_tot_raw: np.ndarray
    n: int
    evaluations: int
    scheme: str = ""
    eps: float | None = None
    degenerate: bool = False
    thresholds: GsaThresholds = DEFAULT_THRESHOLDS
    S: np.ndarray = field(init=False)
    S_tot: np.ndarray = field(init=False)

    def __post_init__(self):
        s_tot = np.clip(self.S_tot_raw, 0.0, 1.0)
        self.S_tot = s_tot
        self.S = np.minimum(np.clip(self.S_raw, 0.0, 1.0), s_tot)

    @property
    def dimension(self) -> int:
        return self.S_raw.size

    @property
    def sum_S(self) -> float:
        return float(np.sum(self.S))

    @property
    def d_T(self) -> int:
        return truncation_dimension(self, self.thresholds.truncation)

    @property
    def d_A(self) -> float:
        return average_dimension(self)[0]

    @property
    def qmc_favorable(self) -> bool:
        return average_dimension(self, self.thresholds.qmc_favorable_da)[1]

    def min_ratio(self, trim: float | None = None) -> float:
        """Smallest S_i/S_i^tot over inputs with S_i^tot >= trim * max S^tot."""
        trim = self.thresholds.type_b_trim if trim is None else trim
        top = float(np.max(self.S_tot))
        if not top > 0:
            return math.nan
        keep = self.S_tot >= trim * top
        return float(np.min(self.S[keep] / self.S_tot[keep]))

    @property
    def type(self) -> str:
        return classify(self, self.thresholds)[0]

    @property
    def d_S_class(self) -> str:
        return classify(self, self.thresholds)[1]

    def summary(self) -> dict:
        if self.degenerate:
            return {"label": self.label, "scheme": self.scheme, "eps": self.eps, "degenerate": True,
                    "f0": self.f0, "variance": self.variance}
        return {"label": self.label, "scheme": self.scheme, "eps": self.eps, "degenerate": False,
                "f0": self.f0, "variance": self.variance, "sum_S": self.sum_S,
                "min_ratio": self.min_ratio(), "d_T": self.d_T, "d_S": self.d_S_class, "d_A": self.d_A, "type": self.type}


def _sampler(kind: str, dim: int, start: int, seed: int):
    if kind == "QMC":
        return SobolSequence(dim, index=start)
    if kind == "MC":
        return PrngSequence(dim, seed=seed, index=start)
    raise ValueError(f"unknown sampler {kind!r}")


def _outputs(target: GsaTarget, x: np.ndarray) -> np.ndarray:
    # copy: the target may return a view of x, which is reused
    return np.array(target.func(x), dtype=float, ndmin=2)


def estimate_indices(target: GsaTarget, n: int, block: int = 0, sampler: str = "QMC", seed: int = 0,
                     chunk: int = CHUNK, thresholds: GsaThresholds = DEFAULT_THRESHOLDS,
                     eps: float | None = None) -> list[GsaReport]:
    """First-order and total indices of every output of ``target``.

    Each trial takes one 2D-dimensional point split into ``x`` and ``x'`` and
    spends D + 2 evaluations: f(x), f(x') and f(x with x_i taken from x').
    ``f0`` and the variance pool f(x) and f(x').
    """
    D = target.dimension
    if n < 2:
        raise ValueError("need at least two trials")
    seq = _sampler(sampler, 2 * D, block * n, seed)
    shift = None
    acc = None
    done = 0
    while done < n:
        c = min(chunk, n - done)
        t = target.transform(seq.draw(c)) if target.transform is not None else seq.draw(c)
        a, b = t[:, :D], t[:, D:]
        fa, fb = _outputs(target, a), _outputs(target, b)
        m = fa.shape[0]
        if shift is None:
            shift = fa.mean(axis=1)
            acc = {"s1": np.zeros(m), "s2": np.zeros(m), "prod": np.zeros((m, D)),
                   "diff": np.zeros((m, D)), "tot": np.zeros((m, D))}
        ga, gb = fa - shift[:, None], fb - shift[:, None]
        acc["s1"] += ga.sum(axis=1) + gb.sum(axis=1)
        acc["s2"] += (ga * ga).sum(axis=1) + (gb * gb).sum(axis=1)
        mixed = a.copy()
        for i in range(D):
            mixed[:, i] = b[:, i]
            fab = _outputs(target, mixed)
            mixed[:, i] = a[:, i]
            d = fab - fa
            acc["prod"][:, i] += (gb * d).sum(axis=1)
            acc["diff"][:, i] += d.sum(axis=1)
            acc["tot"][:, i] += (d * d).sum(axis=1)
        done += c
    mean_g = acc["s1"] / (2 * n)
    variance = acc["s2"] / (2 * n) - mean_g ** 2
    f0 = shift + mean_g
    reports = []
    labels = list(target.labels) if len(target.labels) == m else [f"f{k}" for k in range(m)]
    for k in range(m):
        scale = max(1.0, f0[k] ** 2, float(np.mean(acc["s2"][k] / (2 * n))))
        degenerate = not variance[k] > 1e-12 * scale
        if degenerate:
            s_raw = np.full(D, np.nan)
            tot_raw = np.full(D, np.nan)
        else:
            # sum (f(x') - f0)(f(y',z) - f(y,z)) with f0 removed after the fact
            first = acc["prod"][k] - mean_g[k] * acc["diff"][k]
            s_raw = first / (n * variance[k])
            tot_raw = acc["tot"][k] / (2 * n * variance[k])
        reports.append(GsaReport(labels[k], float(f0[k]), float(variance[k]), s_raw, tot_raw, n,
                                 n * (D + 2), target.scheme, eps, degenerate, thresholds))
    return reports


def truncation_dimension(report: GsaReport, threshold: float = 0.01) -> int:
    """Smallest leading block y = {x_1..x_d} with (S_z^tot/|z|) / (S_y^tot/|y|) < threshold.

    Group totals are approximated by sums of single-input totals.
    """
    s_tot = report.S_tot
    D = s_tot.size
    head = np.cumsum(s_tot)
    total = head[-1]
    for d in range(1, D):
        lead = head[d - 1] / d
        rest = (total - head[d - 1]) / (D - d)
        if lead > 0 and rest < threshold * lead:
            return d
    return D


def average_dimension(report: GsaReport, favorable_below: float = 3.0) -> tuple[float, bool]:
    d_A = float(np.sum(report.S_tot))
    return d_A, d_A <= favorable_below


def classify(report: GsaReport, thresholds: GsaThresholds = DEFAULT_THRESHOLDS) -> tuple[str, str]:
    """Type A/B/C and the matching bound on the superposition dimension."""
    if report.degenerate:
        return "-", "-"
    D = report.dimension
    d_a = truncation_dimension(report, thresholds.type_a_truncation)
    if d_a <= thresholds.type_a_fraction * D:
        return "A", f"<={d_a}"
    d_T = truncation_dimension(report, thresholds.truncation)
    if report.min_ratio(thresholds.type_b_trim) >= thresholds.type_b_ratio and report.sum_S >= thresholds.type_b_sum:
        return "B", f"<<{d_T}"
    return "C", f"~{D}"


CSV_COLUMNS = ("instrument", "function", "scheme", "eps", "i", "S_i_raw", "S_i", "S_tot_i_raw", "S_tot_i")
SUMMARY_COLUMNS = ("instrument", "function", "scheme", "eps", "N", "evaluations", "f0", "variance",
                   "sum_S", "min_ratio", "d_T", "d_S_class", "d_A", "qmc_favorable", "type")


def report_rows(instrument: str, function: str, report: GsaReport) -> list[list]:
    eps = "" if report.eps is None else f"{report.eps:g}"
    if report.degenerate:
        return [[instrument, function, report.scheme, eps, "summary", "variance~0", "", "", ""]]
    rows = [[instrument, function, report.scheme, eps, i + 1, repr(float(report.S_raw[i])),
             repr(float(report.S[i])), repr(float(report.S_tot_raw[i])), repr(float(report.S_tot[i]))]
            for i in range(report.dimension)]
    rows.append([instrument, function, report.scheme, eps, "summary", f"d_T={report.d_T}",
                 f"d_S={report.d_S_class}", f"d_A={report.d_A:.6g}", f"type={report.type}"])
    return rows
