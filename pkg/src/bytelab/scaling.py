"""IsoFLOPs parabolas, power laws over compute, BPB-ratio laws and parity budgets.

Power laws are fit as ``log(bpb) = s * log(F) + b`` with natural logs.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ScalingFitError(ValueError):
    pass


class ExtrapolatedMinimumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RunPoint:
    F: float
    N: float
    bpb: float
    objective: str = "ar"
    representation: str = "byte"

    def __post_init__(self):
        if not (self.F > 0 and self.N > 0 and self.bpb > 0):
            raise ValueError(f"RunPoint values must be positive: {self}")


@dataclass(frozen=True)
class IsoFlopsFit:
    N_opt: float
    bpb_min: float
    coeffs: tuple[float, float, float]  # a, b, c of a x^2 + b x + c with x = log N
    space: str
    residual_rms: float
    extrapolated: bool
    n_points: int

    def predict(self, N) -> np.ndarray:
        x = np.log(np.asarray(N, dtype=np.float64))
        y = np.polyval(self.coeffs, x)
        return np.exp(y) if self.space == "log" else y


def isoflops_fit(points: Iterable, space: str = "linear") -> IsoFlopsFit:
    """Least-squares quadratic of BPB against ``log N`` at one compute budget.

    ``points`` holds :class:`RunPoint` objects or ``(N, bpb)`` pairs.
    ``space="log"`` fits ``log(bpb)`` instead of ``bpb``.
    """
    if space not in ("linear", "log"):
        raise ValueError("space must be 'linear' or 'log'")
    pairs = []
    for p in points:
        N, y = (p.N, p.bpb) if isinstance(p, RunPoint) else p
        if N <= 0 or y <= 0:
            raise ScalingFitError("N and bpb must be positive")
        pairs.append((float(N), float(y)))
    pairs.sort()  # ordering must not change the result, not even in the last bit
    if len({N for N, _ in pairs}) < 3:
        raise ScalingFitError(f"isoFLOPs fit needs >= 3 distinct N values, got {len({N for N, _ in pairs})}")
    x = np.log([N for N, _ in pairs])
    y = np.array([v for _, v in pairs])
    if space == "log":
        y = np.log(y)
    xm = x.mean()
    a, bc, cc = np.polyfit(x - xm, y, 2)  # centred for conditioning
    half_span = (x.max() - x.min()) / 2
    # curvature below rounding level over the observed range counts as a straight line
    if a * half_span**2 <= 1e-9 * max(1.0, float(np.abs(y).max())):
        raise ScalingFitError(f"non-convex or degenerate isoFLOPs fit (leading coefficient {a:.3g})")
    xv = xm - bc / (2 * a)
    yv = cc - bc * bc / (4 * a)
    b, c = bc - 2 * a * xm, a * xm * xm - bc * xm + cc
    resid = y - np.polyval((a, bc, cc), x - xm)
    extrapolated = not (x.min() <= xv <= x.max())
    if extrapolated:
        warnings.warn(f"isoFLOPs vertex N={math.exp(xv):.4g} lies outside the observed range",
                      ExtrapolatedMinimumWarning, stacklevel=2)
    return IsoFlopsFit(
        N_opt=math.exp(xv),
        bpb_min=math.exp(yv) if space == "log" else yv,
        coeffs=(float(a), float(b), float(c)),
        space=space,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        extrapolated=extrapolated,
        n_points=len(pairs),
    )


@dataclass(frozen=True)
class PowerLawFit:
    s: float
    b: float
    residual_rms: float
    n_points: int

    def log_bpb(self, F) -> np.ndarray:
        return self.s * np.log(F) + self.b

    def bpb(self, F):
        return np.exp(self.log_bpb(F))

    def flops_for(self, bpb) -> np.ndarray:
        """Compute at which the law reaches ``bpb``."""
        return np.exp((np.log(bpb) - self.b) / self.s)


def powerlaw_fit(pairs: Iterable[tuple[float, float]]) -> PowerLawFit:
    """Ordinary least squares of ``log bpb`` on ``log F``."""
    data = sorted((float(F), float(v)) for F, v in pairs)
    if len(data) < 2:
        raise ScalingFitError(f"power-law fit needs >= 2 points, got {len(data)}")
    if any(F <= 0 or v <= 0 for F, v in data):
        raise ScalingFitError("power-law fit needs positive F and bpb")
    x = np.log([F for F, _ in data])
    y = np.log([v for _, v in data])
    if np.ptp(x) == 0:
        raise ScalingFitError("power-law fit needs at least two distinct F values")
    # centred closed form keeps precision when log F is large
    xm, ym = x.mean(), y.mean()
    s = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    b = float(ym - s * xm)
    resid = y - (s * x + b)
    return PowerLawFit(s, b, float(np.sqrt(np.mean(resid**2))), len(data))


@dataclass(frozen=True)
class RatioLaw:
    delta_s: float
    delta_b: float

    def log_ratio(self, F):
        return self.delta_b + self.delta_s * np.log(F)

    def ratio(self, F):
        return np.exp(self.log_ratio(F))

    @property
    def closes_with_scale(self) -> bool:
        return self.delta_s < 0


def ratio_law(fit_byte: PowerLawFit, fit_bpe: PowerLawFit) -> RatioLaw:
    """Byte/BPE BPB ratio as a power law: ``log ratio = delta_b + delta_s log F``."""
    return RatioLaw(fit_byte.s - fit_bpe.s, fit_byte.b - fit_bpe.b)


def parity_flops(fit_a: PowerLawFit, fit_b: PowerLawFit) -> float:
    """Compute at which two power laws predict the same BPB."""
    if fit_a.s == fit_b.s:
        if fit_a.b == fit_b.b:
            raise ScalingFitError("laws are identical: always equal")
        raise ScalingFitError("laws are parallel: never intersect")
    return math.exp((fit_b.b - fit_a.b) / (fit_a.s - fit_b.s))


def compute_gap(fit_slow: PowerLawFit, fit_fast: PowerLawFit, bpb: float) -> float:
    """How many times more compute ``fit_slow`` needs than ``fit_fast`` to reach ``bpb``."""
    return float(fit_slow.flops_for(bpb) / fit_fast.flops_for(bpb))


# -- CSV pipeline -----------------------------------------------------------------

def read_points(path: str | os.PathLike) -> list[RunPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"objective", "representation", "F", "N", "bpb"}
        if not need.issubset(reader.fieldnames or ()):
            raise ValueError(f"{path}: expected columns {sorted(need)}, got {reader.fieldnames}")
        return [RunPoint(float(r["F"]), float(r["N"]), float(r["bpb"]), r["objective"], r["representation"])
                for r in reader]


def write_points(path: str | os.PathLike, points: Sequence[RunPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["objective", "representation", "F", "N", "bpb"])
        for p in points:
            w.writerow([p.objective, p.representation, repr(p.F), repr(p.N), repr(p.bpb)])


@dataclass
class ScalingReport:
    isoflops: dict[tuple[str, str, float], IsoFlopsFit] = field(default_factory=dict)
    laws: dict[tuple[str, str], PowerLawFit] = field(default_factory=dict)
    ratios: dict[str, RatioLaw] = field(default_factory=dict)
    parity: dict[str, float | str] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = []
        for (obj, rep, F), fit in sorted(self.isoflops.items()):
            flag = " (extrapolated)" if fit.extrapolated else ""
            out.append(f"isoflops {obj} {rep} F={F:.6g}: N_opt={fit.N_opt:.6g} bpb_min={fit.bpb_min:.10g}{flag}")
        for (obj, rep), law in sorted(self.laws.items()):
            out.append(f"powerlaw {obj} {rep}: s={law.s!r} b={law.b!r} rms={law.residual_rms:.3g} n={law.n_points}")
        for obj, r in sorted(self.ratios.items()):
            out.append(f"ratio {obj} byte/bpe: delta_s={r.delta_s!r} delta_b={r.delta_b!r}")
        for obj, F in sorted(self.parity.items()):
            out.append(f"parity {obj}: F*={F if isinstance(F, str) else format(F, '.6g')}")
        return out


def fit_points(points: Sequence[RunPoint], space: str = "linear") -> ScalingReport:
    """isoFLOPs minima per budget, a power law per (objective, representation),
    byte/BPE ratio laws and parity budgets per objective."""
    report = ScalingReport()
    groups: dict[tuple[str, str, float], list[RunPoint]] = defaultdict(list)
    for p in points:
        groups[(p.objective, p.representation, p.F)].append(p)
    minima: dict[tuple[str, str], list[tuple[float, float]]] = defaultdict(list)
    for key in sorted(groups):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ExtrapolatedMinimumWarning)
            fit = isoflops_fit(groups[key], space=space)
        report.isoflops[key] = fit
        minima[key[:2]].append((key[2], fit.bpb_min))
    for key, pairs in sorted(minima.items()):
        if len(pairs) >= 2:
            report.laws[key] = powerlaw_fit(pairs)
    for obj in sorted({k[0] for k in report.laws}):
        if (obj, "byte") in report.laws and (obj, "bpe") in report.laws:
            byte, bpe = report.laws[(obj, "byte")], report.laws[(obj, "bpe")]
            report.ratios[obj] = ratio_law(byte, bpe)
            try:
                report.parity[obj] = parity_flops(byte, bpe)
            except ScalingFitError as exc:
                report.parity[obj] = str(exc)
    return report


def write_curves(path: str | os.PathLike, report: ScalingReport, n_grid: int = 50) -> None:
    """Plot-ready samples of every fitted parabola and power law."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "objective", "representation", "F", "N", "bpb"])
        for (obj, rep, F), fit in sorted(report.isoflops.items()):
            a, b, _ = fit.coeffs
            center = math.log(fit.N_opt)
            for x in np.linspace(center - 2, center + 2, n_grid):
                w.writerow(["isoflops", obj, rep, repr(F), repr(float(math.exp(x))),
                            repr(float(fit.predict(math.exp(x))))])
        for (obj, rep), law in sorted(report.laws.items()):
            Fs = [F for (o, r, F) in report.isoflops if (o, r) == (obj, rep)]
            for lf in np.linspace(math.log(min(Fs)) - 1, math.log(max(Fs)) + 1, n_grid):
                w.writerow(["powerlaw", obj, rep, repr(float(math.exp(lf))), "", repr(float(law.bpb(math.exp(lf))))])


def synthetic_isoflops(s: float, b: float, budgets: Sequence[float], n_sizes: int = 7,
                       curvature: float = 0.05, objective: str = "ar",
                       representation: str = "byte",
                       n_opt: Callable[[float], float] = lambda F: (F / 120.0) ** 0.5) -> list[RunPoint]:
    """Noiseless isoFLOPs parabolas whose vertices lie on ``bpb = exp(b) F^s``."""
    points = []
    for F in budgets:
        x0 = math.log(n_opt(F))
        y0 = math.exp(b) * F**s
        for dx in np.linspace(-1.5, 1.5, n_sizes):
            points.append(RunPoint(float(F), float(math.exp(x0 + dx)), float(y0 + curvature * dx**2),
                                   objective, representation))
    return points
