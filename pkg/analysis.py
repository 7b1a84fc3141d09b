# analysis.py
"""
Derived quantities of simulated (or measured) coherence curves:
coherence times, intermediate slopes, the limiting-rate fit a + b/(n_π - c)
and the asymptotic vibrational-mixing value.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from errors import FitError, NoCrossingError

logger = logging.getLogger(__name__)

__all__ = [
    "COHERENCE_THRESHOLD", "CURVE_COLUMNS", "CoherenceCurve", "FitResult",
    "SlopeRow", "SlopeTable", "coherence_time", "line_fit", "intermediate_slope",
    "tail_slope", "fit_limiting_rate", "asymptotic_mixing", "ramsey_contrast",
    "ramsey_decay_time", "pi_pi_initial_slope", "default_window", "SLOPE_COLUMNS",
    "fringe_contrast", "fringe_decay_time",
]

COHERENCE_THRESHOLD = 0.5 * (1.0 - math.exp(-1.0))     # ≈ 0.3161
CURVE_COLUMNS = ("tau_total_s", "p2", "p2_stderr", "n_atoms", "seed")
_MIN_WINDOW_POINTS = 4
_MIN_FIT_NPI = 4
_POLE_MARGIN = 0.1


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------
@dataclass
class CoherenceCurve:
    """P₂ versus τ_Total with per-point standard errors."""

    tau_total: np.ndarray
    p2: np.ndarray
    stderr: np.ndarray
    kind: str = ""
    n_pi: int = 0
    fingerprint: str = ""
    n_atoms: int = 0
    seeds: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.tau_total = np.asarray(self.tau_total, dtype=float)
        self.p2 = np.asarray(self.p2, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        self.seeds = tuple(int(s) for s in self.seeds)
        n = self.tau_total.size
        if self.p2.shape != (n,) or self.stderr.shape != (n,):
            raise ValueError("tau_total, p2 and stderr must be 1-D arrays of equal length")
        if self.seeds and len(self.seeds) != n:
            raise ValueError(f"expected {n} seeds, got {len(self.seeds)}")
        if np.any(np.diff(self.tau_total) <= 0):
            raise ValueError("tau_total must be strictly increasing")
        if np.any(self.p2 < -1e-12):
            raise ValueError("p2 must be >= 0")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be >= 0")

    def __len__(self) -> int:
        return self.tau_total.size

    def points(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.tau_total.tolist(), self.p2.tolist(), self.stderr.tolist()))

    def window(self, t_lo: float, t_hi: float) -> "CoherenceCurve":
        """Sub-curve with t_lo <= τ_Total <= t_hi."""
        mask = (self.tau_total >= t_lo) & (self.tau_total <= t_hi)
        seeds = tuple(s for s, keep in zip(self.seeds, mask) if keep) if self.seeds else ()
        return CoherenceCurve(self.tau_total[mask], self.p2[mask], self.stderr[mask],
                              self.kind, self.n_pi, self.fingerprint, self.n_atoms, seeds)

    # CSV ---------------------------------------------------------------
    def to_csv(self, path) -> None:
        seeds = self.seeds or (0,) * len(self)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CURVE_COLUMNS)
            for (t, p, e), seed in zip(self.points(), seeds):
                writer.writerow([_fmt(t), _fmt(p), _fmt(e), self.n_atoms, seed])

    @classmethod
    def from_csv(cls, path, kind: str = "", n_pi: int = 0) -> "CoherenceCurve":
        taus, p2s, errs, seeds = [], [], [], []
        n_atoms = 0
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            missing = set(CURVE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                try:
                    taus.append(float(row["tau_total_s"]))
                    p2s.append(float(row["p2"]))
                    errs.append(float(row["p2_stderr"]))
                    seeds.append(int(row["seed"]))
                    n_atoms = int(row["n_atoms"])
                except ValueError:
                    raise ValueError(f"Invalid number in {path}: {row}")
        return cls(np.array(taus), np.array(p2s), np.array(errs), kind, n_pi,
                   n_atoms=n_atoms, seeds=tuple(seeds))


# ---------------------------------------------------------------------------
# Coherence time and slopes
# ---------------------------------------------------------------------------
def _first_crossing(t: np.ndarray, y: np.ndarray, level: float, upward: bool) -> float:
    above = y >= level if upward else y <= level
    hits = np.flatnonzero(above)
    if hits.size == 0:
        raise NoCrossingError(f"curve never crosses {level:.4f} within its span")
    i = int(hits[0])
    if i == 0:
        raise NoCrossingError(f"curve already past {level:.4f} at its first point")
    t0, t1, y0, y1 = t[i - 1], t[i], y[i - 1], y[i]
    return float(t0 + (level - y0) * (t1 - t0) / (y1 - y0))


def coherence_time(curve: CoherenceCurve, threshold: float = COHERENCE_THRESHOLD) -> float:
    """First upward crossing of P₂ = ½(1 - 1/e), linearly interpolated."""
    return _first_crossing(curve.tau_total, curve.p2, threshold, upward=True)


def default_window(tau_c: float) -> Tuple[float, float]:
    return 0.3 * tau_c, 1.2 * tau_c


def _linear(t, slope, offset):
    return slope * t + offset


def line_fit(curve: CoherenceCurve, window: Optional[Tuple[float, float]] = None
             ) -> Tuple[float, float]:
    """
    Weighted straight-line fit of P₂(τ_Total) over `window`.

    Points are weighted by 1/stderr² when every stderr is positive,
    otherwise the fit is unweighted. Returns (slope, slope_error).
    """
    sub = curve if window is None else curve.window(*window)
    if len(sub) < _MIN_WINDOW_POINTS:
        raise FitError(
            f"slope window {window} holds {len(sub)} points, need >= {_MIN_WINDOW_POINTS}"
        )
    weighted = bool(np.all(sub.stderr > 0))
    t, p = sub.tau_total, sub.p2
    p0 = np.polyfit(t, p, 1)
    popt, pcov = curve_fit(_linear, t, p, p0=p0,
                           sigma=sub.stderr if weighted else None,
                           absolute_sigma=weighted)
    return float(popt[0]), float(math.sqrt(max(pcov[0, 0], 0.0)))


def intermediate_slope(curve: CoherenceCurve, window: Tuple[float, float],
                       long_time_slope: float = 0.0) -> float:
    """
    Decay rate of the intermediate section: 2 × (fitted slope - long-time slope).

    The fully dephased limit of P₂ is ½.
    """
    slope, _ = line_fit(curve, window)
    return 2.0 * (slope - long_time_slope)


def tail_slope(curve: CoherenceCurve, fraction: float = 0.25) -> float:
    """Slope over the last `fraction` of the curve's time span."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    t_hi = float(curve.tau_total[-1])
    t_lo = t_hi - fraction * (t_hi - float(curve.tau_total[0]))
    slope, _ = line_fit(curve, (t_lo, t_hi))
    return slope


def pi_pi_initial_slope(curve: CoherenceCurve, n_points: int = _MIN_WINDOW_POINTS
                        ) -> Tuple[float, float]:
    """(slope, error) of the first n_points of a π-π leakage curve."""
    if n_points < _MIN_WINDOW_POINTS or n_points > len(curve):
        raise FitError(f"need {_MIN_WINDOW_POINTS} <= n_points <= {len(curve)}, got {n_points}")
    t = curve.tau_total
    return line_fit(curve, (float(t[0]), float(t[n_points - 1])))


def ramsey_contrast(curve: CoherenceCurve) -> np.ndarray:
    """Fringe contrast |2P₂ - 1| (1 for a coherent Ramsey pair, 0 when dephased)."""
    return np.abs(2.0 * curve.p2 - 1.0)


def ramsey_decay_time(curve: CoherenceCurve) -> float:
    """Time at which the Ramsey contrast first drops to 1/e."""
    return _first_crossing(curve.tau_total, ramsey_contrast(curve), math.exp(-1.0), upward=False)


def fringe_contrast(in_phase: CoherenceCurve, quadrature: CoherenceCurve) -> np.ndarray:
    """
    Fringe envelope from two Ramsey curves read out at phase 0 and π/2.

    A mean detuning makes |2P₂ - 1| of a single readout oscillate; the
    quadrature sum does not.
    """
    if not np.array_equal(in_phase.tau_total, quadrature.tau_total):
        raise ValueError("quadrature curves must share their tau_total grid")
    return np.hypot(2.0 * in_phase.p2 - 1.0, 2.0 * quadrature.p2 - 1.0)


def fringe_decay_time(in_phase: CoherenceCurve, quadrature: CoherenceCurve) -> float:
    """Time at which the fringe envelope first drops to 1/e."""
    return _first_crossing(in_phase.tau_total, fringe_contrast(in_phase, quadrature),
                           math.exp(-1.0), upward=False)


# ---------------------------------------------------------------------------
# Limiting-rate fit
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FitResult:
    """rate(n_π) = a + b / (n_π - c)."""

    a: float
    b: float
    c: float
    covariance: np.ndarray = field(repr=False)
    residual: float = 0.0
    n_points: int = 0

    @property
    def errors(self) -> Tuple[float, float, float]:
        d = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return float(d[0]), float(d[1]), float(d[2])

    def predict(self, n_pi) -> np.ndarray:
        return _limiting_model(np.asarray(n_pi, dtype=float), self.a, self.b, self.c)

    def as_dict(self) -> dict:
        a_err, b_err, c_err = self.errors
        return {"a": self.a, "b": self.b, "c": self.c,
                "a_err": a_err, "b_err": b_err, "c_err": c_err,
                "residual": self.residual, "n_points": self.n_points}


def _limiting_model(n, a, b, c):
    return a + b / (n - c)


def fit_limiting_rate(slopes: Iterable[Tuple[int, float, float]]) -> FitResult:
    """
    Weighted least squares of rate(n_π) = a + b/(n_π - c).

    The pole is kept out of the data by the bound c < min(n_π) - 0.1; the fit
    is started from c₀ ∈ {0, 0.5, 0.9·min n_π} and the lowest residual wins.
    """
    rows = [(float(n), float(r), float(e)) for n, r, e in slopes]
    if not rows:
        raise FitError("no slopes to fit")
    n, rate, err = (np.array(col) for col in zip(*rows))
    if np.unique(n).size < _MIN_FIT_NPI:
        raise FitError(
            f"fit needs >= {_MIN_FIT_NPI} distinct n_pi values, got {np.unique(n).size}"
        )
    weighted = bool(np.all(err > 0))
    sigma = err if weighted else None
    c_max = float(n.min()) - _POLE_MARGIN
    bounds = ([-np.inf, -np.inf, -np.inf], [np.inf, np.inf, c_max])

    starts = sorted({min(c0, c_max - 0.05) for c0 in (0.0, 0.5, 0.9 * n.min())})
    best: Optional[FitResult] = None
    failures = []
    for c0 in starts:
        # a, b from the linear problem at fixed c0
        b0, a0 = np.polyfit(1.0 / (n - c0), rate, 1, w=None if sigma is None else 1.0 / sigma)
        try:
            popt, pcov = curve_fit(
                _limiting_model, n, rate, p0=[a0, b0, c0], sigma=sigma,
                absolute_sigma=weighted, bounds=bounds, method="trf",
                ftol=1e-14, xtol=1e-14, gtol=1e-14, max_nfev=20000,
            )
        except (RuntimeError, ValueError) as exc:
            failures.append(f"c0={c0:g}: {exc}")
            logger.debug("limiting-rate fit from c0=%g failed: %s", c0, exc)
            continue
        resid = (rate - _limiting_model(n, *popt)) / (1.0 if sigma is None else sigma)
        candidate = FitResult(float(popt[0]), float(popt[1]), float(popt[2]),
                              np.asarray(pcov), float(np.sum(resid ** 2)), n.size)
        logger.debug("limiting-rate fit from c0=%g: a=%g b=%g c=%g residual=%g",
                      c0, candidate.a, candidate.b, candidate.c, candidate.residual)
        if best is None or candidate.residual < best.residual:
            best = candidate

    if best is None:
        raise FitError("limiting-rate fit did not converge: " + "; ".join(failures))
    if not math.isfinite(best.a):
        raise FitError(f"limiting-rate fit returned a={best.a}")
    return best


def asymptotic_mixing(overlap_diag: float, n_pi: int) -> float:
    """½(1 - o^{2(n_π+1)}): long-time P₂ left by vibrational mixing alone."""
    if not 0.0 <= overlap_diag <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {overlap_diag}")
    if n_pi < 0:
        raise ValueError(f"n_pi must be >= 0, got {n_pi}")
    return 0.5 * (1.0 - overlap_diag ** (2 * (n_pi + 1)))


# ---------------------------------------------------------------------------
# Scan summaries
# ---------------------------------------------------------------------------
SLOPE_COLUMNS = ("n_pi", "tau_c_s", "slope_s_inv", "slope_err")


@dataclass(frozen=True)
class SlopeRow:
    n_pi: int
    tau_c: Optional[float]
    slope: Optional[float]
    slope_err: Optional[float]


class SlopeTable:
    """
    Coherence time and intermediate slope per n_π.

    Rows whose coherence time could not be extracted keep None entries and
    are written as empty CSV cells.
    """

    def __init__(self, rows: Sequence[SlopeRow] = ()):
        self.rows: List[SlopeRow] = sorted(rows, key=lambda r: r.n_pi)

    def add(self, row: SlopeRow) -> None:
        self.rows.append(row)
        self.rows.sort(key=lambda r: r.n_pi)

    def fit_rows(self) -> List[Tuple[int, float, float]]:
        return [(r.n_pi, r.slope, r.slope_err if r.slope_err is not None else 0.0)
                for r in self.rows if r.slope is not None]

    def coherence_times(self) -> dict:
        return {r.n_pi: r.tau_c for r in self.rows}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SLOPE_COLUMNS)
            for r in self.rows:
                writer.writerow([r.n_pi] + ["" if v is None else _fmt(v)
                                            for v in (r.tau_c, r.slope, r.slope_err)])

    @classmethod
    def from_csv(cls, path) -> "SlopeTable":
        rows = []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            missing = set(SLOPE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                n_pi = (row.get("n_pi") or "").strip()
                if not n_pi:
                    continue
                try:
                    values = [float(v) if (v or "").strip() else None
                              for v in (row["tau_c_s"], row["slope_s_inv"], row["slope_err"])]
                    rows.append(SlopeRow(int(n_pi), *values))
                except ValueError:
                    raise ValueError(f"Invalid number in {path}: {row}")
        if not rows:
            raise ValueError(f"No valid slope rows found in {path}")
        return cls(rows)
