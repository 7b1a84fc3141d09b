# experiments.py
"""
Orchestration behind the command-line subcommands: coherence-curve runs,
n_π scans with the limiting-rate fit, noise calibration, overlap dumps and
refits of stored summary tables.

Every run writes its CSV files plus a JSON manifest holding the resolved
config and its fingerprint; a failed run leaves no partial files behind.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import pathlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from analysis import (
    CoherenceCurve, FitResult, SlopeRow, SlopeTable, coherence_time,
    default_window, fit_limiting_rate, fringe_decay_time, line_fit, tail_slope,
)
from bloch_engine import EnsembleSimulator
from config import ExperimentConfig
from errors import CalibrationError, ConfigError, FitError, NoCrossingError
from fock_engine import pulse_overlap, simulate_curve_fock
from noise import NoiseConfig, OUProcess
from sequence import build_schedule
from trap import overlap_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "OutputTracker", "CalibrationResult", "schedule_n_pi", "simulate_curves",
    "run_simulate", "run_scan_pulses", "run_calibrate", "run_overlap", "run_fit",
    "resolve_mixing_overlap",
]

_DEFAULT_POWER_TAU = 30e-3


class OutputTracker:
    """
    Remembers every file a run writes; discard() deletes them.

    Used as a context manager: an exception inside the block removes the
    partial outputs before propagating.
    """

    def __init__(self, directory):
        self.directory = pathlib.Path(directory)
        self.written: List[pathlib.Path] = []

    def __enter__(self) -> "OutputTracker":
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            self.discard()

    def path(self, name: str) -> pathlib.Path:
        p = self.directory / name
        self.written.append(p)
        return p

    def discard(self) -> None:
        for p in self.written:
            try:
                p.unlink()
                logger.info("removed partial output %s", p)
            except FileNotFoundError:
                pass
        self.written.clear()

    def write_json(self, name: str, data: dict) -> pathlib.Path:
        p = self.path(name)
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        logger.info("wrote %s", p)
        return p


def _manifest(cfg: ExperimentConfig, command: str, outputs: List[pathlib.Path], **extra) -> dict:
    data = {
        "command": command,
        "config": cfg.to_dict(),
        "fingerprint": cfg.fingerprint,
        "outputs": [p.name for p in outputs],
    }
    if cfg.engine.engine == "bloch":
        data["mixing_overlap"] = resolve_mixing_overlap(cfg)
    data.update(extra)
    return data


def resolve_mixing_overlap(cfg: ExperimentConfig) -> float:
    """
    Per-pulse overlap o used by the Bloch engine: engine.mixing_overlap, or
    the thermal Fock overlap at η = engine.mixing_eta and the reference
    temperature when mixing_eta is set.
    """
    eng = cfg.engine
    if eng.mixing_eta is None:
        return eng.mixing_overlap
    reference = cfg.trap.with_updates(temperature=eng.mixing_reference_temperature,
                                      differential_factor=eng.mixing_eta)
    overlap = pulse_overlap(reference)
    logger.info("mixing overlap %.6f from η_eff=%.4g at %.3g K (per-pulse loss %.4f)",
                overlap, eng.mixing_eta, eng.mixing_reference_temperature, 1.0 - overlap ** 2)
    return overlap


def schedule_n_pi(kind: str, n_pi: int) -> int:
    """π-pulse count a schedule of `kind` really has (n_pi only matters for multi_pi)."""
    return {"ramsey": 0, "echo": 1, "pi_pi": 2}.get(kind, n_pi)


def simulate_curves(cfg: ExperimentConfig, kind: Optional[str] = None,
                    noise: Optional[NoiseConfig] = None) -> List[CoherenceCurve]:
    """One curve per distinct n_π of the sequence section, on the configured engine."""
    kind = kind or cfg.sequence.kind
    noise = noise or cfg.noise
    seq, eng = cfg.sequence, cfg.engine
    n_values = sorted({schedule_n_pi(kind, n) for n in seq.n_pi})
    fingerprint = cfg.fingerprint

    if eng.engine == "fock":
        if seq.finite_pulses:
            raise ConfigError("the fock engine only runs ideal pulses; set finite_pulses false")
        return [simulate_curve_fock(cfg.trap, kind, n, seq.tau_total, eng.basis_size,
                                    eng.fock_initial, phase_convention=seq.phase_convention,
                                    fingerprint=fingerprint)
                for n in n_values]

    with EnsembleSimulator(trap=cfg.trap, noise=noise, n_atoms=eng.n_atoms,
                           master_seed=eng.master_seed, workers=eng.workers,
                           mixing_overlap=resolve_mixing_overlap(cfg),
                           phase_convention=seq.phase_convention,
                           pulse_duration=seq.pulse_duration) as sim:
        return [sim.curve(kind, n, seq.tau_total, fingerprint) for n in n_values]


def _curve_name(cfg: ExperimentConfig, curve: CoherenceCurve) -> str:
    return f"{cfg.output.prefix}_{curve.kind}_npi{curve.n_pi}.csv"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------
def run_simulate(cfg: ExperimentConfig) -> List[pathlib.Path]:
    """Write one CSV per (kind, n_π) plus the run manifest; returns the paths."""
    logger.info("simulate: %s on the %s engine, fingerprint %s",
                cfg.sequence.kind, cfg.engine.engine, cfg.fingerprint[:12])
    with OutputTracker(cfg.output.directory) as out:
        # validate the schedule parameters before the expensive part
        for n in cfg.sequence.n_pi:
            build_schedule(cfg.sequence.kind, schedule_n_pi(cfg.sequence.kind, n),
                           cfg.sequence.tau_total[0], cfg.sequence.phase_convention)
        curves = simulate_curves(cfg)
        paths = []
        for curve in curves:
            p = out.path(_curve_name(cfg, curve))
            curve.to_csv(p)
            logger.info("wrote %s", p)
            paths.append(p)
        extra = {}
        if cfg.sequence.kind == "ramsey" and cfg.engine.engine == "bloch":
            quadrature = _ramsey_quadrature(cfg)
            p = out.path(f"{cfg.output.prefix}_ramsey_quadrature.csv")
            quadrature.to_csv(p)
            paths.append(p)
            extra["fringe_decay_time_s"] = _fringe_decay_or_none(curves[0], quadrature)
        paths.append(out.write_json(f"{cfg.output.prefix}.manifest.json",
                                    _manifest(cfg, "simulate", paths, **extra)))
        return paths


def _ramsey_quadrature(cfg: ExperimentConfig) -> CoherenceCurve:
    """The Ramsey curve again, same atoms, with the readout pulse shifted by π/2."""
    seq, eng = cfg.sequence, cfg.engine
    with EnsembleSimulator(trap=cfg.trap, noise=cfg.noise, n_atoms=eng.n_atoms,
                           master_seed=eng.master_seed, workers=eng.workers,
                           mixing_overlap=resolve_mixing_overlap(cfg),
                           pulse_duration=seq.pulse_duration) as sim:
        return sim.curve("ramsey", 0, seq.tau_total, cfg.fingerprint, readout_phase=math.pi / 2)


def _fringe_decay_or_none(in_phase: CoherenceCurve, quadrature: CoherenceCurve) -> Optional[float]:
    try:
        decay = fringe_decay_time(in_phase, quadrature)
    except NoCrossingError as exc:
        logger.warning("ramsey: no fringe decay time (%s)", exc)
        return None
    logger.info("ramsey fringe contrast falls to 1/e at %.4g s", decay)
    return decay


# ---------------------------------------------------------------------------
# scan-pulses
# ---------------------------------------------------------------------------
def _slope_row(cfg: ExperimentConfig, curve: CoherenceCurve) -> SlopeRow:
    a = cfg.analysis
    try:
        tau_c = coherence_time(curve, a.threshold)
    except NoCrossingError as exc:
        logger.warning("n_pi=%d: no coherence time (%s)", curve.n_pi, exc)
        return SlopeRow(curve.n_pi, None, None, None)
    window = a.window or default_window(tau_c)
    try:
        long_time = tail_slope(curve, a.tail_fraction) if a.long_time_slope == "tail" \
            else float(a.long_time_slope)
        slope, err = line_fit(curve, window)
    except FitError as exc:
        logger.warning("n_pi=%d: no intermediate slope (%s)", curve.n_pi, exc)
        return SlopeRow(curve.n_pi, tau_c, None, None)
    rate = 2.0 * (slope - long_time)
    logger.info("n_pi=%d: tau_c=%.4g s, slope=%.4g 1/s", curve.n_pi, tau_c, rate)
    return SlopeRow(curve.n_pi, tau_c, rate, 2.0 * err)


def run_scan_pulses(cfg: ExperimentConfig) -> Tuple[SlopeTable, Optional[FitResult], List[pathlib.Path]]:
    """Coherence time and intermediate slope per n_π, then the a + b/(n_π - c) fit."""
    if cfg.sequence.kind != "multi_pi":
        raise ConfigError("scan-pulses needs sequence.kind = \"multi_pi\"")
    if len(cfg.sequence.n_pi) < 2:
        logger.warning("scan-pulses with a single n_pi value: the fit will be skipped")
    with OutputTracker(cfg.output.directory) as out:
        curves = simulate_curves(cfg)
        paths = []
        for curve in curves:
            p = out.path(_curve_name(cfg, curve))
            curve.to_csv(p)
            paths.append(p)

        table = SlopeTable([_slope_row(cfg, c) for c in curves])
        summary = out.path(f"{cfg.output.prefix}_summary.csv")
        table.to_csv(summary)
        paths.append(summary)
        logger.info("wrote %s", summary)

        fit: Optional[FitResult] = None
        fit_record: Dict[str, object]
        try:
            fit = fit_limiting_rate(table.fit_rows())
            fit_record = fit.as_dict()
            logger.info("limiting rate: a=%.4g b=%.4g c=%.4g", fit.a, fit.b, fit.c)
        except FitError as exc:
            logger.warning("fit skipped: %s", exc)
            fit_record = {"skipped": str(exc)}
        paths.append(out.write_json(f"{cfg.output.prefix}.manifest.json",
                                    _manifest(cfg, "scan-pulses", paths, fit=fit_record)))
        return table, fit, paths


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------
@dataclass
class CalibrationResult:
    parameter: str
    value: float
    tau_c: float
    iterations: int
    history: List[Tuple[float, float]] = field(default_factory=list)


def _noise_with(noise: NoiseConfig, parameter: str, value: float) -> NoiseConfig:
    if parameter == "rayleigh_rate":
        return NoiseConfig(value, noise.recoil_model, noise.power_noise, noise.zeeman_noise,
                           noise.f_changing_rate, noise.mf_changing_rate)
    tau = noise.power_noise.tau_corr if noise.power_noise else _DEFAULT_POWER_TAU
    return NoiseConfig(noise.rayleigh_rate, noise.recoil_model, OUProcess(value, tau),
                       noise.zeeman_noise, noise.f_changing_rate, noise.mf_changing_rate)


def _echo_tau_c(cfg: ExperimentConfig, noise: NoiseConfig) -> float:
    """Echo coherence time; +inf when the curve never reaches the threshold."""
    curve = simulate_curves(cfg, kind="echo", noise=noise)[0]
    try:
        return coherence_time(curve, cfg.analysis.threshold)
    except NoCrossingError:
        if curve.p2[0] >= cfg.analysis.threshold:
            return 0.0
        return math.inf


def calibrate(cfg: ExperimentConfig, target_tau_c: float, parameter: str,
              lower: float, upper: float, tolerance: float = 0.05,
              max_iterations: int = 20) -> CalibrationResult:
    """
    Bisect `parameter` until the echo coherence time is within `tolerance`
    (relative) of target_tau_c.  τ_c falls monotonically with both noise
    knobs, so the bracket [lower, upper] must satisfy τ_c(lower) >= target >= τ_c(upper).
    """
    if not target_tau_c > 0:
        raise CalibrationError(f"target coherence time {target_tau_c} is unreachable")
    if parameter == "power_sigma" and not upper < 1:
        raise CalibrationError("power_sigma bracket must stay below 1")

    def response(value: float) -> float:
        tau_c = _echo_tau_c(cfg, _noise_with(cfg.noise, parameter, value))
        logger.info("calibrate: %s=%.6g -> tau_c=%.4g s", parameter, value, tau_c)
        return tau_c

    history = []
    tau_lo, tau_hi = response(lower), response(upper)
    history += [(lower, tau_lo), (upper, tau_hi)]
    for value, tau_c in history:
        if abs(tau_c - target_tau_c) < tolerance * target_tau_c:
            return CalibrationResult(parameter, value, tau_c, 0, history)
    if not tau_lo >= target_tau_c >= tau_hi:
        raise CalibrationError(
            f"target {target_tau_c:g} s not bracketed: tau_c({lower:g})={tau_lo:g} s, "
            f"tau_c({upper:g})={tau_hi:g} s"
        )

    lo, hi = lower, upper
    for iteration in range(1, max_iterations + 1):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        tau_c = response(mid)
        history.append((mid, tau_c))
        if abs(tau_c - target_tau_c) < tolerance * target_tau_c:
            return CalibrationResult(parameter, mid, tau_c, iteration, history)
        if tau_c > target_tau_c:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"calibration of {parameter} did not reach {target_tau_c:g} s within "
        f"{max_iterations} iterations (last tau_c={history[-1][1]:g} s)"
    )


def run_calibrate(cfg: ExperimentConfig, target_tau_c: Optional[float] = None,
                  parameter: Optional[str] = None) -> Tuple[CalibrationResult, List[pathlib.Path]]:
    """Calibrate one noise knob and write the calibrated config plus a manifest."""
    cal = cfg.calibration
    target = target_tau_c if target_tau_c is not None else cal.target_tau_c
    if target is None:
        raise ConfigError("calibration.target_tau_c (or --target) is required")
    parameter = parameter or cal.parameter
    with OutputTracker(cfg.output.directory) as out:
        result = calibrate(cfg, target, parameter, cal.lower, cal.upper,
                           cal.tolerance, cal.max_iterations)
        calibrated = cfg.with_noise(_noise_with(cfg.noise, parameter, result.value))
        cfg_path = out.write_json(f"{cfg.output.prefix}.calibrated.json", calibrated.to_dict())
        record = {"parameter": parameter, "value": result.value, "tau_c": result.tau_c,
                  "target_tau_c": target, "iterations": result.iterations,
                  "history": [list(h) for h in result.history]}
        manifest = out.write_json(f"{cfg.output.prefix}.manifest.json",
                                  _manifest(calibrated, "calibrate", [cfg_path],
                                            calibration=record))
        logger.info("calibrated %s = %.6g (tau_c %.4g s)", parameter, result.value, result.tau_c)
        return result, [cfg_path, manifest]


# ---------------------------------------------------------------------------
# overlap / fit
# ---------------------------------------------------------------------------
def run_overlap(eta: float, N: int, path) -> List[pathlib.Path]:
    """Write the N×N overlap matrix (rows n′, columns n) and its diagonal o_n."""
    matrix = overlap_matrix(eta, N)
    path = pathlib.Path(path)
    diag_path = path.with_name(path.stem + "_diagonal" + path.suffix)
    with OutputTracker(path.parent) as out:
        out.path(path.name)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["n_prime"] + [f"n{n}" for n in range(N)])
            for n_prime in range(N):
                writer.writerow([n_prime] + [format(v, ".17g") for v in matrix[n_prime]])
        out.path(diag_path.name)
        with open(diag_path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["n", "overlap", "norm_deficit"])
            for n, (o, d) in enumerate(zip(matrix.diagonal(), matrix.column_norm_deficit())):
                writer.writerow([n, format(o, ".17g"), format(d, ".17g")])
    logger.info("wrote %s and %s", path, diag_path)
    return [path, diag_path]


def run_fit(summary_csv, output=None) -> Tuple[FitResult, pathlib.Path]:
    """Fit a + b/(n_π - c) to a stored summary table and write the result as JSON."""
    summary_csv = pathlib.Path(summary_csv)
    table = SlopeTable.from_csv(summary_csv)
    fit = fit_limiting_rate(table.fit_rows())
    out_path = pathlib.Path(output) if output else summary_csv.with_suffix(".fit.json")
    with OutputTracker(out_path.parent) as out:
        out.write_json(out_path.name, {"source": summary_csv.name, "fit": fit.as_dict()})
    logger.info("fit: a=%.4g b=%.4g c=%.4g", fit.a, fit.b, fit.c)
    return fit, out_path
