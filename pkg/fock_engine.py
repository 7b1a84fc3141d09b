"""fock_engine.py
Exact internal ⊗ motional evolution in a truncated harmonic-oscillator basis.

The motional amplitudes of both internal states are stored in the eigenbasis
of H₁ (the |1⟩ potential, frequency ω_t).  Free evolution of the |2⟩ component
goes through the H₂ eigenbasis (frequency (1+η)ω_t) with the overlap matrix,
so the vibrational mixing caused by every pulse is captured exactly; pulses
themselves only rotate the internal state.

Design choices
--------------
* **Batched columns**: a JointState may hold several independent initial
  levels as matrix columns; a thermal average propagates all of them at once.
* **Cached propagators**: the H₂ propagator for a given dt is built once per
  FockPropagator, since multiple-π sequences reuse two interval lengths.
* **Two transverse dimensions** through the interference amplitude G(n):
  P₂ = ½(1 - Re G) in 1D; in 2D the motional overlaps G/G_ref multiply,
  P₂ = ½(1 - Re G_x G_y / G_ref).  Thermal ensembles use the level-averaged Ḡ.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from analysis import CoherenceCurve
from errors import BasisTooSmallError, NumericalError
from sequence import Pulse, PulseSchedule, build_schedule
from trap import OverlapMatrix, TrapModel, VibrationalLevel, overlap_matrix, thermal_probabilities

logger = logging.getLogger(__name__)

__all__ = [
    "JointState", "FockPropagator", "free_evolve", "apply_pulse_joint",
    "run_sequence_fock", "interference_amplitude", "thermal_levels",
    "simulate_curve_fock", "revival_scan", "reference_amplitude", "pulse_overlap",
    "eta_for_pulse_loss", "THERMAL", "NORM_TOL",
]

THERMAL = "thermal"
TAIL_TOL = 1e-6
THERMAL_TAIL = 1e-8
NORM_TOL = 1e-10
_CACHE_LIMIT = 64

InitialState = Union[VibrationalLevel, str, None]


@dataclass
class JointState:
    """Motional amplitude vectors (or matrices of independent columns) of |1⟩ and |2⟩."""

    a1: np.ndarray
    a2: np.ndarray
    basis_frequency: str = "H1"

    def __post_init__(self) -> None:
        self.a1 = np.asarray(self.a1, dtype=complex)
        self.a2 = np.asarray(self.a2, dtype=complex)
        if self.a1.shape != self.a2.shape:
            raise ValueError(f"a1 {self.a1.shape} and a2 {self.a2.shape} differ in shape")
        if self.a1.ndim not in (1, 2):
            raise ValueError("amplitudes must be a vector or a matrix of columns")
        if self.basis_frequency != "H1":
            raise ValueError("amplitudes are always expressed in the H1 basis")

    @classmethod
    def from_levels(cls, levels: Sequence[int], N: int) -> "JointState":
        """Internal |1⟩ with motional level levels[k] in column k."""
        levels = np.asarray(levels, dtype=int)
        if levels.size and (levels.min() < 0 or levels.max() >= N):
            raise BasisTooSmallError(f"initial levels up to {levels.max()} do not fit basis N={N}")
        a1 = np.zeros((N, levels.size), dtype=complex)
        a1[levels, np.arange(levels.size)] = 1.0
        return cls(a1, np.zeros_like(a1))

    @property
    def dimension(self) -> int:
        return self.a1.shape[0]

    def internal_populations(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.sum(np.abs(self.a1) ** 2, axis=0),
                np.sum(np.abs(self.a2) ** 2, axis=0))

    def norm(self) -> np.ndarray:
        p1, p2 = self.internal_populations()
        return p1 + p2

    def tail_weight(self) -> np.ndarray:
        """Σ_{n > 0.9N} (|a1|² + |a2|²)."""
        start = int(math.floor(0.9 * self.dimension)) + 1
        return (np.sum(np.abs(self.a1[start:]) ** 2, axis=0)
                + np.sum(np.abs(self.a2[start:]) ** 2, axis=0))

    def check(self) -> None:
        tail = float(np.max(self.tail_weight()))
        if tail > TAIL_TOL:
            raise BasisTooSmallError(
                f"motional tail weight {tail:.2e} beyond 0.9N exceeds {TAIL_TOL:g} (N={self.dimension})"
            )
        drift = float(np.max(np.abs(self.norm() - 1.0)))
        if drift > NORM_TOL:
            raise NumericalError(f"joint state norm drifted by {drift:.2e}")


class FockPropagator:
    """Free-evolution operators of one trap in an N-state basis."""

    def __init__(self, trap: TrapModel, N: int, overlap: Optional[OverlapMatrix] = None):
        if overlap is None:
            overlap = overlap_matrix(trap.differential_factor, N, padding=0)
        if overlap.dimension != N:
            raise ValueError(f"overlap dimension {overlap.dimension} != N={N}")
        self.trap = trap
        self.N = N
        self.overlap = overlap
        self._energy = np.arange(N) + 0.5       # in units of ħω_t
        self._cache: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}

    def operators(self, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        """(phases of a1, H1-basis matrix for a2) over dt."""
        hit = self._cache.get(dt)
        if hit is not None:
            return hit
        omega = self.trap.omega_t
        eta = self.overlap.eta
        phase1 = np.exp(-1j * omega * self._energy * dt)
        phase2 = np.exp(-1j * (1.0 + eta) * omega * self._energy * dt)
        o = self.overlap.entries
        u2 = o.T @ (phase2[:, None] * o)
        if len(self._cache) >= _CACHE_LIMIT:
            self._cache.clear()
        self._cache[dt] = (phase1, u2)
        return phase1, u2

    def free_evolve(self, state: JointState, dt: float) -> JointState:
        if dt < 0:
            raise ValueError(f"dt must be >= 0, got {dt}")
        if dt == 0:
            return state
        phase1, u2 = self.operators(dt)
        a1 = phase1[:, None] * state.a1 if state.a1.ndim == 2 else phase1 * state.a1
        out = JointState(a1, u2 @ state.a2)
        out.check()
        return out


def free_evolve(state: JointState, dt: float, trap: TrapModel,
                overlap: OverlapMatrix) -> JointState:
    """Evolve both internal components freely for dt (rotating frame)."""
    return FockPropagator(trap, overlap.dimension, overlap).free_evolve(state, dt)


def apply_pulse_joint(state: JointState, pulse: Pulse) -> JointState:
    """The same 2×2 internal rotation on every motional component."""
    if pulse.duration > 0:
        raise ValueError("the Fock engine applies ideal (instantaneous) pulses only")
    u = pulse.unitary()
    return JointState(u[0, 0] * state.a1 + u[0, 1] * state.a2,
                      u[1, 0] * state.a1 + u[1, 1] * state.a2)


def _final_state(propagator: FockPropagator, schedule: PulseSchedule,
                 levels: Sequence[int]) -> JointState:
    state = JointState.from_levels(levels, propagator.N)
    state.check()
    t = schedule.pulses[0].start_time
    for pulse in schedule.pulses:
        state = propagator.free_evolve(state, pulse.start_time - t)
        state = apply_pulse_joint(state, pulse)
        t = pulse.end_time
    return state


def _closing_shifted(schedule: PulseSchedule, shift: float) -> PulseSchedule:
    last = schedule.pulses[-1]
    return PulseSchedule(schedule.kind,
                         schedule.pulses[:-1] + (replace(last, phase=last.phase + shift),),
                         schedule.total_time)


def _amplitude_from(p2: np.ndarray, p2_quad: np.ndarray) -> np.ndarray:
    return (1.0 - 2.0 * p2) + 1j * (2.0 * p2_quad - 1.0)


def reference_amplitude(schedule: PulseSchedule) -> complex:
    """G of the bare internal sequence (no motion, no detuning); |G_ref| = 1."""
    p2 = abs(schedule.apply()[1]) ** 2
    p2_quad = abs(_closing_shifted(schedule, math.pi / 2).apply()[1]) ** 2
    return complex(_amplitude_from(np.float64(p2), np.float64(p2_quad)))


def interference_amplitude(trap: TrapModel, schedule: PulseSchedule, N: int,
                           levels: Sequence[int],
                           propagator: Optional[FockPropagator] = None) -> np.ndarray:
    """
    Complex interference amplitude G per initial 1D level,
    G = (1 - 2P₂) + i(2P₂(closing phase + π/2) - 1), so that P₂ = ½(1 - Re G).

    G is G_ref times the motional overlap of the two interferometer arms,
    and only the overlap factorizes over transverse dimensions.
    """
    if schedule.kind == "pi_pi":
        raise ValueError("a pi_pi schedule has no interference amplitude")
    prop = propagator or FockPropagator(trap, N)
    _, p2 = _final_state(prop, schedule, levels).internal_populations()
    _, p2_quad = _final_state(prop, _closing_shifted(schedule, math.pi / 2),
                              levels).internal_populations()
    return _amplitude_from(p2, p2_quad)


def thermal_levels(trap: TrapModel, tail: float = THERMAL_TAIL) -> Tuple[np.ndarray, np.ndarray]:
    """1D levels carrying all but `tail` of the thermal weight, with normalized weights."""
    p = thermal_probabilities(trap)
    n_max = int(np.searchsorted(np.cumsum(p), 1.0 - tail)) + 1
    n_max = min(n_max, p.size)
    weights = p[:n_max] / p[:n_max].sum()
    return np.arange(n_max), weights


def run_sequence_fock(trap: TrapModel, schedule: PulseSchedule, N: int,
                      initial_level: InitialState = THERMAL,
                      propagator: Optional[FockPropagator] = None) -> float:
    """
    Detected P₂ (total internal-|2⟩ population) after `schedule`.

    `initial_level` is a VibrationalLevel (one quantum number per transverse
    dimension) or "thermal" for the incoherent Boltzmann mixture over
    trap.transverse_dims dimensions.
    """
    prop = propagator or FockPropagator(trap, N)
    if initial_level is None or initial_level == THERMAL:
        levels, weights = thermal_levels(trap)
        logger.debug("thermal Fock average over %d levels in basis N=%d", levels.size, N)
        dims = trap.transverse_dims
    elif isinstance(initial_level, VibrationalLevel):
        levels = np.array(initial_level.quantum_numbers)
        weights = None
        dims = len(levels)
    else:
        raise ValueError(f"initial_level must be a VibrationalLevel or {THERMAL!r}")

    if levels.max() >= 0.9 * N:
        raise BasisTooSmallError(
            f"initial level {levels.max()} lies beyond 0.9N for N={N}; enlarge the basis"
        )

    if schedule.kind == "pi_pi" or dims == 1:
        uniq = np.unique(levels)
        _, p2 = _final_state(prop, schedule, uniq).internal_populations()
        if weights is not None:
            return float(np.dot(weights, p2))
        return float(p2[np.searchsorted(uniq, levels)].mean())

    g_ref = reference_amplitude(schedule)
    if weights is not None:
        g_mean = complex(np.dot(weights, interference_amplitude(trap, schedule, N, levels, prop)))
        return 0.5 * (1.0 - (g_mean * g_mean / g_ref).real)
    g = interference_amplitude(trap, schedule, N, levels, prop)
    return 0.5 * (1.0 - (np.prod(g) / g_ref ** (len(g) - 1)).real)


def simulate_curve_fock(trap: TrapModel, kind: str, n_pi: int, tau_grid: Sequence[float],
                        N: int, initial_level: InitialState = THERMAL, *,
                        phase_convention: str = "constant",
                        fingerprint: str = "") -> CoherenceCurve:
    """Noise-free P₂(τ_Total) from the Fock engine (stderr is zero)."""
    prop = FockPropagator(trap, N)
    taus = np.asarray(tau_grid, dtype=float)
    p2 = np.array([
        run_sequence_fock(trap, build_schedule(kind, n_pi, float(tau), phase_convention),
                          N, initial_level, prop)
        for tau in taus
    ])
    logger.info("fock %s n_pi=%d: %d points in basis N=%d", kind, n_pi, taus.size, N)
    return CoherenceCurve(taus, np.clip(p2, 0.0, None), np.zeros(taus.size), kind, n_pi,
                          fingerprint)


def revival_scan(trap: TrapModel, n_pi: int, spacings: Sequence[float], N: int,
                 initial_level: InitialState = THERMAL, *,
                 phase_convention: str = "constant") -> CoherenceCurve:
    """Multiple-π P₂ versus π-pulse spacing τ, reported against τ_Total = n_π·τ."""
    tau_grid = n_pi * np.asarray(spacings, dtype=float)
    return simulate_curve_fock(trap, "multi_pi", n_pi, tau_grid, N, initial_level,
                               phase_convention=phase_convention)


def pulse_overlap(trap: TrapModel, tail: float = THERMAL_TAIL) -> float:
    """
    Effective per-pulse survival amplitude o of the thermal ensemble.

    Each dimension keeps Σ_n p_n·o_n² of its population in the same
    vibrational level per pulse, with o_n the diagonal of the overlap
    matrix at η = trap.differential_factor; dimensions multiply and
    o is the square root of the total.
    """
    levels, weights = thermal_levels(trap, tail)
    diag = overlap_matrix(trap.differential_factor, levels.size).diagonal()
    survival = float(np.dot(weights, diag ** 2)) ** trap.transverse_dims
    return math.sqrt(survival)


def eta_for_pulse_loss(trap: TrapModel, pulse_loss: float,
                       bracket: Tuple[float, float] = (1e-6, 0.2)) -> float:
    """η_eff at which a single pulse moves `pulse_loss` of the population out of its level."""
    if not 0.0 < pulse_loss < 1.0:
        raise ValueError(f"pulse_loss must lie in (0, 1), got {pulse_loss!r}")

    def excess(eta: float) -> float:
        overlap = pulse_overlap(trap.with_updates(differential_factor=eta))
        return (1.0 - overlap ** 2) - pulse_loss

    lo, hi = bracket
    if excess(lo) > 0 or excess(hi) < 0:
        raise NumericalError(
            f"pulse loss {pulse_loss:g} is not reachable for η in [{lo:g}, {hi:g}]"
        )
    eta = brentq(excess, lo, hi, xtol=1e-10)
    logger.info("η_eff=%.5f gives per-pulse loss %.4f at T=%.3g K", eta, pulse_loss,
                trap.temperature)
    return float(eta)
