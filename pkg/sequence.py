# sequence.py
"""
Microwave pulse schedules and the two-level rotation algebra.

A Pulse is a rotation of the internal amplitudes (c₁, c₂) by `area` about an
equatorial axis at azimuth `phase`.  A PulseSchedule is the time-ordered list
of pulses of one Ramsey / echo / multiple-π / π-π measurement.

Rotating-frame convention used everywhere in the package: free evolution with
detuning δ multiplies c₂ by exp(-iδt) and leaves c₁ alone, so the generator is
H = [[0, Ω/2·e^{-iφ}], [Ω/2·e^{iφ}, δ]].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

__all__ = [
    "Pulse", "PulseSchedule", "SCHEDULE_KINDS", "PHASE_CONVENTIONS",
    "DEFAULT_RABI_FREQUENCY", "build_schedule", "apply_rotation",
    "rotation_matrix", "free_evolution",
]

DEFAULT_RABI_FREQUENCY = 2 * math.pi * 5e3      # rad/s, free-space MW Rabi frequency
SCHEDULE_KINDS = ("ramsey", "echo", "multi_pi", "pi_pi")
PHASE_CONVENTIONS = ("constant", "alternating")

Amplitudes = Tuple[complex, complex]


def rotation_matrix(area: float, phase: float = 0.0, detuning: float = 0.0,
                    duration: float = 0.0,
                    rabi_frequency: float = DEFAULT_RABI_FREQUENCY) -> np.ndarray:
    """
    2×2 propagator of a pulse.

    duration == 0: ideal rotation by `area`, detuning ignored.
    duration > 0: exact detuned Rabi evolution for `duration`, generalized
    Rabi frequency W = sqrt(Ω² + δ²).
    """
    if duration <= 0:
        c = math.cos(area / 2)
        s = math.sin(area / 2)
        return np.array([
            [c, -1j * s * np.exp(-1j * phase)],
            [-1j * s * np.exp(1j * phase), c],
        ])
    omega = rabi_frequency
    w = math.hypot(omega, detuning)
    c = math.cos(w * duration / 2)
    s = math.sin(w * duration / 2)
    global_phase = np.exp(-0.5j * detuning * duration)
    return global_phase * np.array([
        [c + 1j * s * detuning / w, -1j * s * omega / w * np.exp(-1j * phase)],
        [-1j * s * omega / w * np.exp(1j * phase), c - 1j * s * detuning / w],
    ])


def free_evolution(amplitudes: Amplitudes, accumulated_phase: float) -> Amplitudes:
    """Advance the relative phase of c₂ by ∫δ dt (radians)."""
    c1, c2 = amplitudes
    return c1, c2 * complex(math.cos(accumulated_phase), -math.sin(accumulated_phase))


@dataclass(frozen=True)
class Pulse:
    start_time: float
    area: float
    phase: float = 0.0
    duration: float = 0.0
    rabi_frequency: float = DEFAULT_RABI_FREQUENCY

    def __post_init__(self) -> None:
        if self.start_time < 0:
            raise ValueError(f"pulse start_time must be >= 0, got {self.start_time}")
        if not self.area > 0:
            raise ValueError(f"pulse area must be > 0, got {self.area}")
        if self.duration < 0:
            raise ValueError(f"pulse duration must be >= 0, got {self.duration}")
        if self.duration > 0 and not math.isclose(
                self.area, self.rabi_frequency * self.duration, rel_tol=1e-9):
            raise ValueError(
                f"finite pulse needs area = rabi_frequency × duration "
                f"({self.area} != {self.rabi_frequency * self.duration})"
            )

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    @property
    def is_pi(self) -> bool:
        return math.isclose(self.area, math.pi, rel_tol=1e-12)

    def unitary(self, detuning: float = 0.0) -> np.ndarray:
        return rotation_matrix(self.area, self.phase, detuning,
                               self.duration, self.rabi_frequency)

    def apply(self, amplitudes: Amplitudes, detuning: float = 0.0) -> Amplitudes:
        c1, c2 = amplitudes
        u = self.unitary(detuning)
        return (u[0, 0] * c1 + u[0, 1] * c2, u[1, 0] * c1 + u[1, 1] * c2)

    def __str__(self) -> str:
        label = _area_label(self.area)
        return f"({label} @ {self.start_time * 1e3:.4f} ms, phase {self.phase:.4f})"


def apply_rotation(state_amplitudes: Amplitudes, pulse: Pulse,
                   detuning: float = 0.0) -> Amplitudes:
    """Rotate (c₁, c₂) by `pulse`; only finite pulses feel `detuning`."""
    return pulse.apply(state_amplitudes, detuning)


def _area_label(area: float) -> str:
    for num, text in ((0.5, "π/2"), (1.0, "π"), (1.5, "3π/2")):
        if math.isclose(area, num * math.pi, rel_tol=1e-12):
            return text
    return f"{area:.4f} rad"


@dataclass(frozen=True)
class PulseSchedule:
    kind: str
    pulses: Tuple[Pulse, ...] = field(default_factory=tuple)
    total_time: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pulses", tuple(self.pulses))
        for prev, nxt in zip(self.pulses, self.pulses[1:]):
            if not nxt.start_time > prev.start_time:
                raise ValueError("pulses must be strictly time-ordered")
            if nxt.start_time < prev.end_time - 1e-15:
                raise ValueError(
                    f"pulses overlap: {prev} ends after {nxt} starts"
                )

    # utility helpers ---------------------------------------------------
    @property
    def n_pi(self) -> int:
        return sum(1 for p in self.pulses if p.is_pi)

    @property
    def pi_spacing(self) -> float:
        """τ: time between successive π pulses (τ_Total / n_π for multi_pi)."""
        if self.n_pi == 0:
            return self.total_time
        return self.total_time / self.n_pi

    def free_intervals(self) -> List[Tuple[float, float]]:
        """(start, end) of every dark period between consecutive pulses."""
        return [(a.end_time, b.start_time) for a, b in zip(self.pulses, self.pulses[1:])]

    def apply(self, amplitudes: Amplitudes = (1.0, 0.0),
              detuning: float = 0.0) -> Amplitudes:
        """Run the schedule on one atom with a static detuning."""
        state = amplitudes
        for idx, pulse in enumerate(self.pulses):
            if idx:
                state = free_evolution(
                    state, detuning * (pulse.start_time - self.pulses[idx - 1].end_time)
                )
            state = pulse.apply(state, detuning)
        return state

    def __str__(self) -> str:
        return " | ".join(str(p) for p in self.pulses)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------
def _pi_phase(index: int, base_phase: float, phase_convention: str) -> float:
    if phase_convention == "alternating" and index % 2 == 1:
        return base_phase + math.pi / 2
    return base_phase


def _timed_pulses(spec: Sequence[Tuple[float, float, float]], pulse_duration_per_pi: float,
                  rabi_frequency: float) -> List[Pulse]:
    """
    Turn (nominal_time, area, phase) triples into Pulses.

    Finite pulses are centered on their nominal times, with the whole train
    shifted so the first pulse starts at t = 0.
    """
    durations = [area / math.pi * pulse_duration_per_pi for _, area, _ in spec]
    shift = durations[0] / 2
    pulses = []
    for (t_nom, area, phase), dur in zip(spec, durations):
        start = max(0.0, t_nom - dur / 2 + shift)
        if dur > 0:
            pulses.append(Pulse(start, area, phase, dur, area / dur))
        else:
            pulses.append(Pulse(start, area, phase, 0.0, rabi_frequency))
    return pulses


def _closing_area(body: List[Tuple[float, float, float]], t_close: float,
                  base_phase: float) -> float:
    """π/2 or 3π/2, whichever returns an ideal resonant sequence to |1⟩."""
    best_area, best_p2 = math.pi / 2, 2.0
    for area in (math.pi / 2, 3 * math.pi / 2):
        state: Amplitudes = (1.0, 0.0)
        for _, a, ph in body + [(t_close, area, base_phase)]:
            state = Pulse(0.0, a, ph).apply(state)
        p2 = abs(state[1]) ** 2
        if p2 < best_p2 - 1e-12:
            best_area, best_p2 = area, p2
    return best_area


def build_schedule(kind: str, n_pi: int, tau_total: float,
                   phase_convention: str = "constant",
                   pulse_duration: float = 0.0,
                   rabi_frequency: float = DEFAULT_RABI_FREQUENCY,
                   base_phase: float = 0.0,
                   readout_phase: float = 0.0) -> PulseSchedule:
    """
    Build a Ramsey, echo, multiple-π or π-π schedule spanning tau_total.

    ramsey   : π/2 @ 0, π/2 @ τ_Total
    echo     : π/2 @ 0, π @ τ_Total/2, π/2 @ τ_Total
    multi_pi : π/2 @ 0, π @ τ/2 + kτ (k < n_pi), closing @ n_pi·τ with τ = τ_Total/n_pi;
               the closing area (3π/2 for even n_pi at constant phase, π/2 for odd)
               makes a coherent ensemble return P₂ = 0
    pi_pi    : π @ 0, π @ τ_Total (leakage measurement, no interference)

    `pulse_duration` is the duration of a π pulse; 0 gives ideal pulses.
    With finite pulses the Rabi frequency is π / pulse_duration.
    `readout_phase` is added to the phase of the final pulse only; a Ramsey
    pair read out at 0 and π/2 gives both fringe quadratures.
    """
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if phase_convention not in PHASE_CONVENTIONS:
        raise ValueError(
            f"unknown phase convention {phase_convention!r}; expected one of {PHASE_CONVENTIONS}"
        )
    if not tau_total > 0:
        raise ValueError(f"tau_total must be > 0, got {tau_total}")
    if pulse_duration < 0:
        raise ValueError(f"pulse_duration must be >= 0, got {pulse_duration}")

    half_pi, pi = math.pi / 2, math.pi
    if kind == "ramsey":
        spec = [(0.0, half_pi, base_phase), (tau_total, half_pi, base_phase)]
    elif kind == "echo":
        spec = [(0.0, half_pi, base_phase),
                (tau_total / 2, pi, _pi_phase(0, base_phase, phase_convention)),
                (tau_total, half_pi, base_phase)]
    elif kind == "pi_pi":
        spec = [(0.0, pi, base_phase), (tau_total, pi, base_phase)]
    else:
        if n_pi < 1:
            raise ValueError(f"multi_pi needs n_pi >= 1, got {n_pi}")
        tau = tau_total / n_pi
        body = [(0.0, half_pi, base_phase)]
        body += [(tau / 2 + k * tau, pi, _pi_phase(k, base_phase, phase_convention))
                 for k in range(n_pi)]
        spec = body + [(tau_total, _closing_area(body, tau_total, base_phase), base_phase)]

    if readout_phase:
        t_last, area_last, phase_last = spec[-1]
        spec[-1] = (t_last, area_last, phase_last + readout_phase)
    pulses = _timed_pulses(spec, pulse_duration, rabi_frequency)
    return PulseSchedule(kind, tuple(pulses), tau_total)
