# bloch_engine.py
"""
Monte Carlo ensemble of independent two-level atoms.

Each atom starts in |1⟩ in a thermally drawn vibrational level, receives one
NoiseRealization, and is carried through the PulseSchedule event by event:
free precession between pulses is integrated exactly (the detuning is a
piecewise-constant level shift times a piecewise-linear power factor plus a
piecewise-linear Zeeman term), pulses rotate the amplitudes, and a leakage
event parks population in the m_F ≠ 0 reservoirs.

The detected signal is the F = 3 population |c₂|² + leak_F3.
"""

from __future__ import annotations

import copy
import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from analysis import CoherenceCurve
from errors import NumericalError
from noise import LeakChannel, NoiseConfig, NoiseRealization, sample_realization
from rng import atom_stream, derive_seed
from sequence import PulseSchedule, build_schedule
from trap import TrapModel, VibrationalLevel, detuning_of_quanta, sample_thermal_level

logger = logging.getLogger(__name__)

__all__ = [
    "AtomState", "AtomOutcome", "EnsembleResult", "EnsembleSimulator",
    "evolve_atom", "simulate_atom", "simulate_ensemble", "simulate_curve",
    "DEFAULT_N_ATOMS",
]

DEFAULT_N_ATOMS = 10_000
_CONSERVATION_TOL = 1e-10
_CHUNKS_PER_WORKER = 4


@dataclass
class AtomState:
    """Internal amplitudes of |1⟩ = |F=2,m_F=0⟩, |2⟩ = |F=3,m_F=0⟩ plus leaked populations."""

    c1: complex = 1.0 + 0j
    c2: complex = 0j
    leak_F2: float = 0.0
    leak_F3: float = 0.0
    current_level: Optional[VibrationalLevel] = None

    @property
    def coherent_population(self) -> float:
        return abs(self.c1) ** 2 + abs(self.c2) ** 2

    @property
    def total_population(self) -> float:
        return self.coherent_population + self.leak_F2 + self.leak_F3

    @property
    def detected_F3(self) -> float:
        return abs(self.c2) ** 2 + self.leak_F3

    def precess(self, phase: float) -> None:
        """c₂ ← c₂·e^{-i·phase}."""
        self.c2 *= complex(math.cos(phase), -math.sin(phase))

    def rotate(self, pulse, detuning: float = 0.0) -> None:
        self.c1, self.c2 = pulse.apply((self.c1, self.c2), detuning)

    def leak(self, channel: LeakChannel) -> None:
        """
        F-changing: |1⟩ (F=2) population ends in F=3 and |2⟩ in F=2.
        m_F-changing: population stays in its own hyperfine manifold.
        """
        p1, p2 = abs(self.c1) ** 2, abs(self.c2) ** 2
        if channel is LeakChannel.F_CHANGING:
            self.leak_F3 += p1
            self.leak_F2 += p2
        else:
            self.leak_F2 += p1
            self.leak_F3 += p2
        self.c1 = 0j
        self.c2 = 0j

    def check_conservation(self) -> None:
        total = self.total_population
        if abs(total - 1.0) > _CONSERVATION_TOL:
            raise NumericalError(f"atom population drifted to {total!r}")
        if min(self.leak_F2, self.leak_F3) < 0:
            raise NumericalError("negative leaked population")


@dataclass(frozen=True)
class AtomOutcome:
    """Signal and diagnostics of one simulated atom."""

    signal: float
    scatter_count: int
    leak_channel: Optional[LeakChannel]
    initial_level: VibrationalLevel


# ---------------------------------------------------------------------------
# Single atom
# ---------------------------------------------------------------------------
class _PhaseIntegrator:
    """∫δ_eff dt for one realization, δ_eff(t) = δ(level(t))·power(t) + zeeman(t)."""

    def __init__(self, trap: TrapModel, initial: VibrationalLevel, realization: NoiseRealization):
        self.realization = realization
        self.jump_times = realization.scatter_times
        totals = [initial.total_quanta] + realization.scatter_quanta.sum(axis=1).tolist()
        self.level_detunings = np.atleast_1d(detuning_of_quanta(trap, np.array(totals)))

    def _segment_index(self, t: float) -> int:
        return int(np.searchsorted(self.jump_times, t, side="right"))

    def detuning(self, t: float) -> float:
        r = self.realization
        delta = self.level_detunings[self._segment_index(t)]
        return float(delta * r.power_factor(t) + r.zeeman_shift(t))

    def phase(self, a: float, b: float) -> float:
        r = self.realization
        if b <= a:
            return 0.0
        inside = self.jump_times[(self.jump_times > a) & (self.jump_times < b)]
        edges = [a, *inside.tolist(), b]
        total = 0.0
        for lo, hi in zip(edges, edges[1:]):
            total += self.level_detunings[self._segment_index(lo)] * r.power_integral(lo, hi)
        return total + r.zeeman_integral(a, b)


def _mixing_factor(schedule: PulseSchedule, mixing_overlap: float) -> float:
    if mixing_overlap >= 1.0 or schedule.kind == "pi_pi":
        return 1.0
    return mixing_overlap ** (2 * (schedule.n_pi + 1))


def simulate_atom(trap: TrapModel, schedule: PulseSchedule, noise: NoiseConfig,
                  rng: np.random.Generator, mixing_overlap: float = 1.0) -> AtomOutcome:
    """
    Run one atom through `schedule` and return its detected F = 3 population
    together with its diagnostics.

    `mixing_overlap` o < 1 reduces the interference contrast of the coherent
    part by o^{2(n_π+1)}, the fraction of motional amplitude that survives
    the pulses' vibrational mixing.
    """
    if not 0.0 < mixing_overlap <= 1.0:
        raise ValueError(f"mixing_overlap must lie in (0, 1], got {mixing_overlap}")
    initial = sample_thermal_level(trap, rng)
    pulses = schedule.pulses
    duration = max(pulses[-1].end_time, schedule.total_time)
    realization = sample_realization(noise, trap, duration, rng, initial_level=initial)
    integrator = _PhaseIntegrator(trap, initial, realization)
    pending = realization.leakage

    state = AtomState(current_level=initial)
    t = pulses[0].start_time
    for pulse in pulses:
        if pending is not None and pending.time < pulse.start_time:
            state.precess(integrator.phase(t, pending.time))
            t = pending.time
            state.leak(pending.channel)
            pending = None
        state.precess(integrator.phase(t, pulse.start_time))
        detuning = integrator.detuning(pulse.start_time + pulse.duration / 2) if pulse.duration else 0.0
        state.rotate(pulse, detuning)
        t = pulse.end_time
        if pending is not None and pending.time <= pulse.end_time:
            state.leak(pending.channel)
            pending = None

    if realization.scatter_count:
        state.current_level = VibrationalLevel(tuple(realization.scatter_quanta[-1]))
    state.check_conservation()

    signal = state.detected_F3
    m = _mixing_factor(schedule, mixing_overlap)
    if m < 1.0:
        half = 0.5 * state.coherent_population
        signal = state.leak_F3 + half - (half - abs(state.c2) ** 2) * m

    leak_channel = realization.leakage.channel if realization.leakage else None
    return AtomOutcome(min(max(signal, 0.0), 1.0), realization.scatter_count, leak_channel, initial)


def evolve_atom(trap: TrapModel, schedule: PulseSchedule, noise: NoiseConfig,
                rng: np.random.Generator, mixing_overlap: float = 1.0) -> float:
    """Detected F = 3 population of one atom: |c₂|² + leak_F3."""
    return simulate_atom(trap, schedule, noise, rng, mixing_overlap).signal


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EnsembleResult:
    p2_mean: float
    p2_stderr: float
    n_atoms: int
    mean_scatter_count: float = 0.0
    leaked_fraction: float = 0.0
    per_atom: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p2_mean <= 1.0:
            raise ValueError(f"p2_mean must lie in [0, 1], got {self.p2_mean}")
        if self.p2_stderr < 0:
            raise ValueError(f"p2_stderr must be >= 0, got {self.p2_stderr}")


def _run_chunk(args) -> Tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    trap, schedule, noise, seed, start, stop, mixing_overlap = args
    signals = np.empty(stop - start)
    scatters = np.empty(stop - start, dtype=np.int64)
    leaked = np.zeros(stop - start, dtype=bool)
    for k, idx in enumerate(range(start, stop)):
        outcome = simulate_atom(trap, schedule, noise, atom_stream(seed, idx), mixing_overlap)
        signals[k] = outcome.signal
        scatters[k] = outcome.scatter_count
        leaked[k] = outcome.leak_channel is not None
    return start, signals, scatters, leaked


def _chunk_bounds(n_atoms: int, n_chunks: int) -> List[Tuple[int, int]]:
    edges = np.linspace(0, n_atoms, min(n_chunks, n_atoms) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges, edges[1:]) if b > a]


def simulate_ensemble(trap: TrapModel, schedule: PulseSchedule, noise: NoiseConfig,
                      n_atoms: int, master_seed: int, *, workers: int = 1,
                      mixing_overlap: float = 1.0, keep_per_atom: bool = False,
                      executor: Optional[Executor] = None) -> EnsembleResult:
    """
    Average evolve_atom over n_atoms atoms with streams atom_stream(master_seed, i).

    Atoms are split into contiguous chunks; with workers > 1 (or an explicit
    executor) the chunks run on a process pool. Per-atom values land in an
    index-ordered array before the compensated sum, so the result does not
    depend on the number of workers.
    """
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms}")
    bounds = _chunk_bounds(n_atoms, max(1, workers) * _CHUNKS_PER_WORKER)
    jobs = [(trap, schedule, noise, master_seed, a, b, mixing_overlap) for a, b in bounds]

    signals = np.empty(n_atoms)
    scatters = np.empty(n_atoms, dtype=np.int64)
    leaked = np.zeros(n_atoms, dtype=bool)
    if executor is None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    elif executor is not None:
        results = list(executor.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(job) for job in jobs]
    for start, sig, sc, lk in results:
        logger.debug("chunk at atom %d done (%d atoms)", start, sig.size)
        signals[start:start + sig.size] = sig
        scatters[start:start + sc.size] = sc
        leaked[start:start + lk.size] = lk

    mean = math.fsum(signals) / n_atoms
    stderr = float(np.std(signals, ddof=1) / math.sqrt(n_atoms)) if n_atoms > 1 else 0.0
    return EnsembleResult(
        p2_mean=min(max(mean, 0.0), 1.0),
        p2_stderr=stderr,
        n_atoms=n_atoms,
        mean_scatter_count=math.fsum(scatters) / n_atoms,
        leaked_fraction=float(np.count_nonzero(leaked)) / n_atoms,
        per_atom=signals if keep_per_atom else None,
    )


def simulate_curve(trap: TrapModel, kind: str, n_pi: int, tau_grid: Sequence[float],
                   noise: NoiseConfig, n_atoms: int, master_seed: int, *,
                   phase_convention: str = "constant", pulse_duration: float = 0.0,
                   workers: int = 1, mixing_overlap: float = 1.0,
                   fingerprint: str = "", executor: Optional[Executor] = None,
                   readout_phase: float = 0.0) -> CoherenceCurve:
    """
    P₂(τ_Total) over `tau_grid`; point i is seeded with
    derive_seed(master_seed, kind, n_pi, i).
    """
    taus = np.asarray(tau_grid, dtype=float)
    p2 = np.empty(taus.size)
    err = np.empty(taus.size)
    seeds = []
    for i, tau in enumerate(taus):
        schedule = build_schedule(kind, n_pi, float(tau), phase_convention, pulse_duration,
                                  readout_phase=readout_phase)
        seed = derive_seed(master_seed, kind, n_pi, i)
        res = simulate_ensemble(trap, schedule, noise, n_atoms, seed, workers=workers,
                                mixing_overlap=mixing_overlap, executor=executor)
        p2[i], err[i] = res.p2_mean, res.p2_stderr
        seeds.append(seed)
        logger.debug("%s n_pi=%d tau=%.4g s: P2=%.5f ± %.5f", kind, n_pi, tau, p2[i], err[i])
    logger.info("%s n_pi=%d: %d points simulated", kind, n_pi, taus.size)
    return CoherenceCurve(taus, p2, err, kind, n_pi, fingerprint, n_atoms, tuple(seeds))


class EnsembleSimulator:
    """
    Bundles the ensemble settings of one experiment so scans only pass
    the schedule-specific arguments.  Usable as a context manager that
    owns a process pool when workers > 1.
    """

    def __init__(
        self,
        *,
        trap: TrapModel,
        noise: NoiseConfig,
        n_atoms: int = DEFAULT_N_ATOMS,
        master_seed: int,
        workers: int = 1,
        mixing_overlap: float = 1.0,
        phase_convention: str = "constant",
        pulse_duration: float = 0.0,
    ):
        self.trap = trap
        self.noise = noise
        self.n_atoms = n_atoms
        self.master_seed = master_seed
        self.workers = workers
        self.mixing_overlap = mixing_overlap
        self.phase_convention = phase_convention
        self.pulse_duration = pulse_duration
        self._pool: Optional[ProcessPoolExecutor] = None

    def __enter__(self) -> "EnsembleSimulator":
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def with_noise(self, noise: NoiseConfig) -> "EnsembleSimulator":
        clone = copy.copy(self)
        clone.noise = noise
        return clone

    def run(self, schedule: PulseSchedule, seed: int) -> EnsembleResult:
        return simulate_ensemble(self.trap, schedule, self.noise, self.n_atoms, seed,
                                 workers=self.workers, mixing_overlap=self.mixing_overlap,
                                 executor=self._pool)

    def curve(self, kind: str, n_pi: int, tau_grid: Sequence[float],
              fingerprint: str = "", readout_phase: float = 0.0) -> CoherenceCurve:
        return simulate_curve(
            self.trap, kind, n_pi, tau_grid, self.noise, self.n_atoms, self.master_seed,
            phase_convention=self.phase_convention, pulse_duration=self.pulse_duration,
            workers=self.workers, mixing_overlap=self.mixing_overlap,
            fingerprint=fingerprint, executor=self._pool, readout_phase=readout_phase,
        )
