"""noise.py
Stochastic processes that make an atom's two-level resonance time dependent
(dynamical T₂) or remove population from the two-level system (T₁).

Per atom and per sequence one **NoiseRealization** is drawn:

* Rayleigh scattering: Poisson event times; each event moves the atom to a
  new vibrational level (resampled thermally, kicked up by a fixed energy, or
  displaced by the recoil of one emitted photon).
  Internal coherence survives the event; only the resonance frequency jumps.
* Trap-power noise: Ornstein–Uhlenbeck relative fluctuation that multiplies
  every level's differential shift.
* Zeeman noise: Ornstein–Uhlenbeck additive detuning common to all levels.
* Leakage: at most one F-changing or m_F-changing event, whichever comes
  first.

Design choices
--------------
* **Exact OU steps**: x′ = x·e^{-dt/τ} + σ·sqrt(1 - e^{-2dt/τ})·ξ, so paths are
  step-size independent; whole paths are generated as an AR(1) filter.
* **Fixed draw order**: scatter count, scatter times, new levels, power path,
  Zeeman path, leakage times; identical streams give identical realizations.
* **Exact integrals**: the processes are linearly interpolated between grid
  points and integrated analytically, so phase integration needs no ODE steps.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.signal import lfilter

from trap import TrapModel, VibrationalLevel, recoil_temperature, sample_thermal_quanta

__all__ = [
    "OUProcess", "RecoilModel", "NoiseConfig", "LeakChannel", "LeakageEvent",
    "NoiseRealization", "sample_realization", "ou_step", "ou_path",
    "RECOIL_MODELS", "KICK_MODELS",
]

RECOIL_MODELS = ("resample_thermal", "energy_kick", "photon_recoil")
KICK_MODELS = ("energy_kick", "photon_recoil")
_MIN_GRID_POINTS = 64
_POINTS_PER_CORRELATION_TIME = 8
_MIN_POWER_FACTOR = 1e-6


@dataclass(frozen=True)
class OUProcess:
    """Stationary Ornstein–Uhlenbeck process N(0, sigma²) with correlation time tau_corr."""

    sigma: float
    tau_corr: float

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"OU sigma must be >= 0, got {self.sigma}")
        if not self.tau_corr > 0:
            raise ValueError(f"OU tau_corr must be > 0, got {self.tau_corr}")


@dataclass(frozen=True)
class RecoilModel:
    """What a scattering event does to the vibrational level."""

    kind: str = "resample_thermal"
    kick_temperature: float = 0.0     # kelvin; ΔE for energy_kick, E_r for photon_recoil

    def __post_init__(self) -> None:
        if self.kind not in RECOIL_MODELS:
            raise ValueError(f"unknown recoil model {self.kind!r}; expected one of {RECOIL_MODELS}")
        if self.kind in KICK_MODELS and not self.kick_temperature > 0:
            raise ValueError(f"{self.kind} needs kick_temperature > 0")

    @classmethod
    def energy_kick(cls, kick_temperature: float) -> "RecoilModel":
        return cls("energy_kick", kick_temperature)

    @classmethod
    def photon_recoil(cls, kick_temperature: Optional[float] = None) -> "RecoilModel":
        """One spontaneously emitted photon per event; E_r defaults to the 810 nm recoil."""
        return cls("photon_recoil",
                   recoil_temperature() if kick_temperature is None else kick_temperature)


@dataclass(frozen=True)
class NoiseConfig:
    rayleigh_rate: float = 0.0
    recoil_model: RecoilModel = field(default_factory=RecoilModel)
    power_noise: Optional[OUProcess] = None     # relative trap-depth fluctuation
    zeeman_noise: Optional[OUProcess] = None    # additive detuning, rad/s
    f_changing_rate: float = 0.0
    mf_changing_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("rayleigh_rate", "f_changing_rate", "mf_changing_rate"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
        if self.power_noise is not None and not self.power_noise.sigma < 1:
            raise ValueError(f"power noise sigma_rel must be < 1, got {self.power_noise.sigma}")

    @property
    def total_leak_rate(self) -> float:
        return self.f_changing_rate + self.mf_changing_rate

    def ou_processes(self) -> list[OUProcess]:
        return [p for p in (self.power_noise, self.zeeman_noise) if p is not None]


class LeakChannel(str, enum.Enum):
    F_CHANGING = "F_changing"
    MF_CHANGING = "mF_changing"


@dataclass(frozen=True)
class LeakageEvent:
    time: float
    channel: LeakChannel


# ---------------------------------------------------------------------------
# Ornstein–Uhlenbeck sampling
# ---------------------------------------------------------------------------
def _ou_coefficients(dt: float, tau_corr: float, sigma: float) -> tuple[float, float]:
    decay = math.exp(-dt / tau_corr)
    spread = sigma * math.sqrt(-math.expm1(-2 * dt / tau_corr))
    return decay, spread


def ou_step(x: float, dt: float, tau_corr: float, sigma: float,
            rng: np.random.Generator) -> float:
    """One exact OU update of x over dt."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    decay, spread = _ou_coefficients(dt, tau_corr, sigma)
    return x * decay + spread * rng.standard_normal()


def ou_path(process: OUProcess, grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Stationary OU path on a uniform grid, starting from a stationary draw."""
    x0 = process.sigma * rng.standard_normal()
    if grid.size == 1:
        return np.array([x0])
    dt = float(grid[1] - grid[0])
    decay, spread = _ou_coefficients(dt, process.tau_corr, process.sigma)
    xi = rng.standard_normal(grid.size - 1)
    tail, _ = lfilter([spread], [1.0, -decay], xi, zi=[decay * x0])
    return np.concatenate(([x0], tail))


# ---------------------------------------------------------------------------
# Realizations
# ---------------------------------------------------------------------------
def _antiderivative(grid: np.ndarray, values: np.ndarray):
    """Exact antiderivative F(t) of the linear interpolant of values on grid."""
    cumulative = cumulative_trapezoid(values, grid, initial=0.0)
    slopes = np.diff(values) / np.diff(grid)

    def integral(t: float) -> float:
        k = int(np.searchsorted(grid, t, side="right")) - 1
        k = min(max(k, 0), grid.size - 2)
        d = t - grid[k]
        return float(cumulative[k] + values[k] * d + 0.5 * slopes[k] * d * d)

    return integral


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One atom's sampled noise trajectory over [0, duration]."""

    duration: float
    scatter_times: np.ndarray
    scatter_quanta: np.ndarray          # (n_scatter, dims) level after each event
    grid: np.ndarray
    power_samples: np.ndarray           # power_factor on grid, > 0
    zeeman_samples: np.ndarray          # rad/s on grid
    leakage: Optional[LeakageEvent] = None

    def __post_init__(self) -> None:
        if np.any(np.diff(self.scatter_times) < 0):
            raise ValueError("scatter_times must be sorted")
        if np.any(self.power_samples <= 0):
            raise ValueError("power_factor must stay positive")
        object.__setattr__(self, "_power_integral", _antiderivative(self.grid, self.power_samples))
        object.__setattr__(self, "_zeeman_integral", _antiderivative(self.grid, self.zeeman_samples))

    @property
    def scatter_count(self) -> int:
        return int(self.scatter_times.size)

    @property
    def is_empty(self) -> bool:
        return (self.scatter_count == 0 and self.leakage is None
                and np.all(self.power_samples == 1.0) and np.all(self.zeeman_samples == 0.0))

    def power_factor(self, t: float) -> float:
        return float(np.interp(t, self.grid, self.power_samples))

    def zeeman_shift(self, t: float) -> float:
        return float(np.interp(t, self.grid, self.zeeman_samples))

    def power_integral(self, a: float, b: float) -> float:
        """∫_a^b power_factor(t) dt."""
        return self._power_integral(b) - self._power_integral(a)

    def zeeman_integral(self, a: float, b: float) -> float:
        """∫_a^b zeeman_shift(t) dt (radians)."""
        return self._zeeman_integral(b) - self._zeeman_integral(a)


def _noise_grid(config: NoiseConfig, duration: float) -> np.ndarray:
    processes = config.ou_processes()
    if not processes:
        return np.array([0.0, duration])
    tau_min = min(p.tau_corr for p in processes)
    n_points = max(_MIN_GRID_POINTS, math.ceil(duration / tau_min * _POINTS_PER_CORRELATION_TIME))
    return np.linspace(0.0, duration, n_points + 1)


def _kick(quanta: np.ndarray, trap: TrapModel, recoil: RecoilModel,
          rng: np.random.Generator) -> np.ndarray:
    """Add ΔE to one randomly chosen transverse dimension, re-quantized and clipped."""
    kicked = quanta.copy()
    dim = int(rng.integers(trap.transverse_dims))
    added = int(round(recoil.kick_temperature / trap.quantum_temperature))
    kicked[dim] = min(kicked[dim] + added, trap.n_bound - 1)
    return kicked


def _photon_kick(quanta: np.ndarray, trap: TrapModel, recoil: RecoilModel,
                 rng: np.random.Generator) -> np.ndarray:
    """
    Recoil of one isotropically emitted photon on a harmonic level.

    With r = E_r/ħω_t, direction u and oscillation phase θ per dimension the
    level changes by 2·sqrt((n+½)r)·u·sinθ + r·u²; the result is rounded and
    clipped to the bound ladder.
    """
    dims = quanta.size
    r = recoil.kick_temperature / trap.quantum_temperature
    direction = rng.standard_normal(3)
    u = direction[:dims] / np.linalg.norm(direction)
    sin_phase = np.sin(2 * math.pi * rng.random(dims))
    change = 2.0 * np.sqrt((quanta + 0.5) * r) * u * sin_phase + r * u ** 2
    return np.clip(np.rint(quanta + change), 0, trap.n_bound - 1).astype(np.int64)


def sample_realization(config: NoiseConfig, trap: TrapModel, duration: float,
                       rng: np.random.Generator,
                       initial_level: Optional[VibrationalLevel] = None) -> NoiseRealization:
    """
    Draw one atom's noise trajectory over [0, duration].

    `initial_level` is the level the atom starts in; it is needed by the
    energy_kick and photon_recoil models, which change the current level.
    """
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    dims = trap.transverse_dims

    # Rayleigh scattering
    n_scatter = int(rng.poisson(config.rayleigh_rate * duration)) if config.rayleigh_rate > 0 else 0
    scatter_times = np.sort(rng.uniform(0.0, duration, n_scatter))
    scatter_quanta = np.zeros((n_scatter, dims), dtype=np.int64)
    if n_scatter:
        if config.recoil_model.kind == "resample_thermal":
            scatter_quanta = sample_thermal_quanta(trap, rng, (n_scatter, dims))
        else:
            if initial_level is None:
                raise ValueError(
                    f"{config.recoil_model.kind} recoil needs the atom's initial level"
                )
            kick = _kick if config.recoil_model.kind == "energy_kick" else _photon_kick
            current = np.array(initial_level.quantum_numbers, dtype=np.int64)
            for i in range(n_scatter):
                current = kick(current, trap, config.recoil_model, rng)
                scatter_quanta[i] = current

    # slow processes
    grid = _noise_grid(config, duration)
    power = np.ones(grid.size)
    zeeman = np.zeros(grid.size)
    if config.power_noise is not None:
        power = np.maximum(1.0 + ou_path(config.power_noise, grid, rng), _MIN_POWER_FACTOR)
    if config.zeeman_noise is not None:
        zeeman = ou_path(config.zeeman_noise, grid, rng)

    # T1 leakage: first event wins
    leakage = None
    candidates = []
    for channel, rate in ((LeakChannel.F_CHANGING, config.f_changing_rate),
                          (LeakChannel.MF_CHANGING, config.mf_changing_rate)):
        if rate > 0:
            candidates.append((float(rng.exponential(1.0 / rate)), channel))
    if candidates:
        t_leak, channel = min(candidates, key=lambda c: c[0])
        if t_leak < duration:
            leakage = LeakageEvent(t_leak, channel)

    return NoiseRealization(duration, scatter_times, scatter_quanta, grid, power, zeeman, leakage)
