"""trap.py
Motional structure of an atom held in the transverse harmonic well of the
optical trap.

A **TrapModel** carries the trap geometry and the ensemble temperature; it is
the source of three things the engines need:

* thermally sampled vibrational levels (truncated Boltzmann law, one quantum
  number per transverse dimension),
* the differential hyperfine shift of each level, δ(n) = η·ω_t·Σ(n_d + ½),
* overlap matrices ⟨n′|n⟩ between eigenstates of the two internal-state
  potentials, modeled as same-center oscillators with frequencies ω and
  ω(1 + η).

Design choices
--------------
* **Immutable**: TrapModel, VibrationalLevel and OverlapMatrix are frozen, so
  they can be shared across worker processes and threads.
* **Harmonic ladder**: the trap depth only truncates the level ladder at
  N_bound = floor(U₀ / (ħω_t/k_B)); anharmonicity is ignored.
* **Exact parity**: overlaps are built from the squeeze (dilation) operator
  separately on the even and odd sub-ladders, so opposite-parity entries are
  exactly zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import constants
from scipy.linalg import expm

from errors import TruncationError

logger = logging.getLogger(__name__)

__all__ = [
    "TrapModel", "VibrationalLevel", "OverlapMatrix",
    "sample_thermal_level", "sample_thermal_quanta", "thermal_probabilities",
    "mean_thermal_level", "detuning_of_level", "detuning_of_quanta",
    "overlap_matrix", "recoil_temperature", "RB85_MASS",
]

RB85_MASS = 84.911789738 * constants.atomic_mass


@dataclass(frozen=True)
class TrapModel:
    """Transverse trap parameters; defaults are the experiment's values."""

    transverse_period: float = 1.4e-3          # s
    trap_depth: float = 100e-6                 # K
    temperature: float = 20e-6                 # K
    differential_factor: float = 2e-4          # η = δV / V₁
    transverse_dims: int = 2
    hyperfine_splitting: float = 2 * math.pi * 3.036e9   # rad/s, rotating frame removes it

    def __post_init__(self) -> None:
        if not self.transverse_period > 0:
            raise ValueError(f"transverse_period must be > 0, got {self.transverse_period}")
        if not self.trap_depth > 0:
            raise ValueError(f"trap_depth must be > 0, got {self.trap_depth}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.differential_factor < 1:
            raise ValueError(
                f"differential_factor must lie in (0, 1), got {self.differential_factor}"
            )
        if self.transverse_dims not in (1, 2):
            raise ValueError(f"transverse_dims must be 1 or 2, got {self.transverse_dims}")
        if self.n_bound < 1:
            raise ValueError(
                "trap_depth holds no bound level: "
                f"{self.trap_depth} K < one quantum of {self.quantum_temperature:.3e} K"
            )

    # ------------------------------------------------------------------
    # Derived quantities
    # ------------------------------------------------------------------
    @property
    def omega_t(self) -> float:
        """Transverse angular frequency ω_t = 2π / period (rad/s)."""
        return 2 * math.pi / self.transverse_period

    @property
    def quantum_temperature(self) -> float:
        """One vibrational quantum expressed as a temperature, ħω_t/k_B (K)."""
        return constants.hbar * self.omega_t / constants.k

    @property
    def n_bound(self) -> int:
        """Number of bound harmonic levels per dimension."""
        return int(math.floor(self.trap_depth / self.quantum_temperature))

    @property
    def boltzmann_exponent(self) -> float:
        """x = ħω_t / k_B T; the level distribution is p(n) ∝ exp(-x n)."""
        return self.quantum_temperature / self.temperature

    @property
    def level_shift(self) -> float:
        """Differential shift per vibrational quantum, η·ω_t (rad/s)."""
        return self.differential_factor * self.omega_t

    def with_updates(self, **changes) -> "TrapModel":
        """Copy with some fields replaced (validated again)."""
        return replace(self, **changes)

    def validate_level(self, level: "VibrationalLevel") -> None:
        if len(level.quantum_numbers) != self.transverse_dims:
            raise ValueError(
                f"level {level.quantum_numbers} has {len(level.quantum_numbers)} "
                f"quantum numbers, trap has {self.transverse_dims} dimensions"
            )
        if max(level.quantum_numbers) >= self.n_bound:
            raise ValueError(f"level {level.quantum_numbers} exceeds N_bound={self.n_bound}")


@dataclass(frozen=True)
class VibrationalLevel:
    """Transverse vibrational eigenstate |n_x, n_y⟩ (or |n⟩ in 1D)."""

    quantum_numbers: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "quantum_numbers", tuple(int(n) for n in self.quantum_numbers))
        if not self.quantum_numbers:
            raise ValueError("a vibrational level needs at least one quantum number")
        if min(self.quantum_numbers) < 0:
            raise ValueError(f"quantum numbers must be >= 0, got {self.quantum_numbers}")

    @property
    def total_quanta(self) -> int:
        return sum(self.quantum_numbers)

    def __str__(self) -> str:
        return "|" + ",".join(str(n) for n in self.quantum_numbers) + ">"


# ---------------------------------------------------------------------------
# Thermal occupation
# ---------------------------------------------------------------------------
def sample_thermal_quanta(trap: TrapModel, rng: np.random.Generator,
                          size: int | Tuple[int, ...] = 1) -> np.ndarray:
    """
    Inverse-CDF draws from the truncated geometric law p(n) ∝ exp(-x n), n < N_bound.

    CDF(n) = (1 - q^{n+1}) / (1 - q^N) with q = exp(-x), inverted with
    expm1/log1p so that both the hot (x ≪ 1) and cold (x ≫ 1) limits stay exact.
    """
    x = trap.boltzmann_exponent
    n_max = trap.n_bound
    u = rng.random(size)
    norm = -math.expm1(-x * n_max)          # 1 - q^N
    n = np.floor(-np.log1p(-u * norm) / x)
    return np.clip(n, 0, n_max - 1).astype(np.int64)


def sample_thermal_level(trap: TrapModel, rng: np.random.Generator) -> VibrationalLevel:
    """Draw one independent quantum number per transverse dimension."""
    return VibrationalLevel(tuple(sample_thermal_quanta(trap, rng, trap.transverse_dims)))


def thermal_probabilities(trap: TrapModel, n_max: Optional[int] = None) -> np.ndarray:
    """
    One-dimensional truncated Boltzmann probabilities p(0..n_max-1).

    Normalized over the full bound ladder, so the returned vector sums to
    less than one when n_max < N_bound.
    """
    n_levels = trap.n_bound if n_max is None else min(int(n_max), trap.n_bound)
    x = trap.boltzmann_exponent
    n = np.arange(n_levels)
    log_p = -x * n + math.log(-math.expm1(-x)) - math.log(-math.expm1(-x * trap.n_bound))
    return np.exp(log_p)


def mean_thermal_level(trap: TrapModel) -> float:
    """Closed-form mean of the truncated geometric law, q/(1-q) - N q^N/(1-q^N)."""
    x = trap.boltzmann_exponent
    n_max = trap.n_bound
    if x > 700:
        return 0.0
    if x * n_max > 700:     # q^N underflows; untruncated law
        return 1.0 / math.expm1(x)
    return 1.0 / math.expm1(x) - n_max / math.expm1(x * n_max)


# ---------------------------------------------------------------------------
# Differential shift
# ---------------------------------------------------------------------------
def detuning_of_level(trap: TrapModel, level: VibrationalLevel) -> float:
    """δ(n) = η·ω_t·Σ_d (n_d + ½), in rad/s."""
    trap.validate_level(level)
    return detuning_of_quanta(trap, level.total_quanta)


def detuning_of_quanta(trap: TrapModel, total_quanta):
    """Same as detuning_of_level, from Σ n_d directly (scalars or arrays)."""
    shift = trap.level_shift * (np.asarray(total_quanta, dtype=float) + 0.5 * trap.transverse_dims)
    return float(shift) if shift.ndim == 0 else shift


def recoil_temperature(wavelength: float = 810e-9, mass: float = RB85_MASS) -> float:
    """Photon recoil energy ħ²k²/2m expressed in kelvin."""
    k = 2 * math.pi / wavelength
    return (constants.hbar * k) ** 2 / (2 * mass * constants.k)


# ---------------------------------------------------------------------------
# Overlaps between the two oscillators
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class OverlapMatrix:
    """
    O[n′, n] = ⟨n′(ω(1+η)) | n(ω)⟩ for n, n′ < N.

    Rows index eigenstates of the internal-|2⟩ potential, columns those of
    the internal-|1⟩ potential.
    """

    eta: float
    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"overlap entries must be square, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    def diagonal(self) -> np.ndarray:
        """o_n = ⟨n′=n | n⟩, the per-pulse survival amplitude of level n."""
        return np.diag(self.entries).copy()

    def column_norm_deficit(self) -> np.ndarray:
        """1 - Σ_{n′<N} O[n′, n]² per column: weight that lies above the block."""
        return 1.0 - np.sum(self.entries ** 2, axis=0)

    def converged_columns(self, tol: float = 1e-8) -> int:
        """Number of leading columns whose norm deficit is below `tol`."""
        ok = np.abs(self.column_norm_deficit()) < tol
        bad = np.flatnonzero(~ok)
        return int(bad[0]) if bad.size else self.dimension

    def __getitem__(self, index):
        return self.entries[index]


def _squeeze_generator(dim: int, parity: int) -> np.ndarray:
    """(a² - a†²)/2 restricted to the even (parity=0) or odd (1) sub-ladder."""
    n = np.arange(parity, dim, 2)
    # a²|n⟩ = sqrt(n(n-1)) |n-2⟩
    coupling = np.sqrt(n[1:] * (n[1:] - 1.0))
    gen = np.zeros((n.size, n.size))
    idx = np.arange(n.size - 1)
    gen[idx, idx + 1] = 0.5 * coupling
    gen[idx + 1, idx] = -0.5 * coupling
    return gen


def _squeeze_matrix(eta: float, dim: int) -> np.ndarray:
    """⟨k| S(r) |m⟩ with r = ln(1+η)/2, assembled from the two parity blocks."""
    r = 0.5 * math.log1p(eta)
    out = np.zeros((dim, dim))
    for parity in (0, 1):
        if parity >= dim:
            continue
        idx = np.arange(parity, dim, 2)
        out[np.ix_(idx, idx)] = expm(r * _squeeze_generator(dim, parity))
    return out


_EDGE_ROWS = 10
_EDGE_WEIGHT_TOL = 1e-24


def overlap_matrix(eta: float, N: int, padding: Optional[int] = None,
                   max_doublings: int = 6) -> OverlapMatrix:
    """
    Overlap matrix between the ω and ω(1+η) oscillator ladders, size N×N.

    The dilation S(r) that maps |n(ω)⟩ onto |n(ω(1+η))⟩ is exponentiated in a
    padded basis of N + padding states; the padding doubles until the weight
    of the first N columns reaching the basis edge is negligible.  Passing
    padding=0 returns the exactly orthogonal N-state truncation, which is
    what the Fock engine propagates with.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not abs(eta) < 0.5:
        raise ValueError(f"|eta| must be < 0.5, got {eta}")
    if eta == 0:
        return OverlapMatrix(0.0, np.eye(N))
    if padding == 0:
        return OverlapMatrix(eta, _squeeze_matrix(eta, N).T)

    pad = max(40, N) if padding is None else int(padding)
    for _ in range(max_doublings + 1):
        dim = N + pad
        s_mat = _squeeze_matrix(eta, dim)
        edge = np.sum(s_mat[dim - _EDGE_ROWS:, :N] ** 2, axis=0).max()
        if edge < _EDGE_WEIGHT_TOL:
            logger.debug("overlap_matrix: eta=%g N=%d converged with padding %d", eta, N, pad)
            return OverlapMatrix(eta, s_mat.T[:N, :N])
        pad *= 2
    raise TruncationError(
        f"overlap matrix for eta={eta}, N={N} not converged with padding {pad // 2} "
        f"(edge weight {edge:.2e})"
    )

