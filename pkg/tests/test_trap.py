import math

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import eigh

from errors import TruncationError
from trap import (
    TrapModel, VibrationalLevel, detuning_of_level, detuning_of_quanta,
    mean_thermal_level, overlap_matrix, recoil_temperature, sample_thermal_level,
    sample_thermal_quanta, thermal_probabilities,
)


@pytest.fixture
def default_trap():
    return TrapModel()


# ---------------------------------------------------------------------------
# TrapModel
# ---------------------------------------------------------------------------
def test_derived_quantities(default_trap):
    assert default_trap.omega_t == pytest.approx(2 * math.pi / 1.4e-3)
    assert default_trap.quantum_temperature == pytest.approx(3.43e-8, rel=5e-3)
    assert default_trap.n_bound == math.floor(100e-6 / default_trap.quantum_temperature)


@pytest.mark.parametrize("changes", [
    {"transverse_period": 0.0},
    {"trap_depth": -1e-6},
    {"temperature": 0.0},
    {"differential_factor": 0.0},
    {"differential_factor": 1.0},
    {"transverse_dims": 3},
    {"trap_depth": 1e-9},
])
def test_invalid_trap_rejected(changes):
    with pytest.raises(ValueError):
        TrapModel(**changes)


def test_with_updates_revalidates(default_trap):
    hot = default_trap.with_updates(temperature=40e-6)
    assert hot.temperature == 40e-6
    assert hot.transverse_period == default_trap.transverse_period
    with pytest.raises(ValueError):
        default_trap.with_updates(temperature=-1.0)


def test_level_validation(default_trap):
    with pytest.raises(ValueError):
        VibrationalLevel((-1, 0))
    with pytest.raises(ValueError):
        default_trap.validate_level(VibrationalLevel((1,)))
    with pytest.raises(ValueError):
        default_trap.validate_level(VibrationalLevel((default_trap.n_bound, 0)))
    assert VibrationalLevel((3, 4)).total_quanta == 7


# ---------------------------------------------------------------------------
# Thermal sampling
# ---------------------------------------------------------------------------
def test_sample_mean_matches_truncated_boltzmann(default_trap):
    rng = np.random.default_rng(1)
    draws = sample_thermal_quanta(default_trap, rng, 100_000)
    expected = mean_thermal_level(default_trap)
    # untruncated Bose mean 1/(e^x - 1); the trap depth cuts it to ~563
    assert 1 / math.expm1(default_trap.boltzmann_exponent) == pytest.approx(583, rel=0.02)
    assert expected < 583
    assert draws.mean() == pytest.approx(expected, rel=0.02)


def test_ground_state_limit():
    cold = TrapModel(temperature=1e-9)
    rng = np.random.default_rng(2)
    for _ in range(200):
        assert sample_thermal_level(cold, rng) == VibrationalLevel((0, 0))


def test_truncation_to_two_levels():
    base = TrapModel()
    shallow = base.with_updates(trap_depth=2.5 * base.quantum_temperature, temperature=1e-6)
    assert shallow.n_bound == 2
    draws = sample_thermal_quanta(shallow, np.random.default_rng(3), 10_000)
    assert set(np.unique(draws)) == {0, 1}


def test_sampler_chi_squared():
    base = TrapModel()
    trap = base.with_updates(temperature=base.quantum_temperature / 0.3,
                             trap_depth=30.5 * base.quantum_temperature)
    draws = sample_thermal_quanta(trap, np.random.default_rng(4), 1_000_000)
    observed = np.bincount(draws, minlength=trap.n_bound)
    expected = thermal_probabilities(trap) * draws.size
    assert expected.sum() == pytest.approx(draws.size)
    _, p_value = stats.chisquare(observed, expected)
    assert p_value > 1e-3


def test_sampler_is_deterministic(default_trap):
    a = sample_thermal_quanta(default_trap, np.random.default_rng(99), 50)
    b = sample_thermal_quanta(default_trap, np.random.default_rng(99), 50)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Differential shift
# ---------------------------------------------------------------------------
def test_ground_level_detuning(default_trap):
    assert detuning_of_level(default_trap, VibrationalLevel((0, 0))) == pytest.approx(0.8976, rel=1e-3)


def test_detuning_monotone_and_linear_in_eta(default_trap):
    level = VibrationalLevel((10, 3))
    d = detuning_of_level(default_trap, level)
    assert detuning_of_level(default_trap, VibrationalLevel((11, 3))) > d
    assert detuning_of_level(default_trap, VibrationalLevel((10, 4))) > d
    doubled = default_trap.with_updates(differential_factor=4e-4)
    assert detuning_of_level(doubled, level) == pytest.approx(2 * d, rel=1e-12)


def test_detuning_of_quanta_vectorized(default_trap):
    totals = np.array([0, 1, 2])
    shifts = detuning_of_quanta(default_trap, totals)
    assert shifts.shape == (3,)
    assert np.allclose(np.diff(shifts), default_trap.level_shift)
    assert isinstance(detuning_of_quanta(default_trap, 0), float)


def test_thermal_detuning_spread(default_trap):
    rng = np.random.default_rng(5)
    totals = sample_thermal_quanta(default_trap, rng, (20_000, 2)).sum(axis=1)
    spread = np.std(detuning_of_quanta(default_trap, totals))
    assert 5e2 / 3 < spread < 5e2 * 3


def test_recoil_temperature_order_of_magnitude():
    # 85Rb at 810 nm: a few hundred nK
    assert 1e-7 < recoil_temperature() < 5e-7


# ---------------------------------------------------------------------------
# Overlaps
# ---------------------------------------------------------------------------
def _dvr_overlaps(eta, n_states, half_width=16.0, step=0.1):
    """⟨n′(ω(1+η))|n(ω)⟩ from sinc-DVR diagonalization of both oscillators."""
    x = np.arange(-half_width, half_width + step / 2, step)
    i = np.arange(x.size)
    diff = i[:, None] - i[None, :]
    with np.errstate(divide="ignore"):
        kinetic = np.where(diff == 0, math.pi ** 2 / 3, 2.0 * (-1.0) ** diff / diff.astype(float) ** 2)
    kinetic /= 2 * step ** 2
    s = 1.0 + eta
    _, v1 = eigh(kinetic + np.diag(0.5 * x ** 2))
    _, v2 = eigh(kinetic + np.diag(0.5 * s ** 2 * x ** 2))

    def fix_sign(v):
        for k in range(v.shape[1]):
            col = v[:, k]
            idx = np.flatnonzero(np.abs(col) > 1e-3 * np.abs(col).max())[-1]
            if col[idx] < 0:
                v[:, k] = -col
        return v

    v1 = fix_sign(v1[:, :n_states])
    v2 = fix_sign(v2[:, :n_states])
    return v2.T @ v1


def test_identity_for_zero_eta():
    assert np.array_equal(overlap_matrix(0.0, 12).entries, np.eye(12))


def test_ground_overlap_closed_form():
    eta = 2e-4
    s = 1 + eta
    o = overlap_matrix(eta, 10)
    assert o[0, 0] == pytest.approx(math.sqrt(2 * math.sqrt(s) / (1 + s)), abs=1e-14)
    assert 1 - o[0, 0] == pytest.approx(eta ** 2 / 16, rel=1e-3)


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 1e-1])
def test_parity_selection_is_exact(eta):
    o = overlap_matrix(eta, 30).entries
    n_prime, n = np.indices(o.shape)
    assert np.all(o[(n_prime + n) % 2 == 1] == 0.0)
    assert o[1, 0] == 0.0


@pytest.mark.parametrize("eta", [2e-4, 1e-2, 1e-1])
def test_orthonormal_converged_block(eta):
    o = overlap_matrix(eta, 40)
    block = o.entries[:, :20]
    assert np.max(np.abs(block.T @ block - np.eye(20))) < 1e-8
    assert o.converged_columns(1e-8) >= 20


def test_unpadded_matrix_is_exactly_orthogonal():
    o = overlap_matrix(0.1, 25, padding=0).entries
    assert np.max(np.abs(o.T @ o - np.eye(25))) < 1e-12


@pytest.mark.parametrize("eta", [1e-3, 1e-2, 1e-1])
def test_overlaps_match_grid_oracle(eta):
    computed = overlap_matrix(eta, 40).entries
    oracle = _dvr_overlaps(eta, 40)
    assert np.max(np.abs(computed - oracle)) < 1e-6


def test_truncation_error_when_padding_cannot_grow():
    with pytest.raises(TruncationError):
        overlap_matrix(0.3, 40, padding=2, max_doublings=0)


@pytest.mark.parametrize("eta,N", [(0.6, 10), (0.1, 0)])
def test_overlap_arguments_validated(eta, N):
    with pytest.raises(ValueError):
        overlap_matrix(eta, N)
