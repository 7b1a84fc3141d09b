import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from noise import (
    LeakChannel, NoiseConfig, NoiseRealization, OUProcess, RecoilModel,
    ou_path, ou_step, sample_realization,
)
from trap import TrapModel, VibrationalLevel, recoil_temperature

GROUND = VibrationalLevel((0, 0))


@pytest.fixture
def trap():
    return TrapModel()


def _draw(config, trap, duration, n, seed=0, level=GROUND):
    rng = np.random.default_rng(seed)
    return [sample_realization(config, trap, duration, rng, level) for _ in range(n)]


# ---------------------------------------------------------------------------
# Configuration objects
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("factory", [
    lambda: OUProcess(-0.1, 1e-3),
    lambda: OUProcess(0.1, 0.0),
    lambda: RecoilModel("teleport"),
    lambda: RecoilModel.energy_kick(0.0),
    lambda: RecoilModel.photon_recoil(-1e-7),
    lambda: NoiseConfig(rayleigh_rate=-1.0),
    lambda: NoiseConfig(mf_changing_rate=float("nan")),
    lambda: NoiseConfig(power_noise=OUProcess(1.0, 1e-3)),
])
def test_invalid_noise_settings(factory):
    with pytest.raises(ValueError):
        factory()


def test_total_leak_rate():
    assert NoiseConfig(f_changing_rate=0.6, mf_changing_rate=1.2).total_leak_rate == pytest.approx(1.8)
    assert NoiseConfig().ou_processes() == []


def test_quiet_config_gives_empty_realization(trap):
    r = sample_realization(NoiseConfig(), trap, 0.1, np.random.default_rng(0))
    assert r.is_empty
    assert r.grid.tolist() == [0.0, 0.1]
    assert r.power_integral(0.02, 0.07) == pytest.approx(0.05)
    assert r.zeeman_integral(0.0, 0.1) == 0.0


def test_duration_must_be_positive(trap):
    with pytest.raises(ValueError):
        sample_realization(NoiseConfig(), trap, 0.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Rayleigh scattering
# ---------------------------------------------------------------------------
def test_scatter_count_is_poisson(trap):
    config = NoiseConfig(rayleigh_rate=100.0)
    counts = np.array([r.scatter_count for r in _draw(config, trap, 0.05, 5000)])
    assert counts.mean() == pytest.approx(5.0, abs=0.15)
    assert counts.var() == pytest.approx(5.0, rel=0.1)


def test_scatter_times_sorted_and_inside_window(trap):
    config = NoiseConfig(rayleigh_rate=500.0)
    for r in _draw(config, trap, 0.02, 50):
        assert np.all(np.diff(r.scatter_times) >= 0)
        assert np.all((r.scatter_times >= 0) & (r.scatter_times <= 0.02))
        assert r.scatter_quanta.shape == (r.scatter_count, trap.transverse_dims)
        assert np.all((r.scatter_quanta >= 0) & (r.scatter_quanta < trap.n_bound))


def test_energy_kick_adds_fixed_quanta(trap):
    kick = RecoilModel.energy_kick(5 * trap.quantum_temperature)
    config = NoiseConfig(rayleigh_rate=200.0, recoil_model=kick)
    for r in _draw(config, trap, 0.05, 20):
        totals = r.scatter_quanta.sum(axis=1)
        assert totals.tolist() == [5 * (i + 1) for i in range(r.scatter_count)]


def test_energy_kick_clips_at_trap_depth(trap):
    kick = RecoilModel.energy_kick(50 * trap.quantum_temperature)
    config = NoiseConfig(rayleigh_rate=2000.0, recoil_model=kick)
    start = VibrationalLevel((trap.n_bound - 3, trap.n_bound - 3))
    for r in _draw(config, trap, 0.05, 5, level=start):
        assert r.scatter_count > 0
        assert r.scatter_quanta.max() == trap.n_bound - 1


def test_energy_kick_requires_initial_level(trap):
    config = NoiseConfig(rayleigh_rate=1e4, recoil_model=RecoilModel.energy_kick(1e-7))
    with pytest.raises(ValueError):
        sample_realization(config, trap, 0.01, np.random.default_rng(0))


def test_photon_recoil_defaults_to_810nm_recoil():
    recoil = RecoilModel.photon_recoil()
    assert recoil.kind == "photon_recoil"
    assert recoil.kick_temperature == pytest.approx(recoil_temperature())
    assert recoil.kick_temperature == pytest.approx(1.72e-7, rel=0.01)


def test_photon_recoil_jump_statistics(trap):
    level = 50
    config = NoiseConfig(rayleigh_rate=2000.0, recoil_model=RecoilModel.photon_recoil())
    start = VibrationalLevel((level, level))
    first = np.array([r.scatter_quanta[0] for r in _draw(config, trap, 1e-3, 20000, level=start)
                      if r.scatter_count])
    jump = first - level
    r = recoil_temperature() / trap.quantum_temperature
    # one photon heats by E_r split over three axes; two are transverse
    assert jump.sum(axis=1).mean() == pytest.approx(2 * r / 3, abs=0.5)
    assert jump[:, 0].std() == pytest.approx(math.sqrt(4 * (level + 0.5) * r / 6), rel=0.05)


def test_photon_recoil_stays_on_bound_ladder(trap):
    config = NoiseConfig(rayleigh_rate=5000.0, recoil_model=RecoilModel.photon_recoil())
    for start in (GROUND, VibrationalLevel((trap.n_bound - 1, trap.n_bound - 1))):
        for r in _draw(config, trap, 0.01, 20, level=start):
            assert r.scatter_count > 0
            assert np.all((r.scatter_quanta >= 0) & (r.scatter_quanta < trap.n_bound))


def test_photon_recoil_requires_initial_level(trap):
    config = NoiseConfig(rayleigh_rate=1e4, recoil_model=RecoilModel.photon_recoil())
    with pytest.raises(ValueError):
        sample_realization(config, trap, 0.01, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Leakage
# ---------------------------------------------------------------------------
def test_leakage_survival_and_channel_competition(trap):
    config = NoiseConfig(f_changing_rate=0.6, mf_changing_rate=1.2)
    events = [r.leakage for r in _draw(config, trap, 1.0, 20_000)]
    leaked = [e for e in events if e is not None]
    survival = 1 - len(leaked) / len(events)
    assert survival == pytest.approx(math.exp(-1.8), abs=0.012)
    f_share = sum(e.channel is LeakChannel.F_CHANGING for e in leaked) / len(leaked)
    assert f_share == pytest.approx(1 / 3, abs=0.015)
    assert all(0 <= e.time < 1.0 for e in leaked)


def test_no_leakage_without_rates(trap):
    config = NoiseConfig(rayleigh_rate=50.0)
    assert all(r.leakage is None for r in _draw(config, trap, 0.1, 200))


def test_channel_values():
    assert LeakChannel("F_changing") is LeakChannel.F_CHANGING
    assert LeakChannel.MF_CHANGING.value == "mF_changing"


# ---------------------------------------------------------------------------
# Ornstein–Uhlenbeck processes
# ---------------------------------------------------------------------------
def test_zero_sigma_is_silent():
    grid = np.linspace(0.0, 0.1, 101)
    assert np.array_equal(ou_path(OUProcess(0.0, 0.03), grid, np.random.default_rng(1)), np.zeros(101))


def test_ou_stationary_variance_and_correlation():
    process = OUProcess(0.01, 0.03)
    grid = np.linspace(0.0, 0.12, 33)             # dt = tau_corr / 8
    rng = np.random.default_rng(2)
    paths = np.array([ou_path(process, grid, rng) for _ in range(5000)])
    assert paths[:, -1].var() == pytest.approx(1e-4, rel=0.1)
    assert paths[:, 0].var() == pytest.approx(1e-4, rel=0.1)
    lag = np.corrcoef(paths[:, 0], paths[:, 8])[0, 1]
    assert lag == pytest.approx(math.exp(-1.0), abs=0.04)


def test_ou_step_conditional_mean():
    rng = np.random.default_rng(3)
    steps = np.array([ou_step(1.0, 0.01, 0.03, 0.5, rng) for _ in range(20_000)])
    assert steps.mean() == pytest.approx(math.exp(-1 / 3), abs=0.02)
    assert steps.std() == pytest.approx(0.5 * math.sqrt(1 - math.exp(-2 / 3)), rel=0.03)
    with pytest.raises(ValueError):
        ou_step(0.0, 0.0, 0.03, 0.5, rng)


def test_grid_resolves_shortest_correlation_time(trap):
    short = NoiseConfig(power_noise=OUProcess(0.01, 0.03), zeeman_noise=OUProcess(10.0, 0.01))
    r = sample_realization(short, trap, 1.0, np.random.default_rng(0))
    assert r.grid.size == 801
    slow = NoiseConfig(power_noise=OUProcess(0.01, 0.03))
    assert sample_realization(slow, trap, 0.1, np.random.default_rng(0)).grid.size == 65


def test_power_factor_stays_positive(trap):
    config = NoiseConfig(power_noise=OUProcess(0.9, 1e-3))
    for r in _draw(config, trap, 0.05, 50):
        assert r.power_samples.min() >= 1e-6


def test_integrals_are_exact_for_linear_interpolant(trap):
    config = NoiseConfig(power_noise=OUProcess(0.05, 2e-3), zeeman_noise=OUProcess(30.0, 1e-3))
    r = sample_realization(config, trap, 0.02, np.random.default_rng(4))
    a, b = 0.00317, 0.01533
    knots = r.grid[(r.grid > a) & (r.grid < b)]
    pts = np.concatenate(([a], knots, [b]))
    assert r.power_integral(a, b) == pytest.approx(
        trapezoid(np.interp(pts, r.grid, r.power_samples), pts), rel=1e-12)
    assert r.zeeman_integral(a, b) == pytest.approx(
        trapezoid(np.interp(pts, r.grid, r.zeeman_samples), pts), abs=1e-12)
    assert r.zeeman_integral(0.0, r.duration) == pytest.approx(
        trapezoid(r.zeeman_samples, r.grid), abs=1e-12)
    assert r.power_factor(a) == pytest.approx(np.interp(a, r.grid, r.power_samples))


# ---------------------------------------------------------------------------
# Reproducibility
# ---------------------------------------------------------------------------
def test_same_stream_same_realization(trap):
    config = NoiseConfig(rayleigh_rate=300.0, power_noise=OUProcess(0.01, 0.03),
                         zeeman_noise=OUProcess(5.0, 0.01), f_changing_rate=5.0,
                         mf_changing_rate=10.0)
    a = sample_realization(config, trap, 0.05, np.random.default_rng(11), GROUND)
    b = sample_realization(config, trap, 0.05, np.random.default_rng(11), GROUND)
    assert np.array_equal(a.scatter_times, b.scatter_times)
    assert np.array_equal(a.scatter_quanta, b.scatter_quanta)
    assert np.array_equal(a.power_samples, b.power_samples)
    assert np.array_equal(a.zeeman_samples, b.zeeman_samples)
    assert a.leakage == b.leakage


def test_unsorted_scatter_times_rejected():
    grid = np.array([0.0, 1.0])
    with pytest.raises(ValueError):
        NoiseRealization(1.0, np.array([0.5, 0.2]), np.zeros((2, 2), dtype=int),
                         grid, np.ones(2), np.zeros(2))
