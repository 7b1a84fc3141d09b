"""Calibrate-then-predict runs of the multiple-π scan at acceptance scale."""
import dataclasses
import pathlib

import numpy as np
import pytest

from config import load_config
from experiments import calibrate, resolve_mixing_overlap, run_scan_pulses
from fock_engine import eta_for_pulse_loss

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"
TARGET_TAU_C = 26e-3
PULSE_LOSS = 0.018
CALIBRATION_GRID_STOP = 60e-3


@pytest.fixture(scope="module")
def scan_config(tmp_path_factory):
    """The shipped scan config with η_eff solved from the Fock overlap for PULSE_LOSS."""
    cfg = load_config(DATA / "multi_pi_scan.json")
    reference = cfg.trap.with_updates(temperature=cfg.engine.mixing_reference_temperature)
    eta = eta_for_pulse_loss(reference, PULSE_LOSS)
    output = dataclasses.replace(cfg.output, directory=str(tmp_path_factory.mktemp("scan")))
    return dataclasses.replace(cfg, engine=dataclasses.replace(cfg.engine, mixing_eta=eta),
                               output=output)


@pytest.fixture(scope="module")
def calibration(scan_config):
    grid = tuple(t for t in scan_config.sequence.tau_total if t <= CALIBRATION_GRID_STOP)
    echo = dataclasses.replace(
        scan_config,
        sequence=dataclasses.replace(scan_config.sequence, kind="echo", n_pi=(1,), tau_total=grid),
    )
    c = scan_config.calibration
    return calibrate(echo, TARGET_TAU_C, "rayleigh_rate", c.lower, c.upper, c.tolerance)


@pytest.fixture(scope="module")
def scan(scan_config, calibration):
    noise = dataclasses.replace(scan_config.noise, rayleigh_rate=calibration.value)
    table, fit, _ = run_scan_pulses(scan_config.with_noise(noise))
    return table, fit


def test_mixing_overlap_comes_from_fock_overlap(scan_config):
    overlap = resolve_mixing_overlap(scan_config)
    assert 1.0 - overlap ** 2 == pytest.approx(PULSE_LOSS, abs=1e-6)
    shipped = load_config(DATA / "multi_pi_scan.json").engine.mixing_eta
    assert shipped == pytest.approx(scan_config.engine.mixing_eta, rel=0.05)


@pytest.mark.slow
def test_calibration_hits_echo_target(scan_config, calibration):
    assert calibration.tau_c == pytest.approx(TARGET_TAU_C, rel=0.05)
    assert scan_config.noise.rayleigh_rate == pytest.approx(calibration.value, rel=0.25)


@pytest.mark.slow
def test_every_pulse_count_crosses_threshold(scan):
    table, _ = scan
    assert [r.n_pi for r in table.rows] == [1, 2, 4, 6, 8, 10]
    for row in table.rows:
        assert row.tau_c is not None
        assert row.slope is not None and row.slope > 0


@pytest.mark.slow
def test_coherence_time_rises_then_flattens(scan):
    table, _ = scan
    n = np.array([r.n_pi for r in table.rows], dtype=float)
    tau = np.array([r.tau_c for r in table.rows])
    best = int(np.argmax(tau))
    assert best > 0
    assert tau[best] >= 2.0 * tau[0]
    assert np.all(np.diff(tau[:best + 1]) > 0)
    assert np.all(tau[best + 1:] <= tau[best])
    gain = np.diff(tau) / np.diff(n)
    assert gain[-1] < gain[0]


@pytest.mark.slow
def test_best_pulse_count_suppresses_intermediate_slope(scan):
    table, _ = scan
    best = max(table.rows, key=lambda r: r.tau_c)
    assert table.rows[0].slope >= 4.0 * best.slope


@pytest.mark.slow
def test_limiting_rate_matches_leakage(scan):
    _, fit = scan
    assert fit is not None
    assert 0.9 <= fit.a <= 2.1
