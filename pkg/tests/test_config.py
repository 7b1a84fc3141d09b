import json
import pathlib

import pytest

from config import ExperimentConfig, fingerprint_of, load_config, parse_time
from errors import ConfigError
from trap import recoil_temperature

DATA = pathlib.Path(__file__).resolve().parent.parent / "data"


def _minimal(**sections):
    doc = {
        "sequence": {"kind": "echo", "tau_total": ["2ms", "4ms", "8ms"]},
        "engine": {"master_seed": 7},
    }
    doc.update(sections)
    return doc


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def _line_of(path, needle):
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if needle in line:
            return number
    raise AssertionError(needle)


# ---------------------------------------------------------------------------
# Times
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("value,seconds", [
    ("26ms", 26e-3), ("500us", 500e-6), ("500µs", 500e-6), ("0.1s", 0.1),
    (" 1.5 ms ", 1.5e-3), ("2e-3", 2e-3), (0.25, 0.25), (3, 3.0),
])
def test_parse_time(value, seconds):
    assert parse_time(value) == pytest.approx(seconds)


@pytest.mark.parametrize("value", ["ten ms", "5min", "", True, None, [1]])
def test_parse_time_rejects(value):
    with pytest.raises(ValueError):
        parse_time(value)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------
def test_example_configs_load():
    for path in sorted(DATA.glob("*.json")):
        cfg = load_config(path)
        assert cfg.source == str(path)
        assert len(cfg.fingerprint) == 64


def test_echo_example_values():
    cfg = load_config(DATA / "echo_scan.json")
    assert cfg.trap.transverse_period == pytest.approx(1.4e-3)
    assert cfg.sequence.tau_total[0] == pytest.approx(2e-3)
    assert cfg.sequence.tau_total[-1] == pytest.approx(0.1)
    assert len(cfg.sequence.tau_total) == 50
    assert cfg.noise.power_noise.tau_corr == pytest.approx(30e-3)
    assert cfg.calibration.target_tau_c == pytest.approx(26e-3)
    assert cfg.analysis.long_time_slope == "tail"


def test_defaults():
    cfg = ExperimentConfig.from_dict(_minimal())
    assert cfg.engine.engine == "bloch"
    assert cfg.engine.initial_level is None
    assert cfg.engine.fock_initial == "thermal"
    assert cfg.sequence.n_pi == (1,)
    assert cfg.sequence.pulse_duration == 0.0
    assert cfg.noise.f_changing_rate == pytest.approx(0.6)
    assert cfg.noise.mf_changing_rate == pytest.approx(1.2)
    assert cfg.noise.power_noise.sigma == pytest.approx(0.01)
    assert cfg.noise.zeeman_noise is None
    assert cfg.output.prefix == "run"


def test_finite_pulses_use_rabi_frequency():
    doc = _minimal()
    doc["sequence"].update(finite_pulses=True, rabi_frequency=1000.0)
    cfg = ExperimentConfig.from_dict(doc)
    assert cfg.sequence.pulse_duration == pytest.approx(3.141592653589793e-3)


def test_tau_grid_object():
    doc = _minimal()
    doc["sequence"]["tau_total"] = {"start": "1ms", "stop": "5ms", "num": 5}
    cfg = ExperimentConfig.from_dict(doc)
    assert cfg.sequence.tau_total == pytest.approx((1e-3, 2e-3, 3e-3, 4e-3, 5e-3))


def test_unknown_key_reports_line(tmp_path):
    doc = _minimal()
    doc["noise"] = {"rayleigh_rate": 20.0, "bogus_rate": 1.0}
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == _line_of(path, "bogus_rate")
    assert str(info.value).startswith(f"{path}:{info.value.line}:")
    assert "bogus_rate" in str(info.value)


def test_unknown_section(tmp_path):
    doc = _minimal(plotting={"dpi": 300})
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, doc))
    assert "plotting" in str(info.value)


def test_missing_master_seed(tmp_path):
    doc = _minimal()
    doc["engine"] = {"n_atoms": 100}
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "master_seed" in str(info.value)
    assert info.value.line == _line_of(path, '"engine"')


def test_duplicate_key(tmp_path):
    path = tmp_path / "dup.json"
    path.write_text('{\n  "engine": {"master_seed": 1},\n  "engine": {"master_seed": 2}\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "duplicate" in str(info.value)


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "engine": {"master_seed": 1},\n  oops\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "nowhere.json")


def test_domain_error_is_located(tmp_path):
    doc = _minimal(trap={"differential_factor": 1.5})
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == _line_of(path, "differential_factor")


def test_nested_error_is_located_in_its_own_section(tmp_path):
    doc = _minimal(noise={
        "power_noise": {"sigma_rel": 0.01, "tau_corr": "30ms"},
        "zeeman_noise": {"sigma_freq": 1.0, "tau_corr": 0},
    })
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert "zeeman_noise" in str(info.value)
    assert info.value.line == _line_of(path, '"tau_corr": 0')


def test_nested_unknown_key_is_located_in_its_own_section(tmp_path):
    doc = _minimal(noise={
        "power_noise": {"sigma_rel": 0.01, "tau_corr": "30ms"},
        "zeeman_noise": {"sigma_freq": 1.0, "tau_corr": "5ms", "sigma_rel": 0.1},
    })
    path = _write(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    lines = [n for n, line in enumerate(path.read_text().splitlines(), start=1)
             if '"sigma_rel"' in line]
    assert len(lines) == 2
    assert info.value.line == lines[1]


@pytest.mark.parametrize("section,key,value", [
    ("sequence", "kind", "cpmg"),
    ("sequence", "n_pi", [2, 2]),
    ("sequence", "n_pi", [1.5]),
    ("sequence", "tau_total", ["4ms", "2ms"]),
    ("sequence", "tau_total", "4ms"),
    ("sequence", "finite_pulses", "yes"),
    ("engine", "n_atoms", 0),
    ("engine", "master_seed", -1),
    ("engine", "mixing_overlap", 1.2),
    ("engine", "mixing_eta", 0.6),
    ("engine", "mixing_eta", "small"),
    ("engine", "mixing_reference_temperature", 0.0),
    ("engine", "initial_level", [0, -1]),
    ("engine", "engine", "gpu"),
    ("noise", "recoil_model", "heating"),
    ("noise", "rayleigh_rate", -1.0),
    ("noise", "rayleigh_rate", "fast"),
    ("analysis", "window", ["10ms", "5ms"]),
    ("analysis", "long_time_slope", "head"),
    ("output", "prefix", ""),
    ("calibration", "tolerance", 1.5),
    ("calibration", "parameter", "temperature"),
])
def test_invalid_values(section, key, value):
    doc = _minimal()
    doc.setdefault(section, {})[key] = value
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_multi_pi_needs_pulses():
    doc = _minimal()
    doc["sequence"].update(kind="multi_pi", n_pi=[0, 2])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_energy_kick_needs_kick_temperature():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_minimal(noise={"recoil_model": "energy_kick"}))
    cfg = ExperimentConfig.from_dict(
        _minimal(noise={"recoil_model": "energy_kick", "kick_temperature": 0.18e-6}))
    assert cfg.noise.recoil_model.kick_temperature == pytest.approx(0.18e-6)


def test_photon_recoil_defaults_kick_temperature():
    cfg = ExperimentConfig.from_dict(_minimal(noise={"recoil_model": "photon_recoil"}))
    assert cfg.noise.recoil_model.kind == "photon_recoil"
    assert cfg.noise.recoil_model.kick_temperature == pytest.approx(recoil_temperature())


def test_mixing_eta_excludes_mixing_overlap():
    cfg = ExperimentConfig.from_dict(_minimal(engine={"master_seed": 7, "mixing_eta": 0.03}))
    assert cfg.engine.mixing_eta == pytest.approx(0.03)
    assert cfg.engine.mixing_reference_temperature == pytest.approx(0.2e-6)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(
            _minimal(engine={"master_seed": 7, "mixing_eta": 0.03, "mixing_overlap": 0.99}))


def test_initial_level_list():
    doc = _minimal()
    doc["engine"].update(engine="fock", initial_level=[2, 0])
    cfg = ExperimentConfig.from_dict(doc)
    assert cfg.engine.fock_initial.quantum_numbers == (2, 0)


# ---------------------------------------------------------------------------
# Normalized form and fingerprint
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("name", ["echo_scan.json", "multi_pi_scan.json", "revival_fock.json"])
def test_to_dict_round_trip(name):
    cfg = load_config(DATA / name)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.fingerprint == cfg.fingerprint


def test_manifest_is_accepted_as_config(tmp_path):
    cfg = load_config(DATA / "echo_scan.json")
    manifest = {"command": "simulate", "config": cfg.to_dict(),
                "fingerprint": cfg.fingerprint, "outputs": []}
    path = _write(tmp_path, manifest, "run.manifest.json")
    assert load_config(path).fingerprint == cfg.fingerprint


def test_fingerprint_ignores_spelling_and_order(tmp_path):
    a = _minimal()
    b = {"engine": {"master_seed": 7},
         "sequence": {"tau_total": [0.002, "4ms", 0.008], "kind": "echo"}}
    assert ExperimentConfig.from_dict(a).fingerprint == ExperimentConfig.from_dict(b).fingerprint


def test_fingerprint_changes_with_seed():
    a = ExperimentConfig.from_dict(_minimal())
    b = ExperimentConfig.from_dict(_minimal(engine={"master_seed": 8}))
    assert a.fingerprint != b.fingerprint


def test_fingerprint_of_is_canonical():
    assert fingerprint_of({"b": 1, "a": [1, 2]}) == fingerprint_of({"a": [1, 2], "b": 1})
