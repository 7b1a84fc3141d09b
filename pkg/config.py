# config.py
"""
Experiment configuration: one JSON document with the sections

    trap, noise, sequence, engine, analysis, output, calibration

Every value is normalized to SI at parse time (times accept "26ms", "500us",
"0.1s" or plain seconds).  Unknown keys, duplicate keys and invalid values are
reported as ConfigError with the line of the offending entry.
"""

from __future__ import annotations

import hashlib
import json
import math
import pathlib
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from analysis import COHERENCE_THRESHOLD
from errors import ConfigError
from noise import RECOIL_MODELS, NoiseConfig, OUProcess, RecoilModel
from sequence import DEFAULT_RABI_FREQUENCY, PHASE_CONVENTIONS, SCHEDULE_KINDS
from trap import TrapModel, VibrationalLevel, recoil_temperature

__all__ = [
    "ExperimentConfig", "SequenceSettings", "EngineSettings", "AnalysisSettings",
    "OutputSettings", "CalibrationSettings", "load_config", "parse_time",
    "fingerprint_of", "ENGINES", "CALIBRATION_PARAMETERS",
]

ENGINES = ("bloch", "fock")
CALIBRATION_PARAMETERS = ("rayleigh_rate", "power_sigma")
MAX_MIXING_ETA = 0.45

_TIME_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*(s|ms|us|µs)?\s*$")
_TIME_UNITS = {None: 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6}

Json = Dict[str, Any]


def parse_time(value: Union[str, float, int], key: str = "time") -> float:
    """Seconds from a number or a string with an s / ms / us suffix."""
    if isinstance(value, bool):
        raise ValueError(f"{key}: expected a time, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _TIME_RE.match(value)
        if m:
            try:
                return float(m.group(1)) * _TIME_UNITS[m.group(2)]
            except ValueError:
                pass
    raise ValueError(f"{key}: cannot read {value!r} as a time")


def fingerprint_of(data: Json) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Section readers
# ---------------------------------------------------------------------------
class _Section:
    """Reads one JSON object, tracking which keys were consumed."""

    def __init__(self, name: str, data: Any, locate):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"section '{name}' must be an object", locate(name))
        self.name = name
        self.data = data
        self.locate = locate
        self.used: set = set()

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(f"{self.name}.{key}: {message}", self.locate(f"{self.name}.{key}"))

    def get(self, key: str, default: Any = None) -> Any:
        self.used.add(key)
        return self.data.get(key, default)

    def has(self, key: str) -> bool:
        return key in self.data and self.data[key] is not None

    def number(self, key: str, default: Optional[float] = None) -> float:
        value = self.get(key, default)
        if value is None:
            raise self.error(key, "is required")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(key, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise self.error(key, f"must be finite, got {value!r}")
        return float(value)

    def integer(self, key: str, default: Optional[int] = None) -> int:
        value = self.get(key, default)
        if value is None:
            raise self.error(key, "is required")
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(key, f"expected an integer, got {value!r}")
        return int(value)

    def time(self, key: str, default: Any = None) -> float:
        value = self.get(key, default)
        if value is None:
            raise self.error(key, "is required")
        try:
            return parse_time(value, key)
        except ValueError as exc:
            raise self.error(key, str(exc)) from None

    def choice(self, key: str, options: Tuple[str, ...], default: Optional[str] = None) -> str:
        value = self.get(key, default)
        if value not in options:
            raise self.error(key, f"expected one of {list(options)}, got {value!r}")
        return value

    def section(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(f"{self.name}.{key}", self.data.get(key), self.locate)

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise self.error(unknown[0], "unknown key")


_STRING_RE = re.compile(r'"(?:[^"\\]|\\.)*"')


def _locator(text: Optional[str]):
    """
    Line of a dotted key path ("config.noise.zeeman_noise.tau_corr") in the
    config text.  Each component is searched only inside the value of the
    previous one, preferring keys at that object's own nesting depth; the
    deepest component found is reported.
    """
    lines = text.splitlines() if text else []
    depths = [0]                        # bracket depth at the start of each line
    for line in lines:
        bare = _STRING_RE.sub('""', line)
        opened = sum(bare.count(c) for c in "{[")
        closed = sum(bare.count(c) for c in "}]")
        depths.append(depths[-1] + opened - closed)

    def value_end(idx: int) -> int:
        for j in range(idx + 1, len(lines) + 1):
            if depths[j] <= depths[idx]:
                return j
        return len(lines)

    def find(name: str, lo: int, hi: int, level: int) -> Optional[int]:
        pattern = re.compile(r'"' + re.escape(name) + r'"\s*:')
        hits = [i for i in range(lo, hi) if pattern.search(lines[i])]
        nested = [i for i in hits if depths[i] == level]
        return (nested or hits or [None])[0]

    def locate(path: str) -> Optional[int]:
        parts = path.split(".")
        if parts[0] == "config":
            parts = parts[1:]
        lo, hi, level, found = 0, len(lines), 1, None
        for name in parts:
            idx = find(name, lo, hi, level)
            if idx is None:
                break
            found = idx
            lo, hi, level = idx, value_end(idx), depths[idx] + 1
        return None if found is None else found + 1

    return locate


# ---------------------------------------------------------------------------
# Settings objects
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SequenceSettings:
    kind: str = "echo"
    n_pi: Tuple[int, ...] = (1,)
    tau_total: Tuple[float, ...] = ()
    phase_convention: str = "constant"
    finite_pulses: bool = False
    rabi_frequency: float = DEFAULT_RABI_FREQUENCY

    @property
    def pulse_duration(self) -> float:
        """π-pulse duration, 0 for ideal pulses."""
        return math.pi / self.rabi_frequency if self.finite_pulses else 0.0


@dataclass(frozen=True)
class EngineSettings:
    master_seed: int
    engine: str = "bloch"
    n_atoms: int = 10_000
    workers: int = 1
    mixing_overlap: float = 1.0
    mixing_eta: Optional[float] = None                  # derive mixing_overlap from the Fock overlap
    mixing_reference_temperature: float = 0.2e-6
    basis_size: int = 200
    initial_level: Optional[Tuple[int, ...]] = None     # None = thermal mixture

    @property
    def fock_initial(self):
        return "thermal" if self.initial_level is None else VibrationalLevel(self.initial_level)


@dataclass(frozen=True)
class AnalysisSettings:
    threshold: float = COHERENCE_THRESHOLD
    window: Optional[Tuple[float, float]] = None
    long_time_slope: Union[float, str] = 0.0            # number or "tail"
    tail_fraction: float = 0.25


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "results"
    prefix: str = "run"


@dataclass(frozen=True)
class CalibrationSettings:
    target_tau_c: Optional[float] = None
    parameter: str = "rayleigh_rate"
    lower: float = 0.1
    upper: float = 200.0
    tolerance: float = 0.05
    max_iterations: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    trap: TrapModel
    noise: NoiseConfig
    sequence: SequenceSettings
    engine: EngineSettings
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    source: Optional[str] = field(default=None, compare=False)

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, data: Json, source: Optional[str] = None,
                  text: Optional[str] = None) -> "ExperimentConfig":
        """
        Build from the parsed JSON document.  A run manifest (an object with
        a "config" entry) is accepted too and yields the config it recorded.
        """
        locate = _locator(text)
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", 1, source)
        if "config" in data and "fingerprint" in data:
            data = data["config"]
        try:
            root = _Section("config", data, locate)
            cfg = cls(
                trap=_read_trap(root.section("trap")),
                noise=_read_noise(root.section("noise")),
                sequence=_read_sequence(root.section("sequence")),
                engine=_read_engine(root.section("engine")),
                analysis=_read_analysis(root.section("analysis")),
                output=_read_output(root.section("output")),
                calibration=_read_calibration(root.section("calibration")),
                source=source,
            )
            root.finish()
        except ConfigError as exc:
            exc.source = source
            raise
        return cfg

    def to_dict(self) -> Json:
        """Normalized (SI) form; from_dict(to_dict()) reproduces the config."""
        t, n, s, e = self.trap, self.noise, self.sequence, self.engine
        a, o, c = self.analysis, self.output, self.calibration
        return {
            "trap": {
                "transverse_period": t.transverse_period,
                "trap_depth": t.trap_depth,
                "temperature": t.temperature,
                "differential_factor": t.differential_factor,
                "transverse_dims": t.transverse_dims,
                "hyperfine_splitting": t.hyperfine_splitting,
            },
            "noise": {
                "rayleigh_rate": n.rayleigh_rate,
                "recoil_model": n.recoil_model.kind,
                "kick_temperature": n.recoil_model.kick_temperature,
                "power_noise": None if n.power_noise is None else {
                    "sigma_rel": n.power_noise.sigma, "tau_corr": n.power_noise.tau_corr},
                "zeeman_noise": None if n.zeeman_noise is None else {
                    "sigma_freq": n.zeeman_noise.sigma, "tau_corr": n.zeeman_noise.tau_corr},
                "f_changing_rate": n.f_changing_rate,
                "mf_changing_rate": n.mf_changing_rate,
            },
            "sequence": {
                "kind": s.kind,
                "n_pi": list(s.n_pi),
                "tau_total": list(s.tau_total),
                "phase_convention": s.phase_convention,
                "finite_pulses": s.finite_pulses,
                "rabi_frequency": s.rabi_frequency,
            },
            "engine": {
                "engine": e.engine,
                "master_seed": e.master_seed,
                "n_atoms": e.n_atoms,
                "workers": e.workers,
                "mixing_overlap": e.mixing_overlap,
                "mixing_eta": e.mixing_eta,
                "mixing_reference_temperature": e.mixing_reference_temperature,
                "basis_size": e.basis_size,
                "initial_level": None if e.initial_level is None else list(e.initial_level),
            },
            "analysis": {
                "threshold": a.threshold,
                "window": None if a.window is None else list(a.window),
                "long_time_slope": a.long_time_slope,
                "tail_fraction": a.tail_fraction,
            },
            "output": {"directory": o.directory, "prefix": o.prefix},
            "calibration": {
                "target_tau_c": c.target_tau_c,
                "parameter": c.parameter,
                "lower": c.lower,
                "upper": c.upper,
                "tolerance": c.tolerance,
                "max_iterations": c.max_iterations,
            },
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint_of(self.to_dict())

    def with_noise(self, noise: NoiseConfig) -> "ExperimentConfig":
        return ExperimentConfig(self.trap, noise, self.sequence, self.engine, self.analysis,
                                self.output, self.calibration, self.source)


def load_config(path) -> ExperimentConfig:
    """Read and validate a config (or run manifest) file; OSError propagates."""
    path = pathlib.Path(path)
    text = path.read_text()
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from None
    except _DuplicateKey as dup:
        raise ConfigError(f"duplicate key '{dup.key}'", _locator(text)(dup.key), str(path)) from None
    return ExperimentConfig.from_dict(data, source=str(path), text=text)


class _DuplicateKey(Exception):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key


def _reject_duplicates(pairs: List[Tuple[str, Any]]) -> Json:
    out: Json = {}
    for key, value in pairs:
        if key in out:
            raise _DuplicateKey(key)
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# Per-section parsing
# ---------------------------------------------------------------------------
def _wrap(section: _Section, build):
    """Run a domain constructor, turning its ValueError into a located ConfigError."""
    try:
        return build()
    except ConfigError:
        raise
    except ValueError as exc:
        key = next((k for k in section.data if k in str(exc)), None)
        path = section.name if key is None else f"{section.name}.{key}"
        raise ConfigError(f"{section.name}: {exc}", section.locate(path)) from None


def _read_trap(sec: _Section) -> TrapModel:
    defaults = TrapModel.__dataclass_fields__
    trap = _wrap(sec, lambda: TrapModel(
        transverse_period=sec.time("transverse_period", defaults["transverse_period"].default),
        trap_depth=sec.number("trap_depth", defaults["trap_depth"].default),
        temperature=sec.number("temperature", defaults["temperature"].default),
        differential_factor=sec.number("differential_factor",
                                       defaults["differential_factor"].default),
        transverse_dims=sec.integer("transverse_dims", defaults["transverse_dims"].default),
        hyperfine_splitting=sec.number("hyperfine_splitting",
                                       defaults["hyperfine_splitting"].default),
    ))
    sec.finish()
    return trap


_DEFAULT_POWER_NOISE = {"sigma_rel": 0.01, "tau_corr": 30e-3}


def _read_ou(parent: _Section, key: str, sigma_key: str,
             default: Optional[Json]) -> Optional[OUProcess]:
    parent.used.add(key)
    raw = parent.data[key] if key in parent.data else default
    if raw is None:
        return None
    sub = _Section(f"{parent.name}.{key}", raw, parent.locate)
    proc = _wrap(sub, lambda: OUProcess(sub.number(sigma_key), sub.time("tau_corr")))
    sub.finish()
    return proc


def _read_noise(sec: _Section) -> NoiseConfig:
    kind = sec.choice("recoil_model", RECOIL_MODELS, "resample_thermal")
    kick = sec.number("kick_temperature",
                      recoil_temperature() if kind == "photon_recoil" else 0.0)
    power = _read_ou(sec, "power_noise", "sigma_rel", _DEFAULT_POWER_NOISE)
    zeeman = _read_ou(sec, "zeeman_noise", "sigma_freq", None)
    noise = _wrap(sec, lambda: NoiseConfig(
        rayleigh_rate=sec.number("rayleigh_rate", 0.0),
        recoil_model=RecoilModel(kind, kick),
        power_noise=power,
        zeeman_noise=zeeman,
        f_changing_rate=sec.number("f_changing_rate", 0.6),
        mf_changing_rate=sec.number("mf_changing_rate", 1.2),
    ))
    sec.finish()
    return noise


def _time_grid(sec: _Section, key: str) -> Tuple[float, ...]:
    raw = sec.get(key)
    if raw is None:
        raise sec.error(key, "is required")
    if isinstance(raw, dict):
        grid = _Section(f"{sec.name}.{key}", raw, sec.locate)
        start, stop = grid.time("start"), grid.time("stop")
        num = grid.integer("num")
        grid.finish()
        if num < 1 or not 0 < start <= stop:
            raise sec.error(key, "needs 0 < start <= stop and num >= 1")
        values = np.linspace(start, stop, num).tolist()
    elif isinstance(raw, list):
        try:
            values = [parse_time(v, key) for v in raw]
        except ValueError as exc:
            raise sec.error(key, str(exc)) from None
    else:
        raise sec.error(key, "expected a list of times or {start, stop, num}")
    if not values or min(values) <= 0 or any(b <= a for a, b in zip(values, values[1:])):
        raise sec.error(key, "times must be positive and strictly increasing")
    return tuple(float(v) for v in values)


def _read_sequence(sec: _Section) -> SequenceSettings:
    kind = sec.choice("kind", SCHEDULE_KINDS, "echo")
    raw_n = sec.get("n_pi", [1])
    if isinstance(raw_n, int) and not isinstance(raw_n, bool):
        raw_n = [raw_n]
    if (not isinstance(raw_n, list) or not raw_n
            or any(isinstance(n, bool) or not isinstance(n, int) for n in raw_n)):
        raise sec.error("n_pi", f"expected an integer or a list of integers, got {raw_n!r}")
    if kind == "multi_pi" and min(raw_n) < 1:
        raise sec.error("n_pi", "multi_pi needs n_pi >= 1")
    if len(set(raw_n)) != len(raw_n):
        raise sec.error("n_pi", "values must be distinct")
    finite = sec.get("finite_pulses", False)
    if not isinstance(finite, bool):
        raise sec.error("finite_pulses", f"expected true or false, got {finite!r}")
    settings = SequenceSettings(
        kind=kind,
        n_pi=tuple(raw_n),
        tau_total=_time_grid(sec, "tau_total"),
        phase_convention=sec.choice("phase_convention", PHASE_CONVENTIONS, "constant"),
        finite_pulses=finite,
        rabi_frequency=sec.number("rabi_frequency", DEFAULT_RABI_FREQUENCY),
    )
    if not settings.rabi_frequency > 0:
        raise sec.error("rabi_frequency", "must be > 0")
    sec.finish()
    return settings


def _read_engine(sec: _Section) -> EngineSettings:
    if not sec.has("master_seed"):
        raise ConfigError("engine.master_seed is required", sec.locate(sec.name))
    seed = sec.integer("master_seed")
    if seed < 0:
        raise sec.error("master_seed", "must be >= 0")
    level = sec.get("initial_level", "thermal")
    if level == "thermal" or level is None:
        initial = None
    elif (isinstance(level, list) and level
          and all(isinstance(n, int) and not isinstance(n, bool) and n >= 0 for n in level)):
        initial = tuple(level)
    else:
        raise sec.error("initial_level", f"expected \"thermal\" or a list of quantum numbers, got {level!r}")
    settings = EngineSettings(
        master_seed=seed,
        engine=sec.choice("engine", ENGINES, "bloch"),
        n_atoms=sec.integer("n_atoms", 10_000),
        workers=sec.integer("workers", 1),
        mixing_overlap=sec.number("mixing_overlap", 1.0),
        mixing_eta=None if sec.get("mixing_eta") is None else sec.number("mixing_eta"),
        mixing_reference_temperature=sec.number("mixing_reference_temperature", 0.2e-6),
        basis_size=sec.integer("basis_size", 200),
        initial_level=initial,
    )
    if settings.n_atoms < 1:
        raise sec.error("n_atoms", "must be >= 1")
    if settings.workers < 1:
        raise sec.error("workers", "must be >= 1")
    if not 0 < settings.mixing_overlap <= 1:
        raise sec.error("mixing_overlap", "must lie in (0, 1]")
    if settings.mixing_eta is not None:
        if not 0 < settings.mixing_eta < MAX_MIXING_ETA:
            raise sec.error("mixing_eta", f"must lie in (0, {MAX_MIXING_ETA:g})")
        if sec.has("mixing_overlap") and settings.mixing_overlap != 1.0:
            raise sec.error("mixing_eta", "set either mixing_overlap or mixing_eta, not both")
    if not settings.mixing_reference_temperature > 0:
        raise sec.error("mixing_reference_temperature", "must be > 0")
    if settings.basis_size < 2:
        raise sec.error("basis_size", "must be >= 2")
    sec.finish()
    return settings


def _read_analysis(sec: _Section) -> AnalysisSettings:
    threshold = sec.number("threshold", COHERENCE_THRESHOLD)
    if not 0 < threshold < 1:
        raise sec.error("threshold", "must lie in (0, 1)")
    raw_window = sec.get("window")
    window = None
    if raw_window is not None:
        if not isinstance(raw_window, list) or len(raw_window) != 2:
            raise sec.error("window", "expected [t_lo, t_hi]")
        try:
            window = (parse_time(raw_window[0], "window"), parse_time(raw_window[1], "window"))
        except ValueError as exc:
            raise sec.error("window", str(exc)) from None
        if not 0 <= window[0] < window[1]:
            raise sec.error("window", "needs 0 <= t_lo < t_hi")
    slope = sec.get("long_time_slope", 0.0)
    if slope != "tail" and (isinstance(slope, bool) or not isinstance(slope, (int, float))):
        raise sec.error("long_time_slope", f"expected a rate or \"tail\", got {slope!r}")
    fraction = sec.number("tail_fraction", 0.25)
    if not 0 < fraction <= 1:
        raise sec.error("tail_fraction", "must lie in (0, 1]")
    sec.finish()
    return AnalysisSettings(threshold, window, slope if slope == "tail" else float(slope), fraction)


def _read_output(sec: _Section) -> OutputSettings:
    directory = sec.get("directory", "results")
    prefix = sec.get("prefix", "run")
    for key, value in (("directory", directory), ("prefix", prefix)):
        if not isinstance(value, str) or not value:
            raise sec.error(key, "expected a non-empty string")
    sec.finish()
    return OutputSettings(directory, prefix)


def _read_calibration(sec: _Section) -> CalibrationSettings:
    target = sec.get("target_tau_c")
    if target is not None:
        try:
            target = parse_time(target, "target_tau_c")
        except ValueError as exc:
            raise sec.error("target_tau_c", str(exc)) from None
        if not target > 0:
            raise sec.error("target_tau_c", "must be > 0")
    settings = CalibrationSettings(
        target_tau_c=target,
        parameter=sec.choice("parameter", CALIBRATION_PARAMETERS, "rayleigh_rate"),
        lower=sec.number("lower", 0.1),
        upper=sec.number("upper", 200.0),
        tolerance=sec.number("tolerance", 0.05),
        max_iterations=sec.integer("max_iterations", 20),
    )
    if not 0 <= settings.lower < settings.upper:
        raise sec.error("lower", "needs 0 <= lower < upper")
    if not 0 < settings.tolerance < 1:
        raise sec.error("tolerance", "must lie in (0, 1)")
    if settings.max_iterations < 1:
        raise sec.error("max_iterations", "must be >= 1")
    sec.finish()
    return settings
