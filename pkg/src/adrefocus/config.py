"""TOML scenario configuration.

Every dimensioned value is a string with a unit suffix; see
``configs/README.md`` for the schema and the bundled examples for one
canonical file per scenario. Parsing returns a :class:`Config` holding SI
values, angular where the model expects angular.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import (InhomogeneousDistribution, OpticalProbe, PulseSequence, SequenceError,
                    refocusing_block, refocusing_sequence)
from .units import UnitError, angular, parse_quantity

BUNDLED = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    """Unparseable file, missing key or invalid value."""


@dataclass(frozen=True)
class PulseConfig:
    rabi: float
    chirp: float
    duration: float


@dataclass(frozen=True)
class Config:
    label: str
    path: Path | None
    pulse: PulseConfig
    period: float
    excitation: str = "adiabatic"
    ahp_duration: float | None = None
    hard_duration: float = 0.0
    shape: str = "gaussian"
    fwhm: float = 2 * math.pi * 0.5e6
    nodes: int = 2001
    span: float = 4.0
    samples: int | None = None
    sampling: str = "stratified"
    rabi_spread: float = 0.0
    gamma: float = 0.0
    probe: OpticalProbe = OpticalProbe()
    trace_samples: int = 1201
    nutation: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    spheres: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)

    def distribution(self, seed: int | None = None) -> InhomogeneousDistribution:
        if self.shape == "gaussian":
            dist = InhomogeneousDistribution.gaussian(self.fwhm, self.nodes, self.span)
        else:
            dist = InhomogeneousDistribution.lorentzian(self.fwhm, self.nodes, self.span)
        if self.samples:
            dist = dist.sample(self.samples, 0 if seed is None else seed, self.sampling)
        return dist.with_rabi_spread(self.rabi_spread)

    def sequence(self, period: float | None = None) -> PulseSequence:
        p = self.pulse
        return refocusing_sequence(p.rabi, p.chirp, self.period if period is None else period,
                                   afp_duration=p.duration, ahp_duration=self.ahp_duration,
                                   excitation=self.excitation, hard_duration=self.hard_duration)

    def block(self) -> PulseSequence:
        p = self.pulse
        return refocusing_block(p.rabi, p.chirp, self.period, afp_duration=p.duration)


def _get(table: dict, key: str, where: str, default=...):
    if key in table:
        return table[key]
    if default is ...:
        raise ConfigError(f"missing key '{key}' in [{where}]")
    return default


def _qty(table: dict, key: str, kind: str, where: str, default=...):
    raw = _get(table, key, where, default)
    if raw is default and default is not ...:
        return default
    try:
        return parse_quantity(raw, kind)
    except UnitError as exc:
        raise ConfigError(f"[{where}] {key}: {exc}") from None


def _number(table, key, where, default, kind=float, positive=False):
    raw = _get(table, key, where, default)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"[{where}] {key}: expected a number, got {raw!r}")
    val = kind(raw)
    if positive and not val > 0:
        raise ConfigError(f"[{where}] {key}: must be > 0")
    return val


def load_config(path) -> Config:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw, path)


def parse_config(raw: dict, path: Path | None = None) -> Config:
    label = str(raw.get("label", path.stem if path else "run"))
    pulse_t = _get(raw, "pulse", "top level")
    pulse = PulseConfig(
        rabi=angular(_qty(pulse_t, "rabi", "frequency", "pulse")),
        chirp=angular(_qty(pulse_t, "chirp", "chirp", "pulse")),
        duration=_qty(pulse_t, "duration", "time", "pulse"))
    seq_t = raw.get("sequence", {})
    period = _qty(seq_t, "period", "time", "sequence", 2.0 * pulse.duration)
    excitation = str(seq_t.get("excitation", "adiabatic"))
    ahp = _qty(seq_t, "ahp_duration", "time", "sequence", None)
    hard = _qty(seq_t, "hard_duration", "time", "sequence", 0.0)

    dist_t = raw.get("distribution", {})
    shape = str(dist_t.get("shape", "gaussian"))
    if shape not in ("gaussian", "lorentzian"):
        raise ConfigError(f"[distribution] shape: expected 'gaussian' or 'lorentzian', got {shape!r}")
    fwhm = angular(_qty(dist_t, "fwhm", "frequency", "distribution"))
    nodes = _number(dist_t, "nodes", "distribution", 2001, int, True)
    span = _number(dist_t, "span", "distribution", 4.0 if shape == "gaussian" else 20.0, float, True)
    samples = dist_t.get("samples")
    if samples is not None:
        samples = _number(dist_t, "samples", "distribution", None, int, True)
    sampling = str(dist_t.get("sampling", "stratified"))
    spread = _number(dist_t, "rabi_spread", "distribution", 0.0)

    relax = raw.get("relaxation", {})
    if "gamma" in relax and "lifetime" in relax:
        raise ConfigError("[relaxation] give either gamma or lifetime, not both")
    if "lifetime" in relax:
        gamma = 1.0 / _qty(relax, "lifetime", "time", "relaxation")
    else:
        gamma = _qty(relax, "gamma", "rate", "relaxation", 0.0)

    probe_t = raw.get("probe", {})
    try:
        probe = OpticalProbe(_number(probe_t, "alpha0", "probe", math.log(2.0)),
                             _number(probe_t, "input_intensity", "probe", 1.0))
    except ValueError as exc:
        raise ConfigError(f"[probe] {exc}") from None
    trace_samples = _number(raw.get("trace", {}), "samples", "trace", 1201, int, True)

    cfg = Config(label=label, path=path, pulse=pulse, period=period, excitation=excitation,
                 ahp_duration=ahp, hard_duration=hard, shape=shape, fwhm=fwhm, nodes=nodes,
                 span=span, samples=samples, sampling=sampling, rabi_spread=spread, gamma=gamma,
                 probe=probe, trace_samples=trace_samples,
                 nutation=_nutation(raw.get("nutation", {})),
                 calibration=_calibration(raw.get("calibration", {})),
                 decay=_decay(raw.get("decay_series", {})),
                 spheres=_spheres(raw.get("spheres", {})),
                 fit=_fit(raw.get("fit", {})))
    try:
        cfg.sequence()
        cfg.distribution()
    except (SequenceError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _nutation(t: dict) -> dict:
    if not t:
        return {}
    out = {"duration": _qty(t, "duration", "time", "nutation"),
           "samples": _number(t, "samples", "nutation", 1601, int, True),
           "detuning": angular(_qty(t, "detuning", "frequency", "nutation", 0.0))}
    if "voltage" in t:
        out["voltage"] = _qty(t, "voltage", "voltage", "nutation")
    return out


def _calibration(t: dict) -> dict:
    if not t:
        return {}
    slope = _qty(t, "slope", "slope", "calibration")
    volts = _get(t, "voltages", "calibration")
    if not isinstance(volts, list) or not volts:
        raise ConfigError("[calibration] voltages: expected a non-empty list")
    try:
        v = [parse_quantity(x, "voltage") for x in volts]
    except UnitError as exc:
        raise ConfigError(f"[calibration] voltages: {exc}") from None
    out = {"slope": slope, "voltages": v}
    if "reference_rabi" in t:
        out["reference_rabi"] = _qty(t, "reference_rabi", "frequency", "calibration")
    if "reference_voltage" in t:
        out["reference_voltage"] = _qty(t, "reference_voltage", "voltage", "calibration")
    return out


def _decay(t: dict) -> dict:
    if not t:
        return {}
    periods = _get(t, "periods", "decay_series")
    if not isinstance(periods, list) or len(periods) < 3:
        raise ConfigError("[decay_series] periods: expected a list of at least 3 times")
    try:
        p = [parse_quantity(x, "time") for x in periods]
    except UnitError as exc:
        raise ConfigError(f"[decay_series] periods: {exc}") from None
    return {"periods": p, "t_inf": _qty(t, "t_inf", "time", "decay_series", None)}


def _spheres(t: dict) -> dict:
    init = t.get("initial", [1.0, 0.0, 0.0])
    if not (isinstance(init, list) and len(init) == 3 and all(isinstance(x, (int, float)) for x in init)):
        raise ConfigError("[spheres] initial: expected three numbers")
    return {"initial": [float(x) for x in init]}


def _fit(t: dict) -> dict:
    if not t:
        return {}
    return {"window": _qty(t, "window", "time", "fit", None)}
