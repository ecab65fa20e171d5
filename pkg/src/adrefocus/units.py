"""Dimensioned quantities for configuration files.

Every dimensioned field in a config carries an explicit unit suffix, e.g.
``"284.4 kHz"``, ``"40 kHz/us"``, ``"0.33 ms"`` or ``"3.0 1/ms"``. Bare
numbers are rejected for these fields. Values come back in SI base units
(Hz, s, Hz/s, 1/s, V, Hz/V); angular conversion is explicit via
:func:`angular`.
"""

from __future__ import annotations

import math
import re

TWO_PI = 2.0 * math.pi

_FREQ = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
_TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9}
_VOLT = {"V": 1.0, "mV": 1e-3, "kV": 1e3}

KINDS = ("frequency", "time", "chirp", "rate", "voltage", "slope")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_QUANTITY = re.compile(rf"^\s*(?P<value>{_NUMBER})\s*(?P<unit>\S.*?)?\s*$")


class UnitError(ValueError):
    """Raised for missing, unknown or dimensionally wrong units."""


def _scale(unit: str, kind: str) -> float:
    unit = unit.replace(" ", "")
    if kind == "frequency":
        table = _FREQ
    elif kind == "time":
        table = _TIME
    elif kind == "voltage":
        table = _VOLT
    elif kind == "chirp":
        num, sep, den = unit.partition("/")
        if not sep or num not in _FREQ or den not in _TIME:
            raise UnitError(f"expected <frequency>/<time> for a chirp rate, got {unit!r}")
        return _FREQ[num] / _TIME[den]
    elif kind == "slope":
        num, sep, den = unit.partition("/")
        if not sep or num not in _FREQ or den not in _VOLT:
            raise UnitError(f"expected <frequency>/<voltage> for a slope, got {unit!r}")
        return _FREQ[num] / _VOLT[den]
    elif kind == "rate":
        m = re.fullmatch(r"(?:1?/)(\w+)|(\w+)\^-1", unit)
        if m:
            den = m.group(1) or m.group(2)
            if den in _TIME:
                return 1.0 / _TIME[den]
        if unit in _FREQ:
            return _FREQ[unit]
        raise UnitError(f"expected an inverse time (e.g. '1/ms', 'ms^-1') for a rate, got {unit!r}")
    else:
        raise ValueError(f"unknown quantity kind {kind!r}; expected one of {KINDS}")
    if unit not in table:
        raise UnitError(f"unknown {kind} unit {unit!r}; expected one of {sorted(table)}")
    return table[unit]


def parse_quantity(text, kind: str) -> float:
    """Parse ``"<number> <unit>"`` into SI units of the given kind.

    >>> parse_quantity("284.4 kHz", "frequency")
    284400.0
    >>> parse_quantity("40 kHz/us", "chirp")
    40000000000.0
    """
    if not isinstance(text, str):
        raise UnitError(f"{kind} value {text!r} needs an explicit unit suffix")
    m = _QUANTITY.match(text)
    if m is None:
        raise UnitError(f"cannot parse {kind} quantity {text!r}")
    if not m.group("unit"):
        raise UnitError(f"{kind} value {text!r} needs an explicit unit suffix")
    return float(m.group("value")) * _scale(m.group("unit"), kind)


def angular(hz: float) -> float:
    """Ordinary frequency (Hz, Hz/s) to angular (rad/s, rad/s^2)."""
    return TWO_PI * hz


def ordinary(rad: float) -> float:
    """Angular frequency back to ordinary frequency."""
    return rad / TWO_PI


def format_frequency(rad_per_s: float) -> str:
    hz = ordinary(rad_per_s)
    for unit, scale in (("MHz", 1e6), ("kHz", 1e3)):
        if abs(hz) >= scale:
            return f"{hz / scale:.4g} {unit}"
    return f"{hz:.4g} Hz"


def format_time(seconds: float) -> str:
    for unit, scale in (("s", 1.0), ("ms", 1e-3), ("us", 1e-6)):
        if abs(seconds) >= scale:
            return f"{seconds / scale:.4g} {unit}"
    return f"{seconds / 1e-9:.4g} ns"
