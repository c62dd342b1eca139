"""Parsing of unit-suffixed scalars such as ``45ns``, ``3 dBm`` or ``17 ps/nm/km``.

Everything is converted to SI. Compound units are split on ``/`` and each
factor may carry a metric prefix.
"""

import math
import re

_PREFIX = {
    "f": 1e-15, "p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "μ": 1e-6,
    "m": 1e-3, "c": 1e-2, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12,
}

_BASE = {
    "s": 1.0, "m": 1.0, "W": 1.0, "Hz": 1.0, "bps": 1.0, "b/s": 1.0,
    "K": 1.0, "J": 1.0, "rad": 1.0, "Sa/s": 1.0, "SaPs": 1.0,
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def _factor(token: str) -> float:
    if token in _BASE:
        return _BASE[token]
    if token and token[0] in _PREFIX and token[1:] in _BASE:
        return _PREFIX[token[0]] * _BASE[token[1:]]
    raise ValueError(f"unknown unit {token!r}")


def _unit_scale(unit: str) -> float:
    if unit in ("bps", "b/s", "Sa/s"):
        return 1.0
    for compound in ("bps", "Sa/s"):
        if unit.endswith(compound) and unit[:-len(compound)] in _PREFIX:
            return _PREFIX[unit[:-len(compound)]]
    parts = unit.split("/")
    scale = _factor(parts[0]) if parts[0] else 1.0
    for p in parts[1:]:
        scale /= _factor(p)
    return scale


def parse_quantity(text, default_unit: str = "") -> float:
    """Convert ``text`` to an SI float.

    Plain numbers pass through unchanged unless ``default_unit`` is given.
    ``dBm`` is converted to watts; ``pi`` multiples (``0.5pi``) to radians.

    >>> parse_quantity("45ns")
    4.5e-08
    >>> round(parse_quantity("3dBm"), 6)
    0.001995
    """
    if isinstance(text, (int, float)):
        value, unit = float(text), default_unit
    else:
        m = _NUMBER.match(str(text))
        if m is None:
            raise ValueError(f"cannot parse quantity {text!r}")
        value, unit = float(m.group(1)), m.group(2) or default_unit
    if not unit:
        return value
    if unit == "dBm":
        return 1e-3 * 10 ** (value / 10)
    if unit == "dB":
        return 10 ** (value / 10)
    if unit in ("pi", "π"):
        return value * math.pi
    if unit == "%":
        return value / 100
    return value * _unit_scale(unit)


def format_si(value: float, unit: str) -> str:
    """Render a float with its unit, keeping full precision (``4.5e-08s``)."""
    return f"{value!r}{unit}"
