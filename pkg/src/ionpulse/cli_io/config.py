"""Run configuration: a YAML (or JSON) document checked against a strict schema.

Every physical quantity carries its unit in the key name (``rep_rate_ghz``,
``theta_pi``); angles are given in units of pi. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import yaml

from ..errors import SchemaError, UnitError
from ..quantum_core import P32_LIFETIME_NS, P52_BRANCHING

COMMANDS = ("simulate", "scan", "burst", "ramsey", "fit", "ellipse", "schedule", "power")
UNIT_SUFFIXES = ("_rad_per_ns", "_per_ns", "_pi", "_ghz", "_mhz", "_gs", "_ns", "_w",
                 "_mw", "_db", "_nm")


@dataclass(frozen=True)
class Field:
    kind: str                 # float, int, bool, str, floats, ints, section
    default: Any = None
    required: bool = False
    lo: float = -math.inf
    hi: float = math.inf
    lo_open: bool = False
    hi_open: bool = False
    choices: tuple = ()
    schema: dict | None = None


def _f(default=None, lo=-math.inf, hi=math.inf, required=False, lo_open=False, hi_open=False):
    return Field("float", default, required, lo, hi, lo_open, hi_open)


def _i(default=None, lo=-math.inf, hi=math.inf, required=False):
    return Field("int", default, required, lo, hi)


ATOM = {
    "gamma_per_ns": _f(1.0 / P32_LIFETIME_NS, 0.0),
    "p52": _f(P52_BRANCHING, 0.0, 1.0),
    "decay_model": Field("str", "exact", choices=("exact", "per_channel")),
}

HARDWARE = {
    "base_rep_rate_ghz": _f(5.0, 0.0, lo_open=True),
    "awg_sample_rate_gs": _f(25.0, 0.0, lo_open=True),
    "pockels_rise_fall_ns": _f(7.0, 0.0, lo_open=True),
    "pockels_min_on_ns": _f(35.0, 0.0, lo_open=True),
    "pockels_max_rate_mhz": _f(10.0, 0.0, lo_open=True),
    "max_edfa_dark_ns": _f(20.0, 0.0, lo_open=True),
    "idle_rep_rate_ghz": _f(1.25, 0.0, lo_open=True),
}

_THETA = _f(None, 0.0, 2.0, required=True, hi_open=True)
_RATE = _f(None, 0.0, required=True, lo_open=True)
_ANGLE = _f(0.0, 0.0, 2.0, hi_open=True)

COMMON = {
    "command": Field("str", None, True, choices=COMMANDS),
    "seed": _i(0, 0),
    "output_dir": Field("str", "out"),
    "atom": Field("section", schema=ATOM),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "simulate": {
        "theta_pi": _THETA, "rep_rate_ghz": _RATE, "n": _i(None, 0, required=True),
        "delta_rad_per_ns": _f(0.0), "delta_prime_rad_per_ns": _f(0.0),
        "theta_first_pi": Field("float", None, False, 0.0, 2.0, False, True),
        "dphi_first_pi": _ANGLE,
        "initial": Field("str", "S", choices=("S", "P", "D", "SD")),
        "points": _i(101, 2),
    },
    "scan": {
        "theta_pi": _THETA, "rep_rate_ghz": _RATE,
        "pulse_counts": Field("ints", [500, 1000, 2000, 5000], lo=1),
        "detuning_points": _i(41, 3), "detuning_offset_rad_per_ns": _f(0.0),
        "shots": _i(100, 1),
    },
    "burst": {
        "theta_pi": _THETA, "rep_rate_ghz": _RATE,
        "theta_first_pi": Field("float", None, False, 0.0, 2.0, False, True),
        "dphi_first_pi": _ANGLE, "n_max": _i(12, 1), "m": _i(20, 1),
        "t_wait_ns": _f(20_000.0, 0.0, lo_open=True), "detuning_points": _i(41, 3),
        "shots": _i(100, 1),
    },
    "ramsey": {
        "theta_pi": _THETA, "rep_rate_ghz": _RATE,
        "delta_rad_per_ns": _f(0.0), "delta_prime_rad_per_ns": _f(0.0),
        "n_max": _i(20, 2), "analysis_phases": _i(41, 3), "contrast_scale": _f(1.0, 0.0, 1.0),
        "shots": _i(100, 1),
    },
    "fit": {
        "protocol": Field("str", None, True,
                          choices=("many_pulse", "single_pulse", "ramsey", "pi_scan")),
        "data_file": Field("str", None, True), "rep_rate_ghz": _f(None, 0.0, lo_open=True),
        "fit_first_area": Field("bool", False), "m": _i(20, 1), "shots": _i(100, 1),
    },
    "ellipse": {
        "data_file": Field("str", None),
        "pulse_phases_pi": Field("floats", [0.0, 0.74, 0.12, 0.0, 0.0]),
        "samples": _i(100, 8), "noise": _f(0.02, 0.0), "wavelength_nm": _f(786.0, 0.0, lo_open=True),
        "reference_peak": _i(3, 0),
    },
    "schedule": {
        "payload_slots": Field("ints", [], lo=0),
        "total_duration_ns": _f(None, 0.0, lo_open=True),
        "waveform_file": Field("str", None),
        "transient_rep_rate_ghz": _f(None, 0.0, lo_open=True),
        "hardware": Field("section", schema=HARDWARE),
    },
    "power": {
        "p_fundamental_w": Field("floats", None, True, lo=0.0),
        "rep_rate_ghz": _f(5.0, 0.0, lo_open=True),
        "extinction_in_db": _f(30.0, 0.0),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings; ``params`` holds the command's keys with defaults."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"

    def canonical(self) -> str:
        return json.dumps({"command": self.command, "params": self.params, "seed": self.seed},
                          sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _stem(key: str) -> str:
    for suffix in UNIT_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def _check_value(name: str, spec: Field, value, path: str):
    def fail(msg):
        raise SchemaError(msg, path)

    def number(v, integer):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            fail(f"expected a {'integer' if integer else 'number'}, got {v!r}")
        if integer and not float(v).is_integer():
            fail(f"expected an integer, got {v!r}")
        v = int(v) if integer else float(v)
        if not math.isfinite(v):
            fail("value must be finite")
        below = v <= spec.lo if spec.lo_open else v < spec.lo
        above = v >= spec.hi if spec.hi_open else v > spec.hi
        if below or above:
            lo = "(" if spec.lo_open else "["
            hi = ")" if spec.hi_open else "]"
            fail(f"value {v!r} outside {lo}{spec.lo:g}, {spec.hi:g}{hi}")
        return v

    if spec.kind == "float":
        return number(value, False)
    if spec.kind == "int":
        return number(value, True)
    if spec.kind == "bool":
        if not isinstance(value, bool):
            fail(f"expected true or false, got {value!r}")
        return value
    if spec.kind == "str":
        if not isinstance(value, str):
            fail(f"expected a string, got {value!r}")
        if spec.choices and value not in spec.choices:
            fail(f"{value!r} is not one of {', '.join(spec.choices)}")
        return value
    if spec.kind in ("floats", "ints"):
        if not isinstance(value, list) or not value:
            fail("expected a non-empty list")
        return [number(v, spec.kind == "ints") for v in value]
    if spec.kind == "section":
        if not isinstance(value, dict):
            fail("expected a mapping")
        return _check_tree(value, spec.schema, path + ".")
    raise AssertionError(spec.kind)


def _check_tree(doc: dict, schema: dict, prefix: str = "") -> dict:
    stems = {_stem(k): k for k in schema}
    out = {}
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if not isinstance(key, str):
            raise SchemaError("keys must be strings", path)
        if key not in schema:
            if _stem(key) in stems:
                raise UnitError(f"unit suffix missing or wrong; expected {stems[_stem(key)]!r}",
                                path)
            raise SchemaError("unknown key", path)
        out[key] = _check_value(key, schema[key], value, path)
    for key, spec in schema.items():
        if key in out:
            continue
        if spec.required:
            raise SchemaError("required key missing", f"{prefix}{key}")
        if spec.kind == "section":
            out[key] = _check_tree({}, spec.schema, f"{prefix}{key}.")
        else:
            out[key] = spec.default
    return out


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate a config document, applying defaults.

    ``command`` (from the command line) is used when the document has no
    ``command`` key and must agree with it otherwise.

    Examples
    --------
    >>> cfg = parse_config("command: simulate\\ntheta_pi: 0.345\\nrep_rate_ghz: 1.25\\nn: 500")
    >>> cfg.params["atom"]["p52"]
    0.0587
    """
    try:
        doc = yaml.safe_load(text) if text.strip() else None
    except yaml.YAMLError as exc:
        raise SchemaError(f"not a well-formed document: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SchemaError("top level must be a mapping")
    if command is not None:
        if "command" in doc and doc["command"] != command:
            raise SchemaError(f"document is for {doc['command']!r}, not {command!r}", "command")
        doc = {**doc, "command": command}
    if not doc:
        raise SchemaError("empty document")
    if "command" not in doc:
        raise SchemaError("required key missing", "command")
    cmd = _check_value("command", COMMON["command"], doc["command"], "command")
    schema = {**COMMON, **SCHEMAS[cmd]}
    tree = _check_tree(doc, schema)
    seed = tree.pop("seed")
    output_dir = tree.pop("output_dir")
    tree.pop("command")
    return RunConfig(cmd, tree, seed, output_dir)
