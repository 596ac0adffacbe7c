"""Scenario configuration: dataclasses, a strict INI-style parser and its inverse.

Grammar (one item per line, ``#`` starts a comment)::

    [section]
    key = value

Values are numbers (``2.5e5``), comma-separated vectors (``0, 0``),
schedules of ``(time, value)`` pairs (``(0, 100), (30, 250)``), the word
``auto`` where documented, or bare strings for file names.  Unknown
sections or keys, duplicates and malformed values are errors that carry
the line and column of the offending text.
"""

from __future__ import annotations

import difflib
import math
import re
from dataclasses import dataclass, field, fields, replace

from .pemfc import (CURRENT_LIMITS, DEFAULT_CURRENT, DEFAULT_FAULT, PhysicalParams,
                    Schedule)


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, col=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}:{col if col is not None else 1}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class SimulationConfig:
    duration: float = 120.0      # s
    dt: float = 1e-4             # s, shared by plant and observer
    decimation: int = 10         # log every n-th step
    seed: int = 0                # measurement-noise seed
    noise: float = 0.0           # half-width of uniform noise on y, output units


@dataclass(frozen=True)
class DesignConfig:
    H: float = 4.0
    eps_r: float = 0.1
    eps_k: float = 10.0
    safety: float = 1.2          # multiplier on sampled Lipschitz constants


@dataclass(frozen=True)
class ObserverConfig:
    z2_0: tuple = (0.0, 0.0)     # initial (x2, x3) estimate
    theta0: float = 275.0        # initial stack-current estimate, A
    L_init: float = 5000.0
    k_rate: float = 500.0
    dead_zone: float = 1e-3      # normalized output-error units
    L_max: float = 1e6
    output_scale: tuple = (1e3, 1e3)  # Pa per normalized unit, per output
    diff_L0: float = 1e6         # Pa/s^2
    warmup: float = 0.1          # s
    filter_tau: float = 0.01     # s
    inv_bound: float = 1e6


@dataclass(frozen=True)
class ProfilesConfig:
    current: Schedule = DEFAULT_CURRENT          # stack current, A
    fault: Schedule = DEFAULT_FAULT              # leak, kg/s
    motor_current: Schedule | None = None        # None: hold the equilibrium value
    x1_setpoint: float = 2.5e5                   # Pa, used when motor_current is auto
    x0: tuple | None = None                      # None: equilibrium at t = 0


@dataclass(frozen=True)
class OutputConfig:
    trace: str = "trace.csv"


@dataclass(frozen=True)
class ScenarioConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    plant: PhysicalParams = field(default_factory=PhysicalParams)
    design: DesignConfig = field(default_factory=DesignConfig)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    profiles: ProfilesConfig = field(default_factory=ProfilesConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        validate(self)

    def with_changes(self, **sections):
        """Copy with some fields replaced, e.g. ``with_changes(simulation={"duration": 2})``."""
        kw = {}
        for name, changes in sections.items():
            kw[name] = replace(getattr(self, name), **changes)
        return replace(self, **kw)


SECTIONS = {
    "simulation": SimulationConfig,
    "plant": PhysicalParams,
    "design": DesignConfig,
    "observer": ObserverConfig,
    "profiles": ProfilesConfig,
    "output": OutputConfig,
}

# value kinds; anything not listed is a float
KINDS = {
    ("simulation", "decimation"): "int",
    ("simulation", "seed"): "int",
    ("observer", "z2_0"): "vector2",
    ("observer", "output_scale"): "vector2",
    ("profiles", "current"): "schedule",
    ("profiles", "fault"): "schedule",
    ("profiles", "motor_current"): "auto|schedule",
    ("profiles", "x0"): "auto|vector4",
    ("output", "trace"): "str",
}


def _range_error(key, value, rule):
    return ConfigError(f"{key} = {value!r} out of range: {rule}")


def validate(cfg):
    s = cfg.simulation
    if not s.duration > 0:
        raise _range_error("[simulation] duration", s.duration, "must be > 0")
    if not 0 < s.dt <= 1e-3:
        raise _range_error("[simulation] dt", s.dt, "must satisfy 0 < dt <= 1e-3")
    if s.duration < s.dt:
        raise _range_error("[simulation] duration", s.duration, f"shorter than dt = {s.dt}")
    if s.decimation < 1:
        raise _range_error("[simulation] decimation", s.decimation, "must be >= 1")
    if s.seed < 0:
        raise _range_error("[simulation] seed", s.seed, "must be >= 0")
    if not s.noise >= 0:
        raise _range_error("[simulation] noise", s.noise, "must be >= 0")
    d = cfg.design
    for k in ("H", "eps_r", "eps_k", "safety"):
        if not getattr(d, k) > 0:
            raise _range_error(f"[design] {k}", getattr(d, k), "must be > 0")
    o = cfg.observer
    for k in ("L_init", "k_rate", "L_max", "diff_L0", "filter_tau", "inv_bound"):
        if not getattr(o, k) > 0:
            raise _range_error(f"[observer] {k}", getattr(o, k), "must be > 0")
    for k in ("dead_zone", "warmup"):
        if not getattr(o, k) >= 0:
            raise _range_error(f"[observer] {k}", getattr(o, k), "must be >= 0")
    if o.L_init > o.L_max:
        raise _range_error("[observer] L_init", o.L_init, f"exceeds L_max = {o.L_max}")
    if len(o.z2_0) != 2 or len(o.output_scale) != 2:
        raise ConfigError("[observer] z2_0 and output_scale need 2 entries")
    if not all(v > 0 for v in o.output_scale):
        raise _range_error("[observer] output_scale", o.output_scale, "entries must be > 0")
    p = cfg.profiles
    lo, hi = CURRENT_LIMITS
    bad = [v for v in p.current.values if not lo <= v <= hi]
    if bad:
        raise _range_error("[profiles] current", bad, f"values must lie in [{lo}, {hi}] A")
    if not p.x1_setpoint > cfg.plant.p_atm:
        raise _range_error("[profiles] x1_setpoint", p.x1_setpoint, "must exceed p_atm")
    if p.x0 is not None:
        if len(p.x0) != 4:
            raise ConfigError("[profiles] x0 needs 4 entries")
        x1, x2, x3, x4 = p.x0
        if not (x1 >= cfg.plant.p_atm and 0 < x2 < x1 and x3 >= 0 and x4 > 0):
            raise _range_error("[profiles] x0", p.x0,
                               "need x1 >= p_atm, 0 < x2 < x1, x3 >= 0, x4 > 0")


# --- parsing -------------------------------------------------------------------

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_NUM_RE = re.compile(_NUM + r"\Z")
_PAIR_RE = re.compile(r"\s*\(\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*\)\s*")


def _number(text, where, col):
    t = text.strip()
    if not _NUM_RE.match(t):
        raise ConfigError(f"expected a number, got {t!r}", *where, col)
    v = float(t)
    if not math.isfinite(v):
        raise ConfigError(f"number {t!r} is not finite", *where, col)
    return v


def _parse_value(kind, text, key, where, col):
    t = text.strip()
    if kind.startswith("auto|"):
        if t == "auto":
            return None
        kind = kind[5:]
    if kind == "str":
        if not t:
            raise ConfigError(f"{key}: empty value", *where, col)
        return t
    if kind == "int":
        if not re.fullmatch(r"[-+]?\d+", t):
            raise ConfigError(f"{key}: expected an integer, got {t!r}", *where, col)
        return int(t)
    if kind.startswith("vector"):
        n = int(kind[6:])
        parts = t.split(",")
        if len(parts) != n:
            raise ConfigError(f"{key}: expected {n} comma-separated numbers, got {len(parts)}",
                              *where, col)
        out, c = [], col
        for part in parts:
            out.append(_number(part, where, c + len(part) - len(part.lstrip())))
            c += len(part) + 1
        return tuple(out)
    if kind == "schedule":
        pairs, pos = [], 0
        while pos < len(text):
            m = _PAIR_RE.match(text, pos)
            if not m:
                raise ConfigError(f"{key}: expected '(time, value)' pair", *where, col + pos)
            pairs.append((float(m.group(1)), float(m.group(2))))
            pos = m.end()
            if pos < len(text):
                if text[pos] != ",":
                    raise ConfigError(f"{key}: expected ',' between pairs", *where, col + pos)
                pos += 1
        if not pairs:
            raise ConfigError(f"{key}: schedule is empty", *where, col)
        times = [p[0] for p in pairs]
        if times[0] != 0:
            raise ConfigError(f"{key}: schedule must start at time 0", *where, col)
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise ConfigError(f"{key}: schedule times must be strictly increasing "
                                  f"({a:g} then {b:g})", *where, col)
        return Schedule.from_pairs(pairs)
    return _number(t, where, col)


def _suggest(word, choices):
    m = difflib.get_close_matches(word, list(choices), n=1, cutoff=0.6)
    return f"; did you mean {m[0]!r}?" if m else ""


def parse_config(text, path="<config>"):
    values = {name: {} for name in SECTIONS}
    seen = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        where = (path, lineno)
        indent = len(line) - len(line.lstrip())
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", *where, indent + 1)
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]" + _suggest(name, SECTIONS),
                                  *where, indent + 1)
            section = name
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", *where, indent + 1)
        key_part, val_part = line.split("=", 1)
        key = key_part.strip()
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", *where, indent + 1)
        allowed = [f.name for f in fields(SECTIONS[section])]
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]" + _suggest(key, allowed),
                              *where, indent + 1)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[section, key]})",
                              *where, indent + 1)
        seen[section, key] = lineno
        col = len(key_part) + 2 + (len(val_part) - len(val_part.lstrip()))
        kind = KINDS.get((section, key), "float")
        values[section][key] = _parse_value(kind, val_part.strip(), f"[{section}] {key}",
                                            where, col)
    try:
        parts = {name: cls(**values[name]) for name, cls in SECTIONS.items()}
        return ScenarioConfig(**parts)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


# --- serialization ---------------------------------------------------------------

def _fmt(v):
    if v is None:
        return "auto"
    if isinstance(v, Schedule):
        return ", ".join(f"({_fmt(t)}, {_fmt(x)})" for t, x in v.pairs())
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg):
    """Text form of a resolved config; :func:`parse_config` reads it back to an equal value."""
    out = []
    for name in SECTIONS:
        out.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in fields(sec):
            out.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg):
    d = {}
    for name in SECTIONS:
        sec = getattr(cfg, name)
        d[name] = {}
        for f in fields(sec):
            v = getattr(sec, f.name)
            if isinstance(v, Schedule):
                v = [list(p) for p in v.pairs()]
            elif isinstance(v, tuple):
                v = list(v)
            d[name][f.name] = v
    return d
