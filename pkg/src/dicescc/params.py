"""Model constants: loading, validation and serialization of parameter files.

A parameter file is line-oriented UTF-8 text::

    # comment
    t_max = 100
    pi3 = 1.0772840...
    pi4 = [25.575, 28.1..., ...]
    pi14 = grow(0.47773, -0.076, 0.99500999)
    carbon_conservation = true

Scalars are ``key = number``, vectors ``key = [v1, v2, ...]`` (may span several
lines until the closing bracket) and growth stanzas ``key = grow(init, rate,
decay)``.  A growth stanza expands to ``x(1) = init`` and
``x(t+1) = x(t) * exp(g(t))`` with ``g(1) = rate`` and ``g(t+1) = g(t) * decay``.
When a key is given both as a stanza and as a verbatim vector the verbatim
vector wins.  Unknown keys are errors.

Units follow the bundled files: all period aggregation and GtC/GtCO2
conversions are folded into the vectors so that the model recursions apply
without further bookkeeping.  Capital and consumption are trillion USD per
5-year period, emissions and carbon stocks are GtC.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

SCALAR_KEYS = (
    "pi2", "pi3", "pi5", "pi7", "pi8", "pi9", "pi11", "pi13", "pi16", "pi18",
    "pi19", "pi21", "pi22", "pi23", "pi24", "pi25", "pi26", "pi27", "pi28",
    "pi29", "pi31", "pi32", "pi33", "pi34",
    "k0", "m_at0", "m_up0", "m_lo0", "t_at0", "t_lo0",
    "c2", "unit_scale",
)
VECTOR_KEYS = (
    "pi1", "pi4", "pi6", "pi10", "pi12", "pi14", "pi15", "pi17", "pi20", "pi30",
    "pi35", "c1",
)
GROWTH_KEYS = ("pi1", "pi4", "pi6", "pi12", "pi14", "pi20")
FLAG_KEYS = ("carbon_conservation",)

# Relative tolerance for the c1 consistency warning.
C1_CONSISTENCY_RTOL = 1e-6
CONSERVATION_TOL = 1e-9


class ParamsError(ValueError):
    """Base class for parameter file problems."""

    def __init__(self, key: str | None, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}: {message}{where}" if key else f"{message}{where}")


class MissingKey(ParamsError):
    def __init__(self, key: str):
        super().__init__(key, "required key is missing")


class LengthMismatch(ParamsError):
    pass


class ParseError(ParamsError):
    pass


@dataclass(frozen=True, eq=False)
class Params:
    """Full constant set of the model.

    Vector fields are read-only float arrays of length ``t_max``.  Instances are
    immutable and compare field-wise.
    """

    t_max: int
    # vectors
    pi1: np.ndarray
    pi4: np.ndarray
    pi6: np.ndarray
    pi10: np.ndarray
    pi12: np.ndarray
    pi14: np.ndarray
    pi15: np.ndarray
    pi17: np.ndarray
    pi20: np.ndarray
    pi30: np.ndarray
    pi35: np.ndarray
    c1: np.ndarray
    # scalars
    pi2: float
    pi3: float
    pi5: float
    pi7: float
    pi8: float
    pi9: float
    pi11: float
    pi13: float
    pi16: float
    pi18: float
    pi19: float
    pi21: float
    pi22: float
    pi23: float
    pi24: float
    pi25: float
    pi26: float
    pi27: float
    pi28: float
    pi29: float
    pi31: float
    pi32: float
    pi33: float
    pi34: float
    k0: float
    m_at0: float
    m_up0: float
    m_lo0: float
    t_at0: float
    t_lo0: float
    c2: float
    unit_scale: float
    carbon_conservation: bool = False
    source: str = field(default="", compare=False)

    def __post_init__(self):
        for key in VECTOR_KEYS:
            arr = np.array(getattr(self, key), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        for key in SCALAR_KEYS:
            object.__setattr__(self, key, float(getattr(self, key)))
        object.__setattr__(self, "t_max", int(self.t_max))

    def __eq__(self, other):
        if not isinstance(other, Params):
            return NotImplemented
        for f in fields(self):
            if f.name == "source":
                continue
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None

    def carbon_matrix(self) -> np.ndarray:
        """3x3 transfer matrix acting on (M_AT, M_UP, M_LO) of the previous period."""
        return np.array([
            [self.pi21, self.pi22, 0.0],
            [self.pi23, self.pi24, self.pi25],
            [0.0, self.pi26, self.pi27],
        ])

    def years(self) -> np.ndarray:
        return 2010 + 5 * np.arange(1, self.t_max + 1)

    def unweighted(self) -> Params:
        """Copy with the utility weight vector replaced by ones."""
        return replace(self, pi1=np.ones(self.t_max))

    def truncated(self, t_max: int) -> Params:
        """Copy restricted to the first ``t_max`` periods."""
        if not 1 <= t_max <= self.t_max:
            raise ValueError(f"cannot truncate {self.t_max} periods to {t_max}")
        cut = {k: getattr(self, k)[:t_max] for k in VECTOR_KEYS}
        return replace(self, t_max=t_max, **cut)


@dataclass
class ValidationReport:
    errors: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def expand_growth(init: float, rate: float, decay: float, n: int) -> np.ndarray:
    out = np.empty(n)
    x, g = float(init), float(rate)
    for t in range(n):
        out[t] = x
        x = x * math.exp(g)
        g = g * decay
    return out


_ASSIGN = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_GROW = re.compile(r"^grow\s*\((.*)\)$")


def _number(text: str, key: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(key, f"not a number: {text!r}", line) from None


def _parse_value(raw: str, key: str, line: int):
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise ParseError(key, "unterminated vector", line)
        body = raw[1:-1].strip()
        if not body:
            return ("vector", [])
        return ("vector", [_number(v.strip(), key, line) for v in body.split(",")])
    m = _GROW.match(raw)
    if m:
        parts = [p.strip() for p in m.group(1).split(",")]
        if len(parts) != 3:
            raise ParseError(key, "grow() takes (init, rate, decay)", line)
        return ("grow", [_number(p, key, line) for p in parts])
    if raw.lower() in ("true", "false"):
        return ("flag", raw.lower() == "true")
    if len(raw) >= 2 and raw[0] == raw[-1] == '"':
        return ("string", raw[1:-1])
    return ("scalar", _number(raw, key, line))


def parse_assignments(text: str, source: str = "<string>") -> dict[str, tuple[str, object, int]]:
    """Parse the ``key = value`` grammar into ``{key: (kind, value, line)}``.

    Growth stanzas are stored under ``key`` with kind ``grow``; a verbatim
    vector for the same key is stored separately under ``key`` with kind
    ``vector`` and replaces the stanza later.  Shared with scenario files.
    """
    entries: dict[str, tuple[str, object, int]] = {}
    grows: dict[str, tuple[str, object, int]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].split("#", 1)[0].strip()
        i += 1
        if not line:
            continue
        m = _ASSIGN.match(line)
        if not m:
            raise ParseError(None, f"{source}: expected 'key = value', got {line!r}", lineno)
        key, raw = m.group(1), m.group(2)
        if raw.startswith("[") and not raw.endswith("]"):
            # vector continued over several lines
            chunks = [raw]
            while i < len(lines):
                chunk = lines[i].split("#", 1)[0].strip()
                i += 1
                chunks.append(chunk)
                if chunk.endswith("]"):
                    break
            raw = " ".join(chunks)
            raw = re.sub(r",\s*\]$", "]", raw)
        kind, value = _parse_value(raw, key, lineno)
        target = grows if kind == "grow" else entries
        if key in target:
            raise ParseError(key, "duplicate key", lineno)
        target[key] = (kind, value, lineno)
    for key, item in grows.items():
        entries.setdefault(key, item)
    return entries


def parse_params(text: str, source: str = "<string>") -> Params:
    entries = parse_assignments(text, source)
    known = set(SCALAR_KEYS) | set(VECTOR_KEYS) | set(FLAG_KEYS) | {"t_max"}
    for key, (_, _, line) in entries.items():
        if key not in known:
            raise ParseError(key, "unknown key", line)

    if "t_max" not in entries:
        raise MissingKey("t_max")
    kind, t_max, line = entries["t_max"]
    if kind != "scalar" or t_max != int(t_max) or t_max < 1:
        raise ParseError("t_max", "must be a positive integer", line)
    t_max = int(t_max)

    values: dict[str, object] = {"t_max": t_max}
    for key in SCALAR_KEYS:
        if key not in entries:
            raise MissingKey(key)
        kind, value, line = entries[key]
        if kind != "scalar":
            raise ParseError(key, "expected a scalar", line)
        values[key] = value
    for key in VECTOR_KEYS:
        if key not in entries:
            raise MissingKey(key)
        kind, value, line = entries[key]
        if kind == "grow":
            if key not in GROWTH_KEYS:
                raise ParseError(key, "growth stanza not supported for this key", line)
            values[key] = expand_growth(*value, t_max)
        elif kind == "vector":
            if len(value) != t_max:
                raise LengthMismatch(key, f"length {len(value)} != t_max {t_max}", line)
            values[key] = np.array(value)
        else:
            raise ParseError(key, "expected a vector", line)
    for key in FLAG_KEYS:
        if key in entries:
            kind, value, line = entries[key]
            if kind != "flag":
                raise ParseError(key, "expected true/false", line)
            values[key] = value
    return Params(source=source, **values)


def load_params(path: str | Path) -> Params:
    """Read a parameter file.  Bare names ``dice2016`` and ``desk`` resolve to
    the bundled calibrations."""
    path = resolve_params_path(path)
    return parse_params(path.read_text(encoding="utf-8"), source=str(path))


def resolve_params_path(path: str | Path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = str(path)
    if not name.endswith(".params"):
        name += ".params"
    bundled = resources.files("dicescc") / "data" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"parameter file not found: {path}")


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_params(p: Params, header: str = "", stanzas: dict | None = None) -> str:
    """Serialize to the file grammar.  ``parse_params(dump_params(p)) == p``.

    ``stanzas`` maps growth keys to ``(init, rate, decay)``; those vectors are
    written as ``grow(...)`` instead of verbatim, so round-tripping is exact
    only when the stanza reproduces the vector.
    """
    stanzas = stanzas or {}
    out = []
    for line in header.splitlines():
        out.append(f"# {line}".rstrip())
    out.append(f"t_max = {p.t_max}")
    out.append(f"carbon_conservation = {'true' if p.carbon_conservation else 'false'}")
    for key in SCALAR_KEYS:
        out.append(f"{key} = {_fmt(getattr(p, key))}")
    for key in VECTOR_KEYS:
        if key in stanzas:
            init, rate, decay = stanzas[key]
            out.append(f"{key} = grow({_fmt(init)}, {_fmt(rate)}, {_fmt(decay)})")
            continue
        vals = getattr(p, key)
        rows = [", ".join(_fmt(v) for v in vals[i:i + 5]) for i in range(0, len(vals), 5)]
        out.append(f"{key} = [\n    " + ",\n    ".join(rows) + "\n]")
    return "\n".join(out) + "\n"


def implied_c1(p: Params) -> np.ndarray:
    """Marginal abatement cost scale implied by the abatement-cost and emission
    constants: the $/tCO2 cost of the last abated unit at mu = 1."""
    output_per_capital = p.pi4 * p.pi6 ** p.pi7
    emission_per_capital = p.pi14 * p.pi15 * p.pi17 ** p.pi18
    return p.unit_scale * p.pi10 * p.pi11 * output_per_capital / emission_per_capital


def validate(p: Params) -> ValidationReport:
    """Check every invariant; problems are reported sorted by field name."""
    errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []

    if p.t_max < 2:
        errors.append(("t_max", f"need at least 2 periods, got {p.t_max}"))
    for key in VECTOR_KEYS:
        v = getattr(p, key)
        if v.shape != (p.t_max,):
            errors.append((key, f"length {v.shape[0]} != t_max {p.t_max}"))
        elif not np.all(np.isfinite(v)):
            errors.append((key, "non-finite entries"))
    if not p.pi3 > 1:
        errors.append(("pi3", f"discount base must exceed 1, got {p.pi3}"))
    if not 0 < p.pi5 < 1:
        errors.append(("pi5", f"capital elasticity must lie in (0, 1), got {p.pi5}"))
    if not p.pi11 > 1:
        errors.append(("pi11", f"abatement cost exponent must exceed 1, got {p.pi11}"))
    # Capital carries over as -pi13 * K(t-1); the carry factor must be in [0, 1].
    if not 0 <= -p.pi13 <= 1:
        errors.append(("pi13", f"-pi13 must lie in [0, 1], got pi13={p.pi13}"))
    if p.pi35.shape == (p.t_max,) and not np.all(p.pi35 > 0):
        errors.append(("pi35", "abatement upper bound must be positive"))
    if p.pi12.shape == (p.t_max,) and not np.all(p.pi12 > 0):
        errors.append(("pi12", "population scale must be positive"))
    if not p.pi29 > 0:
        errors.append(("pi29", f"preindustrial carbon must be positive, got {p.pi29}"))
    if p.carbon_conservation:
        sums = p.carbon_matrix().sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > CONSERVATION_TOL:
            errors.append(("carbon_cycle", f"transfer columns sum to {sums.tolist()}, not 1"))
    if p.c1.shape == (p.t_max,) and not errors:
        implied = implied_c1(p)
        rel = np.abs(p.c1 - implied) / np.maximum(np.abs(implied), 1e-300)
        if np.max(rel) > C1_CONSISTENCY_RTOL:
            t = int(np.argmax(rel)) + 1
            warnings.append(("c1", f"differs from implied value by {rel[t - 1]:.3g} relative at t={t}"))
        if abs(p.c2 - (p.pi11 - 1)) > C1_CONSISTENCY_RTOL * abs(p.pi11):
            warnings.append(("c2", f"differs from pi11 - 1 = {p.pi11 - 1}"))

    errors.sort(key=lambda e: e[0])
    warnings.sort(key=lambda e: e[0])
    return ValidationReport(errors, warnings)
