"""Safety-rule documents: parsing, compilation and the separation predicate.

A rule document is the machine-readable hand-off between design-time
requirement formalization and the runtime::

    # cell 4, collaborative palletizer
    rule palletizer {
        v_max         = 2.0 m/s
        t_stop_budget = 60 ms
        d_brake       = 300 mm
        d_min         = 0.60 m
        warning_margin = 0.80 m
        category      = 3
        dc_target     = 0.99
    }

Compilation derives the braking margin ``d_offset = margin_factor * d_brake``
and checks that the definition is self-consistent before any predicate is
handed to a node.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional, Union

from .units import (
    DIMENSIONLESS,
    LENGTH,
    MICRO,
    SPEED,
    TIME,
    UNITS,
    Dimension,
    Number,
    Quantity,
    decimal_text,
    dimension_name,
    quantize_micro,
)

INCONSISTENT = "Safety Definition Inconsistent"

DEFAULT_MARGIN_FACTOR = Fraction(3, 2)
DEFAULT_CATEGORY = 3
DEFAULT_DC_TARGET = Fraction(9, 10)

SYMBOLS: dict[str, Dimension] = {
    "v_max": SPEED,
    "t_stop_budget": TIME,
    "d_brake": LENGTH,
    "d_min": LENGTH,
    "warning_margin": LENGTH,
    "margin_factor": DIMENSIONLESS,
    "category": DIMENSIONLESS,
    "dc_target": DIMENSIONLESS,
}
REQUIRED = ("v_max", "t_stop_budget", "d_brake", "d_min", "warning_margin")
PRINT_UNIT = {SPEED: "m/s", TIME: "s", LENGTH: "m", DIMENSIONLESS: ""}

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_RULE_OPEN = re.compile(rf"^rule\s+({_IDENT})\s*\{{$")
_ASSIGN = re.compile(rf"^({_IDENT})\s*=\s*(\S+)(?:\s+(\S+))?$")
_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.message}"


class RuleParseError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


class SafetyDefinitionInconsistent(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__(f"{INCONSISTENT}: " + "; ".join(violations))


@dataclass(frozen=True)
class RuleDocument:
    name: str
    assignments: tuple[tuple[str, Quantity], ...]
    category: int = DEFAULT_CATEGORY
    dc_target: Fraction = DEFAULT_DC_TARGET
    spans: dict[str, tuple[int, int]] = field(default_factory=dict, compare=False, repr=False)

    def get(self, symbol: str) -> Optional[Quantity]:
        for sym, q in self.assignments:
            if sym == symbol:
                return q
        return None


def parse(source: str) -> RuleDocument:
    """Parse one ``rule <name> { ... }`` block.

    Raises :class:`RuleParseError` carrying every diagnostic found, each with a
    1-based line and column.
    """
    diags: list[Diagnostic] = []
    name: Optional[str] = None
    closed = False
    open_line = 0
    assignments: list[tuple[str, Quantity]] = []
    spans: dict[str, tuple[int, int]] = {}
    category: Optional[int] = None
    dc_target: Optional[Fraction] = None

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split("#", 1)[0]
        stripped = text.strip()
        if not stripped:
            continue
        col = len(text) - len(text.lstrip()) + 1
        if name is None:
            m = _RULE_OPEN.match(stripped)
            if m is None:
                diags.append(Diagnostic(lineno, col, "expected 'rule <name> {'"))
                # keep scanning as if a block were open so later lines still get checked
                name, open_line = "<invalid>", lineno
            else:
                name, open_line = m.group(1), lineno
            continue
        if closed:
            diags.append(Diagnostic(lineno, col, "unexpected content after closing '}'"))
            continue
        if stripped == "}":
            closed = True
            continue
        m = _ASSIGN.match(stripped)
        if m is None:
            diags.append(Diagnostic(lineno, col, "expected 'symbol = number unit'"))
            continue
        symbol, number, unit = m.group(1), m.group(2), m.group(3) or ""
        num_col = col + stripped.index(number, len(symbol))
        unit_col = col + stripped.rindex(unit) if unit else num_col
        if symbol not in SYMBOLS:
            diags.append(Diagnostic(lineno, col, f"unknown symbol {symbol!r}"))
            continue
        if symbol in spans:
            first = spans[symbol][0]
            diags.append(Diagnostic(lineno, col, f"duplicate assignment to {symbol!r} (first at line {first})"))
            continue
        spans[symbol] = (lineno, col)
        if not _NUMBER.match(number):
            diags.append(Diagnostic(lineno, num_col, f"malformed number {number!r}"))
            continue
        if unit and unit not in UNITS:
            diags.append(Diagnostic(lineno, unit_col, f"unknown unit {unit!r}"))
            continue
        q = Quantity.of(Fraction(number), unit)
        expected = SYMBOLS[symbol]
        if q.dimension != expected:
            diags.append(Diagnostic(lineno, unit_col, f"dimension mismatch: expected {dimension_name(expected)}"))
            continue
        if symbol == "category":
            if q.magnitude.denominator != 1:
                diags.append(Diagnostic(lineno, num_col, "category must be an integer"))
                continue
            category = int(q.magnitude)
        elif symbol == "dc_target":
            dc_target = q.magnitude
        else:
            assignments.append((symbol, q))

    if name is None:
        diags.append(Diagnostic(1, 1, "missing 'rule <name> {' block"))
    elif not closed:
        diags.append(Diagnostic(open_line, 1, "rule block is not closed with '}'"))
    else:
        for symbol in REQUIRED:
            if symbol not in spans:
                diags.append(Diagnostic(open_line, 1, f"missing required symbol {symbol!r}"))
    if diags:
        raise RuleParseError(diags)
    return RuleDocument(
        name=name,
        assignments=tuple(assignments),
        category=DEFAULT_CATEGORY if category is None else category,
        dc_target=DEFAULT_DC_TARGET if dc_target is None else dc_target,
        spans=spans,
    )


def format_document(doc: RuleDocument) -> str:
    """Render a document in canonical SI units; ``parse`` inverts this exactly."""
    lines = [f"rule {doc.name} {{"]
    for symbol, q in doc.assignments:
        lines.append(f"    {symbol} = {decimal_text(q.magnitude)} {PRINT_UNIT[q.dimension]}".rstrip())
    lines.append(f"    category = {doc.category}")
    lines.append(f"    dc_target = {decimal_text(doc.dc_target)}")
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SafetyPredicate:
    """Compiled separation predicate ``d >= v_max * T_stop + d_offset`` plus zone radii.

    Speeds are m/s, lengths m and ``t_stop_budget`` s, all exact fractions.
    """

    v_max: Fraction
    t_stop_budget: Fraction
    d_brake: Fraction
    d_min: Fraction
    warning_margin: Fraction
    margin_factor: Fraction = DEFAULT_MARGIN_FACTOR
    dc_target: Fraction = DEFAULT_DC_TARGET
    category: int = DEFAULT_CATEGORY
    name: str = "rule"

    @property
    def d_offset(self) -> Fraction:
        return self.margin_factor * self.d_brake

    @property
    def t_stop_budget_us(self) -> int:
        return math.ceil(self.t_stop_budget / MICRO)

    def threshold(self, t_stop: Fraction) -> Fraction:
        return self.v_max * t_stop + self.d_offset

    @property
    def budget_threshold(self) -> Fraction:
        return self.threshold(self.t_stop_budget)

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "v_max_mps": float(self.v_max),
            "t_stop_budget_ms": float(self.t_stop_budget * 1000),
            "d_brake_m": float(self.d_brake),
            "margin_factor": float(self.margin_factor),
            "d_offset_m": float(self.d_offset),
            "threshold_m": float(self.budget_threshold),
            "d_min_m": float(self.d_min),
            "warning_margin_m": float(self.warning_margin),
            "dc_target": float(self.dc_target),
            "category": self.category,
        }


def compile_rules(doc: RuleDocument) -> SafetyPredicate:
    """Compile a parsed document, aborting on any inconsistency.

    Every violated constraint is collected into a single
    :class:`SafetyDefinitionInconsistent`.
    """
    get = doc.get
    margin = get("margin_factor")
    v_max, t_budget, d_brake = get("v_max"), get("t_stop_budget"), get("d_brake")
    d_min, warning = get("d_min"), get("warning_margin")
    margin_factor = DEFAULT_MARGIN_FACTOR if margin is None else margin.magnitude

    d_offset = d_brake * margin_factor
    threshold = v_max * t_budget + d_offset
    assert threshold.dimension == LENGTH, threshold.dimension

    violations = []
    if v_max.magnitude <= 0:
        violations.append("v_max must be > 0")
    if t_budget.magnitude <= 0:
        violations.append("t_stop_budget must be > 0")
    if d_brake.magnitude < 0:
        violations.append("d_brake must be >= 0")
    if margin_factor <= 0:
        violations.append("margin_factor must be > 0")
    if warning.magnitude < 0:
        violations.append("warning_margin must be >= 0")
    if d_min < threshold:
        violations.append(
            f"d_min {decimal_text(d_min.magnitude)} m < v_max*t_stop_budget + d_offset = "
            f"{decimal_text(threshold.magnitude)} m"
        )
    if not 0 <= doc.dc_target <= 1:
        violations.append(f"dc_target {decimal_text(doc.dc_target)} outside [0, 1]")
    if doc.category not in (2, 3, 4):
        violations.append(f"category {doc.category} not in {{2, 3, 4}}")
    if violations:
        raise SafetyDefinitionInconsistent(violations)

    return SafetyPredicate(
        v_max=v_max.magnitude,
        t_stop_budget=t_budget.magnitude,
        d_brake=d_brake.magnitude,
        d_min=d_min.magnitude,
        warning_margin=warning.magnitude,
        margin_factor=margin_factor,
        dc_target=doc.dc_target,
        category=doc.category,
        name=doc.name,
    )


def compile_source(source: str) -> SafetyPredicate:
    return compile_rules(parse(source))


def evaluate(pred: SafetyPredicate, d: Union[Number, float], t_stop_measured_us: int) -> bool:
    """True iff ``d >= v_max * max(budget, measured) + d_offset``.

    ``d`` is in metres (float inputs are rounded to 1 um, ``inf`` means no
    human in view); ``t_stop_measured_us`` is the measured end-to-end latency
    in microseconds.
    """
    if isinstance(d, float) and math.isinf(d):
        return d > 0
    t_stop = max(pred.t_stop_budget, Fraction(t_stop_measured_us) * MICRO)
    return quantize_micro(d) >= pred.threshold(t_stop)
