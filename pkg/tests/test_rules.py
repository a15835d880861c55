import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmrsafety.rules import (
    INCONSISTENT,
    RuleDocument,
    RuleParseError,
    SafetyDefinitionInconsistent,
    SafetyPredicate,
    compile_rules,
    compile_source,
    evaluate,
    format_document,
    parse,
)
from dmrsafety.units import LENGTH, Quantity

WORKED = """
rule cell {
    v_max = 2.0 m/s
    t_stop_budget = 60 ms
    d_brake = 0.3 m
    d_min = 0.60 m
    warning_margin = 0.80 m
}
"""


def worked(**replace):
    src = WORKED
    for key, value in replace.items():
        src = "\n".join(
            f"    {key} = {value}" if line.strip().startswith(key + " ") else line for line in src.splitlines()
        )
    return src


def diagnostics(source):
    with pytest.raises(RuleParseError) as info:
        parse(source)
    return info.value.diagnostics


def test_single_assignment():
    doc = parse(worked())
    assert doc.get("v_max") == Quantity(Fraction(2), (1, -1))
    assert doc.name == "cell"


def test_unit_normalization():
    doc = parse(worked(d_brake="300 mm", warning_margin="80 cm"))
    assert doc.get("d_brake").magnitude == Fraction(3, 10)
    assert doc.get("warning_margin").magnitude == Fraction(4, 5)
    assert doc.get("t_stop_budget").magnitude == Fraction(3, 50)


def test_dimension_mismatch_has_span():
    [d] = diagnostics(worked(v_max="2.0 m"))
    assert d.message == "dimension mismatch: expected speed"
    assert (d.line, d.column) == (3, 17)


@pytest.mark.parametrize("line, fragment", [
    ("speed = 2 m/s", "unknown symbol"),
    ("v_max = 2.0.1 m/s", "malformed number"),
    ("v_max = 2 km/h", "unknown unit"),
    ("category = 2.5", "category must be an integer"),
    ("v_max 2 m/s", "expected 'symbol = number unit'"),
])
def test_parse_errors(line, fragment):
    src = WORKED.replace("    v_max = 2.0 m/s", "    " + line)
    msgs = [d.message for d in diagnostics(src)]
    assert any(fragment in m for m in msgs), msgs


def test_duplicate_assignment_reports_both_lines():
    src = WORKED.replace("    d_min = 0.60 m", "    d_min = 0.60 m\n    d_min = 0.70 m")
    [d] = diagnostics(src)
    assert "duplicate" in d.message and "line 6" in d.message and d.line == 7


def test_structure_errors():
    assert "missing 'rule" in diagnostics("")[0].message
    assert "not closed" in diagnostics("rule x {\n v_max = 1 m/s\n")[-1].message
    msgs = [d.message for d in diagnostics("rule x {\n}\n")]
    assert len([m for m in msgs if "missing required" in m]) == 5


def test_comments_are_ignored():
    doc = parse("# header\nrule c { # open\n" + "\n".join(WORKED.splitlines()[2:]))
    assert doc.name == "c"


def test_worked_example_compiles():
    pred = compile_source(worked())
    assert pred.d_offset == Fraction(45, 100)
    assert pred.budget_threshold == Fraction(57, 100)
    assert pred.margin_factor == Fraction(3, 2)


def test_d_offset_is_margin_times_brake():
    pred = compile_source(worked(d_brake="0.3 m"))
    assert pred.d_offset == Fraction(3, 2) * Fraction(3, 10)


@pytest.mark.parametrize("d_min", ["0.50 m", "0.569999 m"])
def test_d_min_below_threshold_aborts(d_min):
    with pytest.raises(SafetyDefinitionInconsistent) as info:
        compile_source(worked(d_min=d_min))
    assert INCONSISTENT in str(info.value)


def test_d_min_equal_to_threshold_compiles():
    assert compile_source(worked(d_min="570 mm")).d_min == Fraction(57, 100)


@pytest.mark.parametrize("extra", ["dc_target = 1.2", "dc_target = -0.1", "category = 1", "category = 5"])
def test_other_inconsistencies(extra):
    src = WORKED.replace("}", f"    {extra}\n}}")
    with pytest.raises(SafetyDefinitionInconsistent):
        compile_source(src)


def test_all_violations_are_collected():
    src = worked(d_min="0.1 m", v_max="0 m/s").replace("}", "    category = 7\n}")
    with pytest.raises(SafetyDefinitionInconsistent) as info:
        compile_source(src)
    assert len(info.value.violations) == 3


def test_evaluate_far_separation():
    pred = compile_source(worked())
    assert evaluate(pred, 10.0, 1_000)
    assert evaluate(pred, float("inf"), 0)


def test_evaluate_stationary_robot():
    pred = SafetyPredicate(Fraction(0), Fraction(6, 100), Fraction(3, 10), Fraction(1), Fraction(1))
    assert evaluate(pred, 0.45, 10_000_000)
    assert not evaluate(pred, 0.449999, 0)


def test_evaluate_boundary_with_measured_latency():
    # budget below the measured 57.66 ms so the measurement governs
    pred = SafetyPredicate(Fraction(2), Fraction(5, 100), Fraction(3, 10), Fraction(1), Fraction(1))
    assert evaluate(pred, 0.56532, 57_660)
    assert not evaluate(pred, 0.565319, 57_660)


def test_evaluate_uses_budget_when_larger():
    pred = compile_source(worked())
    assert not evaluate(pred, 0.56532, 57_660)
    assert evaluate(pred, 0.57, 57_660)


def test_brute_force_grid():
    """Integer re-statement: d[um]*1000 >= v[mm/s]*T[us] + d_off[um]*1000."""
    budget_us = 30_000
    count = 0
    for v, doff, t in itertools.product(range(0, 3001, 250), range(0, 600_001, 150_000), range(0, 80_001, 20_000)):
        pred = SafetyPredicate(Fraction(v, 1000), Fraction(budget_us, 10**6), Fraction(doff, 10**6),
                               Fraction(10), Fraction(0), margin_factor=Fraction(1))
        t_eff = max(budget_us, t)
        for d in range(0, 900_001, 30_000):
            expected = d * 1000 >= v * t_eff + doff * 1000
            assert evaluate(pred, Fraction(d, 10**6), t) is expected
            count += 1
    assert count >= 10_000


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 10**6), st.integers(0, 5000), st.integers(0, 10**5), st.integers(0, 10**6),
    st.integers(0, 10**6), st.integers(0, 5000), st.integers(0, 10**5), st.integers(0, 10**6),
)
def test_monotonicity(d1, v1, t1, o1, dd, dv, dt, do):
    def ev(d, v, t, o):
        pred = SafetyPredicate(Fraction(v, 1000), Fraction(1, 10**6), Fraction(o, 10**6), Fraction(10), Fraction(0),
                               margin_factor=Fraction(1))
        return evaluate(pred, Fraction(d, 10**6), t)

    base = ev(d1, v1, t1, o1)
    if base:
        assert ev(d1 + dd, v1, t1, o1)
    if ev(d1, v1 + dv, t1, o1) or ev(d1, v1, t1 + dt, o1) or ev(d1, v1, t1, o1 + do):
        assert base


symbols_strategy = st.fixed_dictionaries(
    {
        "v_max": st.fractions(min_value=0, max_value=10, max_denominator=1000),
        "t_stop_budget": st.fractions(min_value=0, max_value=1, max_denominator=1000),
        "d_brake": st.fractions(min_value=0, max_value=2, max_denominator=1000),
        "d_min": st.fractions(min_value=0, max_value=5, max_denominator=1000),
        "warning_margin": st.fractions(min_value=0, max_value=2, max_denominator=1000),
    },
    optional={"margin_factor": st.fractions(min_value=0, max_value=3, max_denominator=8)},
)
DIMS = {"v_max": (1, -1), "t_stop_budget": (0, 1), "d_brake": LENGTH, "d_min": LENGTH,
        "warning_margin": LENGTH, "margin_factor": (0, 0)}


def finite_decimal(f):
    d = f.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


@settings(max_examples=200, deadline=None)
@given(symbols_strategy, st.sampled_from([2, 3, 4, 9]), st.fractions(min_value=0, max_value=1, max_denominator=100))
def test_parse_print_round_trip(values, category, dc):
    values = {k: v for k, v in values.items() if finite_decimal(v)}
    if not finite_decimal(dc):
        dc = Fraction(1, 2)
    doc = RuleDocument("r", tuple((k, Quantity(v, DIMS[k])) for k, v in values.items()), category, dc)
    text = format_document(doc)
    if any(k not in values for k in ("v_max", "t_stop_budget", "d_brake", "d_min", "warning_margin")):
        with pytest.raises(RuleParseError):
            parse(text)
        return
    assert parse(text) == doc


@settings(max_examples=200, deadline=None)
@given(symbols_strategy, st.integers(0, 6), st.fractions(min_value=-1, max_value=2, max_denominator=10))
def test_compile_totality(values, category, dc):
    doc = RuleDocument("r", tuple((k, Quantity(v, DIMS[k])) for k, v in values.items()), category, dc)
    try:
        pred = compile_rules(doc)
    except SafetyDefinitionInconsistent as exc:
        assert str(exc).startswith(INCONSISTENT)
        return
    assert pred.d_min >= pred.budget_threshold
    assert pred.v_max > 0 and pred.t_stop_budget > 0
    assert 0 <= pred.dc_target <= 1 and pred.category in (2, 3, 4)


def test_to_json_keys():
    data = compile_source(worked()).to_json()
    assert data["threshold_m"] == 0.57 and data["d_offset_m"] == 0.45
    assert data["t_stop_budget_ms"] == 60.0
