import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triobs.exprlang import (Binary, Const, ExpressionDomainError, ExpressionError, ExpressionSyntaxError,
                             Power, ScalarField, Unary, Var, differentiate, evaluate, extremum_on_box, parse,
                             to_source)


def test_parse_power_node():
    assert parse("x2^3") == Power(Var("x2"), 3)


def test_parse_rational_coefficient():
    assert parse("1/(1+x1^2)") == Binary("/", Const(1.0), Binary("+", Const(1.0), Power(Var("x1"), 2)))


def test_parse_composition_with_negation():
    assert parse("exp(-t)*0.5") == Binary("*", Unary("exp", Unary("neg", Var("t"))), Const(0.5))


@pytest.mark.parametrize("text", ["x1 +", "(x1", "x1 ** 2", "2 3", ""])
def test_syntax_errors_carry_offsets(text):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse(text)
    assert 0 <= info.value.offset <= len(text)


def test_unknown_identifier_rejected():
    with pytest.raises(ExpressionSyntaxError):
        parse("x1 + y7", ["x1"])


def test_non_integer_exponent_rejected():
    with pytest.raises(ExpressionError):
        parse("x1^1.5")


@pytest.mark.parametrize("text, variables, args, want", [
    ("x2^3", ("x2",), (2.0,), 8.0),
    ("1/(1+x1^2)", ("x1",), (2.0,), 0.2),
    ("0.5*exp(-t)", ("t",), (0.0,), 0.5),
])
def test_evaluate_examples(text, variables, args, want):
    f = ScalarField.from_text(text, variables)
    assert f(*args) == pytest.approx(want, rel=1e-15)
    assert evaluate(f, dict(zip(variables, args))) == pytest.approx(want, rel=1e-15)


def test_unbound_variable_reported():
    f = ScalarField.from_text("x1 + t", ("t", "x1"))
    with pytest.raises(ExpressionError, match="unbound"):
        evaluate(f, {"t": 0.0})


def test_domain_error_has_location():
    f = ScalarField.from_text("ln(x1)", ("x1",))
    with pytest.raises(ExpressionDomainError) as info:
        evaluate(f, {"x1": 0.0})
    assert info.value.offset >= 0


@pytest.mark.parametrize("text, var, want", [
    ("x2^3", "x2", "3*x2^2"),
    ("-x2", "x2", "-1"),
])
def test_symbolic_derivative_examples(text, var, want):
    f = ScalarField.from_text(text, (var,))
    d = differentiate(f, var)
    expected = ScalarField.from_text(want, (var,))
    for v in (-1.3, 0.0, 0.7, 2.0):
        assert d(v) == pytest.approx(expected(v), rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("x1", [-1.0, 0.5, 3.0])
def test_derivative_matches_central_differences(x1):
    f = ScalarField.from_text("1/(1+x1^2)", ("x1",))
    d = differentiate(f, "x1")
    h = 1e-5
    fd = (f(x1 + h) - f(x1 - h)) / (2 * h)
    assert d(x1) == pytest.approx(fd, abs=1e-6)
    assert d(x1) == pytest.approx(-2 * x1 / (1 + x1 ** 2) ** 2, rel=1e-14)


def test_extremum_constant_field():
    f = ScalarField.from_text("-1", ("x1",))
    assert extremum_on_box(f, {"x1": (-3.0, 5.0)}, "max_abs", safety=1.1) == pytest.approx(1.1)


def test_extremum_min_of_rational():
    f = ScalarField.from_text("1/(1+x1^2)", ("x1",))
    assert extremum_on_box(f, {"x1": (-2.0, 2.0)}, "min", grid=1001, safety=1.0) == pytest.approx(0.2)


def test_extremum_max_abs_with_safety():
    f = ScalarField.from_text("3*x1^2", ("x1",))
    assert extremum_on_box(f, {"x1": (-2.0, 2.0)}, "max_abs", grid=21, safety=1.1) == pytest.approx(13.2)


def test_extremum_refinement_never_drops_below_safety_slack():
    f = ScalarField.from_text("sin(3*x1)*x2 + x1*x2^2", ("x1", "x2"))
    box = {"x1": (-1.5, 2.0), "x2": (-1.0, 1.0)}
    coarse = extremum_on_box(f, box, "max_abs", grid=11, safety=1.1)
    fine = extremum_on_box(f, box, "max_abs", grid=22, safety=1.1)
    assert fine >= coarse / 1.1


def test_vectorized_matches_scalar():
    f = ScalarField.from_text("s + sqrt(s^6 + (s + s^3/2)^6)*(1 - exp(-10*t))/5", ("t", "s"))
    t = np.linspace(0, 3, 7)
    s = np.linspace(0, 2, 7)
    vec = f.vectorized(t, s)
    assert np.allclose(vec, [f(a, b) for a, b in zip(t, s)], rtol=1e-14)


_atoms = st.one_of(st.sampled_from(["x1", "x2", "t"]),
                   st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(lambda v: f"{v:.6g}"))


def _exprs():
    return st.recursive(
        _atoms,
        lambda inner: st.one_of(
            st.tuples(inner, st.sampled_from("+-*/"), inner).map(lambda p: f"({p[0]}){p[1]}({p[2]})"),
            st.tuples(inner, st.integers(0, 4)).map(lambda p: f"({p[0]})^{p[1]}"),
            st.tuples(st.sampled_from(["exp", "sin", "cos", "abs"]), inner).map(lambda p: f"{p[0]}({p[1]})"),
            inner.map(lambda s: f"-({s})"),
        ),
        max_leaves=8,
    )


@settings(max_examples=200, deadline=None)
@given(_exprs())
def test_print_parse_round_trip(text):
    tree = parse(text)
    assert parse(to_source(tree)) == tree


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_of_product_agrees_with_finite_difference(a, b):
    f = ScalarField.from_text("x1^3*sin(x2) + x1*x2", ("x1", "x2"))
    d = differentiate(f, "x1")
    h = 1e-6
    fd = (f(a + h, b) - f(a - h, b)) / (2 * h)
    assert math.isclose(d(a, b), fd, rel_tol=1e-6, abs_tol=1e-6)
