import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triobs.exprlang import ExpressionError
from triobs.system import (SystemValidationError, TriangularSystem, b_interval, delta_F, eval_A, eval_b, eval_F,
                           eval_plant_rhs, factor_q, jacobian_F, vartheta)

EX11_BETA = "s + sqrt(s^6 + (s + s^3/2)^6)*(1 - exp(-10*t))/5"


@pytest.fixture
def chain():
    return TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s + s^3*t", name="chain2")


@pytest.fixture
def example():
    return TriangularSystem.from_strings(["-x1", "-x2", "-x3"], ["1", "1/(1+x1^2)"], [3, 3], EX11_BETA)


def test_even_power_rejected():
    with pytest.raises(SystemValidationError, match="odd"):
        TriangularSystem.from_strings(["0", "0"], ["1"], [2], "s")


def test_drift_may_not_look_ahead():
    with pytest.raises((SystemValidationError, ExpressionError)):
        TriangularSystem.from_strings(["x2", "0"], ["1"], [3], "s")


def test_negative_coefficient_rejected_with_guidance():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["-1"], [3], "s")
    with pytest.raises(SystemValidationError, match="substitute"):
        sys_.validate((0.0, 1.0), 2.0)


def test_plant_rhs_pure_chain(chain):
    assert np.array_equal(eval_plant_rhs(chain, 0.0, np.array([0.0, 2.0])), [8.0, 0.0])


def test_plant_rhs_example_instance(example):
    assert np.allclose(eval_plant_rhs(example, 0.0, np.array([1.0, 1.0, 1.0])), [0.0, -0.5, -1.0])


def test_plant_rhs_equilibrium(chain):
    assert np.array_equal(eval_plant_rhs(chain, 0.3, np.zeros(2)), [0.0, 0.0])


def test_injected_field_ignores_first_state(chain):
    assert np.array_equal(eval_F(chain, 0.0, np.array([999.0, 2.0]), 0.0), [8.0, 0.0])


def test_injected_field_example_instance(example):
    # f1 = -x1 is evaluated at y = 1 as well, so the first component is -1 + 1 * 1^3 = 0
    assert np.allclose(eval_F(example, 0.0, np.array([0.0, 1.0, 1.0]), 1.0), [0.0, -0.5, -1.0])


def test_injected_field_equals_plant_on_true_output(example):
    x = np.array([0.3, -1.2, 0.8])
    assert np.array_equal(eval_F(example, 0.7, x, x[0]), eval_plant_rhs(example, 0.7, x))


@pytest.mark.parametrize("m, a, b, want", [(3, 2.0, 1.0, 7.0), (3, 2.0, 0.0, 12.0), (1, 5.0, -3.0, 1.0),
                                           (1, 0.0, 0.0, 1.0)])
def test_divided_difference_examples(m, a, b, want):
    assert eval_b(m, a, b) == want


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([1, 3, 5, 7]), st.floats(-10, 10), st.floats(-10, 10))
def test_divided_difference_telescopes(m, x, z):
    lhs = eval_b(m, x, x - z) * (x - z)
    rhs = x ** m - z ** m
    assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9 * max(1.0, abs(x), abs(z)) ** m)


def test_vartheta_trivial_power():
    assert vartheta(1) == pytest.approx(1.0)


# oracle: 10^6-point theta grid refined by a bracketed scalar minimiser
VARTHETA_ORACLE = {3: 0.19722436226800533, 5: 0.03934483917628931, 7: 0.00786064805979395}


def test_vartheta_three_closed_form():
    assert VARTHETA_ORACLE[3] == pytest.approx(2 - math.sqrt(3.25), rel=1e-12)


@pytest.mark.parametrize("m", [3, 5, 7])
def test_vartheta_is_valid_lower_bound(m):
    v = vartheta(m)
    assert 0 < v <= VARTHETA_ORACLE[m]


@pytest.mark.parametrize("m, rel", [(3, 0.01), (5, 0.05)])
def test_vartheta_is_tight(m, rel):
    assert vartheta(m) >= VARTHETA_ORACLE[m] * (1 - rel)


def test_b_interval_covers_samples():
    rng = np.random.default_rng(1)
    for m in (1, 3, 5):
        e = rng.normal(size=20) * 3
        lo, hi = b_interval(m, 2.0, e)
        xs = np.linspace(-2, 2, 401)
        vals = eval_b(m, xs[:, None], e[None, :])
        assert np.all(vals >= lo - 1e-9 * np.abs(lo)) and np.all(vals <= hi + 1e-9 * np.abs(hi))


def test_A_with_zero_coefficients(chain):
    A = eval_A(chain, 0.0, np.zeros((2, 2)), np.array([0.0, 2.0]), np.zeros(2), 0.0)
    assert np.allclose(A, [[0.0, 3 * 2.0 ** 2], [0.0, 0.0]])


def test_A_pure_chain_with_coefficient(chain):
    q = np.array([[0.0, 0.0], [0.0, -1.0]])
    A = eval_A(chain, 0.0, q, np.array([5.0, 2.0]), np.array([0.3, 1.0]), 0.1)
    assert np.allclose(A, [[0.0, 7.0], [0.0, -1.0]])


def test_factor_linear_drift_exact(example):
    f = factor_q(example, 0.0, np.array([0.1, 0.4, -0.2]), np.array([0.3, -0.5, 0.9]), 0.1)
    assert f.q[1, 1] == -1.0 and f.q[2, 2] == -1.0
    assert np.all(f.q[:, 0] == 0)


def test_factor_quadratic_drift():
    sys_ = TriangularSystem.from_strings(["0", "x2^2"], ["1"], [1], "s")
    f = factor_q(sys_, 0.0, np.array([0.0, 3.0]), np.array([0.0, 1.0]), 0.0)
    assert f.q[1, 1] == pytest.approx(4.0, rel=1e-10)
    assert f.residual < 1e-10


def test_factor_at_coincident_states(example):
    x = np.array([0.2, 0.7, -0.4])
    f = factor_q(example, 0.0, x, x, x[0])
    assert f.residual == 0.0
    A = eval_A(example, 0.0, f, x, np.zeros(3), x[0])
    assert np.array_equal(A @ np.zeros(3), np.zeros(3))


def test_mean_value_matrix_reproduces_difference(example):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, z = rng.normal(size=3), rng.normal(size=3)
        y = x[0]
        f = factor_q(example, 0.4, x, z, y)
        A = eval_A(example, 0.4, f, x, x - z, y)
        diff = eval_F(example, 0.4, x, y) - eval_F(example, 0.4, z, y)
        assert np.allclose(A @ (x - z), diff, atol=1e-9)
        assert np.allclose(delta_F(example, 0.4, x, x - z, y), diff, atol=1e-12)


def test_jacobian_first_column_zero(example):
    J = jacobian_F(example, 0.0, np.array([1.0, 2.0, 3.0]), 0.5)
    assert np.all(J[:, 0] == 0)
    assert J[0, 1] == pytest.approx(3 * 2.0 ** 2)
