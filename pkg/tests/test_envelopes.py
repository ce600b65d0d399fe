import numpy as np
import pytest

from triobs.envelopes import DEFAULT_G, EnvelopeError, build_envelopes, sigma_R, validate_beta, validate_g, w_R
from triobs.exprlang import ScalarField
from triobs.system import TriangularSystem

EX11_BETA = "s + sqrt(s^6 + (s + s^3/2)^6)*(1 - exp(-10*t))/5"


def g_of(text):
    return ScalarField.from_text(text, ("t",), "g")


def test_default_precision_envelope_passes():
    rep = validate_g(g_of(DEFAULT_G), 20.0)
    assert rep.passed
    assert rep.details["g_horizon"] == pytest.approx(0.5 * np.exp(-20.0))


def test_constant_envelope_misses_terminal_target():
    rep = validate_g(g_of("0.5"), 20.0)
    assert not rep.passed and "terminal" in rep.name
    with pytest.raises(EnvelopeError):
        rep.raise_if_failed()


def test_envelope_above_one_rejected_at_start():
    rep = validate_g(g_of("2*exp(-t)"), 20.0)
    assert not rep.passed
    assert rep.witness["t"] == 0.0


def test_too_fast_decay_rejected():
    rep = validate_g(g_of("0.5*exp(-2*t)"), 20.0)
    assert not rep.passed and "decay" in rep.name


def test_chain_bound_passes_monte_carlo():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "(1+s^3)*(1+t)+s")
    rep = validate_beta(sys_, 1.0, 5.0, trials=100, seed=0)
    assert rep.passed, rep.witness


def test_bound_below_identity_rejected():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s/2")
    rep = validate_beta(sys_, 1.0, 5.0, trials=10)
    assert not rep.passed and rep.name == "beta(t, s) >= s"


def test_wrong_bound_yields_counterexample():
    # x1 grows like x2^3 t, which a bound independent of t cannot contain
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s")
    rep = validate_beta(sys_, 1.0, 5.0, trials=50, seed=1)
    assert not rep.passed
    assert {"t", "x0", "x", "bound"} <= set(rep.witness)


def test_system_at_rest_is_bounded():
    sys_ = TriangularSystem.from_strings(["-x1", "-x2"], ["1"], [3], "s")
    rep = validate_beta(sys_, 1e-300, 2.0, trials=5)
    assert rep.passed


def test_sigma_constant_slopes():
    # nonzero partials with j >= 2: df2/dx2 and df3/dx3, each of magnitude 1
    sys_ = TriangularSystem.from_strings(["-x1", "-x2", "-x3"], ["1", "1/(1+x1^2)"], [3, 3], EX11_BETA)
    assert sigma_R(sys_, 1.0, 10.0, 0.5) == pytest.approx(2 * 1.1)


def test_sigma_zero_drift():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s + s^3*t")
    assert sigma_R(sys_, 1.0, 10.0, 3.0) == 0.0


def test_w_constant_coefficient():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s + s^3*t")
    assert w_R(sys_, 1.0, 2.0) == pytest.approx(1 / 1.1)


def test_w_rational_coefficient():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1/(1+x1^2)"], [3], "2*s")
    assert w_R(sys_, 1.0, 0.0) == pytest.approx(0.2 / 1.1)


def test_w_degenerate_interval():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["2 + x1"], [3], "2*s")
    assert w_R(sys_, 0.0, 0.0) == pytest.approx(2 / 1.1)


def test_envelope_tables_are_monotone_and_dominate():
    sys_ = TriangularSystem.from_strings(["-x1", "-x2^3", "-x3"], ["1", "1/(1+x1^2)"], [3, 3], EX11_BETA)
    env = build_envelopes(sys_, g_of(DEFAULT_G), 1.0, 50.0, 0.0, 5.0)
    t = np.linspace(0, 5, 501)
    assert np.all(np.diff(env.sigma(t)) >= -1e-9)
    assert np.all(np.diff(env.w(t)) <= 1e-12)
    pointwise = np.array([sigma_R(sys_, 1.0, 50.0, tt, safety=1.0) for tt in t[::25]])
    assert np.all(env.sigma(t[::25]) >= pointwise)
