import mpmath
import numpy as np
import pytest

from triobs.envelopes import DEFAULT_G, build_envelopes
from triobs.exprlang import ScalarField
from triobs.synthesis import (GainOverflowError, GainSchedule, SynthesisError, SynthesisGrids, _check_magnitude,
                              make_dbar, synth_level2, synth_schedule)
from triobs.system import TriangularSystem
from triobs.timefunc import Constant, smoothstep

G = ScalarField.from_text(DEFAULT_G, ("t",), "g")


def det_minus_identity(level, t):
    with mpmath.workdps(60 + 2 * level.k * 100):
        P = level.P_mp(t)
        return P - mpmath.eye(level.k), mpmath.det(P - mpmath.eye(level.k))


@pytest.fixture(scope="module")
def chain_schedule():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s + s^3*t", name="chain2")
    return synth_schedule(sys_, 1.0, 50.0, 0.0, 4.0)


@pytest.fixture(scope="module")
def linear_top_schedule():
    # m1 = 1 makes the top border exponent gamma equal to 1
    sys_ = TriangularSystem.from_strings(["0", "0", "0"], ["1", "1"], [1, 3], "s + s*t + s^3*t + s^3*t^2")
    return synth_schedule(sys_, 1.0, 20.0, 0.0, 3.0)


def test_two_state_schedule_has_one_level(chain_schedule):
    assert [lvl.k for lvl in chain_schedule.levels] == [2]
    assert chain_schedule.final.phi is chain_schedule.phi_R


def test_level2_initial_matrix(chain_schedule):
    assert np.array_equal(chain_schedule.final.P(0.0), [[2.0, 0.0], [0.0, 2.0]])


@pytest.mark.parametrize("t", [0.0, 1e-3, 0.3, 0.5, 1.0, 2.5, 4.0])
def test_level2_det_identity(chain_schedule, t):
    _, det = det_minus_identity(chain_schedule.final, t)
    assert abs(det - 1) < mpmath.mpf("1e-20")


def test_level2_border_sign(chain_schedule):
    pR = chain_schedule.final.pR
    assert pR(0.0) == 0.0
    assert np.all(pR(np.linspace(0, 4, 401)) <= 0)


def test_zero_slope_bound_gives_unit_ramp(chain_schedule):
    lvl = chain_schedule.final
    assert lvl.M == 0.0 and lvl.tau == 1.0
    assert lvl.d(0.0) == 0.0
    assert lvl.d(1.0) == pytest.approx(2.0)
    assert lvl.d(3.0) == pytest.approx(2.0)


def test_rate_offset_constant_rate():
    dbar = make_dbar(Constant(2.0), 1.0, 3.0, 0.0)
    t = np.linspace(0, 5, 51)
    assert np.allclose(dbar(t), 1.0)


def test_rate_offset_barely_above_floor():
    eps = 1e-9
    dbar = make_dbar(Constant(1.0 + eps), 1.0, 3.0, 0.0)
    assert dbar(0.5) == pytest.approx(1.0, abs=1e-15)
    assert dbar(3.0) == 1.0


def test_rate_offset_clamps_a_dip():
    d = Constant(5.0) - 3.5 * smoothstep(2.0, 2.0) + 3.5 * smoothstep(3.0, 2.0)
    dbar = make_dbar(d, 1.0, 3.0, 0.0)
    t = np.linspace(1.0, 6.0, 2001)
    assert np.all(dbar(t[1:]) >= 1.0)
    assert np.all(dbar(t) < d(t))
    assert dbar(3.0) == 1.0


def test_rate_offset_requires_margin():
    with pytest.raises(SynthesisError):
        make_dbar(Constant(0.5), 1.0, 3.0, 0.0)


def test_gamma_one_ramp_equals_theta(linear_top_schedule):
    top = linear_top_schedule.final
    assert top.k == 3 and top.gamma == 1.0
    t = np.linspace(0, 1, 201)
    assert np.array_equal(top.zeta(t), top.theta(t))


def test_three_state_levels_and_identities(ex11):
    sched = ex11.result
    assert [lvl.k for lvl in sched.levels] == [2, 3]
    assert (sched.L, sched.c1, sched.c2) == (2.0, 1.0, 3.0)
    for lvl in sched.levels:
        assert np.array_equal(lvl.P(0.0), 2.0 * np.eye(lvl.k))
    for t in (1e-30, 1e-3, 0.5, 7.0, 20.0):
        _, d3 = det_minus_identity(sched.levels[1], t)
        _, d2 = det_minus_identity(sched.levels[0], t)
        assert abs(d3 - 1) < mpmath.mpf("1e-12")
        # bordering multiplies the determinant by L - 1
        assert abs(d3 - (sched.L - 1) * d2) < mpmath.mpf("1e-12")


def test_next_rate_stays_below_previous_offset_rate(ex11):
    lo, hi = ex11.result.levels
    t = np.unique(np.concatenate([np.linspace(0, 20, 4001), hi.tau * np.linspace(0, 2, 401)]))
    assert np.all(hi.d(t) <= lo.dbar(t) + 1e-12 * np.abs(lo.dbar(t)))


def test_injection_gain_positive(ex11):
    t = np.linspace(0, 20, 2001)
    assert np.all(ex11.result.phi_R(t) >= SynthesisGrids().phi_floor)


def test_schedule_round_trip_and_determinism(chain_schedule):
    text = chain_schedule.dumps()
    again = GainSchedule.loads(text)
    assert again.dumps() == text
    sys_ = chain_schedule.sys
    assert synth_schedule(sys_, 1.0, 50.0, 0.0, 4.0).dumps() == text


def test_small_slack_rejected(chain_schedule):
    with pytest.raises(SynthesisError):
        synth_schedule(chain_schedule.sys, 1.0, 0.5, 0.0, 4.0)


def test_level2_rejects_unit_L(chain_schedule):
    with pytest.raises(SynthesisError):
        synth_level2(chain_schedule.sys, chain_schedule.env, 1.0, 0.0, 4.0)


def test_overflow_guard():
    with pytest.raises(GainOverflowError) as info:
        _check_magnitude(np.array([1.0, 1e301]), "p1", 3, np.array([0.0, 1.0]))
    assert info.value.level == 3 and info.value.witness["t"] == 1.0


def test_envelope_reuse_matches_fresh_build(chain_schedule):
    env = build_envelopes(chain_schedule.sys, G, 1.0, 50.0, 0.0, 4.0)
    again = synth_schedule(chain_schedule.sys, 1.0, 50.0, 0.0, 4.0, env=env)
    assert again.dumps() == chain_schedule.dumps()
