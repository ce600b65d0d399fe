import math

import numpy as np
import pytest

from triobs.envelopes import DEFAULT_G
from triobs.exprlang import ScalarField
from triobs.observer import (assemble_Z, injection_gain, luenberger_rhs, saturation_factor, switch_plan,
                             switch_time_bisect, switch_times_closed_form, switched_rhs, xi_bound)
from triobs.ode import Trajectory
from triobs.synthesis import synth_schedule
from triobs.system import TriangularSystem, eval_F

G = ScalarField.from_text(DEFAULT_G, ("t",), "g")


@pytest.fixture(scope="module")
def chain():
    return TriangularSystem.from_strings(["0", "0"], ["1"], [3], "s + s^3*t", name="chain2")


@pytest.fixture(scope="module")
def chain_schedule(chain):
    return synth_schedule(chain, 1.0, 50.0, 0.0, 3.0)


def test_slack_radius_value():
    assert xi_bound(2.0, 3.0, 5.0) == pytest.approx(5 * math.sqrt(2) * math.exp(6), rel=1e-14)
    assert xi_bound(2.0, 3.0, 5.0) == pytest.approx(2852.6724, abs=1e-4)


def test_slack_radius_is_linear_and_inflating():
    assert xi_bound(2.0, 3.0, 10.0) == pytest.approx(2 * xi_bound(2.0, 3.0, 5.0), rel=1e-15)
    for b in (1e-3, 1.0, 1e6):
        assert xi_bound(2.0, 3.0, b) > b


@pytest.mark.parametrize("args", [(1.0, 3.0, 1.0), (2.0, 0.0, 1.0), (2.0, 3.0, 0.0)])
def test_slack_radius_rejects_bad_constants(args):
    with pytest.raises(ValueError):
        xi_bound(*args)


def test_zero_innovation_gives_plain_copy(chain_schedule, chain):
    z = np.array([0.4, -1.1])
    assert np.array_equal(luenberger_rhs(chain_schedule, 1.3, z, 0.4), eval_F(chain, 1.3, z, 0.4))


def test_initial_injection_is_diagonal_solve(chain_schedule):
    K = injection_gain(chain_schedule, 0.0)
    phi0 = chain_schedule.phi_R(0.0)
    assert K == pytest.approx([phi0 / 2.0, 0.0], rel=1e-14, abs=0)


def test_demo_rhs_at_start_from_zero(chain_schedule, chain):
    y = 0.7
    want = eval_F(chain, 0.0, np.zeros(2), y) + np.array([chain_schedule.phi_R(0.0) / 2.0 * y, 0.0])
    assert np.allclose(luenberger_rhs(chain_schedule, 0.0, np.zeros(2), y), want, rtol=1e-14)


def test_rhs_outside_domain_rejected(chain_schedule):
    with pytest.raises(ValueError):
        luenberger_rhs(chain_schedule, 3.5, np.zeros(2), 0.0)


def test_switch_time_closed_form_value():
    t2 = switch_times_closed_form(0.0, 2, 1000.0)
    assert t2 == pytest.approx(1 + math.log(2000.0), rel=1e-15)
    assert t2 == pytest.approx(8.6009, abs=1e-4)


def test_switch_time_agrees_with_bisection():
    for prev, i, xi in [(0.0, 2, 1000.0), (8.6, 3, 5e4), (20.0, 5, 0.1)]:
        closed = switch_times_closed_form(prev, i, xi)
        assert switch_time_bisect(prev, i, xi, G) == pytest.approx(closed, abs=1e-9)


def test_switch_time_when_slack_term_inactive():
    assert switch_times_closed_form(3.0, 4, 0.2) == max(4.0, math.log(16 / 2))


def test_saturation_radii_for_linear_bound():
    sys_ = TriangularSystem.from_strings(["0", "0"], ["1"], [3], "2*s")
    plan = switch_plan(sys_, G, 2.0, 1.0, 2.0, 0.0, 30.0)
    for k in range(1, plan.n_segments + 1):
        assert plan.zeta[k - 1] == pytest.approx(2 * k + plan.xi[k - 1], rel=1e-15)


def test_switching_times_increase_by_at_least_one(chain):
    plan = switch_plan(chain, G, 2.0, 1.0, 2.0, 0.0, 50.0)
    assert np.all(np.diff(plan.t[1:]) >= 1.0)
    assert plan.t[-2] > 50.0


@pytest.mark.parametrize("ratio, want", [(2.0, 0.0), (3.0, 0.0), (1.5, 0.5), (1.0, 1.0), (0.3, 1.0)])
def test_saturation_factor(ratio, want):
    assert saturation_factor(4.0, ratio * 4.0) == pytest.approx(want)


def test_switched_field_in_band_is_half_nominal(chain):
    plan = switch_plan(chain, G, 2.0, 1.0, 2.0, 0.0, 3.0)
    zeta = plan.zeta[0]
    z = np.array([1.5 * zeta, 0.0])
    nominal = luenberger_rhs(plan.segment(1), 0.5, z, 0.2)
    assert np.allclose(switched_rhs(plan, 1, 0.5, z, 0.2), 0.5 * nominal)
    assert np.array_equal(switched_rhs(plan, 1, 0.5, np.array([2 * zeta, 0.0]), 0.2), np.zeros(2))
    small = np.array([0.1, 0.2])
    assert np.array_equal(switched_rhs(plan, 1, 0.5, small, 0.2), luenberger_rhs(plan.segment(1), 0.5, small, 0.2))


def _smooth(t0, t1):
    t = np.linspace(t0, t1, 2001)
    return Trajectory(t, np.column_stack([np.sin(t), np.cos(t)]), np.column_stack([np.cos(t), -np.sin(t)]))


def test_single_segment_estimate(chain):
    plan = switch_plan(chain, G, 2.0, 1.0, 2.0, 0.0, 5.0)
    assert plan.t[1] > 5.0
    seg = _smooth(0.0, 5.0)
    Z = assemble_Z(plan, {1: seg}, 5.0)
    assert np.array_equal(Z.x, seg.x) and Z.meta["jumps"] == {}


def test_identical_segments_have_no_jumps(chain):
    plan = switch_plan(chain, G, 2.0, 1.0, 2.0, 0.0, 30.0)
    segs = {k: _smooth(plan.window(k)[0], plan.window(k)[1]) for k in plan.segments_needed(30.0)}
    Z = assemble_Z(plan, segs, 30.0)
    # jumps compare cubic interpolants on different grids, so only interpolation error remains
    assert Z.meta["jumps"] and max(Z.meta["jumps"].values()) < 1e-7
    assert np.allclose(Z.x[:, 0], np.sin(Z.t), atol=1e-12)


def test_coverage_gap_detected(chain):
    plan = switch_plan(chain, G, 2.0, 1.0, 2.0, 0.0, 30.0)
    with pytest.raises(ValueError, match="missing"):
        assemble_Z(plan, {1: _smooth(*plan.window(1))}, 30.0)
