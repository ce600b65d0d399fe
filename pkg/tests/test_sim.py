import io

import numpy as np
import pytest

from triobs.observer import switch_plan
from triobs.sim import envelope_bound, grid_times, integrate_plant, run_odp, run_sodp, write_trace_csv


def test_grid_includes_both_ends():
    t = grid_times(0.0, 1.005, 0.01)
    assert t[0] == 0.0 and t[-1] == 1.005
    assert np.all(np.diff(t) > 0)


def test_plant_integration_matches_closed_form(ex11):
    sys_ = ex11.scenario.system()
    traj = integrate_plant(sys_, 0.0, [0.0, 0.0, 0.5], 2.0, 0.01)
    # only the last state is excited, and it decays linearly: x3 = 0.5 exp(-t)
    assert traj.final[2] == pytest.approx(0.5 * np.exp(-2.0), rel=1e-8)


def test_envelope_is_flat_before_one_unit(ex11):
    g = ex11.scenario.g_field()
    env = envelope_bound(np.array([0.0, 0.5, 1.0, 3.0]), 10.0, 1.0, 0.0, g)
    assert env[0] == env[1] == 10.0
    assert env[2] == 10.0 and env[3] == pytest.approx(10.0 * np.exp(-2.0))


def test_plant_at_rest_gives_zero_error(ex11):
    sc = ex11.scenario
    rep = run_odp(sc.system(), sc.R, np.zeros(3), horizon=sc.horizon, schedule=ex11.result)
    assert np.all(rep.error.x == 0.0)
    assert rep.passed, rep.verdicts


def test_odp_rejects_state_outside_ball(ex11):
    sc = ex11.scenario
    with pytest.raises(ValueError, match="exceeds R"):
        run_odp(sc.system(), sc.R, [1.0, 0.5, 0.0], schedule=ex11.result)


def test_odp_rejects_wrong_dimension(ex11):
    sc = ex11.scenario
    with pytest.raises(ValueError, match="length"):
        run_odp(sc.system(), sc.R, [0.1, 0.1], schedule=ex11.result)


@pytest.fixture(scope="module")
def short_chain(chain2):
    sc = chain2.scenario
    sys_ = sc.system()
    plan = switch_plan(sys_, sc.g_field(), sc.L, sc.c1, sc.c2, sc.t0, 3.0, grids=sc.synthesis_grids())
    return sys_, plan


def test_short_horizon_is_partial(short_chain):
    sys_, plan = short_chain
    rep = run_sodp(sys_, [0.3, -0.2], horizon=3.0, plan=plan)
    assert rep.partial
    assert rep.jumps == {}
    assert rep.observer.t[-1] == 3.0
    assert not any(name.startswith("decay") for name in rep.verdicts)


def test_switching_run_from_rest_passes(short_chain):
    sys_, plan = short_chain
    rep = run_sodp(sys_, [0.0, 0.0], horizon=3.0, plan=plan)
    assert rep.passed and np.all(rep.error.x == 0.0)
    assert rep.constants["k0"] == 1


def test_trace_csv_header_and_determinism(ex11):
    sc = ex11.scenario
    x0 = [0.2, -0.3, 0.1]
    a = run_odp(sc.system(), sc.R, x0, horizon=2.0, schedule=ex11.result)
    b = run_odp(sc.system(), sc.R, x0, horizon=2.0, schedule=ex11.result)
    text = write_trace_csv(a)
    assert text.splitlines()[0] == "t,x1,x2,x3,z1,z2,z3,e1,e2,e3,y,V,envelope,g"
    assert text == write_trace_csv(b)
    buf = io.StringIO()
    write_trace_csv(a, buf)
    assert buf.getvalue() == text
    assert len(text.splitlines()) == len(a.plant.t) + 1


def test_observer_and_error_add_up(ex11):
    sc = ex11.scenario
    rep = run_odp(sc.system(), sc.R, [0.5, 0.5, -0.5], horizon=3.0, schedule=ex11.result)
    assert np.allclose(rep.observer.x + rep.error.x, rep.plant.x, rtol=0, atol=1e-12)
    assert rep.summary()["terminal"]["t"] == 3.0
