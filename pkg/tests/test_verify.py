import json
import time

import numpy as np
import pytest

from controls import controls, is_witnessed_failure, tight_segment
from triobs import verify as V


@pytest.fixture(scope="module")
def tight(chain2):
    return tight_segment(chain2.scenario)


def test_failed_result_always_has_witness():
    r = V.CheckResult("x", False, -1.0)
    assert r.witness == {"reason": "no sample recorded"}


def test_result_serialises_numpy_values():
    r = V.CheckResult("x", True, np.float64(0.5), None, np.int64(3), {"a": np.array([1.0, np.inf])})
    d = json.loads(json.dumps(r.to_dict()))
    assert d["worst_margin"] == 0.5 and d["samples"] == 3 and d["details"]["a"] == [1.0, "inf"]


def test_check_times_cover_domain(ex11):
    t = V.check_times(ex11.result)
    assert t[0] == ex11.result.t0 and t[-1] == ex11.result.horizon
    assert np.all(np.diff(t) > 0)


def test_schedule_checks_pass_on_synthesised_gains(ex11):
    results = V.schedule_checks(ex11.result, samples=10_000)
    assert [r.passed for r in results] == [True] * len(results), [r.to_dict() for r in results if not r.passed]


def test_b_algebra_passes():
    r = V.check_b_algebra(points=20_000)
    assert r.passed and r.samples == 4 * 4 * 20_000


def test_zero_error_passes_envelopes():
    t = np.linspace(0, 20, 201)
    assert V.check_envelopes(V.EnvelopeData(t, np.zeros_like(t), 0.5 * np.exp(-t), 5.0, 1.0, 0.0)).passed


def test_switching_inside_radius_passes():
    times = [0.0, 2.0, 4.0, 6.0]
    segs = {k: {"t": np.linspace(times[max(k - 2, 0)], times[k], 51), "z_norm": np.full(51, 0.9 * 10.0),
                "e_norm": np.full(51, 0.5 / k)} for k in (1, 2)}
    r = V.check_switch(V.SwitchData(1, times, [10.0, 10.0, 10.0], segs, 6.0))
    assert r.passed and r.details["decay_segments"] == [2]


def test_switching_without_checked_segments_fails():
    r = V.check_switch(V.SwitchData(3, [0.0, 1.0, 2.0], [1.0, 1.0], {1: {"t": [0.0], "z_norm": [0.0],
                                                                          "e_norm": [0.0]}}, 2.0))
    assert not r.passed and "reason" in r.witness


def test_unpadded_segment_passes_before_corruption(tight):
    assert V.check_lyapunov(tight, level_or_final="final").passed


CONTROL_NAMES = ["det identity", "positive definiteness", "rate ordering", "border gain", "lyapunov kernel level 2",
                 "lyapunov kernel level 3", "lyapunov final", "error envelopes", "switching decay",
                 "b algebra (b", "b algebra (theta"]


@pytest.mark.parametrize("prefix", CONTROL_NAMES)
def test_corrupted_fixture_fails_with_witness(ex11, tight, prefix):
    table = controls(ex11.result, tight)
    (label,) = [k for k in table if k.startswith(prefix)]
    r = table[label]()
    assert is_witnessed_failure(r), r.to_dict()
    assert r.worst_margin < 0
