"""Acceptance criteria, each at its stated tolerance and time budget.

Every test records one pass/fail line in ``ACCEPTANCE_LINES``; the lines are
printed in the terminal summary of the session.  Synthesis runs once per
scenario in session fixtures; criteria whose budget covers synthesis add the
fixture's measured seconds to their own wall-clock time.
"""

from __future__ import annotations

import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from controls import controls, is_witnessed_failure, tight_segment
from triobs.cli import _schedules_of, main
from triobs.envelopes import validate_beta
from triobs.ode import integrate
from triobs.sim import run_odp, run_sodp
from triobs.verify import check_b_algebra, check_det_identity, check_lyapunov


def record(k: int, ok: bool, what: str, measured: str, seconds: float, budget: float) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {what}  [{measured}; {seconds:.2f} s of {budget:g} s]"
    ACCEPTANCE_LINES[k] = line
    print(line)


def test_criterion_1_divided_difference_algebra():
    tic = time.perf_counter()
    r = check_b_algebra(ms=(1, 3, 5, 7), points=100_000, rtol=1e-9)
    dt = time.perf_counter() - tic
    ok = r.passed and r.samples == 4 * 4 * 100_000 and dt < 5.0
    record(1, ok, "b telescoping, homogeneity and lower bounds on 1e5 points per m in {1,3,5,7} at 1e-9",
           f"worst relative margin {r.worst_margin:.3g}", dt, 5)
    assert r.passed, r.witness
    assert dt < 5.0


def test_criterion_2_determinant_and_initial_identity(ex11, chain2):
    schedules = [("example11", ex11.result)] + [(f"chain2 {n}", s) for n, s in _schedules_of(chain2.result)]
    tic = time.perf_counter()
    results = [(name, check_det_identity(s)) for name, s in schedules]
    dt = time.perf_counter() - tic
    failed = [(name, r.witness) for name, r in results if not r.passed]
    levels = sum(len(s.levels) for _, s in schedules)
    ok = not failed and dt < 10.0
    record(2, ok, "det(P_k - I) = (L-1)^k within 1e-6 and P_k(t0) = L I within 1e-12, both demos, all levels",
           f"{len(schedules)} schedules, {levels} levels, min margin {min(r.worst_margin for _, r in results):.3g}",
           dt, 10)
    assert not failed, failed
    assert dt < 10.0


def test_criterion_3_lyapunov_forms(ex11, chain2):
    schedules = [("example11", ex11.result)] + [(f"chain2 {n}", s) for n, s in _schedules_of(chain2.result)]
    tic = time.perf_counter()
    results = []
    for name, s in schedules:
        for lvl in s.levels:
            results.append((f"{name} level {lvl.k} kernel", check_lyapunov(s, level_or_final=lvl.k, samples=10_000)))
        results.append((f"{name} final", check_lyapunov(s, level_or_final="final", samples=10_000)))
    dt = time.perf_counter() - tic
    failed = [(name, r.witness) for name, r in results if not r.passed]
    few = [name for name, r in results if r.samples < 10_000]
    ok = not failed and not few and dt < 120.0
    record(3, ok, "Lyapunov kernel form per level and final form, >= 1e4 samples each, margin >= -1e-8 scale",
           f"{len(results)} forms, min samples {min(r.samples for _, r in results)}, "
           f"worst margin {min(r.worst_margin for _, r in results):.3g}", dt, 120)
    assert not failed, failed
    assert not few
    assert dt < 120.0


def test_criterion_4_fixed_ball_runs(ex11):
    sc = ex11.scenario.with_overrides()
    sc.trials = 10
    x0s = sc.initial_states()
    assert x0s.shape == (10, 3) and np.all(np.linalg.norm(x0s, axis=1) <= 1.0)
    sys_ = sc.system()
    tic = time.perf_counter()
    reports = [run_odp(sys_, 1.0, x0, horizon=20.0, h=sc.step, schedule=ex11.result, atol=1e-4) for x0 in x0s]
    dt = ex11.seconds + time.perf_counter() - tic
    sqrt_g = math.sqrt(0.5 * math.exp(-20.0))
    needed = ("bound_xi", "decay_envelope", "terminal")
    bad = [(j, name, r.verdicts[name]) for j, r in enumerate(reports) for name in needed
           if not r.verdicts[name]["passed"]]
    worst_terminal = max(r.verdicts["terminal"]["abs_e"] for r in reports)
    ok = not bad and dt < 60.0
    record(4, ok, "example11-odp, R = 1, 10 random x0 in B_1: |e| < xi, decay envelope, terminal |e| <= sqrt g(20)",
           f"worst terminal |e| {worst_terminal:.3g} vs sqrt g(20) = {sqrt_g:.3g} (+1e-4)", dt, 60)
    assert not bad, bad
    assert dt < 60.0


def test_criterion_5_switching_run(chain2):
    sc = chain2.scenario
    x0 = np.array([0.9, -1.2])
    assert np.linalg.norm(x0) == pytest.approx(1.5)
    tic = time.perf_counter()
    rep = run_sodp(sc.system(), x0, horizon=sc.horizon, h=sc.step, plan=chain2.result)
    dt = chain2.seconds + time.perf_counter() - tic
    assert rep.constants["k0"] == 2
    decay = {k: rep.verdicts.get(f"decay_{k}") for k in (2, 3, 4)}
    sat = {k: v for k, v in rep.verdicts.items() if k.startswith("saturation_")}
    missing = [k for k, v in decay.items() if v is None]
    bad = [v for v in list(decay.values()) + list(sat.values()) if v is not None and not v["passed"]]
    ok = not missing and not bad and bool(sat) and dt < 300.0
    worst = ", ".join(f"|e_{k}| max {v['worst']:.3g}" for k, v in decay.items() if v)
    record(5, ok, "chain2-sodp, |x0| = 1.5 (k0 = 2): saturation inactive for k >= k0, |e_k| <= 1/k for k = 2, 3, 4",
           worst, dt, 300)
    assert not missing, missing
    assert not bad, bad
    assert dt < 300.0


def test_criterion_6_forward_completeness_monte_carlo(ex11, chain2):
    cases = [("example11", ex11.scenario, 1.0), ("chain2", chain2.scenario, 1.5)]
    tic = time.perf_counter()
    reports = [(name, validate_beta(sc.system(), R, sc.horizon, trials=100, seed=0, t0=sc.t0))
               for name, sc, R in cases]
    dt = time.perf_counter() - tic
    failed = [(name, r.witness) for name, r in reports if not r.passed]
    ok = not failed and dt < 30.0
    record(6, ok, "|x(t)| <= beta(t, |x0|) on 100 Monte Carlo runs per demo scenario",
           f"{len(reports)} scenarios x 100 runs", dt, 30)
    assert not failed, failed
    assert dt < 30.0


def test_criterion_7_rk4_order():
    tic = time.perf_counter()
    errs = [abs(integrate(lambda t, x: -x, 0.0, [1.0], 1.0, h).final[0] - math.exp(-1.0)) for h in (0.1, 0.05)]
    ratio = errs[0] / errs[1]
    dt = time.perf_counter() - tic
    ok = 14.0 <= ratio <= 18.0 and dt < 1.0
    record(7, ok, "RK4 error ratio between h and h/2 on x' = -x in [14, 18]", f"ratio {ratio:.4f}", dt, 1)
    assert 14.0 <= ratio <= 18.0
    assert dt < 1.0


@pytest.fixture(scope="module")
def tight(chain2):
    return tight_segment(chain2.scenario)


def test_criterion_8_negative_controls(ex11, tight):
    table = controls(ex11.result, tight)
    tic = time.perf_counter()
    results = {label: fn() for label, fn in table.items()}
    dt = time.perf_counter() - tic
    caught = [label for label, r in results.items() if is_witnessed_failure(r)]
    missed = [label for label in results if label not in caught]
    ok = not missed and dt < 30.0
    record(8, ok, "every verification check fails on its corrupted fixture with a witness",
           f"{len(caught)}/{len(results)} controls caught", dt, 30)
    assert not missed, missed
    assert dt < 30.0


def _csvs(d: Path) -> list[str]:
    return sorted(p.name for p in Path(d).glob("*.csv"))


def test_criterion_9_demo_traces_bit_identical(demo_dirs, tmp_path):
    tic = time.perf_counter()
    compared, diff = 0, []
    for name, (code, first) in demo_dirs.items():
        assert code == 0, name
        again = tmp_path / name
        assert main(["demo", name, "--out-dir", str(again), "-q"]) == 0
        names = _csvs(first)
        if names != _csvs(again):
            diff.append((name, "file set"))
            continue
        for f in names:
            compared += 1
            if not filecmp.cmp(Path(first) / f, again / f, shallow=False):
                diff.append((name, f))
    dt = time.perf_counter() - tic
    ok = not diff and compared > 0
    record(9, ok, "repeated demo with a fixed seed gives bit-identical trace CSVs",
           f"{compared} CSV files compared, {len(diff)} differ", dt, math.inf)
    assert compared > 0
    assert not diff, diff
