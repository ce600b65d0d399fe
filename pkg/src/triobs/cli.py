"""Scenario files, command dispatch and artifact emission.

Commands
--------
``synth``
    Validate the scenario and write ``schedule.json`` (fixed ball) or
    ``plan.json`` plus ``schedule-seg{k}.json`` (switching).
``run``
    Synthesise (or load with ``--schedule``), simulate plant and observer,
    write ``trace.csv`` (and ``seg-{k}.csv`` per switching segment) and
    ``report.json``.
``verify``
    Re-check schedules and traces found in ``--out-dir`` (or given with
    ``--schedule`` / ``--report``) and write ``checks.json``.
``demo``
    ``synth``, ``run`` and ``verify`` on a built-in scenario.
``batch``
    ``run`` over several scenarios and seeds in worker processes.

Exit codes: 0 success, 1 validation, 2 synthesis, 3 integration,
4 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .envelopes import DEFAULT_G, EnvelopeError, validate_beta, validate_g
from .exprlang import ExpressionError, ScalarField
from .observer import switch_plan, xi_bound
from .ode import IntegrationError
from .sim import RunReport, run_odp, run_sodp, write_trace_csv
from .synthesis import GainSchedule, SynthesisError, SynthesisGrids
from .system import SystemValidationError, TriangularSystem
from .verify import (CheckResult, EnvelopeData, SwitchData, _jsonable, check_b_algebra, check_envelopes,
                     check_switch, schedule_checks)

__all__ = ["Scenario", "ScenarioError", "load_scenario", "builtin_scenario", "cmd_synth", "cmd_run",
           "cmd_verify", "cmd_demo", "cmd_batch", "main", "EXIT_OK", "EXIT_VALIDATION", "EXIT_SYNTHESIS",
           "EXIT_INTEGRATION", "EXIT_VERIFICATION", "SCENARIO_SCHEMA", "DEMOS"]

log = logging.getLogger("triobs")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SYNTHESIS = 2
EXIT_INTEGRATION = 3
EXIT_VERIFICATION = 4

DEMOS = {"example11-odp": "example11", "chain2-sodp": "chain2"}
BUILTINS = ("example11", "chain2")

_EXPR = {"type": ["string", "number"]}
_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 2}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "triobs scenario",
    "type": "object",
    "required": ["system"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["n", "m", "f", "a", "beta"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "m": {"type": "array",
                      "items": {"type": "integer", "minimum": 1, "not": {"multipleOf": 2}}},
                "f": {"type": "array", "items": _EXPR},
                "a": {"type": "array", "items": _EXPR},
                "beta": _EXPR,
                "C": {"type": "string"},
            },
        },
        "g": _EXPR,
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"L": {"type": "number", "exclusiveMinimum": 1}, "c1": _POS, "c2": _POS},
        },
        "mode": {"enum": ["odp", "sodp"]},
        "odp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"R": _POS, "x0": _VEC, "trials": {"type": "integer", "minimum": 1}},
        },
        "sodp": {
            "type": "object",
            "required": ["x0"],
            "additionalProperties": False,
            "properties": {"x0": _VEC},
        },
        "t0": _NUM,
        "horizon": _NUM,
        "step": _POS,
        "seed": {"type": "integer", "minimum": 0},
        "grids": {"type": "object", "additionalProperties": _NUM},
    },
    "allOf": [
        {"if": {"properties": {"mode": {"const": "sodp"}}, "required": ["mode"]},
         "then": {"required": ["sodp"]}},
    ],
}


class ScenarioError(ValueError):
    """The scenario file is missing, malformed or inconsistent."""


@dataclass
class Scenario:
    """Fully resolved scenario with every default applied.

    Attributes
    ----------
    name : str
    n : int
    m, f, a : list
        Powers, drift expressions and coupling coefficients.
    beta : str
        Completeness bound over ``(t, s)``.
    C : str
        Free-text growth hypothesis behind ``beta`` (documentation only).
    g : str
        Precision envelope over ``t``.
    L, c1, c2 : float
        Induction constants (``c2`` defaults to ``n``).
    mode : str
        ``"odp"`` (fixed ball) or ``"sodp"`` (switching).
    R : float or None
        Ball radius (fixed-ball mode).
    x0 : list or None
        Initial plant state; in fixed-ball mode ``None`` means "draw
        ``trials`` states uniformly from the ball with ``seed``".
    trials : int
    t0, horizon, step : float
    seed : int
    grids : dict
        Overrides of :class:`~triobs.synthesis.SynthesisGrids` fields.
    source : str
        Where the scenario was loaded from.
    """

    name: str
    n: int
    m: list
    f: list
    a: list
    beta: str
    C: str = ""
    description: str = ""
    g: str = DEFAULT_G
    L: float = 2.0
    c1: float = 1.0
    c2: float = 0.0
    mode: str = "odp"
    R: float | None = 1.0
    x0: list | None = None
    trials: int = 1
    t0: float = 0.0
    horizon: float = 20.0
    step: float = 0.01
    seed: int = 0
    grids: dict = field(default_factory=dict)
    source: str = ""

    def system(self) -> TriangularSystem:
        return TriangularSystem.from_strings(self.f, self.a, self.m, self.beta, name=self.name, note=self.C)

    def g_field(self) -> ScalarField:
        return ScalarField.from_text(self.g, ("t",), "g")

    def synthesis_grids(self) -> SynthesisGrids:
        return SynthesisGrids(**self.grids)

    def initial_states(self) -> np.ndarray:
        """``(trials, n)`` initial states; drawn uniformly in the ball when not given."""
        if self.x0 is not None:
            return np.asarray([self.x0], dtype=float)
        rng = np.random.default_rng(self.seed)
        d = rng.normal(size=(self.trials, self.n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.R * rng.uniform(size=self.trials) ** (1.0 / self.n)
        return d * r[:, None]

    def with_overrides(self, seed: int | None = None, step: float | None = None) -> "Scenario":
        out = copy.deepcopy(self)
        if seed is not None:
            out.seed = int(seed)
        if step is not None:
            if not step > 0:
                raise ScenarioError(f"step must be positive, got {step}")
            out.step = float(step)
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _schema_error(exc: jsonschema.ValidationError, where: str) -> ScenarioError:
    path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
    msg = exc.message
    if "multipleOf" in str(exc.validator) or exc.validator == "not":
        msg = f"{exc.instance!r} must be odd"
    return ScenarioError(f"{where}: {path}: {msg}")


def scenario_from_dict(data: dict, source: str = "<dict>") -> Scenario:
    """Validate ``data`` against :data:`SCENARIO_SCHEMA` and apply defaults.

    Raises
    ------
    ScenarioError
        With the key path of the first schema violation, or on mode or
        dimension inconsistencies.
    """
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0], source)
    s = data["system"]
    n = int(s["n"])
    if len(s["m"]) != n - 1 or len(s["a"]) != n - 1 or len(s["f"]) != n:
        raise ScenarioError(f"{source}: system: n = {n} needs {n} drift terms f and {n - 1} entries in m and a")
    const = data.get("constants", {})
    mode = data.get("mode", "sodp" if "sodp" in data else "odp")
    if mode == "odp" and "sodp" in data:
        raise ScenarioError(f"{source}: sodp: section given but mode is odp")
    if mode == "sodp" and "odp" in data:
        raise ScenarioError(f"{source}: odp: section given but mode is sodp")
    sc = Scenario(
        name=data.get("name", Path(source).stem if source and not source.startswith("<") else "scenario"),
        n=n, m=[int(v) for v in s["m"]], f=[str(v) for v in s["f"]], a=[str(v) for v in s["a"]],
        beta=str(s["beta"]), C=s.get("C", ""), description=data.get("description", ""),
        g=str(data.get("g", DEFAULT_G)), L=float(const.get("L", 2.0)), c1=float(const.get("c1", 1.0)),
        c2=float(const.get("c2", n)), mode=mode, t0=float(data.get("t0", 0.0)),
        horizon=float(data.get("horizon", 20.0)), step=float(data.get("step", 0.01)),
        seed=int(data.get("seed", 0)), grids=dict(data.get("grids", {})), source=source)
    if mode == "odp":
        odp = data.get("odp", {})
        sc.R = float(odp.get("R", 1.0))
        sc.trials = int(odp.get("trials", 1))
        if "x0" in odp:
            sc.x0 = [float(v) for v in odp["x0"]]
            if sc.trials != 1:
                raise ScenarioError(f"{source}: odp/trials: must be 1 when x0 is given")
    else:
        sc.R = None
        sc.x0 = [float(v) for v in data["sodp"]["x0"]]
    if sc.x0 is not None:
        if len(sc.x0) != n:
            raise ScenarioError(f"{source}: {mode}/x0: expected {n} entries, got {len(sc.x0)}")
        if mode == "odp" and np.linalg.norm(sc.x0) > sc.R:
            raise ScenarioError(f"{source}: odp/x0: |x0| = {np.linalg.norm(sc.x0):.6g} exceeds R = {sc.R}")
    if not sc.horizon > sc.t0 + 1.0:
        raise ScenarioError(f"{source}: horizon: must exceed t0 + 1 (the gain ramp length)")
    known = {f.name for f in dataclasses.fields(SynthesisGrids)}
    unknown = sorted(set(sc.grids) - known)
    if unknown:
        raise ScenarioError(f"{source}: grids: unknown keys {unknown}; allowed {sorted(known)}")
    return sc


def load_scenario(path) -> Scenario:
    """Read a YAML scenario file (or a built-in name) into a resolved :class:`Scenario`.

    Raises
    ------
    ScenarioError
        File missing, YAML syntax error or schema violation (with key path).
    """
    key = str(path)
    if key in DEMOS:
        key = DEMOS[key]
    if key in BUILTINS and not Path(key).exists():
        return builtin_scenario(key)
    p = Path(path)
    if not p.is_file():
        raise ScenarioError(f"scenario file not found: {p} (built-ins: {', '.join(BUILTINS)})")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{p}: not valid YAML: {exc}") from exc
    return scenario_from_dict(data, str(p))


def builtin_scenario(name: str) -> Scenario:
    """One of the packaged scenarios, by name (``example11``, ``chain2`` or a demo alias)."""
    name = DEMOS.get(name, name)
    if name not in BUILTINS:
        raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTINS)}")
    text = resources.files("triobs").joinpath("scenarios", f"{name}.yaml").read_text()
    return scenario_from_dict(yaml.safe_load(text), f"builtin:{name}")


# ---------------------------------------------------------------------------
# validation and pipelines


def validate_scenario(sc: Scenario, trials: int = 100) -> dict:
    """Check ``g``, ``beta`` (Monte Carlo) and the system coefficients.

    Raises
    ------
    EnvelopeError, SystemValidationError
        On the first failed check, with its witness in the message.
    """
    sys_ = sc.system()
    g = sc.g_field()
    out = {}
    rep = validate_g(g, sc.horizon, sc.t0)
    rep.raise_if_failed()
    out["g"] = rep.details
    R = sc.R if sc.mode == "odp" else float(np.linalg.norm(sc.x0))
    rep = validate_beta(sys_, R, sc.horizon, trials=trials, seed=sc.seed, t0=sc.t0, h=sc.step)
    rep.raise_if_failed()
    out["beta"] = rep.details
    halfwidth = float(np.max(sys_.beta.vectorized(np.linspace(sc.t0, sc.horizon, 41), np.full(41, R + 1.0))))
    sys_.validate((sc.t0, sc.horizon), halfwidth)
    out["system"] = {"y_halfwidth": halfwidth}
    return out


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


def _xi(sc: Scenario, sys_: TriangularSystem) -> float:
    return xi_bound(sc.L, sc.c2, sys_.beta(sc.t0, sc.R + 1.0))


def synthesize(sc: Scenario):
    """Gain schedule (fixed ball) or switching plan with every needed segment synthesised."""
    sys_ = sc.system()
    g = sc.g_field()
    if sc.mode == "odp":
        from .synthesis import synth_schedule
        return synth_schedule(sys_, sc.R, _xi(sc, sys_), sc.t0, sc.horizon, g=g, L=sc.L, c1=sc.c1, c2=sc.c2,
                              grids=sc.synthesis_grids(), seed=sc.seed)
    plan = switch_plan(sys_, g, sc.L, sc.c1, sc.c2, sc.t0, sc.horizon, grids=sc.synthesis_grids(), seed=sc.seed)
    for k in plan.segments_needed(sc.horizon):
        plan.segment(k)
    return plan


def _plan_dict(plan, sc: Scenario) -> dict:
    return {"format": "triobs-plan/1", "plan": plan.summary(), "horizon": sc.horizon,
            "segments": plan.segments_needed(sc.horizon), "scenario": sc.to_dict()}


def write_synthesis(result, sc: Scenario, out: Path) -> list[str]:
    """Write the schedule file(s); returns the file names."""
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(result, GainSchedule):
        (out / "schedule.json").write_text(result.dumps() + "\n")
        return ["schedule.json"]
    names = ["plan.json"]
    _dump_json(_plan_dict(result, sc), out / "plan.json")
    for k in result.segments_needed(sc.horizon):
        name = f"schedule-seg{k}.json"
        (out / name).write_text(result.segment(k).dumps() + "\n")
        names.append(name)
    return names


def load_synthesis(path: Path, sc: Scenario):
    """Load ``schedule.json`` or ``plan.json`` (with its sibling segment files)."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"schedule file not found: {path}")
    data = json.loads(path.read_text())
    if data.get("format") == "triobs-plan/1":
        sys_ = sc.system()
        plan = switch_plan(sys_, sc.g_field(), sc.L, sc.c1, sc.c2, sc.t0, sc.horizon,
                           grids=sc.synthesis_grids(), seed=sc.seed)
        if plan.t != data["plan"]["t"]:
            raise ScenarioError(f"{path}: switching times do not match the scenario")
        for k in data["segments"]:
            seg = path.parent / f"schedule-seg{k}.json"
            plan._segments[int(k)] = GainSchedule.loads(seg.read_text())
        return plan
    sched = GainSchedule.loads(path.read_text())
    s = sched.sys
    if [f.source for f in s.f] != [str(v) for v in sc.f] or list(s.m) != sc.m:
        raise ScenarioError(f"{path}: schedule was synthesised for a different system")
    return sched


def write_segment_csv(report: RunReport, k: int, path: Path) -> None:
    """Per-segment CSV with columns ``t, z1..zn, e1..en``."""
    z, e = report.segment_trajectories[k], report.segment_errors[k]
    n = z.x.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"z{i}" for i in range(1, n + 1)] + [f"e{i}" for i in range(1, n + 1)])
    fmt = "{:.17g}".format
    for j in range(len(z.t)):
        w.writerow([fmt(z.t[j])] + [fmt(v) for v in z.x[j]] + [fmt(v) for v in e.x[j]])
    path.write_text(buf.getvalue())


def simulate(sc: Scenario, synthesis=None) -> list[RunReport]:
    """One report per initial state (fixed ball) or a single switching report."""
    sys_ = sc.system()
    g = sc.g_field()
    if sc.mode == "odp":
        reports = []
        for x0 in sc.initial_states():
            rep = run_odp(sys_, sc.R, x0, sc.t0, sc.horizon, sc.step, g=g, L=sc.L, c1=sc.c1, c2=sc.c2,
                          grids=sc.synthesis_grids(), seed=sc.seed, schedule=synthesis)
            synthesis = rep.schedule
            reports.append(rep)
        return reports
    return [run_sodp(sys_, sc.x0, sc.t0, sc.horizon, sc.step, g=g, L=sc.L, c1=sc.c1, c2=sc.c2,
                     grids=sc.synthesis_grids(), seed=sc.seed, plan=synthesis)]


def write_run(reports: list[RunReport], sc: Scenario, out: Path, validation: dict | None = None) -> dict:
    """Write traces and ``report.json``; returns the report document."""
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for j, rep in enumerate(reports, start=1):
        trace = "trace.csv" if len(reports) == 1 else f"trace-{j:02d}.csv"
        write_trace_csv(rep, out / trace)
        summary = rep.summary()
        summary["trace"] = trace
        if rep.mode == "sodp":
            segs = {}
            for k in sorted(rep.segment_trajectories):
                name = f"seg-{k}.csv"
                write_segment_csv(rep, k, out / name)
                segs[str(k)] = name
            summary["segment_traces"] = segs
        runs.append(summary)
    doc = {"format": "triobs-report/1", "scenario": sc.to_dict(), "passed": all(r.passed for r in reports),
           "runs": runs}
    if validation is not None:
        doc["validation"] = validation
    _dump_json(doc, out / "report.json")
    return doc


def _read_csv(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    cols = {}
    for i, name in enumerate(head):
        cols[name] = np.array([float(r[i]) if r[i] != "" else math.nan for r in body])
    return cols


def _norm(cols: dict, prefix: str) -> np.ndarray:
    names = sorted((c for c in cols if c.startswith(prefix) and c[len(prefix):].isdigit()),
                   key=lambda c: int(c[len(prefix):]))
    return np.linalg.norm(np.column_stack([cols[c] for c in names]), axis=1)


def trace_data(run: dict, base: Path):
    """Rebuild the envelope or switching data of one run from its report entry and CSV files."""
    c = run["constants"]
    if run["mode"] == "odp":
        cols = _read_csv(base / run["trace"])
        return EnvelopeData(cols["t"], _norm(cols, "e"), cols["g"], float(c["xi"]), float(c["c1"]),
                            float(c["t0"]))
    segs = {}
    for k, name in run["segment_traces"].items():
        cols = _read_csv(base / name)
        segs[int(k)] = {"t": cols["t"], "z_norm": _norm(cols, "z"), "e_norm": _norm(cols, "e")}
    return SwitchData(int(c["k0"]), list(run["plan"]["t"]), list(run["plan"]["zeta"]), segs, float(c["horizon"]))


def verify_artifacts(schedules: list, reports: list[tuple[dict, Path]], samples: int = 10_000, seed: int = 0,
                     algebra: bool = True) -> list[CheckResult]:
    """Schedule checks for each schedule, trace checks for each run, and the algebra identities."""
    results = []
    for label, sched in schedules:
        for res in schedule_checks(sched, samples=samples, seed=seed):
            res.name = f"{label}:{res.name}"
            results.append(res)
    for doc, base in reports:
        for j, run in enumerate(doc["runs"], start=1):
            data = trace_data(run, base)
            res = check_envelopes(data) if isinstance(data, EnvelopeData) else check_switch(data)
            res.name = f"{run['trace']}:{res.name}"
            results.append(res)
    if algebra:
        results.append(check_b_algebra(seed=seed))
    return results


def write_checks(results: list[CheckResult], out: Path, extra: dict | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"format": "triobs-checks/1", "passed": all(r.passed for r in results),
           "checks": [r.to_dict() for r in results]}
    if extra:
        doc.update(extra)
    _dump_json(doc, out / "checks.json")
    return doc


def _schedules_of(synthesis) -> list:
    if isinstance(synthesis, GainSchedule):
        return [("schedule", synthesis)]
    return [(f"seg{k}", synthesis.segment(k)) for k in sorted(synthesis._segments)]


# ---------------------------------------------------------------------------
# commands


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise ScenarioError("--scenario is required")
    return load_scenario(args.scenario).with_overrides(args.seed, args.step)


def cmd_synth(args) -> int:
    sc = _scenario(args)
    out = Path(args.out_dir)
    validate_scenario(sc)
    tic = time.perf_counter()
    result = synthesize(sc)
    names = write_synthesis(result, sc, out)
    log.info("synthesised %s in %.1f s: %s", sc.name, time.perf_counter() - tic, ", ".join(names))
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _scenario(args)
    out = Path(args.out_dir)
    validation = validate_scenario(sc)
    synthesis = load_synthesis(Path(args.schedule), sc) if args.schedule else None
    reports = simulate(sc, synthesis)
    if synthesis is None:
        synthesis = reports[0].schedule if sc.mode == "odp" else None
    doc = write_run(reports, sc, out, validation)
    for run in doc["runs"]:
        for v in run["verdicts"].values():
            log.info("%-4s %s", "ok" if v["passed"] else "FAIL", v["name"])
    return EXIT_OK if doc["passed"] else EXIT_VERIFICATION


def _collect(args) -> tuple[list, list]:
    out = Path(args.out_dir)
    schedules, reports = [], []
    sched_paths = [Path(p) for p in (args.schedule or [])]
    report_paths = [Path(p) for p in (args.report or [])]
    if not sched_paths and not report_paths:
        if (out / "schedule.json").is_file():
            sched_paths.append(out / "schedule.json")
        sched_paths.extend(sorted(out.glob("schedule-seg*.json"), key=lambda p: int(p.stem[len("schedule-seg"):])))
        if (out / "report.json").is_file():
            report_paths.append(out / "report.json")
    if not sched_paths and not report_paths:
        raise ScenarioError(f"nothing to verify in {out}: no schedule.json, schedule-seg*.json or report.json")
    for p in sched_paths:
        if not p.is_file():
            raise ScenarioError(f"schedule file not found: {p}")
        try:
            schedules.append((p.stem, GainSchedule.loads(p.read_text())))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"{p}: not a schedule file ({exc})") from exc
    for p in report_paths:
        if not p.is_file():
            raise ScenarioError(f"report file not found: {p}")
        reports.append((json.loads(p.read_text()), p.parent))
    return schedules, reports


def cmd_verify(args) -> int:
    schedules, reports = _collect(args)
    results = verify_artifacts(schedules, reports, samples=args.samples, seed=args.seed or 0)
    doc = write_checks(results, Path(args.out_dir))
    for r in results:
        log.info("%-4s %s (worst margin %s)", "ok" if r.passed else "FAIL", r.name, r.worst_margin)
    return EXIT_OK if doc["passed"] else EXIT_VERIFICATION


def cmd_demo(args) -> int:
    name = args.name
    if name not in DEMOS and name not in BUILTINS:
        raise ScenarioError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    sc = builtin_scenario(name).with_overrides(args.seed, args.step)
    out = Path(args.out_dir)
    validation = validate_scenario(sc)
    synthesis = synthesize(sc)
    write_synthesis(synthesis, sc, out)
    reports = simulate(sc, synthesis)
    doc = write_run(reports, sc, out, validation)
    results = verify_artifacts(_schedules_of(synthesis), [(doc, out)], samples=args.samples, seed=sc.seed)
    checks = write_checks(results, out)
    for run in doc["runs"]:
        for v in run["verdicts"].values():
            log.info("%-4s run: %s", "ok" if v["passed"] else "FAIL", v["name"])
    for r in results:
        log.info("%-4s check: %s", "ok" if r.passed else "FAIL", r.name)
    passed = doc["passed"] and checks["passed"]
    print(f"demo {name}: {'pass' if passed else 'FAIL'} ({out})")
    return EXIT_OK if passed else EXIT_VERIFICATION


def _batch_job(job: tuple[str, int | None, float | None, str]) -> dict:
    path, seed, step, out = job
    ns = argparse.Namespace(scenario=path, seed=seed, step=step, out_dir=out, schedule=None)
    code = _guarded(cmd_run, ns)
    return {"scenario": path, "seed": seed, "out_dir": out, "exit": code}


def cmd_batch(args) -> int:
    if not args.scenario:
        raise ScenarioError("batch needs at least one --scenario")
    out = Path(args.out_dir)
    seeds = args.seeds or [args.seed]
    jobs = []
    for path in args.scenario:
        name = load_scenario(path).name
        for s in seeds:
            sub = out / (name if s is None else f"{name}-seed{s}")
            jobs.append((path, s, args.step, str(sub)))
    if args.jobs == 1:
        results = [_batch_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_batch_job, jobs))
    out.mkdir(parents=True, exist_ok=True)
    _dump_json({"format": "triobs-batch/1", "jobs": results}, out / "batch.json")
    for r in results:
        log.info("exit %d  %s (seed %s) -> %s", r["exit"], r["scenario"], r["seed"], r["out_dir"])
    return max(r["exit"] for r in results)


# ---------------------------------------------------------------------------
# entry point


def _guarded(fn, args) -> int:
    """Run a command and map the error families onto exit codes."""
    try:
        return fn(args)
    except SynthesisError as exc:
        log.error("synthesis failed: %s", exc)
        return EXIT_SYNTHESIS
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        return EXIT_INTEGRATION
    except (ScenarioError, SystemValidationError, EnvelopeError, ExpressionError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="triobs-out", help="directory for artifacts (default: triobs-out)")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--step", type=float, default=None, help="override the integration step h")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    common.add_argument("-q", "--quiet", action="store_true", help="only errors")

    p = argparse.ArgumentParser(prog="triobs", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="synthesise and write the gain schedule")
    s.add_argument("--scenario", required=True, help="YAML file or built-in name")
    s.set_defaults(fn=cmd_synth)
    s = sub.add_parser("run", parents=[common], help="simulate plant and observer, write traces and report")
    s.add_argument("--scenario", required=True, help="YAML file or built-in name")
    s.add_argument("--schedule", help="reuse schedule.json or plan.json instead of synthesising")
    s.set_defaults(fn=cmd_run)
    s = sub.add_parser("verify", parents=[common], help="check schedules and traces, write checks.json")
    s.add_argument("--scenario", help="accepted for symmetry; artifacts carry their own scenario")
    s.add_argument("--schedule", action="append", help="schedule file (repeatable)")
    s.add_argument("--report", action="append", help="report.json of a run (repeatable)")
    s.add_argument("--samples", type=int, default=10_000, help="admissible Lyapunov samples per form")
    s.set_defaults(fn=cmd_verify)
    s = sub.add_parser("demo", parents=[common], help="synth, run and verify a built-in scenario")
    s.add_argument("name", choices=sorted(DEMOS) + list(BUILTINS))
    s.add_argument("--samples", type=int, default=10_000, help="admissible Lyapunov samples per form")
    s.set_defaults(fn=cmd_demo)
    s = sub.add_parser("batch", parents=[common], help="run several scenarios and seeds in parallel")
    s.add_argument("--scenario", action="append", required=True, help="YAML file or built-in name (repeatable)")
    s.add_argument("--seeds", type=int, nargs="+", help="run every scenario once per seed")
    s.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    s.set_defaults(fn=cmd_batch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                              logging.INFO if args.verbose == 1 else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    return _guarded(args.fn, args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
