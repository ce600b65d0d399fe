"""Sampling and algebraic checks of the synthesised objects and of run traces.

Every check returns a :class:`CheckResult` carrying the worst margin seen,
the number of samples and, on failure, a witness.  Schedule checks:

* ``check_det_identity`` - ``det(P_k - I) = (L-1)^k`` and ``P_k(t0) = L I``;
* ``check_spd`` - ``P_k - I`` positive definite, ``|P_k(t0)| <= L``;
* ``check_rates`` - the rate bands and integral conditions of every level;
* ``check_border`` - the scalar border inequality tying ``p_R``, ``phi_k``
  and the rate drop between consecutive levels;
* ``check_lyapunov`` - the Lyapunov inequality on kernel samples (per level)
  or on the full admissible set with the injection gain.

Trace checks: ``check_envelopes`` (fixed-ball runs) and ``check_switch``
(switching runs).  ``check_b_algebra`` covers the divided-difference
polynomial.

Matrix identities are evaluated in mpmath at a precision sized to the
entries: with gains near ``1e80`` the float64 determinant of ``P - I`` is
pure rounding noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np

from . import kernels
from .synthesis import GainLevel, GainSchedule
from .system import eval_b, vartheta

__all__ = [
    "CheckResult",
    "EnvelopeData",
    "SwitchData",
    "check_times",
    "check_det_identity",
    "check_spd",
    "check_rates",
    "check_border",
    "check_lyapunov",
    "check_envelopes",
    "check_switch",
    "check_b_algebra",
    "schedule_checks",
    "LYAP_RTOL",
]

LYAP_RTOL = 1e-8
DET_RTOL = 1e-6
INIT_ATOL = 1e-12
INTEGRAL_ATOL = 1e-6
SCALES = 64
MAX_DEPTH = 300


@dataclass
class CheckResult:
    """Outcome of one check.

    Attributes
    ----------
    name : str
    passed : bool
    worst_margin : float
        Smallest (normalised) margin over the samples; negative means violated.
    witness : dict or None
        Sample at which the worst margin occurred; always set on failure.
    samples : int
    details : dict
    """

    name: str
    passed: bool
    worst_margin: float
    witness: dict | None = None
    samples: int = 0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            self.witness = {"reason": "no sample recorded"}

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# ---------------------------------------------------------------- time grids

def check_times(schedule: GainSchedule, count: int = 100, ramps: bool = True) -> np.ndarray:
    """``count`` uniform times on the domain plus, with ``ramps``, points resolving each level's ramp."""
    t0, t1 = schedule.t0, schedule.horizon
    pts = [np.linspace(t0, t1, count)]
    if ramps:
        fr = np.array([1 / 64, 1 / 16, 1 / 8, 1 / 4, 3 / 8, 1 / 2, 5 / 8, 3 / 4, 7 / 8, 1.0, 1.5, 2.0, 4.0])
        taus = [lvl.tau for lvl in schedule.levels]
        for tau in taus:
            pts.append(t0 + tau * fr)
        pts.append(t0 + np.geomspace(min(taus) / 64, 1.0, 40))
    t = np.unique(np.concatenate(pts))
    t = t[(t >= t0) & (t <= t1)]
    return t[np.concatenate([[True], np.diff(t) > 0])]


def _level(schedule: GainSchedule, k) -> GainLevel:
    if k in (None, "final"):
        return schedule.final
    for lvl in schedule.levels:
        if lvl.k == int(k):
            return lvl
    raise ValueError(f"no level {k} in schedule (levels {[l.k for l in schedule.levels]})")


# ---------------------------------------------------------- matrix identities

def _dps_for(P: np.ndarray, k: int) -> int:
    with np.errstate(over="ignore", divide="ignore"):
        big = float(np.nanmax(np.abs(P))) if P.size else 1.0
    if not math.isfinite(big):
        big = 1e308
    return int(k * max(0.0, math.log10(big + 1.0))) + 30


def check_det_identity(schedule: GainSchedule, count: int = 100) -> CheckResult:
    """``det(P_k(t) - I) = (L-1)^k`` within 1e-6 relative and ``P_k(t0) = L I`` within 1e-12.

    The determinant is evaluated in mpmath from the mpmath values of the
    border functions; the initial identity in float64.
    """
    t = check_times(schedule, count, ramps=True)
    L = schedule.L
    worst, witness, n_samples = math.inf, None, 0
    for lvl in schedule.levels:
        target = (L - 1.0) ** lvl.k
        P = lvl.P(t)
        for j, tj in enumerate(t):
            with mpmath.workdps(_dps_for(P[j], lvl.k)):
                M = lvl.P_mp(mpmath.mpf(float(tj))) - mpmath.eye(lvl.k)
                det = mpmath.det(M)
                rel = float(abs(det - target) / target)
            n_samples += 1
            margin = DET_RTOL - rel
            if margin < worst:
                worst = margin
                witness = {"level": lvl.k, "t": float(tj), "det": float(det), "target": target, "rel": rel}
        P0 = lvl.P(np.array([schedule.t0]))[0]
        dev = float(np.max(np.abs(P0 - L * np.eye(lvl.k))))
        n_samples += 1
        if INIT_ATOL - dev < worst:
            worst = INIT_ATOL - dev
            witness = {"level": lvl.k, "t": schedule.t0, "max_abs_P_minus_LI": dev}
    passed = worst >= 0
    return CheckResult("det(P_k - I) = (L-1)^k and P_k(t0) = L I", passed, worst,
                       None if passed else witness, n_samples, {"times": int(len(t)), "rtol": DET_RTOL})


def check_spd(schedule: GainSchedule, count: int = 100) -> CheckResult:
    """Smallest eigenvalue of ``P_k(t) - I`` positive on the grid; ``|P_k(t0)|_2 <= L + 1e-12``."""
    t = check_times(schedule, count, ramps=True)
    L = schedule.L
    worst, witness, n_samples = mpmath.inf, None, 0
    for lvl in schedule.levels:
        P = lvl.P(t)
        for j, tj in enumerate(t):
            with mpmath.workdps(_dps_for(P[j], lvl.k)):
                M = lvl.P_mp(mpmath.mpf(float(tj))) - mpmath.eye(lvl.k)
                ev = mpmath.eigsy(M, eigvals_only=True)
                lam = +min(ev[i] for i in range(lvl.k))
            n_samples += 1
            if lam < worst:
                worst = lam
                witness = {"level": lvl.k, "t": float(tj), "min_eig_P_minus_I": float(lam)}
        norm0 = float(np.linalg.norm(lvl.P(np.array([schedule.t0]))[0], 2))
        n_samples += 1
        m0 = L + INIT_ATOL - norm0
        if m0 < 0 and m0 < worst:
            worst = mpmath.mpf(m0)
            witness = {"level": lvl.k, "t": schedule.t0, "norm_P_t0": norm0, "L": L}
    # the smallest eigenvalue can sit far below the float range; the sign is decided in mpmath
    passed = bool(worst > 0)
    worst = float(worst)
    return CheckResult("P_k - I positive definite, |P_k(t0)| <= L", passed, worst,
                       None if passed else witness, n_samples, {"times": int(len(t))})


# ------------------------------------------------------------------- rates

def _ramp_nodes(schedule: GainSchedule, endpoints: np.ndarray, extra: set) -> np.ndarray:
    t0 = schedule.t0
    pts = [endpoints]
    for lvl in schedule.levels:
        pts.append(t0 + lvl.tau * np.linspace(0.0, 1.0, 257))
    b = np.array(sorted(x for x in extra if endpoints[0] <= x <= endpoints[-1]), float)
    pts.append(b)
    t = np.unique(np.concatenate(pts))
    return t[np.concatenate([[True], np.diff(t) > 0])]


def _min_subinterval_integral(fun, nodes: np.ndarray, endpoints: np.ndarray) -> tuple[float, float, float]:
    """Minimum of the integral of ``fun`` over ``[t1, t2]`` with endpoints on ``endpoints``.

    The trapezoid rule runs on ``nodes`` (a superset of ``endpoints``); the
    cumulative integral is read off at the endpoints and the minimum over
    ordered pairs is ``min_j C_j - max_{i <= j} C_i``.
    """
    v = fun(nodes)
    C = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(nodes))])
    Ce = C[np.searchsorted(nodes, endpoints)]
    run_max = np.maximum.accumulate(Ce)
    vals = Ce - run_max
    j = int(np.argmin(vals))
    i = int(np.flatnonzero(Ce[: j + 1] == run_max[j])[0])
    return float(vals[j]), float(endpoints[i]), float(endpoints[j])


def check_rates(schedule: GainSchedule, count: int = 1000) -> CheckResult:
    """Rate bands and integral conditions.

    Per level ``k``: ``d_k > n - k + 1`` for ``t >= t0 + 1`` and every
    integral of ``d_k`` over a subinterval of ``[t0, t0 + 1]`` exceeds
    ``-k``; ``d_{k+1} <= d_k - 1/2`` everywhere.  Final rate:
    ``c1 <= dbar_R < d_R`` for ``t >= t0 + 1`` and its subinterval
    integrals on ``[t0, t0 + 1]`` exceed ``-2 c2``.  Integrals use the
    trapezoid rule with ``count`` endpoints, tolerance 1e-6 absolute.
    """
    t0, n = schedule.t0, schedule.sys.n
    ends = np.linspace(t0, min(t0 + 1.0, schedule.horizon), count)
    tail = check_times(schedule, count, ramps=False)
    tail = tail[tail >= t0 + 1.0]
    full = check_times(schedule, count, ramps=True)
    rows = []

    def add(name, margin, **wit):
        rows.append((name, float(margin), wit))

    for lvl in schedule.levels:
        k = lvl.k
        if tail.size:
            dv = lvl.d(tail)
            j = int(np.argmin(dv))
            add(f"d_{k} > {n - k + 1} after t0+1", dv[j] - (n - k + 1), level=k, t=float(tail[j]), d=float(dv[j]))
        nodes = _ramp_nodes(schedule, ends, lvl.d.breakpoints())
        val, a, b = _min_subinterval_integral(lvl.d, nodes, ends)
        add(f"integral of d_{k} > -{k}", val + k + INTEGRAL_ATOL, level=k, t1=a, t2=b, integral=val)
        if lvl.child is not None:
            gap = lvl.child.dbar(full) - lvl.d(full)
            j = int(np.argmin(gap))
            scale = max(1.0, abs(float(lvl.d(full[j]))))
            add(f"d_{k} <= dbar_{k - 1}", gap[j] / scale, level=k, t=float(full[j]), gap=float(gap[j]))
    dR, dbarR = schedule.d_R, schedule.dbar_R
    if tail.size:
        db = dbarR(tail)
        j = int(np.argmin(db))
        add("dbar_R >= c1 after t0+1", db[j] - schedule.c1 + 1e-12, t=float(tail[j]), dbar=float(db[j]))
        gap = dR(tail) - db
        j = int(np.argmin(gap))
        add("dbar_R < d_R after t0+1", gap[j], t=float(tail[j]), gap=float(gap[j]))
    nodes = _ramp_nodes(schedule, ends, dbarR.breakpoints())
    val, a, b = _min_subinterval_integral(dbarR, nodes, ends)
    add("integral of dbar_R > -2 c2", val + 2 * schedule.c2 + INTEGRAL_ATOL, t1=a, t2=b, integral=val)

    i = int(np.argmin([r[1] for r in rows]))
    name, worst, wit = rows[i]
    # strict inequalities: a zero margin fails except for the tolerance-padded ones
    passed = all(r[1] > 0 for r in rows)
    return CheckResult("rate bands and integral conditions", passed, worst,
                       None if passed else {"condition": name, **wit},
                       int(len(tail) * (len(schedule.levels) + 2) + count * (len(schedule.levels) + 1)),
                       {"conditions": {r[0]: r[1] for r in rows}})


def check_border(schedule: GainSchedule, env=None, count: int = 200, scales: int = 200) -> CheckResult:
    """Border inequality between consecutive levels.

    For each level ``k + 1`` built on level ``k``:
    ``e^2 (p_R w theta_m e^(m-1) + phi_k) <= (dbar_k - d_{k+1}) g`` for
    ``|e| <= xi``, plus ``p_R <= 0`` everywhere and ``p_R(t0) = 0``.
    """
    env = env or schedule.env
    t = check_times(schedule, count, ramps=True)
    xi = schedule.xi
    worst, witness, n_samples = math.inf, None, 0
    e = np.concatenate([[0.0], np.geomspace(xi * 1e-12, xi, scales - 1)])
    for lvl in schedule.levels:
        pr = lvl.pR(t)
        n_samples += len(t)
        if np.any(pr > 0):
            j = int(np.argmax(pr))
            m = -float(pr[j])
            if m < worst:
                worst, witness = m, {"level": lvl.k, "t": float(t[j]), "p_R": float(pr[j]), "condition": "p_R <= 0"}
        p0 = float(lvl.pR(np.array([schedule.t0]))[0])
        if p0 != 0.0 and -abs(p0) < worst:
            worst, witness = -abs(p0), {"level": lvl.k, "t": schedule.t0, "p_R": p0, "condition": "p_R(t0) = 0"}
        if lvl.child is None:
            continue
        child = lvl.child
        w, g = env.w(t), env.g(t)
        phi = child.phi(t)
        rhs = (child.dbar(t) - lvl.d(t)) * g
        with np.errstate(over="ignore", invalid="ignore"):
            poly = pr[:, None] * w[:, None] * lvl.vartheta * e[None, :] ** (lvl.m - 1)
            lhs = e[None, :] ** 2 * (poly + phi[:, None])
            scale = e[None, :] ** 2 * (np.abs(poly) + phi[:, None]) + np.abs(rhs)[:, None]
            margin = (rhs[:, None] - lhs) / np.where(scale > 0, scale, 1.0)
        margin = np.where(np.isfinite(margin), margin, -np.inf)
        n_samples += margin.size
        j, i = np.unravel_index(np.argmin(margin), margin.shape)
        if margin[j, i] < worst:
            worst = float(margin[j, i])
            witness = {"level": lvl.k, "t": float(t[j]), "e": float(e[i]), "lhs": float(lhs[j, i]),
                       "rhs": float(rhs[j]), "condition": "border inequality"}
    passed = worst >= -LYAP_RTOL
    return CheckResult("border inequality and p_R sign", passed, worst, None if passed else witness, n_samples,
                       {"times": int(len(t)), "scales": scales})


# --------------------------------------------------------------- Lyapunov

def _sphere(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    v = rng.normal(size=(count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.concatenate([v, np.eye(dim), -np.eye(dim)])


def _directions(k: int, kernel: bool, n_dir: int, rng: np.random.Generator, depth: int = 12) -> np.ndarray:
    """Unit sample directions in ``R^k``; kernel directions have first entry 0.

    Full-form directions add near-kernel ones with first entry ``10^-j``,
    ``j = 1..depth``: the injection term only dominates once ``e1`` is tiny
    relative to the tail, and with large gains that happens many decades down.
    """
    if kernel:
        tails = _sphere(k - 1, n_dir, rng)
        return np.concatenate([np.zeros((len(tails), 1)), tails], axis=1)
    base = _sphere(k, n_dir, rng)
    tails = _sphere(k - 1, 8, rng)
    near = []
    # eight tails for the first twelve decades, four below
    for eps, tl in ((10.0 ** -np.arange(1, 13, dtype=float), tails),
                    (10.0 ** -np.arange(13, depth + 1, dtype=float), tails[:4])):
        for s in (1.0, -1.0):
            for u in tl:
                v = np.concatenate([s * eps[:, None], np.tile(u, (len(eps), 1))], axis=1)
                near.append(v / np.linalg.norm(v, axis=1, keepdims=True))
    return np.concatenate([base] + near)


def check_lyapunov(schedule: GainSchedule, sys=None, env=None, level_or_final="final", samples: int = 10_000,
                   form: str | None = None, seed: int = 0, n_dir: int = 64, count: int = 100) -> CheckResult:
    """Sampled Lyapunov inequality of one level.

    ``form="kernel"`` (default for numbered levels) checks
    ``e'PAe + e'Pdot e/2 <= -d_k e'Pe`` on error samples with zero first
    entry; ``form="full"`` (default for ``"final"``) checks
    ``e'PAe + e'Pdot e/2 + dbar e'Pe <= phi e1^2`` on the whole admissible
    set, with ``(phi, dbar) = (phi_R, dbar_R)`` for the final level and
    ``(phi_k, d_k - 1/2)`` otherwise.

    Samples are unit directions times ``64`` log-spaced scales in
    ``[rho, xi]``, where ``rho = sqrt(g / w'Pw)`` is the smallest scale with
    ``e'Pe >= g``.  The coefficient box and ``q`` ball are resolved in
    closed form per sample.  A sample fails when its margin is below
    ``-1e-8`` times the sum of the absolute values of the terms.
    """
    sys = sys or schedule.sys
    env = env or schedule.env
    final = level_or_final in (None, "final")
    lvl = _level(schedule, level_or_final)
    form = form or ("full" if final else "kernel")
    if form not in ("kernel", "full"):
        raise ValueError(f"unknown form {form!r}")
    if form == "kernel":
        phi_f, dbar_f = None, lvl.d
    elif final or lvl is schedule.final:
        phi_f, dbar_f = schedule.phi_R, schedule.dbar_R
    else:
        if lvl.phi is None:
            raise ValueError(f"level {lvl.k} has no injection gain")
        phi_f, dbar_f = lvl.phi, lvl.dbar
    rng = np.random.default_rng(seed)
    k = lvl.k
    t = check_times(schedule, count, ramps=True)
    if phi_f is not None and hasattr(phi_f, "x"):
        # midpoints between injection-gain knots, where interpolation is least constrained
        x = np.asarray(phi_f.x)
        mids = 0.5 * (x[1:] + x[:-1])
        t = np.unique(np.concatenate([t, mids[(mids >= schedule.t0) & (mids <= schedule.horizon)]]))
    depth = 12
    if phi_f is not None:
        # the binding e1 scales roughly like phi^(-1/2); go a dozen decades past that
        top = float(np.max(phi_f(t)))
        if math.isfinite(top) and top > 1:
            depth = min(MAX_DEPTH, max(depth, int(math.ceil(0.5 * math.log10(top))) + 12))
    dirs = _directions(k, form == "kernel", n_dir, rng, depth)
    P_all, D_all = lvl.matrices(t)
    hw = env.y_halfwidth(t)
    idx = range(lvl.offset, lvl.n - 1)
    ahi = np.stack([env.a_hi[i](t) for i in idx], axis=1)
    w = env.w(t)
    sig, g = env.sigma(t), env.g(t)
    dbar = dbar_f(t)
    phi = phi_f(t) if phi_f is not None else np.zeros_like(t)
    mask = lvl.qmask()
    mvec = lvl.mvec(sys)
    xi = schedule.xi if env.xi is None else env.xi
    frac = np.linspace(0.0, 1.0, SCALES)
    worst, witness, n_ok = math.inf, None, 0
    for j, tj in enumerate(t):
        P, H = P_all[j], 0.5 * D_all[j]
        expo = math.frexp(float(max(np.max(np.abs(P)), np.max(np.abs(H)))))[1]
        c = math.ldexp(1.0, -expo)
        Ps, Hs = P * c, H * c
        quad = np.einsum("ni,ij,nj->n", dirs, Ps, dirs)
        # rho = sqrt(g / w'Pw) computed in the scaled units; directions with w'Pw <= 0 (only on a
        # schedule that already fails the definiteness check) give nan and are dropped
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.sqrt(g[j] * c / quad)
        ok = rho <= xi
        if not np.any(ok):
            continue
        lo = np.log(np.maximum(rho[ok], 1e-300))
        sc = np.exp(lo[:, None] + frac[None, :] * (math.log(xi) - lo)[:, None])
        sc[:, 0] = rho[ok]
        sc[:, -1] = xi
        E = (dirs[ok][:, None, :] * sc[:, :, None]).reshape(-1, k)
        margin, scale = kernels.lyap_margin(Ps, Hs, float(dbar[j]), float(phi[j]) * c, float(sig[j]), mask,
                                            np.full(k - 1, float(w[j])), ahi[j], float(hw[j]), mvec, E)
        with np.errstate(invalid="ignore"):
            rel = margin / np.where(scale > 0, scale, 1.0)
        rel = np.where(np.isfinite(rel), rel, -np.inf)
        n_ok += len(E)
        i = int(np.argmin(rel))
        if rel[i] < worst:
            worst = float(rel[i])
            witness = {"t": float(tj), "e": E[i].tolist(), "abs_e": float(np.linalg.norm(E[i])),
                       "relative_margin": worst, "phi": float(phi[j]), "dbar": float(dbar[j])}
    label = "final" if final else str(k)
    name = f"Lyapunov inequality ({form} form, level {label})"
    details = {"times": int(len(t)), "directions": int(len(dirs)), "near_kernel_decades": depth,
               "scales": SCALES, "seed": seed,
               "rtol": LYAP_RTOL, "required_samples": samples}
    if n_ok < samples:
        return CheckResult(name, False, worst if math.isfinite(worst) else -math.inf,
                           {"reason": f"only {n_ok} admissible samples, need {samples}"}, n_ok, details)
    passed = worst >= -LYAP_RTOL
    return CheckResult(name, passed, worst, None if passed else witness, n_ok, details)


# ------------------------------------------------------------ trace checks

@dataclass
class EnvelopeData:
    """Error norms of a fixed-ball run and the constants of its envelope."""

    t: np.ndarray
    e_norm: np.ndarray
    g: np.ndarray
    xi: float
    c1: float
    t0: float

    @classmethod
    def from_report(cls, report) -> "EnvelopeData":
        c = report.constants
        return cls(report.error.t, report.error.norms(), np.asarray(report.g_values), float(c["xi"]),
                   float(c["c1"]), float(c["t0"]))


def check_envelopes(report) -> CheckResult:
    """``|e| < xi`` at every sample and ``|e| <= max(xi exp(-c1 (t - t0 - 1)), sqrt g)`` for ``t >= t0 + 1``."""
    d = report if isinstance(report, EnvelopeData) else EnvelopeData.from_report(report)
    t, en = np.asarray(d.t), np.asarray(d.e_norm)
    m1 = (d.xi - en) / d.xi
    i = int(np.argmin(m1))
    worst, witness = float(m1[i]), {"condition": "|e| < xi", "t": float(t[i]), "abs_e": float(en[i]), "xi": d.xi}
    ok1 = bool(np.all(en < d.xi))
    tail = t >= d.t0 + 1.0
    ok2 = True
    if np.any(tail):
        env = np.maximum(d.xi * np.exp(-d.c1 * (t[tail] - (d.t0 + 1.0))), np.sqrt(np.asarray(d.g)[tail]))
        m2 = (env - en[tail]) / env
        j = int(np.argmin(m2))
        ok2 = bool(m2[j] >= 0)
        if m2[j] < worst or (ok1 and not ok2):
            worst = float(m2[j])
            witness = {"condition": "decay envelope", "t": float(t[tail][j]), "abs_e": float(en[tail][j]),
                       "bound": float(env[j])}
    passed = ok1 and ok2
    return CheckResult("error envelopes", passed, worst, None if passed else witness, int(len(t)),
                       {"bound_xi": ok1, "decay_envelope": ok2})


@dataclass
class SwitchData:
    """Per-segment observer and error norms of a switching run.

    ``segments[k]`` holds arrays ``t``, ``z_norm`` and ``e_norm``; ``times``
    are the switching times with ``times[i - 1] = t_i``.
    """

    k0: int
    times: list
    zeta: list
    segments: dict
    horizon: float

    @classmethod
    def from_report(cls, report) -> "SwitchData":
        segs = {}
        for k, z in report.segment_trajectories.items():
            segs[int(k)] = {"t": z.t, "z_norm": z.norms(), "e_norm": report.segment_errors[k].norms()}
        return cls(int(report.constants["k0"]), list(report.plan["t"]), list(report.plan["zeta"]), segs,
                   float(report.constants["horizon"]))


def check_switch(report, atol: float = 0.0) -> CheckResult:
    """For ``k >= k0``: ``|z_k| < zeta_k`` on the whole segment and ``|e_k| <= 1/k`` on ``[t_k, t_{k+1}]``."""
    d = report if isinstance(report, SwitchData) else SwitchData.from_report(report)
    worst, witness, n_samples = math.inf, None, 0
    checked = []
    for k in sorted(d.segments):
        if k < d.k0:
            continue
        s = d.segments[k]
        t, zn, en = np.asarray(s["t"]), np.asarray(s["z_norm"]), np.asarray(s["e_norm"])
        zeta = d.zeta[k - 1]
        m = (zeta - zn) / zeta
        i = int(np.argmin(m))
        n_samples += len(t)
        if m[i] < worst or (m[i] <= 0 and (witness is None or worst > 0)):
            worst = float(m[i])
            witness = {"segment": k, "condition": "saturation inactive", "t": float(t[i]),
                       "abs_z": float(zn[i]), "zeta": zeta}
        if m[i] <= 0:
            worst = min(worst, float(m[i]))
        if k >= 2 and k < len(d.times):
            lo, hi = d.times[k - 1], d.times[k]
            if hi <= d.horizon + 1e-12:
                sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
                if np.any(sel):
                    md = (1.0 / k + atol - en[sel]) * k
                    j = int(np.argmin(md))
                    if md[j] < worst:
                        worst = float(md[j])
                        witness = {"segment": k, "condition": "decay |e_k| <= 1/k", "t": float(t[sel][j]),
                                   "abs_e": float(en[sel][j]), "bound": 1.0 / k}
                    checked.append(k)
    passed = worst > 0 if n_samples else False
    if not n_samples:
        witness = {"reason": "no segment at or beyond k0"}
        worst = -math.inf
    return CheckResult("switching saturation and decay", passed, worst, None if passed else witness, n_samples,
                       {"k0": d.k0, "decay_segments": checked})


# ------------------------------------------------------------- b algebra

def check_b_algebra(ms=(1, 3, 5, 7), points: int = 100_000, seed: int = 0, rtol: float = 1e-9,
                    b=eval_b, theta=vartheta) -> CheckResult:
    """Telescoping, homogeneity, lower bound and decomposition of the divided difference.

    For each ``m`` on ``points`` random samples:

    * ``b(x, x - z) (x - z) = x^m - z^m`` with ``x, z`` in ``[-10, 10]``;
    * ``b(l a, l c) = l^(m-1) b(a, c)`` with ``l`` in ``[-3, 3]``;
    * ``bbar(a, c) = b(a, c) - theta_m c^(m-1) >= 0``;
    * ``b(a, c) >= theta_m (a^2 + c^2)^((m-1)/2)`` (the circle bound behind ``theta_m``).

    Errors are measured relative to the sum of magnitudes of the terms.
    ``b`` and ``theta`` can be replaced to build negative controls.
    """
    rng = np.random.default_rng(seed)
    worst, witness, total = math.inf, None, 0
    per = {}
    for m in ms:
        x, z = rng.uniform(-10, 10, (2, points))
        a, c = rng.uniform(-10, 10, (2, points))
        lam = rng.uniform(-3, 3, points)
        th = theta(m)
        mag = (np.abs(x) + np.abs(x - z)) ** (m - 1) * m
        tele = np.abs(b(m, x, x - z) * (x - z) - (x ** m - z ** m)) / (
            mag * np.abs(x - z) + np.abs(x) ** m + np.abs(z) ** m)
        base = (np.abs(a) + np.abs(a - c)) ** (m - 1) * m
        homo = np.abs(b(m, lam * a, lam * c) - lam ** (m - 1) * b(m, a, c)) / (
            np.abs(lam) ** (m - 1) * base + 1e-300)
        bv = b(m, a, c)
        bbar = (bv - th * c ** (m - 1)) / (np.abs(bv) + th * np.abs(c) ** (m - 1) + 1e-300)
        circ = (bv - th * (a * a + c * c) ** ((m - 1) / 2)) / (
            np.abs(bv) + th * (a * a + c * c) ** ((m - 1) / 2) + 1e-300)
        rows = {"telescoping": (rtol - tele, {"x": x, "z": z}),
                "homogeneity": (rtol - homo, {"alpha": a, "beta": c, "lambda": lam}),
                "bbar_nonnegative": (bbar + rtol, {"alpha": a, "beta": c}),
                "circle_bound": (circ + rtol, {"alpha": a, "beta": c})}
        per[m] = {}
        for name, (mg, args) in rows.items():
            i = int(np.argmin(mg))
            per[m][name] = float(mg[i])
            total += points
            if mg[i] < worst:
                worst = float(mg[i])
                witness = {"m": m, "property": name, **{k: float(v[i]) for k, v in args.items()}}
    passed = worst >= 0
    return CheckResult("divided-difference algebra", passed, worst, None if passed else witness, total,
                       {"m": list(ms), "points": points, "seed": seed, "rtol": rtol, "per_m": per})


# ----------------------------------------------------------------- bundles

def schedule_checks(schedule: GainSchedule, samples: int = 10_000, seed: int = 0) -> list[CheckResult]:
    """Every schedule-level check: identities, definiteness, rates, border and Lyapunov forms."""
    out = [check_det_identity(schedule), check_spd(schedule), check_rates(schedule), check_border(schedule)]
    for lvl in schedule.levels:
        out.append(check_lyapunov(schedule, level_or_final=lvl.k, samples=samples, seed=seed))
    out.append(check_lyapunov(schedule, level_or_final="final", samples=samples, seed=seed))
    return out
