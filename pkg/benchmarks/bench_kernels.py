"""Compare the compiled and numpy kernel backends.

Times ``phi_sup`` (closed-form sup over ``e1`` per tail sample) and
``lyap_margin`` (Lyapunov margins of full samples) on synthetic inputs
shaped like a three-state level, checks that both backends agree and
prints one line per kernel.

Usage::

    python benchmarks/bench_kernels.py [--samples N] [--repeat R] [--dim K]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from triobs import _pykernels

try:
    from triobs import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def make_inputs(k: int, samples: int, seed: int = 0) -> dict:
    """Random but admissible kernel arguments for a ``k``-dimensional level."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, k))
    P = A @ A.T + k * np.eye(k)
    H = -0.5 * P + 0.1 * (A + A.T)
    qmask = np.tril(np.ones((k, k), bool))
    qmask[:, 0] = False
    return {
        "P": P, "H": H, "dbar": 1.5, "sigma": 2.0, "g": 0.3, "xi": 50.0, "phi": 1e3, "qmask": qmask,
        "alo": np.full(k - 1, 0.5), "ahi": np.full(k - 1, 1.0), "xhw": 3.0, "mvec": np.full(k - 1, 3),
        "tails": rng.normal(size=(samples, k - 1)), "full": rng.normal(size=(samples, k)),
    }


def _calls(mod, a):
    phi = lambda: mod.phi_sup(a["P"], a["H"], a["dbar"], a["sigma"], a["g"], a["xi"], a["qmask"], a["alo"],
                              a["ahi"], a["xhw"], a["mvec"], a["tails"])
    lyap = lambda: mod.lyap_margin(a["P"], a["H"], a["dbar"], a["phi"], a["sigma"], a["qmask"], a["alo"],
                                   a["ahi"], a["xhw"], a["mvec"], a["full"])
    return {"phi_sup": phi, "lyap_margin": lyap}


def _agree(x, y) -> float:
    """Largest relative difference between two kernel outputs."""
    xs = np.atleast_1d(np.concatenate([np.ravel(np.asarray(v, float)) for v in x]))
    ys = np.atleast_1d(np.concatenate([np.ravel(np.asarray(v, float)) for v in y]))
    fin = np.isfinite(xs) & np.isfinite(ys)
    if not np.array_equal(np.isfinite(xs), np.isfinite(ys)):
        return np.inf
    scale = np.maximum(np.abs(xs[fin]), 1e-300)
    return float(np.max(np.abs(xs[fin] - ys[fin]) / scale, initial=0.0))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=3)
    args = ap.parse_args(argv)
    a = make_inputs(args.dim, args.samples)
    py = _calls(_pykernels, a)
    cy = _calls(_ckernels, a) if _ckernels is not None else None
    print(f"{'kernel':<12} {'samples':>8} {'numpy [ms]':>11} {'compiled [ms]':>14} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in py.items():
        t_py = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:<12} {args.samples:>8} {t_py:>11.2f} {'n/a':>14} {'n/a':>8} {'n/a':>13}")
            continue
        t_cy = min(timeit.repeat(cy[name], number=1, repeat=args.repeat)) * 1e3
        diff = _agree(fn(), cy[name]())
        print(f"{name:<12} {args.samples:>8} {t_py:>11.2f} {t_cy:>14.2f} {t_py / t_cy:>8.1f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
