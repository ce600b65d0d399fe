"""Pure numpy implementation of the hot kernels.

Both kernels work at a single time instant on a batch of error samples.
Shapes use ``k`` for the level dimension and ``N`` for the batch.

phi_sup
    Upper bound of ``[e'PAe + e'He + dbar e'Pe] / e1^2`` over the admissible
    set, for every sampled tail ``ehat = (e2..ek)``.  With ``s = 1/e1`` the
    bound is, for each vertex of the coefficient box and each sign of ``s``,
    a quadratic in ``|s|``; the admissible set in ``|s|`` is a union of at
    most two intervals, so the maximum is found in closed form.
lyap_margin
    Direct evaluation of ``phi e1^2 - sup_{A} [e'PAe + e'He + dbar e'Pe]``
    at full error samples ``e``; the independent route used by verification.

In both, ``H`` is half the derivative of ``P``, the superdiagonal products
``a_i b_i`` range over ``[alo_i * bmin_i(e_{i+1}), ahi_i * bmax_i(e_{i+1})]``
with exact ``b`` ranges over ``|x| <= xhw``, and the lower-triangular
coefficients ``q`` (entries allowed by ``qmask``) range over the Euclidean
ball of radius ``sigma``; the sup over that ball is ``sigma`` times the norm
of the coefficient vector ``((Pe)_i e_j)``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .system import b_interval

__all__ = ["phi_sup", "lyap_margin"]


def _b_ranges(E, mvec, xhw, alo, ahi):
    lo = np.empty_like(E)
    hi = np.empty_like(E)
    for i, m in enumerate(mvec):
        bl, bh = b_interval(int(m), xhw, E[:, i])
        lo[:, i] = alo[i] * bl
        hi[:, i] = ahi[i] * bh
    return lo, hi


def _quad_max(a0, a1, a2, l, u):
    """Max of ``a0 + a1 x + a2 x^2`` on ``[l, u]`` (``u`` may be inf); -inf where empty."""
    empty = ~(l <= u) | ~np.isfinite(l)
    with np.errstate(invalid="ignore", over="ignore"):
        fl = a0 + a1 * l + a2 * l * l
        fu = np.where(np.isfinite(u), a0 + a1 * u + a2 * u * u, -np.inf)
        unbounded = ~np.isfinite(u) & ((a2 > 0) | ((a2 == 0) & (a1 > 0)))
        xv = np.where(a2 < 0, -a1 / (2 * np.where(a2 < 0, a2, -1.0)), np.nan)
        inside = (a2 < 0) & (xv > l) & (xv < u)
        fv = np.where(inside, a0 - a1 * a1 / (4 * np.where(a2 < 0, a2, -1.0)), -np.inf)
    best = np.maximum(np.maximum(fl, fu), fv)
    best = np.where(unbounded, np.inf, best)
    return np.where(empty, -np.inf, best)


def phi_sup(P, H, dbar, sigma, g, xi, qmask, alo, ahi, xhw, mvec, E):
    """Closed-form sup of the ratio over ``e1`` for each tail sample.

    Parameters
    ----------
    P, H : (k, k) arrays
        Gain matrix and half its time derivative.
    dbar, sigma, g, xi, xhw : float
    qmask : (k, k) bool array
    alo, ahi : (k-1,) arrays
        Bounds of the superdiagonal coefficients ``a_i``.
    mvec : (k-1,) int array
    E : (N, k-1) array of tails

    Returns
    -------
    best : float
        Maximum bound over the batch (``-inf`` if no sample is admissible,
        ``inf`` if the bound is unbounded).
    arg : int
        Index of the maximising sample.
    """
    P = np.asarray(P, float)
    k = P.shape[0]
    E = np.asarray(E, float).reshape(-1, k - 1)
    B = H + dbar * P
    P0 = P[:, 0]
    Pu = E @ P[:, 1:].T                       # (N, k): P u1
    a0 = B[0, 0]
    b1 = 2.0 * E @ B[0, 1:]
    c2b = np.einsum("ni,ij,nj->n", E, B[1:, 1:], E)
    # q-coefficient norms for the three powers of s
    mask = np.asarray(qmask, bool)
    U = np.concatenate([np.zeros((E.shape[0], 1)), E], axis=1)  # u1
    col0 = mask[:, 0]
    w0 = np.sqrt(np.sum(P0[col0] ** 2))
    w2 = np.sqrt(np.einsum("ni,ij,nj->n", Pu ** 2, mask.astype(float), U ** 2))
    w1sq = np.sum((Pu ** 2)[:, col0], axis=1)
    w1sq = w1sq + np.einsum("i,ij,nj->n", P0 ** 2, mask[:, 1:].astype(float), E ** 2)
    w1 = np.sqrt(w1sq)
    lo, hi = _b_ranges(E, mvec, xhw, alo, ahi)
    cb = E * P0[None, : k - 1]                # s^1 coefficient of (Pv)_i v_{i+1}
    cg = E * Pu[:, : k - 1]                   # s^2 coefficient
    # admissible |s|: |e| <= xi and e'Pe >= g
    r2 = np.sum(E * E, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tmin = 1.0 / np.sqrt(xi * xi - r2)
    tmin = np.where(r2 < xi * xi, tmin, np.inf)
    Ehat = np.einsum("ni,ij,nj->n", E, P[1:, 1:], E)
    rho = E @ P[0, 1:]
    cq = Ehat - g
    p00 = P[0, 0]

    best = np.full(E.shape[0], -np.inf)
    for signs in itertools.product((0, 1), repeat=k - 1):
        sel = np.array(signs, bool)
        ab = np.where(sel[None, :], hi, lo)
        beta_v = b1 + np.sum(ab * cb, axis=1)
        gam_v = c2b + np.sum(ab * cg, axis=1)
        for sb in (1.0, -1.0):
            A0 = a0 + sigma * w0
            A1 = sb * beta_v + sigma * w1
            A2 = gam_v + sigma * w2
            acut, bcut = _feasible_cuts(cq, sb * rho, p00)
            v1 = _quad_max(A0, A1, A2, tmin, np.minimum(acut, np.inf))
            v2 = _quad_max(A0, A1, A2, np.maximum(tmin, bcut), np.full_like(tmin, np.inf))
            best = np.maximum(best, np.maximum(v1, v2))
    i = int(np.argmax(best))
    return float(best[i]), i


def _feasible_cuts(c2, rho, p00):
    """Feasible ``x >= 0`` of ``c2 x^2 + 2 rho x + p00 >= 0`` as ``[0, A] U [B, inf)``."""
    n = c2.shape[0]
    A = np.full(n, np.inf)
    B = np.full(n, np.inf)
    disc = rho * rho - c2 * p00
    sq = np.sqrt(np.maximum(disc, 0.0))
    # stable roots of c2 x^2 + 2 rho x + p00
    qq = -(rho + np.where(rho >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        ra = qq / c2
        rb = p00 / qq
    lo_r = np.minimum(ra, rb)
    hi_r = np.maximum(ra, rb)
    pos = c2 > 0
    two = pos & (disc > 0)
    A = np.where(two, lo_r, A)
    B = np.where(two, hi_r, B)
    neg = c2 < 0
    A = np.where(neg, hi_r, A)
    zero = c2 == 0
    with np.errstate(divide="ignore"):
        lin = np.where(rho < 0, -p00 / (2 * np.where(rho < 0, rho, -1.0)), np.inf)
    A = np.where(zero, lin, A)
    return A, B


def lyap_margin(P, H, dbar, phi, sigma, qmask, alo, ahi, xhw, mvec, E):
    """Margins ``phi e1^2 - sup D(e)`` and their scales for full samples ``E`` (N, k).

    ``phi = 0`` with ``dbar`` set to the level rate gives the kernel form.

    Returns
    -------
    margin, scale : (N,) arrays
    """
    P = np.asarray(P, float)
    k = P.shape[0]
    E = np.asarray(E, float).reshape(-1, k)
    PE = E @ P.T
    quad_h = np.einsum("ni,ij,nj->n", E, H, E)
    quad_p = np.sum(PE * E, axis=1)
    lo, hi = _b_ranges(E[:, 1:], mvec, xhw, alo, ahi)
    c = PE[:, : k - 1] * E[:, 1:]
    abterm = np.maximum(lo * c, hi * c)
    mask = np.asarray(qmask, float)
    qn = sigma * np.sqrt(np.einsum("ni,ij,nj->n", PE ** 2, mask, E ** 2))
    inj = phi * E[:, 0] ** 2
    D = quad_h + dbar * quad_p + np.sum(abterm, axis=1) + qn
    margin = inj - D
    scale = np.abs(quad_h) + np.abs(dbar * quad_p) + np.sum(np.abs(abterm), axis=1) + qn + np.abs(inj)
    return margin, scale
