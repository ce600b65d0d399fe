# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels`` (same signatures and semantics)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY, isfinite

cnp.import_array()

DEF KMAX = 16


cdef inline double _b(int m, double alpha, double beta) nogil:
    cdef double z = alpha - beta
    cdef double total = 0.0
    cdef double zp = 1.0
    cdef double ap
    cdef int j, r
    for j in range(m):
        ap = 1.0
        for r in range(m - 1 - j):
            ap *= alpha
        total += ap * zp
        zp *= z
    return total


cdef inline void _brange(int m, double hw, double e, double *lo, double *hi) nogil:
    cdef double c = e / 2.0
    if c > hw:
        c = hw
    elif c < -hw:
        c = -hw
    lo[0] = _b(m, c, e)
    cdef double u = _b(m, hw, e)
    cdef double v = _b(m, -hw, e)
    hi[0] = u if u > v else v


cdef inline double _quad_max(double a0, double a1, double a2, double l, double u) nogil:
    cdef double best, f, xv
    if not (l <= u) or not isfinite(l):
        return -INFINITY
    best = a0 + a1 * l + a2 * l * l
    if isfinite(u):
        f = a0 + a1 * u + a2 * u * u
        if f > best:
            best = f
    else:
        if a2 > 0 or (a2 == 0 and a1 > 0):
            return INFINITY
    if a2 < 0:
        xv = -a1 / (2.0 * a2)
        if xv > l and xv < u:
            f = a0 - a1 * a1 / (4.0 * a2)
            if f > best:
                best = f
    return best


cdef inline void _cuts(double c2, double rho, double p00, double *A, double *B) nogil:
    cdef double disc, sq, qq, ra, rb, lo_r, hi_r
    A[0] = INFINITY
    B[0] = INFINITY
    if c2 == 0:
        if rho < 0:
            A[0] = -p00 / (2.0 * rho)
        return
    disc = rho * rho - c2 * p00
    if c2 > 0 and disc <= 0:
        return
    sq = sqrt(disc if disc > 0 else 0.0)
    qq = -(rho + (sq if rho >= 0 else -sq))
    ra = qq / c2
    rb = p00 / qq
    lo_r = ra if ra < rb else rb
    hi_r = rb if ra < rb else ra
    if c2 > 0:
        A[0] = lo_r
        B[0] = hi_r
    else:
        A[0] = hi_r


def phi_sup(P, H, double dbar, double sigma, double g, double xi, qmask, alo, ahi,
            double xhw, mvec, E):
    cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[:, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef int k = Pv.shape[0]
    if k > KMAX:
        raise ValueError("level dimension too large for the compiled kernel")
    cdef double[:, ::1] Ev = np.ascontiguousarray(np.asarray(E, dtype=np.float64).reshape(-1, k - 1))
    cdef unsigned char[:, ::1] M = np.ascontiguousarray(qmask, dtype=np.uint8)
    cdef double[::1] alov = np.ascontiguousarray(alo, dtype=np.float64)
    cdef double[::1] ahiv = np.ascontiguousarray(ahi, dtype=np.float64)
    cdef long[::1] mv = np.ascontiguousarray(mvec, dtype=np.int64)
    cdef Py_ssize_t N = Ev.shape[0]
    cdef double B[KMAX][KMAX]
    cdef double Pu[KMAX]
    cdef double U[KMAX]
    cdef double lo[KMAX]
    cdef double hi[KMAX]
    cdef double cb[KMAX]
    cdef double cg[KMAX]
    cdef double cutA[2]
    cdef double cutB[2]
    cdef int i, j, v, nv, sidx
    cdef Py_ssize_t n, arg = 0
    cdef double w0 = 0.0, w1, w2, b1, c2b, r2, tmin, Ehat, rho, cq, p00, sb
    cdef double beta_v, gam_v, ab, A0, A1, A2, Acut, Bcut, val, best = -INFINITY, sample_best
    for i in range(k):
        for j in range(k):
            B[i][j] = Hv[i, j] + dbar * Pv[i, j]
        if M[i, 0]:
            w0 += Pv[i, 0] * Pv[i, 0]
    w0 = sqrt(w0)
    p00 = Pv[0, 0]
    nv = 1 << (k - 1)
    with nogil:
        for n in range(N):
            U[0] = 0.0
            for j in range(k - 1):
                U[j + 1] = Ev[n, j]
            r2 = 0.0
            for j in range(1, k):
                r2 += U[j] * U[j]
            if not (r2 < xi * xi):
                continue
            tmin = 1.0 / sqrt(xi * xi - r2)
            for i in range(k):
                Pu[i] = 0.0
                for j in range(1, k):
                    Pu[i] += Pv[i, j] * U[j]
            b1 = 0.0
            c2b = 0.0
            Ehat = 0.0
            rho = 0.0
            for i in range(1, k):
                b1 += 2.0 * B[0][i] * U[i]
                rho += Pv[0, i] * U[i]
                for j in range(1, k):
                    c2b += U[i] * B[i][j] * U[j]
                    Ehat += U[i] * Pv[i, j] * U[j]
            w1 = 0.0
            w2 = 0.0
            for i in range(k):
                for j in range(i + 1):
                    if M[i, j]:
                        w2 += Pu[i] * Pu[i] * U[j] * U[j]
                        if j == 0:
                            w1 += Pu[i] * Pu[i]
                        else:
                            w1 += Pv[i, 0] * Pv[i, 0] * U[j] * U[j]
            w1 = sqrt(w1)
            w2 = sqrt(w2)
            for i in range(k - 1):
                _brange(<int> mv[i], xhw, U[i + 1], &lo[i], &hi[i])
                lo[i] *= alov[i]
                hi[i] *= ahiv[i]
                cb[i] = U[i + 1] * Pv[i, 0]
                cg[i] = U[i + 1] * Pu[i]
            cq = Ehat - g
            # feasible |s| cuts depend only on the sign of s
            _cuts(cq, rho, p00, &cutA[0], &cutB[0])
            _cuts(cq, -rho, p00, &cutA[1], &cutB[1])
            A0 = B[0][0] + sigma * w0
            sample_best = -INFINITY
            for v in range(nv):
                beta_v = b1
                gam_v = c2b
                for i in range(k - 1):
                    ab = hi[i] if (v >> i) & 1 else lo[i]
                    beta_v += ab * cb[i]
                    gam_v += ab * cg[i]
                for sidx in range(2):
                    sb = 1.0 if sidx == 0 else -1.0
                    A1 = sb * beta_v + sigma * w1
                    A2 = gam_v + sigma * w2
                    Acut = cutA[sidx]
                    Bcut = cutB[sidx]
                    val = _quad_max(A0, A1, A2, tmin, Acut)
                    if val > sample_best:
                        sample_best = val
                    val = _quad_max(A0, A1, A2, tmin if tmin > Bcut else Bcut, INFINITY)
                    if val > sample_best:
                        sample_best = val
            if sample_best > best:
                best = sample_best
                arg = n
    return float(best), int(arg)


def lyap_margin(P, H, double dbar, double phi, double sigma, qmask, alo, ahi, double xhw, mvec, E):
    cdef double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef double[:, ::1] Hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef int k = Pv.shape[0]
    if k > KMAX:
        raise ValueError("level dimension too large for the compiled kernel")
    cdef double[:, ::1] Ev = np.ascontiguousarray(np.asarray(E, dtype=np.float64).reshape(-1, k))
    cdef unsigned char[:, ::1] M = np.ascontiguousarray(qmask, dtype=np.uint8)
    cdef double[::1] alov = np.ascontiguousarray(alo, dtype=np.float64)
    cdef double[::1] ahiv = np.ascontiguousarray(ahi, dtype=np.float64)
    cdef long[::1] mv = np.ascontiguousarray(mvec, dtype=np.int64)
    cdef Py_ssize_t N = Ev.shape[0]
    margin_arr = np.empty(N)
    scale_arr = np.empty(N)
    cdef double[::1] mg = margin_arr
    cdef double[::1] sc = scale_arr
    cdef double PE[KMAX]
    cdef double lo, hi, c, t1, t2, qh, qp, abs_ab, ab, qn, inj, D
    cdef int i, j
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            qh = 0.0
            qp = 0.0
            for i in range(k):
                PE[i] = 0.0
                for j in range(k):
                    PE[i] += Pv[i, j] * Ev[n, j]
                    qh += Ev[n, i] * Hv[i, j] * Ev[n, j]
                qp += PE[i] * Ev[n, i]
            ab = 0.0
            abs_ab = 0.0
            for i in range(k - 1):
                _brange(<int> mv[i], xhw, Ev[n, i + 1], &lo, &hi)
                c = PE[i] * Ev[n, i + 1]
                t1 = alov[i] * lo * c
                t2 = ahiv[i] * hi * c
                t1 = t1 if t1 > t2 else t2
                ab += t1
                abs_ab += fabs(t1)
            qn = 0.0
            for i in range(k):
                for j in range(k):
                    if M[i, j]:
                        qn += PE[i] * PE[i] * Ev[n, j] * Ev[n, j]
            qn = sigma * sqrt(qn)
            inj = phi * Ev[n, 0] * Ev[n, 0]
            D = qh + dbar * qp + ab + qn
            mg[n] = inj - D
            sc[n] = fabs(qh) + fabs(dbar * qp) + abs_ab + qn + fabs(inj)
    return margin_arr, scale_arr
