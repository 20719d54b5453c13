# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled server window integrator. Mirrors ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, isfinite, INFINITY
from scipy.linalg.cython_lapack cimport dgesv

cnp.import_array()

STATUS_OK = 0
STATUS_DIVERGED = 2
STATUS_SUBSTEPS = 3


cdef void _diag_solve(double[::1] xc, double[:, ::1] I, double[:, ::1] Ik, double[:, ::1] R,
                      double[:, ::1] L, double[:, ::1] G1, double dt,
                      double[::1] xn, double[:, ::1] In, double[::1] sa, double[::1] sb) noexcept nogil:
    cdef Py_ssize_t K = I.shape[0], d = I.shape[1], i, j
    cdef double q, den, a, b
    for j in range(d):
        sa[j] = 0.0
        sb[j] = 0.0
    for i in range(K):
        for j in range(d):
            q = dt / L[i, j]
            den = 1.0 + q * R[i, j]
            a = q / den
            b = (I[i, j] + q * (R[i, j] * Ik[i, j] - G1[i, j])) / den
            In[i, j] = a
            sa[j] += a
            sb[j] += b
    for j in range(d):
        xn[j] = (xc[j] - dt * sb[j]) / (1.0 + dt * sa[j])
    for i in range(K):
        for j in range(d):
            q = dt / L[i, j]
            den = 1.0 + q * R[i, j]
            b = (I[i, j] + q * (R[i, j] * Ik[i, j] - G1[i, j])) / den
            In[i, j] = In[i, j] * xn[j] + b


cdef int _dense_solve(double[::1] xc, double[:, ::1] I, double[:, ::1] Ik, double[:, :, ::1] R,
                      double[:, ::1] L, double[:, ::1] G1, double dt,
                      double[::1] xn, double[:, ::1] In,
                      double[:, :, ::1] As, double[:, ::1] bs,
                      double[::1, :] M, double[::1, :] B, double[::1, :] S, int[::1] piv) noexcept nogil:
    # M, B, S are Fortran-ordered work arrays: M (d, d), B (d, d + 1), S (d, d)
    cdef Py_ssize_t K = I.shape[0], d = I.shape[1], i, j, l
    cdef int n = <int>d, nrhs = <int>(d + 1), info = 0, one = 1
    cdef double q, acc
    for j in range(d):
        xn[j] = xc[j]
        for l in range(d):
            S[j, l] = 0.0
    for i in range(K):
        for j in range(d):
            q = dt / L[i, j]
            acc = 0.0
            for l in range(d):
                M[j, l] = q * R[i, j, l]
                B[j, l] = 0.0
                acc += R[i, j, l] * Ik[i, l]
            M[j, j] += 1.0
            B[j, j] = q
            B[j, d] = I[i, j] + q * (acc - G1[i, j])
        dgesv(&n, &nrhs, &M[0, 0], &n, &piv[0], &B[0, 0], &n, &info)
        if info != 0:
            return info
        for j in range(d):
            bs[i, j] = B[j, d]
            xn[j] -= dt * B[j, d]
            for l in range(d):
                As[i, j, l] = B[j, l]
                S[j, l] += dt * B[j, l]
    for j in range(d):
        S[j, j] += 1.0
    dgesv(&n, &one, &S[0, 0], &n, &piv[0], &xn[0], &n, &info)
    if info != 0:
        return info
    for i in range(K):
        for j in range(d):
            acc = bs[i, j]
            for l in range(d):
                acc += As[i, j, l] * xn[l]
            In[i, j] = acc
    return 0


cdef double _ind_lte(double[::1] x0, double[:, ::1] I0, double[::1] x1, double[:, ::1] I1,
                     double[:, ::1] Ik, double[:, ::1] R2, double[:, :, ::1] R3, bint dense,
                     double[:, ::1] L, double[:, ::1] gbase, double[:, ::1] gslope,
                     double t0, double t1) noexcept nogil:
    cdef Py_ssize_t K = I0.shape[0], d = I0.shape[1], i, j, l
    cdef double r0, r1, e = 0.0, u0, u1
    for i in range(K):
        for j in range(d):
            if dense:
                u0 = 0.0
                u1 = 0.0
                for l in range(d):
                    u0 += R3[i, j, l] * (I0[i, l] - Ik[i, l])
                    u1 += R3[i, j, l] * (I1[i, l] - Ik[i, l])
            else:
                u0 = R2[i, j] * (I0[i, j] - Ik[i, j])
                u1 = R2[i, j] * (I1[i, j] - Ik[i, j])
            r0 = (x0[j] - gbase[i, j] - gslope[i, j] * t0 - u0) / L[i, j]
            r1 = (x1[j] - gbase[i, j] - gslope[i, j] * t1 - u1) / L[i, j]
            if not isfinite(r1 - r0):
                return INFINITY
            if fabs(r1 - r0) > e:
                e = fabs(r1 - r0)
    return e


def be_solve_diag(x_c, I, Ik, R, L, G1, double dt):
    cdef double[::1] xc = np.ascontiguousarray(x_c, dtype=np.float64)
    cdef Py_ssize_t K = np.shape(I)[0], d = xc.shape[0]
    xn = np.empty(d)
    In = np.empty((K, d))
    _diag_solve(xc, np.ascontiguousarray(I, dtype=np.float64), np.ascontiguousarray(Ik, dtype=np.float64),
                np.ascontiguousarray(R, dtype=np.float64), np.ascontiguousarray(L, dtype=np.float64),
                np.ascontiguousarray(G1, dtype=np.float64), dt, xn, In, np.empty(d), np.empty(d))
    return xn, In


def be_solve_dense(x_c, I, Ik, R, L, G1, double dt):
    cdef double[::1] xc = np.ascontiguousarray(x_c, dtype=np.float64)
    cdef Py_ssize_t K = np.shape(I)[0], d = xc.shape[0]
    xn = np.empty(d)
    In = np.empty((K, d))
    info = _dense_solve(xc, np.ascontiguousarray(I, dtype=np.float64), np.ascontiguousarray(Ik, dtype=np.float64),
                        np.ascontiguousarray(R, dtype=np.float64), np.ascontiguousarray(L, dtype=np.float64),
                        np.ascontiguousarray(G1, dtype=np.float64), dt, xn, In,
                        np.empty((K, d, d)), np.empty((K, d)), np.empty((d, d), order="F"),
                        np.empty((d, d + 1), order="F"), np.empty((d, d), order="F"),
                        np.empty(d, dtype=np.intc))
    if info != 0:
        raise np.linalg.LinAlgError(f"singular system in dense BE solve (info={info})")
    return xn, In


def integrate_window(x_c, I, Ik, R, L, gbase, gslope, double W, double dt_init, double gamma,
                     double growth, int max_backtracks, int max_substeps, double bound):
    cdef bint dense = np.ndim(R) == 3
    cdef double[::1] xc = np.array(x_c, dtype=np.float64)
    cdef double[:, ::1] Ic = np.array(I, dtype=np.float64)
    cdef double[:, ::1] Ikv = np.ascontiguousarray(Ik, dtype=np.float64)
    cdef double[:, ::1] Lv = np.ascontiguousarray(L, dtype=np.float64)
    cdef double[:, ::1] gb = np.ascontiguousarray(gbase, dtype=np.float64)
    cdef double[:, ::1] gs = np.ascontiguousarray(gslope, dtype=np.float64)
    cdef Py_ssize_t K = Ic.shape[0], d = Ic.shape[1], i, j
    cdef double[:, ::1] R2 = np.ascontiguousarray(R if not dense else np.zeros((K, d)), dtype=np.float64)
    cdef double[:, :, ::1] R3 = np.ascontiguousarray(R if dense else np.zeros((1, 1, 1)), dtype=np.float64)
    cdef double[::1] xn = np.empty(d)
    cdef double[:, ::1] In = np.empty((K, d))
    cdef double[:, ::1] G1 = np.empty((K, d))
    cdef double[::1] sa = np.empty(d)
    cdef double[::1] sb = np.empty(d)
    cdef double[:, :, ::1] As = np.empty((K, d, d)) if dense else np.empty((1, 1, 1))
    cdef double[:, ::1] bs = np.empty((K, d))
    cdef double[::1, :] M = np.empty((d, d), order="F")
    cdef double[::1, :] B = np.empty((d, d + 1), order="F")
    cdef double[::1, :] S = np.empty((d, d), order="F")
    cdef int[::1] piv = np.empty(d, dtype=np.intc)
    cdef double tau = 0.0, sdt = dt_init, dt, cap, ind, e, s0, s1, t1, end = W * (1.0 - 1e-12)
    cdef int bt, info, exhausted = 0, status = 0
    cdef bint bad
    steps = []
    while tau < end:
        dt = sdt if sdt < W - tau else W - tau
        bt = 0
        while True:
            t1 = tau + dt
            for i in range(K):
                for j in range(d):
                    G1[i, j] = gb[i, j] + gs[i, j] * t1
            if dense:
                info = _dense_solve(xc, Ic, Ikv, R3, Lv, G1, dt, xn, In, As, bs, M, B, S, piv)
                if info != 0:
                    raise np.linalg.LinAlgError(f"singular system in dense BE solve (info={info})")
            else:
                _diag_solve(xc, Ic, Ikv, R2, Lv, G1, dt, xn, In, sa, sb)
            cap = 0.0
            for j in range(d):
                s0 = 0.0
                s1 = 0.0
                for i in range(K):
                    s0 += Ic[i, j]
                    s1 += In[i, j]
                if not isfinite(s0 - s1):
                    cap = INFINITY
                elif fabs(s0 - s1) > cap:
                    cap = fabs(s0 - s1)
            cap *= 0.5 * dt
            ind = 0.5 * dt * _ind_lte(xc, Ic, xn, In, Ikv, R2, R3, dense, Lv, gb, gs, tau, t1)
            e = cap if cap > ind else ind
            if not isfinite(e):
                e = INFINITY
            if e <= gamma * (1.0 + 1e-12):
                break
            if bt >= max_backtracks:
                exhausted += 1
                break
            dt *= min(1.0, max(1e-6, gamma / e))
            bt += 1
        if e > 0:
            sdt = dt * min(growth, gamma / e)
        else:
            sdt = dt * growth
        bad = False
        for j in range(d):
            xc[j] = xn[j]
            if not isfinite(xn[j]) or fabs(xn[j]) > bound:
                bad = True
        for i in range(K):
            for j in range(d):
                Ic[i, j] = In[i, j]
                if not isfinite(In[i, j]) or fabs(In[i, j]) > bound:
                    bad = True
        tau += dt
        steps.append((dt, cap, ind, bt))
        if bad:
            status = STATUS_DIVERGED
            break
        if len(steps) >= max_substeps and tau < end:
            status = STATUS_SUBSTEPS
            break
    if not (sdt > 0 and isfinite(sdt)):
        sdt = dt_init
    return (np.asarray(xc), np.asarray(Ic), np.asarray(steps, dtype=np.float64).reshape(-1, 4),
            sdt, exhausted, status)
