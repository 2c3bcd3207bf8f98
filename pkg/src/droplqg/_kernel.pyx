# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout backend: per-replication closed-loop stepping with plain C
loops over the small dense matrices. Same semantics as _kernel_np; the GIL is
released for the whole batch so chunks can overlap on a thread pool."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def rollout_batch(prob, x0, w, gamma, bint collect_states=False,
                  bint want_decomp=False):
    cdef Py_ssize_t n = prob.n
    cdef Py_ssize_t m = prob.m
    cdef Py_ssize_t N = prob.N
    cdef Py_ssize_t T = prob.T
    cdef Py_ssize_t reps = x0.shape[0]

    cdef const double[:, ::1] A = prob.A
    cdef const double[:, ::1] B = prob.B
    cdef const double[:, :, ::1] Kc = prob.Kc
    cdef const double[:, :, ::1] Lt = prob.Lt
    cdef const double[:, :, ::1] Q = prob.Q
    cdef const double[:, :, ::1] Mx = prob.Mx
    cdef const double[:, :, ::1] R = prob.R
    cdef const double[:, ::1] QT = prob.QT
    cdef const cnp.int64_t[::1] soff = np.ascontiguousarray(prob.state_off, dtype=np.int64)

    cdef const double[:, ::1] x0v = x0
    cdef const double[:, :, ::1] wv = w
    cdef const cnp.uint8_t[:, :, ::1] gv = gamma

    dummy2 = np.zeros((0, 0))
    dummy3 = np.zeros((0, 0, 0))
    dummy4 = np.zeros((0, 0, 0, 0))
    cdef const double[:, ::1] P0 = prob.P0 if want_decomp else dummy2
    cdef const double[:, ::1] Ptil0 = prob.Ptil0 if want_decomp else dummy2
    cdef const double[:, :, ::1] Kopt = prob.Kopt if want_decomp else dummy3
    cdef const double[:, :, ::1] Delta = prob.Delta if want_decomp else dummy3
    cdef const double[:, :, ::1] Ktil = prob.Ktil if want_decomp else dummy3
    cdef const double[:, :, :, ::1] Dtil = prob.Dtil if want_decomp else dummy4
    cdef const double[:, :, ::1] Pi = prob.Pi if want_decomp else dummy3

    stage_sum = np.zeros(reps)
    terminal = np.zeros(reps)
    cdef double[::1] stage_v = stage_sum
    cdef double[::1] term_v = terminal

    init = np.zeros(reps if want_decomp else 0)
    common_pen = np.zeros(reps if want_decomp else 0)
    noise = np.zeros(reps if want_decomp else 0)
    local_pen = np.zeros((reps if want_decomp else 0, N))
    cdef double[::1] init_v = init
    cdef double[::1] common_v = common_pen
    cdef double[::1] noise_v = noise
    cdef double[:, ::1] local_v = local_pen

    xhat_ens = np.zeros((T + 1 if collect_states else 0, reps, n))
    xtil_ens = np.zeros((T + 1 if collect_states else 0, reps, n))
    cdef double[:, :, ::1] xhat_e = xhat_ens
    cdef double[:, :, ::1] xtil_e = xtil_ens

    scratch = np.zeros((5, n))
    scratch_u = np.zeros((5, m))
    cdef double[:, ::1] sn = scratch
    cdef double[:, ::1] su = scratch_u

    cdef Py_ssize_t r, t, i, j, k, a, b
    cdef double acc, cx, cu, s, g
    cdef double[::1] x = sn[0]
    cdef double[::1] xhat = sn[1]
    cdef double[::1] xtil = sn[2]
    cdef double[::1] xoff = sn[3]
    cdef double[::1] xnew = sn[4]
    cdef double[::1] u = su[0]
    cdef double[::1] uhat = su[1]
    cdef double[::1] util = su[2]
    cdef double[::1] vc = su[3]
    cdef double[::1] vl = su[4]

    with nogil:
        for r in range(reps):
            for j in range(n):
                x[j] = x0v[r, j]
            for i in range(N):
                g = 1.0 if gv[0, r, i] else 0.0
                for j in range(soff[i], soff[i + 1]):
                    xhat[j] = g * x[j]
                    xtil[j] = x[j] - xhat[j]
            if collect_states:
                for j in range(n):
                    xhat_e[0, r, j] = xhat[j]
                    xtil_e[0, r, j] = xtil[j]
            if want_decomp:
                acc = 0.0
                for j in range(n):
                    s = 0.0
                    for k in range(n):
                        s += P0[j, k] * xhat[k]
                    acc += xhat[j] * s
                    s = 0.0
                    for k in range(n):
                        s += Ptil0[j, k] * xtil[k]
                    acc += xtil[j] * s
                init_v[r] = acc

            for t in range(T):
                for a in range(m):
                    s = 0.0
                    for j in range(n):
                        s += Kc[t, a, j] * xhat[j]
                    uhat[a] = -s
                    s = 0.0
                    for j in range(n):
                        s += Lt[t, a, j] * xtil[j]
                    util[a] = -s
                    u[a] = uhat[a] + util[a]

                # stage cost x'Qx + 2 x'Mu + u'Ru
                acc = 0.0
                for j in range(n):
                    cx = 0.0
                    for k in range(n):
                        cx += Q[t, j, k] * x[k]
                    cu = 0.0
                    for a in range(m):
                        cu += Mx[t, j, a] * u[a]
                    acc += x[j] * (cx + 2.0 * cu)
                for a in range(m):
                    cu = 0.0
                    for b in range(m):
                        cu += R[t, a, b] * u[b]
                    acc += u[a] * cu
                stage_v[r] += acc

                if want_decomp:
                    for a in range(m):
                        s = 0.0
                        for j in range(n):
                            s += Kopt[t, a, j] * xhat[j]
                        vc[a] = uhat[a] + s
                        s = 0.0
                        for j in range(n):
                            s += Ktil[t, a, j] * xtil[j]
                        vl[a] = util[a] + s
                    acc = 0.0
                    for a in range(m):
                        s = 0.0
                        for b in range(m):
                            s += Delta[t, a, b] * vc[b]
                        acc += vc[a] * s
                    common_v[r] += acc
                    for i in range(N):
                        acc = 0.0
                        for a in range(m):
                            s = 0.0
                            for b in range(m):
                                s += Dtil[i, t, a, b] * vl[b]
                            acc += vl[a] * s
                        local_v[r, i] += acc
                    acc = 0.0
                    for j in range(n):
                        s = 0.0
                        for k in range(n):
                            s += Pi[t, j, k] * wv[t, r, k]
                        acc += wv[t, r, j] * s
                    noise_v[r] += acc

                for j in range(n):
                    s = 0.0
                    for k in range(n):
                        s += A[j, k] * xhat[k]
                    for a in range(m):
                        s += B[j, a] * uhat[a]
                    xoff[j] = s
                    s = 0.0
                    for k in range(n):
                        s += A[j, k] * x[k]
                    for a in range(m):
                        s += B[j, a] * u[a]
                    xnew[j] = s + wv[t, r, j]
                for i in range(N):
                    if gv[t + 1, r, i]:
                        for j in range(soff[i], soff[i + 1]):
                            xhat[j] = xnew[j]
                            xtil[j] = 0.0
                    else:
                        for j in range(soff[i], soff[i + 1]):
                            xhat[j] = xoff[j]
                            xtil[j] = xnew[j] - xhat[j]
                for j in range(n):
                    x[j] = xnew[j]
                if collect_states:
                    for j in range(n):
                        xhat_e[t + 1, r, j] = xhat[j]
                        xtil_e[t + 1, r, j] = xtil[j]

            acc = 0.0
            for j in range(n):
                s = 0.0
                for k in range(n):
                    s += QT[j, k] * x[k]
                acc += x[j] * s
            term_v[r] = acc

    out = {"stage_sum": stage_sum, "terminal": terminal,
           "total": stage_sum + terminal}
    if want_decomp:
        out["init"] = init
        out["common_pen"] = common_pen
        out["local_pen"] = local_pen
        out["noise"] = noise
    if collect_states:
        out["xhat"] = xhat_ens
        out["xtilde"] = xtil_ens
    return out
