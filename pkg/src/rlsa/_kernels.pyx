# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step loops.  Must stay operation-for-operation identical to _kernels_py.py."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _first_above(const double[:] row, double u) noexcept nogil:
    # first j with u < row[j]  (row is nondecreasing, last entry > any u in [0, 1))
    cdef Py_ssize_t lo = 0, hi = row.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if u < row[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def sample_path(cdf, init_cdf, u):
    cdef const double[:, ::1] C = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const double[::1] I = np.ascontiguousarray(init_cdf, dtype=np.float64)
    cdef const double[::1] U = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = U.shape[0], t
    out = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t x
    if n == 0:
        return out
    with nogil:
        x = _first_above(I, U[0])
        o[0] = x
        for t in range(1, n):
            x = _first_above(C[x], U[t])
            o[t] = x
    return out


def linear_td_run(s, s_next, X, r, double gamma, alphas, w0, record):
    cdef const cnp.int64_t[::1] S = np.ascontiguousarray(s, dtype=np.int64)
    cdef const cnp.int64_t[::1] SN = np.ascontiguousarray(s_next, dtype=np.int64)
    cdef const double[:, ::1] F = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] R = np.ascontiguousarray(r, dtype=np.float64)
    cdef const double[::1] A = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef const cnp.int64_t[::1] REC = np.ascontiguousarray(record, dtype=np.int64)
    w_arr = np.array(w0, dtype=np.float64)
    cdef double[::1] w = w_arr
    cdef Py_ssize_t d = w.shape[0], K = REC.shape[0], T = A.shape[0]
    out_arr = np.empty((K, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, i, k = 0, st, sn
    cdef double v, vn, c
    with nogil:
        while k < K and REC[k] == 0:
            for i in range(d):
                out[k, i] = w[i]
            k += 1
        for t in range(T):
            if k >= K:
                break
            st = S[t + 1]
            sn = SN[t + 1]
            v = 0.0
            vn = 0.0
            for i in range(d):
                v += F[st, i] * w[i]
                vn += F[sn, i] * w[i]
            c = A[t] * (R[st] + gamma * vn - v)
            for i in range(d):
                w[i] += c * F[st, i]
            while k < K and REC[k] == t + 1:
                for i in range(d):
                    out[k, i] = w[i]
                k += 1
    return out_arr


def q_learning_run(s, a, s_next, R, double gamma, alphas, q0, record):
    cdef const cnp.int64_t[::1] S = np.ascontiguousarray(s, dtype=np.int64)
    cdef const cnp.int64_t[::1] AC = np.ascontiguousarray(a, dtype=np.int64)
    cdef const cnp.int64_t[::1] SN = np.ascontiguousarray(s_next, dtype=np.int64)
    cdef const double[:, ::1] RR = np.ascontiguousarray(R, dtype=np.float64)
    cdef const double[::1] AL = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef const cnp.int64_t[::1] REC = np.ascontiguousarray(record, dtype=np.int64)
    q_arr = np.array(q0, dtype=np.float64, order="C")
    cdef double[:, ::1] q = q_arr
    cdef Py_ssize_t nS = q.shape[0], nA = q.shape[1], K = REC.shape[0], T = AL.shape[0]
    out_arr = np.empty((K, nS, nA), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t t, i, j, b, sn, k = 0, x, y
    cdef double m
    with nogil:
        while k < K and REC[k] == 0:
            for x in range(nS):
                for y in range(nA):
                    out[k, x, y] = q[x, y]
            k += 1
        for t in range(T):
            if k >= K:
                break
            i = S[t + 1]
            j = AC[t + 1]
            sn = SN[t + 1]
            m = q[sn, 0]
            for b in range(1, nA):
                if q[sn, b] > m:
                    m = q[sn, b]
            q[i, j] += AL[t] * (RR[i, j] + gamma * m - q[i, j])
            while k < K and REC[k] == t + 1:
                for x in range(nS):
                    for y in range(nA):
                        out[k, x, y] = q[x, y]
                k += 1
    return out_arr


def rs_envelope(double z0, T, double C):
    cdef const double[::1] TT = np.ascontiguousarray(T, dtype=np.float64)
    cdef Py_ssize_t n = TT.shape[0], i
    out_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double z = z0, f, tn
    with nogil:
        out[0] = z
        for i in range(n):
            tn = TT[i]
            f = 1.0 - tn
            if f < 0.0:
                f = 0.0
            z = f * z + C * (tn * tn)
            out[i + 1] = z
    return out_arr
