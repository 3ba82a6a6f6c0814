"""Compiled fill and simulation kernels.

Same contracts as ``numpy_backend``: identical stream addressing, identical
branch logic, tight C loops instead of vectorized NumPy.  Weight matrices are
regenerated layer by layer into an L2-resident buffer, so deep/wide sweeps
never materialize a full weight tape.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, isfinite, log, sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

NAME = "cython"

cdef uint64_t G = 0x9E3779B97F4A7C15u
cdef uint64_t M1 = 0xBF58476D1CE4E5B9u
cdef uint64_t M2 = 0x94D049BB133111EBu
cdef double U53 = 1.0 / 9007199254740992.0

MASK64 = 0xFFFFFFFFFFFFFFFF

_DUMMY3 = np.zeros((1, 1, 1), dtype=np.float64)


cdef inline uint64_t mix64_c(uint64_t z) nogil:
    z ^= z >> 30
    z = z * M1
    z ^= z >> 27
    z = z * M2
    z ^= z >> 31
    return z


cdef inline double unit_c(uint64_t w) nogil:
    return <double>(w >> 11) * U53


cdef inline double gauss_c(uint64_t w) nogil:
    # Polar rejection on the substream seeded by the entry word; first
    # accepted root only, matching the NumPy backend op for op.
    cdef uint64_t att = 0
    cdef double u1, u2, v1, v2, s, t, r
    while True:
        u1 = unit_c(mix64_c(w + (2u * att + 1u) * G))
        u2 = unit_c(mix64_c(w + (2u * att + 2u) * G))
        v1 = 2.0 * u1 - 1.0
        v2 = 2.0 * u2 - 1.0
        s = v1 * v1 + v2 * v2
        if s > 0.0 and s < 1.0:
            t = log(s)
            r = sqrt(-2.0 * t / s)
            return v1 * r
        att += 1


cdef void fill_buf(int kind, uint64_t seed, Py_ssize_t n, double param,
                   uint64_t offset, double* out) nogil:
    cdef Py_ssize_t i
    cdef uint64_t w
    if kind == 0:
        for i in range(n):
            w = mix64_c(seed + (offset + <uint64_t>i + 1u) * G)
            out[i] = (2.0 * unit_c(w) - 1.0) * param
    elif kind == 1:
        for i in range(n):
            w = mix64_c(seed + (offset + <uint64_t>i + 1u) * G)
            out[i] = gauss_c(w) * param
    else:
        for i in range(n):
            w = mix64_c(seed + (offset + <uint64_t>i + 1u) * G)
            out[i] = (2.0 * <double>(w >> 63) - 1.0) * param


cdef inline uint64_t derive2_c(uint64_t master, uint64_t a, uint64_t b) nogil:
    cdef uint64_t s = mix64_c(master + G)
    s = mix64_c(s + G + a)
    return mix64_c(s + G + b)


def fill_uniform(seed, n, bound, offset=0):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    if n > 0:
        fill_buf(0, <uint64_t>(seed & MASK64), n, bound, <uint64_t>offset, &ov[0])
    return out


def fill_gaussian(seed, n, offset=0):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    if n > 0:
        fill_buf(1, <uint64_t>(seed & MASK64), n, 1.0, <uint64_t>offset, &ov[0])
    return out


def fill_rademacher(seed, n, magnitude, offset=0):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    if n > 0:
        fill_buf(2, <uint64_t>(seed & MASK64), n, magnitude, <uint64_t>offset, &ov[0])
    return out


# ---------------------------------------------------------------------------
# residual recursions
#
# Layout: weights are row-major d*d buffers, W[i*d+j] multiplies input j into
# output i.  arch_mat=0 applies the activation to the state itself; arch_mat=1
# routes it through the second matrix first.  Activation is x -> x>0 ? x : s*x
# with derivative x>0 ? 1 : s.


cdef int step_forward(double* hc, double* hn, double* V, double* W, double* z,
                      double* g, Py_ssize_t d, double alpha, int arch_mat,
                      double s_act) nogil:
    cdef Py_ssize_t i, j
    cdef double acc, zi
    if arch_mat:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += W[i * d + j] * hc[j]
            z[i] = acc
    else:
        for i in range(d):
            z[i] = hc[i]
    for i in range(d):
        zi = z[i]
        g[i] = zi if zi > 0.0 else s_act * zi
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += V[i * d + j] * g[j]
        hn[i] = hc[i] + alpha * acc
    return 0


cdef void run_forward(double[:, ::1] traj, double[::1] norms, double[::1] diffs,
                      int* overflow, Py_ssize_t L, Py_ssize_t d, double alpha,
                      int arch_mat, double s_act, int kind, double param,
                      uint64_t ts, int from_tape, double[:, :, ::1] Vt,
                      double[:, :, ::1] Wt, double* Vbuf, double* Wbuf,
                      double* z, double* g) nogil:
    cdef Py_ssize_t k, i, r
    cdef double nk, dk, dh
    cdef double* Vp
    cdef double* Wp
    nk = 0.0
    for i in range(d):
        nk += traj[0, i] * traj[0, i]
    norms[0] = nk
    diffs[0] = 0.0
    overflow[0] = -1
    for k in range(L):
        if from_tape:
            Vp = &Vt[k, 0, 0]
            Wp = &Wt[k, 0, 0] if arch_mat else NULL
        else:
            fill_buf(kind, derive2_c(ts, 1u, <uint64_t>k), d * d, param, 0u, Vbuf)
            Vp = Vbuf
            if arch_mat:
                fill_buf(kind, derive2_c(ts, 2u, <uint64_t>k), d * d, param, 0u, Wbuf)
                Wp = Wbuf
            else:
                Wp = NULL
        step_forward(&traj[k, 0], &traj[k + 1, 0], Vp, Wp, z, g, d, alpha,
                     arch_mat, s_act)
        nk = 0.0
        dk = 0.0
        for i in range(d):
            nk += traj[k + 1, i] * traj[k + 1, i]
            dh = traj[k + 1, i] - traj[0, i]
            dk += dh * dh
        if not (isfinite(nk) and isfinite(dk)):
            overflow[0] = <int>(k + 1)
            for r in range(k + 2, L + 1):
                for i in range(d):
                    traj[r, i] = traj[k + 1, i]
            for r in range(k + 1, L + 1):
                norms[r] = INFINITY
                diffs[r] = INFINITY
            return
        norms[k + 1] = nk
        diffs[k + 1] = dk


cdef object forward_common(object h0, Py_ssize_t L, double alpha, int arch_mat,
                           double s_act, int kind, double param, uint64_t ts,
                           int from_tape, object V_tape, object W_tape):
    h0a = np.ascontiguousarray(h0, dtype=np.float64)
    cdef Py_ssize_t d = h0a.shape[0]
    traj = np.empty((L + 1, d), dtype=np.float64)
    norms = np.empty(L + 1, dtype=np.float64)
    diffs = np.empty(L + 1, dtype=np.float64)
    scratch = np.empty(2 * d * d + 2 * d, dtype=np.float64)
    cdef double[:, ::1] trajv = traj
    cdef double[::1] normsv = norms
    cdef double[::1] diffsv = diffs
    cdef double[::1] sc = scratch
    cdef double[::1] h0v = h0a
    cdef double[:, :, ::1] Vt
    cdef double[:, :, ::1] Wt
    cdef int overflow = 0
    cdef Py_ssize_t i
    if from_tape:
        Vt = V_tape
        Wt = W_tape if arch_mat else _DUMMY3
    else:
        Vt = _DUMMY3
        Wt = _DUMMY3
    for i in range(d):
        trajv[0, i] = h0v[i]
    with nogil:
        run_forward(trajv, normsv, diffsv, &overflow, L, d, alpha, arch_mat,
                    s_act, kind, param, ts, from_tape, Vt, Wt, &sc[0],
                    &sc[d * d], &sc[2 * d * d], &sc[2 * d * d + d])
    return traj, norms, diffs, int(overflow)


def forward_iid(tape_seed, h0, L, alpha, arch_mat, s_act, kind, param):
    return forward_common(h0, L, alpha, 1 if arch_mat else 0, s_act, kind,
                          param, <uint64_t>(tape_seed & MASK64), 0, None, None)


def forward_tape(h0, V_tape, W_tape, alpha, arch_mat, s_act):
    cdef Py_ssize_t L = V_tape.shape[0]
    Va = np.ascontiguousarray(V_tape, dtype=np.float64)
    Wa = np.ascontiguousarray(W_tape, dtype=np.float64) if arch_mat else None
    return forward_common(h0, L, alpha, 1 if arch_mat else 0, s_act, 0, 0.0,
                          0u, 1, Va, Wa)


cdef void step_backward(double* p, double* h, double* V, double* W, double* z,
                        double* y, double* t, Py_ssize_t d, double alpha,
                        int arch_mat, double s_act) nogil:
    cdef Py_ssize_t i, j, m
    cdef double pm, yi, acc
    # y = V^T p
    for i in range(d):
        y[i] = 0.0
    for m in range(d):
        pm = p[m]
        for i in range(d):
            y[i] += V[m * d + i] * pm
    if arch_mat:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += W[i * d + j] * h[j]
            z[i] = acc
        for i in range(d):
            y[i] = y[i] if z[i] > 0.0 else s_act * y[i]
        for j in range(d):
            t[j] = 0.0
        for i in range(d):
            yi = y[i]
            for j in range(d):
                t[j] += W[i * d + j] * yi
        for j in range(d):
            p[j] = p[j] + alpha * t[j]
    else:
        for i in range(d):
            p[i] = p[i] + alpha * (y[i] if h[i] > 0.0 else s_act * y[i])


cdef void step_sens(double* q, double* h, double* V, double* W, double* z,
                    double* y, double* t, Py_ssize_t d, double alpha,
                    int arch_mat, double s_act) nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    if arch_mat:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += W[i * d + j] * h[j]
            z[i] = acc
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += W[i * d + j] * q[j]
            y[i] = acc if z[i] > 0.0 else s_act * acc
    else:
        for i in range(d):
            y[i] = q[i] if h[i] > 0.0 else s_act * q[i]
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += V[i * d + j] * y[j]
        t[i] = q[i] + alpha * acc
    for i in range(d):
        q[i] = t[i]


cdef object adjoint_common(object traj, object vec, double alpha, int arch_mat,
                           double s_act, int kind, double param, uint64_t ts,
                           int from_tape, object V_tape, object W_tape,
                           int backward):
    ta = np.ascontiguousarray(traj, dtype=np.float64)
    cdef Py_ssize_t L = ta.shape[0] - 1
    cdef Py_ssize_t d = ta.shape[1]
    out = np.ascontiguousarray(vec, dtype=np.float64).copy()
    pnorms = np.empty(L + 1, dtype=np.float64)
    scratch = np.empty(2 * d * d + 3 * d, dtype=np.float64)
    cdef double[:, ::1] tv = ta
    cdef double[::1] pv = out
    cdef double[::1] pn = pnorms
    cdef double[::1] sc = scratch
    cdef double[:, :, ::1] Vt
    cdef double[:, :, ::1] Wt
    cdef Py_ssize_t k, i
    cdef double acc
    cdef double* Vp
    cdef double* Wp
    cdef double* Vbuf
    cdef double* Wbuf
    cdef double* z
    cdef double* y
    cdef double* tbuf
    if from_tape:
        Vt = np.ascontiguousarray(V_tape, dtype=np.float64)
        Wt = np.ascontiguousarray(W_tape, dtype=np.float64) if arch_mat else _DUMMY3
    else:
        Vt = _DUMMY3
        Wt = _DUMMY3
    with nogil:
        Vbuf = &sc[0]
        Wbuf = &sc[d * d]
        z = &sc[2 * d * d]
        y = &sc[2 * d * d + d]
        tbuf = &sc[2 * d * d + 2 * d]
        acc = 0.0
        for i in range(d):
            acc += pv[i] * pv[i]
        if backward:
            pn[L] = acc
            for k in range(L - 1, -1, -1):
                if from_tape:
                    Vp = &Vt[k, 0, 0]
                    Wp = &Wt[k, 0, 0] if arch_mat else NULL
                else:
                    fill_buf(kind, derive2_c(ts, 1u, <uint64_t>k), d * d, param, 0u, Vbuf)
                    Vp = Vbuf
                    if arch_mat:
                        fill_buf(kind, derive2_c(ts, 2u, <uint64_t>k), d * d, param, 0u, Wbuf)
                        Wp = Wbuf
                    else:
                        Wp = NULL
                step_backward(&pv[0], &tv[k, 0], Vp, Wp, z, y, tbuf, d, alpha,
                              arch_mat, s_act)
                acc = 0.0
                for i in range(d):
                    acc += pv[i] * pv[i]
                pn[k] = acc
        else:
            pn[0] = acc
            for k in range(L):
                if from_tape:
                    Vp = &Vt[k, 0, 0]
                    Wp = &Wt[k, 0, 0] if arch_mat else NULL
                else:
                    fill_buf(kind, derive2_c(ts, 1u, <uint64_t>k), d * d, param, 0u, Vbuf)
                    Vp = Vbuf
                    if arch_mat:
                        fill_buf(kind, derive2_c(ts, 2u, <uint64_t>k), d * d, param, 0u, Wbuf)
                        Wp = Wbuf
                    else:
                        Wp = NULL
                step_sens(&pv[0], &tv[k, 0], Vp, Wp, z, y, tbuf, d, alpha,
                          arch_mat, s_act)
                acc = 0.0
                for i in range(d):
                    acc += pv[i] * pv[i]
                pn[k + 1] = acc
    return out, pnorms


def backward_iid(tape_seed, traj, p_L, alpha, arch_mat, s_act, kind, param):
    return adjoint_common(traj, p_L, alpha, 1 if arch_mat else 0, s_act, kind,
                          param, <uint64_t>(tape_seed & MASK64), 0, None, None, 1)


def forward_sens_iid(tape_seed, traj, q0, alpha, arch_mat, s_act, kind, param):
    return adjoint_common(traj, q0, alpha, 1 if arch_mat else 0, s_act, kind,
                          param, <uint64_t>(tape_seed & MASK64), 0, None, None, 0)


def backward_tape(traj, p_L, V_tape, W_tape, alpha, arch_mat, s_act):
    return adjoint_common(traj, p_L, alpha, 1 if arch_mat else 0, s_act, 0,
                          0.0, 0u, 1, V_tape, W_tape, 1)


def forward_sens_tape(traj, q0, V_tape, W_tape, alpha, arch_mat, s_act):
    return adjoint_common(traj, q0, alpha, 1 if arch_mat else 0, s_act, 0,
                          0.0, 0u, 1, V_tape, W_tape, 0)
