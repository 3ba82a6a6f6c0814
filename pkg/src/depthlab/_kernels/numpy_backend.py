"""Vectorized NumPy implementation of the fill and simulation kernels.

This is the reference backend: always importable, used when the compiled
extension is missing or when ``DEPTHLAB_BACKEND=numpy`` is set.  Integer,
uniform, and sign streams are bit-identical to the compiled core.  Gaussian
fills and trajectory arithmetic agree to rounding (SIMD ``log`` and BLAS
summation order may flip last bits), which is why cross-backend tests use
ulp tolerances while within-backend replay is exact.
"""

from __future__ import annotations

import numpy as np

from ..rng import GOLDEN, MASK64, derive_seed

NAME = "numpy"

_G = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0**-53


def _mix64_arr(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _words(seed: int, n: int, offset: int) -> np.ndarray:
    idx = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(offset & MASK64)
    return _mix64_arr(np.uint64(seed & MASK64) + idx * _G)


def fill_uniform(seed: int, n: int, bound: float, offset: int = 0) -> np.ndarray:
    u = (_words(seed, n, offset) >> np.uint64(11)) * _U53
    return (2.0 * u - 1.0) * bound


def fill_rademacher(seed: int, n: int, magnitude: float, offset: int = 0) -> np.ndarray:
    bit = (_words(seed, n, offset) >> np.uint64(63)).astype(np.float64)
    return (2.0 * bit - 1.0) * magnitude


def fill_gaussian(seed: int, n: int, offset: int = 0) -> np.ndarray:
    # Each entry word seeds a private substream consumed two uniforms at a
    # time by polar rejection; the masked loop retries only the rejected
    # entries, so the value of entry i never depends on its neighbours.
    w = _words(seed, n, offset)
    out = np.empty(n, dtype=np.float64)
    pending = np.arange(n)
    att = np.zeros(n, dtype=np.uint64)
    two = np.uint64(2)
    while pending.size:
        wp = w[pending]
        a = att[pending]
        w1 = _mix64_arr(wp + (two * a + np.uint64(1)) * _G)
        w2 = _mix64_arr(wp + (two * a + np.uint64(2)) * _G)
        v1 = 2.0 * ((w1 >> np.uint64(11)) * _U53) - 1.0
        v2 = 2.0 * ((w2 >> np.uint64(11)) * _U53) - 1.0
        s = v1 * v1 + v2 * v2
        ok = (s > 0.0) & (s < 1.0)
        if ok.any():
            sa = s[ok]
            t = np.log(sa)
            r = np.sqrt(-2.0 * t / sa)
            out[pending[ok]] = v1[ok] * r
        att[pending] += np.uint64(1)
        pending = pending[~ok]
    return out


def _fill(kind: int, seed: int, n: int, param: float, offset: int = 0) -> np.ndarray:
    if kind == 0:
        return fill_uniform(seed, n, param, offset)
    if kind == 1:
        return fill_gaussian(seed, n, offset) * param
    return fill_rademacher(seed, n, param, offset)


def _layer_seeds(tape_seed: int, role: int, L: int) -> np.ndarray:
    # derive_seed(tape_seed, (role, k)) for all k at once: the first two
    # folds are scalar, the per-layer fold vectorizes.
    base = (derive_seed(tape_seed, (role,)) + GOLDEN) & MASK64
    return _mix64_arr(np.uint64(base) + np.arange(L, dtype=np.uint64))


# ---------------------------------------------------------------------------
# residual recursions


def _run_forward(h0, L, alpha, arch_mat, s_act, getV, getW):
    d = h0.shape[0]
    h = np.asarray(h0, dtype=np.float64).copy()
    traj = np.empty((L + 1, d), dtype=np.float64)
    norms = np.empty(L + 1, dtype=np.float64)
    diffs = np.empty(L + 1, dtype=np.float64)
    traj[0] = h
    diffs[0] = 0.0
    overflow = -1
    # overflow is contract behavior (detected and frozen), not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        norms[0] = h @ h
        for k in range(L):
            V = getV(k)
            z = getW(k) @ h if arch_mat else h
            g = np.where(z > 0.0, z, s_act * z)
            h = h + alpha * (V @ g)
            traj[k + 1] = h
            nk = h @ h
            dh = h - traj[0]
            dk = dh @ dh
            if not (np.isfinite(nk) and np.isfinite(dk)):
                overflow = k + 1
                traj[k + 1 :] = h
                norms[k + 1 :] = np.inf
                diffs[k + 1 :] = np.inf
                break
            norms[k + 1] = nk
            diffs[k + 1] = dk
    return traj, norms, diffs, overflow


def _run_backward(traj, p_L, alpha, arch_mat, s_act, getV, getW):
    L = traj.shape[0] - 1
    p = np.asarray(p_L, dtype=np.float64).copy()
    pnorms = np.empty(L + 1, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        pnorms[L] = p @ p
        for k in range(L - 1, -1, -1):
            V = getV(k)
            h = traj[k]
            if arch_mat:
                W = getW(k)
                z = W @ h
                u = np.where(z > 0.0, 1.0, s_act) * (V.T @ p)
                p = p + alpha * (W.T @ u)
            else:
                p = p + alpha * (np.where(h > 0.0, 1.0, s_act) * (V.T @ p))
            pnorms[k] = p @ p
    return p, pnorms


def _run_forward_sens(traj, q0, alpha, arch_mat, s_act, getV, getW):
    L = traj.shape[0] - 1
    q = np.asarray(q0, dtype=np.float64).copy()
    qnorms = np.empty(L + 1, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        qnorms[0] = q @ q
        for k in range(L):
            V = getV(k)
            h = traj[k]
            if arch_mat:
                W = getW(k)
                z = W @ h
                q = q + alpha * (V @ (np.where(z > 0.0, 1.0, s_act) * (W @ q)))
            else:
                q = q + alpha * (V @ (np.where(h > 0.0, 1.0, s_act) * q))
            qnorms[k + 1] = q @ q
    return q, qnorms


def _iid_getters(tape_seed, d, L, arch_mat, kind, param):
    seeds_v = _layer_seeds(tape_seed, 1, L)
    getV = lambda k: _fill(kind, int(seeds_v[k]), d * d, param).reshape(d, d)
    if arch_mat:
        seeds_w = _layer_seeds(tape_seed, 2, L)
        getW = lambda k: _fill(kind, int(seeds_w[k]), d * d, param).reshape(d, d)
    else:
        getW = None
    return getV, getW


def forward_iid(tape_seed, h0, L, alpha, arch_mat, s_act, kind, param):
    getV, getW = _iid_getters(tape_seed, h0.shape[0], L, arch_mat, kind, param)
    return _run_forward(h0, L, alpha, arch_mat, s_act, getV, getW)


def backward_iid(tape_seed, traj, p_L, alpha, arch_mat, s_act, kind, param):
    L = traj.shape[0] - 1
    getV, getW = _iid_getters(tape_seed, traj.shape[1], L, arch_mat, kind, param)
    return _run_backward(traj, p_L, alpha, arch_mat, s_act, getV, getW)


def forward_sens_iid(tape_seed, traj, q0, alpha, arch_mat, s_act, kind, param):
    L = traj.shape[0] - 1
    getV, getW = _iid_getters(tape_seed, traj.shape[1], L, arch_mat, kind, param)
    return _run_forward_sens(traj, q0, alpha, arch_mat, s_act, getV, getW)


def forward_tape(h0, V_tape, W_tape, alpha, arch_mat, s_act):
    getW = (lambda k: W_tape[k]) if arch_mat else None
    return _run_forward(h0, V_tape.shape[0], alpha, arch_mat, s_act, lambda k: V_tape[k], getW)


def backward_tape(traj, p_L, V_tape, W_tape, alpha, arch_mat, s_act):
    getW = (lambda k: W_tape[k]) if arch_mat else None
    return _run_backward(traj, p_L, alpha, arch_mat, s_act, lambda k: V_tape[k], getW)


def forward_sens_tape(traj, q0, V_tape, W_tape, alpha, arch_mat, s_act):
    getW = (lambda k: W_tape[k]) if arch_mat else None
    return _run_forward_sens(traj, q0, alpha, arch_mat, s_act, lambda k: V_tape[k], getW)
