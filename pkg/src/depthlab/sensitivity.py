"""Exact gradient dynamics through the residual recurrence.

Two dual recursions over a realized trajectory:

* backward: p_k = p_{k+1} + alpha_L * (dg/dh)(h_k)^T V_{k+1}^T p_{k+1},
  seeded at p_L (the loss gradient at the output state);
* forward-mode: q_{k+1} = q_k + alpha_L * V_{k+1} (dg/dh)(h_k) q_k,
  seeded at q_0 = z, so q_L(z) = (dh_L/dh_0) z.

They satisfy <p_0, z> = <p_L, q_L(z)> exactly (chain rule); the duality
check is the main correctness oracle here.  The API functions build full
L+1 sequences in NumPy for inspection; the ratio estimators below them
dispatch to the kernel backend, which regenerates i.i.d. weights
backwards from the seed instead of materializing the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import backend
from .resnet_core import (
    TRIAL_PROBE,
    ModelSpec,
    Projections,
    ScalingRule,
    Trajectory,
    forward,
)
from .rng import Stream, derive_seed
from .stochastic_init import WeightTape


@dataclass
class SensitivityTape:
    """One adjoint/tangent sequence: index k holds q_k (forward) or p_k."""

    mode: str  # "forward" | "backward"
    states: np.ndarray  # (L+1, d)
    norms_sq: np.ndarray
    probe: np.ndarray  # z for forward mode, p_L for backward mode
    overflow_layer: Optional[int] = None

    @property
    def q_L(self) -> np.ndarray:
        return self.states[-1]

    @property
    def p_0(self) -> np.ndarray:
        return self.states[0]


def _slope(model: ModelSpec) -> float:
    return model.kernel_s_act


def jacobian_vector(model: ModelSpec, W: Optional[np.ndarray], h: np.ndarray,
                    v: np.ndarray) -> np.ndarray:
    """(dg/dh)(h) v for one layer's residual branch."""
    s = _slope(model)
    if model.uses_w:
        if W is None:
            raise ValueError(f"{model.arch} needs a W matrix")
        z = W @ h
        return np.where(z > 0.0, 1.0, s) * (W @ v)
    return np.where(h > 0.0, 1.0, s) * v


def jacobian_transpose_vector(model: ModelSpec, W: Optional[np.ndarray],
                              h: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(dg/dh)(h)^T u, the transpose companion of jacobian_vector."""
    s = _slope(model)
    if model.uses_w:
        if W is None:
            raise ValueError(f"{model.arch} needs a W matrix")
        z = W @ h
        return W.T @ (np.where(z > 0.0, 1.0, s) * u)
    return np.where(h > 0.0, 1.0, s) * u


def _check_traj(model: ModelSpec, tape: WeightTape, traj: Trajectory):
    if traj.states.shape != (model.L + 1, model.d):
        raise ValueError("trajectory does not match model dimensions")
    if tape.L != model.L or tape.d != model.d:
        raise ValueError("tape does not match model dimensions")


def forward_sensitivity(model: ModelSpec, tape: WeightTape, traj: Trajectory,
                        z: np.ndarray, rule: ScalingRule) -> SensitivityTape:
    """Propagate the tangent q_k(z) alongside a realized trajectory."""
    _check_traj(model, tape, traj)
    alpha = rule.alpha_for(model.L)
    V, W = tape.V, tape.W
    states = np.empty_like(traj.states)
    norms = np.empty(model.L + 1)
    q = np.asarray(z, dtype=np.float64).copy()
    states[0] = q
    norms[0] = q @ q
    overflow = None
    # overflow is contract behavior (detected and frozen), not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(model.L):
            Wk = W[k] if W is not None else None
            q = q + alpha * (V[k] @ jacobian_vector(model, Wk, traj.states[k], q))
            states[k + 1] = q
            nk = q @ q
            if not np.isfinite(nk):
                overflow = k + 1
                states[k + 1 :] = q
                norms[k + 1 :] = np.inf
                break
            norms[k + 1] = nk
    return SensitivityTape(mode="forward", states=states, norms_sq=norms,
                           probe=np.asarray(z, dtype=np.float64),
                           overflow_layer=overflow)


def backward_gradient(model: ModelSpec, tape: WeightTape, traj: Trajectory,
                      p_L: np.ndarray, rule: ScalingRule) -> SensitivityTape:
    """Backpropagate p_k from the terminal gradient p_L down to p_0."""
    _check_traj(model, tape, traj)
    alpha = rule.alpha_for(model.L)
    V, W = tape.V, tape.W
    states = np.empty_like(traj.states)
    norms = np.empty(model.L + 1)
    p = np.asarray(p_L, dtype=np.float64).copy()
    states[model.L] = p
    norms[model.L] = p @ p
    overflow = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(model.L - 1, -1, -1):
            Wk = W[k] if W is not None else None
            p = p + alpha * jacobian_transpose_vector(model, Wk, traj.states[k],
                                                      V[k].T @ p)
            states[k] = p
            nk = p @ p
            if not np.isfinite(nk):
                overflow = k
                states[: k + 1] = p
                norms[: k + 1] = np.inf
                break
            norms[k] = nk
    return SensitivityTape(mode="backward", states=states, norms_sq=norms,
                           probe=np.asarray(p_L, dtype=np.float64),
                           overflow_layer=overflow)


def loss_terminal_gradient(proj: Projections, h_L: np.ndarray,
                           y_target: np.ndarray) -> np.ndarray:
    """d/dh_L of the squared loss ||B h_L - y||^2: exactly 2 B^T(B h_L - y)."""
    return 2.0 * (proj.B.T @ (proj.B @ h_L - y_target))


def _kernel_backward(model: ModelSpec, tape: WeightTape, traj: Trajectory,
                     p_L: np.ndarray, alpha: float):
    if tape.streaming_iid:
        sch = tape.scheme
        return backend.backward_iid(tape.seed, traj.states, p_L, alpha,
                                    model.kernel_arch_mat, model.kernel_s_act,
                                    sch.kernel_kind, sch.kernel_param)
    return backend.backward_tape(traj.states, p_L, tape.V, tape.W, alpha,
                                 model.kernel_arch_mat, model.kernel_s_act)


def _kernel_forward_sens(model: ModelSpec, tape: WeightTape, traj: Trajectory,
                         q0: np.ndarray, alpha: float):
    if tape.streaming_iid:
        sch = tape.scheme
        return backend.forward_sens_iid(tape.seed, traj.states, q0, alpha,
                                        model.kernel_arch_mat, model.kernel_s_act,
                                        sch.kernel_kind, sch.kernel_param)
    return backend.forward_sens_tape(traj.states, q0, tape.V, tape.W, alpha,
                                     model.kernel_arch_mat, model.kernel_s_act)


def gradient_ratio(model: ModelSpec, tape: WeightTape, proj: Projections,
                   x: np.ndarray, y_target: np.ndarray, rule: ScalingRule) -> float:
    """||p_0 - p_L|| / ||p_L|| under the squared loss, one realization.

    Returns inf when the forward pass overflowed.
    """
    traj = forward(model, tape, proj, x, rule)
    if traj.overflowed:
        return float("inf")
    p_L = loss_terminal_gradient(proj, traj.final_state, y_target)
    nL = p_L @ p_L
    if nL <= 0.0:
        raise ValueError("zero terminal gradient")
    p_0, _ = _kernel_backward(model, tape, traj, p_L, rule.alpha_for(model.L))
    if not np.all(np.isfinite(p_0)):
        return float("inf")
    return float(np.linalg.norm(p_0 - p_L) / np.sqrt(nL))


def estimate_ratio_forward(model: ModelSpec, tape: WeightTape, proj: Projections,
                           x: np.ndarray, y_target: np.ndarray, rule: ScalingRule,
                           n_probes: int) -> float:
    """Monte-Carlo estimate of ||p_0||^2/||p_L||^2 from forward-mode probes.

    Uses the duality <p_0, z> = <p_L, q_L(z)> with Gaussian probes z: each
    probe contributes d * <p_L, q_L(z)>^2 / ||z||^2, whose mean over the
    sphere is ||p_0||^2 (exact for d = 1).  Probe streams derive from the
    tape seed, independent of every weight stream.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    traj = forward(model, tape, proj, x, rule)
    p_L = loss_terminal_gradient(proj, traj.final_state, y_target)
    nL = p_L @ p_L
    if nL <= 0.0:
        raise ValueError("zero terminal gradient")
    alpha = rule.alpha_for(model.L)
    d = model.d
    acc = 0.0
    for j in range(n_probes):
        z = Stream(derive_seed(tape.seed, (TRIAL_PROBE, j))).gaussian(d)
        q_L, _ = _kernel_forward_sens(model, tape, traj, z, alpha)
        acc += d * float(p_L @ q_L) ** 2 / float(z @ z)
    return acc / n_probes / float(nL)
