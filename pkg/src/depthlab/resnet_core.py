"""Scaled residual recurrence h_{k+1} = h_k + alpha_L * V_{k+1} g(h_k).

Three residual families:

* ``res1``: g(h) = sigma(h) — activation straight on the state;
* ``res2``: g(h) = sigma(W h) — activation after an inner matrix;
* ``res3``: g(h) = relu(W h) — hard ReLU variant (the slope knob is
  ignored; the mask derivative at 0 is 0).

``sigma`` is the parametric ReLU x -> x if x > 0 else s_act * x with
s_act in [1/sqrt(2), 1]; s_act = 1 makes it the identity.  The input is
embedded by h_0 = A x and read out by B h_L; biases are omitted (study is
at initialization, where they are zero anyway).

The forward pass dispatches to the active kernel backend: i.i.d. schemes
stream weight matrices from the seed layer-by-layer (no tape in memory),
path schemes run over the materialized tape.  Both give bit-identical
trajectories for the same weights within a backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import backend
from .rng import Stream, derive_seed
from .stochastic_init import DistributionSpec, InitScheme, WeightTape, build_weight_tape

ARCHS = ("res1", "res2", "res3")

# per-trial stream roles (children of a trial seed)
TRIAL_TAPE = 1
TRIAL_PROJ_A = 2
TRIAL_PROJ_B = 3
TRIAL_INPUT = 4
TRIAL_TARGET = 5
TRIAL_PROBE = 6
TRIAL_NOISE = 7

_S_MIN = 2.0**-0.5


@dataclass(frozen=True)
class ModelSpec:
    arch: str = "res3"
    d: int = 40
    L: int = 1000
    s_act: float = 1.0
    n_in: int = 64
    n_out: int = 1

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("d", "L", "n_in", "n_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (_S_MIN - 1e-12 <= self.s_act <= 1.0 + 1e-12):
            raise ValueError(f"s_act must lie in [1/sqrt(2), 1], got {self.s_act}")

    @property
    def uses_w(self) -> bool:
        return self.arch in ("res2", "res3")

    @property
    def kernel_arch_mat(self) -> int:
        return 1 if self.uses_w else 0

    @property
    def kernel_s_act(self) -> float:
        # res3 is hard ReLU whatever the slope knob says
        return 0.0 if self.arch == "res3" else self.s_act


@dataclass(frozen=True)
class ScalingRule:
    """Residual-branch scaling: alpha_L = L^{-beta}, or an explicit alpha."""

    beta: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if (self.beta is None) == (self.alpha is None):
            raise ValueError("provide exactly one of beta or alpha")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.alpha is not None and not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")

    def alpha_for(self, L: int) -> float:
        if self.alpha is not None:
            return self.alpha
        return float(L) ** (-self.beta)


@dataclass
class Trajectory:
    """All L+1 hidden states of one forward pass plus norm bookkeeping.

    ``overflow_layer`` is the first layer whose state went non-finite
    (None when the pass stayed finite); past it, squared norms are +inf
    and states are frozen.  Ratio helpers report inf for overflowed runs
    rather than NaN.
    """

    states: np.ndarray
    norms_sq: np.ndarray
    diffs_sq: np.ndarray
    overflow_layer: Optional[int]
    rule: ScalingRule
    seed: Optional[int] = None

    @property
    def L(self) -> int:
        return self.states.shape[0] - 1

    @property
    def overflowed(self) -> bool:
        return self.overflow_layer is not None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Projections:
    A: np.ndarray  # (d, n_in) input embedding
    B: np.ndarray  # (n_out, d) readout

    def __post_init__(self):
        if self.A.ndim != 2 or self.B.ndim != 2 or self.B.shape[1] != self.A.shape[0]:
            raise ValueError("A must be (d, n_in) and B (n_out, d)")


def sample_projections(model: ModelSpec, seed_a: int, seed_b: int) -> Projections:
    """Gaussian A, B with entry variances 1/n_in and 1/d (full rank a.s.)."""
    A = Stream(seed_a).gaussian(model.d * model.n_in).reshape(model.d, model.n_in)
    A *= model.n_in**-0.5
    B = Stream(seed_b).gaussian(model.n_out * model.d).reshape(model.n_out, model.d)
    B *= model.d**-0.5
    return Projections(A=A, B=B)


def activation(model: ModelSpec, z: np.ndarray) -> np.ndarray:
    s = model.kernel_s_act
    return np.where(z > 0.0, z, s * z)


def g_apply(model: ModelSpec, h: np.ndarray, W: Optional[np.ndarray] = None) -> np.ndarray:
    """The residual branch g(h, theta) of one layer."""
    if model.uses_w:
        if W is None:
            raise ValueError(f"{model.arch} needs a W matrix")
        if W.shape != (model.d, model.d) or h.shape != (model.d,):
            raise ValueError("shape mismatch in g_apply")
        return activation(model, W @ h)
    if h.shape != (model.d,):
        raise ValueError("shape mismatch in g_apply")
    return activation(model, h)


def embed_input(proj: Projections, x: np.ndarray) -> np.ndarray:
    if x.shape != (proj.A.shape[1],):
        raise ValueError("input dimension mismatch")
    return proj.A @ x


def readout(proj: Projections, h_L: np.ndarray) -> np.ndarray:
    if h_L.shape != (proj.B.shape[1],):
        raise ValueError("state dimension mismatch")
    return proj.B @ h_L


def forward_state(model: ModelSpec, tape: WeightTape, h0: np.ndarray,
                  rule: ScalingRule) -> Trajectory:
    """Run the recurrence from an explicit starting state."""
    if tape.L != model.L or tape.d != model.d:
        raise ValueError("tape does not match model dimensions")
    if model.uses_w != tape.has_w:
        raise ValueError("tape W-availability does not match architecture")
    alpha = rule.alpha_for(model.L)
    if tape.streaming_iid:
        scheme = tape.scheme
        states, norms, diffs, ovf = backend.forward_iid(
            tape.seed, h0, model.L, alpha, model.kernel_arch_mat,
            model.kernel_s_act, scheme.kernel_kind, scheme.kernel_param,
        )
    else:
        states, norms, diffs, ovf = backend.forward_tape(
            h0, tape.V, tape.W, alpha, model.kernel_arch_mat, model.kernel_s_act,
        )
    return Trajectory(
        states=states, norms_sq=norms, diffs_sq=diffs,
        overflow_layer=None if ovf < 0 else int(ovf),
        rule=rule, seed=tape.seed,
    )


def forward(model: ModelSpec, tape: WeightTape, proj: Projections, x: np.ndarray,
            rule: ScalingRule) -> Trajectory:
    return forward_state(model, tape, embed_input(proj, x), rule)


def norm_ratio_output(traj: Trajectory) -> float:
    """Stability diagnostic ||h_L - h_0|| / ||h_0||."""
    n0 = traj.norms_sq[0]
    if n0 <= 0.0:
        raise ValueError("zero initial state")
    return float(np.sqrt(traj.diffs_sq[-1] / n0))


def norm_ratio_final(traj: Trajectory) -> float:
    """Companion diagnostic ||h_L|| / ||h_0|| (histogram/quartile studies)."""
    n0 = traj.norms_sq[0]
    if n0 <= 0.0:
        raise ValueError("zero initial state")
    return float(np.sqrt(traj.norms_sq[-1] / n0))


@dataclass
class Trial:
    """One fully realized experiment trial: weights, projections, data."""

    tape: WeightTape
    proj: Projections
    x: np.ndarray
    y_target: np.ndarray
    trial_seed: int


def realize_trial(model: ModelSpec, scheme: InitScheme, master_seed: int,
                  trial_index: int) -> Trial:
    """Derive all independent streams of one trial from the master seed."""
    ts = derive_seed(master_seed, (trial_index,))
    tape = build_weight_tape(model, scheme, derive_seed(ts, (TRIAL_TAPE,)))
    proj = sample_projections(
        model, derive_seed(ts, (TRIAL_PROJ_A,)), derive_seed(ts, (TRIAL_PROJ_B,))
    )
    x = Stream(derive_seed(ts, (TRIAL_INPUT,))).gaussian(model.n_in)
    y = Stream(derive_seed(ts, (TRIAL_TARGET,))).gaussian(model.n_out)
    return Trial(tape=tape, proj=proj, x=x, y_target=y, trial_seed=ts)


def default_iid_scheme(model: ModelSpec, kind: str = "UniformScaled") -> DistributionSpec:
    return DistributionSpec(kind=kind, d=model.d)
