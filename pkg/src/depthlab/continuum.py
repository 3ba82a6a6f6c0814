"""Continuum limits of the residual recurrence.

Rough i.i.d. regime at beta = 1/2: the recurrence converges in law to the
matrix-driven SDE dH^T = sqrt(2/d) sigma(H^T) dB, simulated here by
Euler-Maruyama on coupled Brownian grids (coarse increments are exact
block sums of fine ones, never resampled) with measured strong order 1/2.

Smooth regime at beta = 1: with weights that are Lipschitz paths in the
layer fraction t, the recurrence is the explicit Euler scheme of the
neural ODE dH = V_t g(H, Theta_t) dt, with error O(1/L).

Both propositions are almost-sure statements per weight realization, so
the probes keep one master path (piecewise-linear on a fixed fine grid)
and evaluate every depth on it: depth-to-depth comparisons are then
noise-free trends, not Monte-Carlo contrasts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ._kernels import backend
from .resnet_core import TRIAL_INPUT, TRIAL_NOISE, TRIAL_TAPE, ModelSpec
from .rng import Stream, derive_seed
from .stochastic_init import ROLE_V, ROLE_W, GPSpec, gp_factor_for_grid

MASTER_CELLS = 1024  # resolution of the master grid carrying smooth paths


@dataclass
class BrownianGrid:
    """Matrix Brownian increments on a fine grid over [0, 1].

    ``increments[k]`` is a (d, d) matrix with i.i.d. N(0, 1/n_fine)
    entries; ``m`` is the refinement factor separating this grid from the
    coarse grid it is coupled to.  Coarse increments are exact sums of m
    consecutive fine increments — additive coupling, no resampling.
    """

    increments: np.ndarray  # (n_fine, d, d)
    m: int

    @property
    def n_fine(self) -> int:
        return self.increments.shape[0]

    @property
    def d(self) -> int:
        return self.increments.shape[1]

    @classmethod
    def sample(cls, d: int, n_coarse: int, m: int, seed: int) -> "BrownianGrid":
        n_fine = n_coarse * m
        flat = backend.fill_gaussian(seed, n_fine * d * d)
        incr = flat.reshape(n_fine, d, d) * (1.0 / n_fine) ** 0.5
        return cls(increments=incr, m=m)

    def aggregate(self, factor: int) -> "BrownianGrid":
        """Sum blocks of ``factor`` fine increments (factor must divide n)."""
        n = self.n_fine
        if factor < 1 or n % factor:
            raise ValueError(f"factor {factor} does not divide {n} increments")
        summed = self.increments.reshape(n // factor, factor, self.d, self.d).sum(axis=1)
        return BrownianGrid(increments=summed, m=self.m)

    def coarse_increments(self) -> np.ndarray:
        if self.n_fine % self.m:
            raise ValueError("fine step count not a multiple of m")
        return self.increments.reshape(self.n_fine // self.m, self.m, self.d,
                                       self.d).sum(axis=1)


Activation = Union[float, Callable[[np.ndarray], np.ndarray]]


def _resolve_increments(brownian, L: int) -> np.ndarray:
    incr = brownian.increments if isinstance(brownian, BrownianGrid) else np.asarray(brownian)
    if incr.ndim != 3 or incr.shape[0] != L or incr.shape[1] != incr.shape[2]:
        raise ValueError(f"expected {L} square increments, got shape {incr.shape}")
    return incr


def euler_maruyama_res1(d: int, L: int, activation: Activation, brownian,
                        h_0: np.ndarray) -> np.ndarray:
    """Euler-Maruyama for dH^T = sqrt(2/d) sigma(H^T) dB.

    One step: h <- h + sqrt(2/d) * dB_k^T sigma(h).  ``activation`` is
    either a parametric-ReLU slope (fast kernel path — the step is then
    literally the res-1 recurrence with V_k = sqrt(2/d) dB_k^T and
    alpha = 1) or an arbitrary vectorized callable.
    """
    incr = _resolve_increments(brownian, L)
    if incr.shape[1] != d or h_0.shape != (d,):
        raise ValueError("dimension mismatch")
    scale = (2.0 / d) ** 0.5
    if isinstance(activation, float):
        tape = np.ascontiguousarray(scale * incr.transpose(0, 2, 1))
        states, _, _, _ = backend.forward_tape(h_0, tape, None, 1.0, 0, activation)
        return states
    traj = np.empty((L + 1, d))
    h = np.asarray(h_0, dtype=np.float64).copy()
    traj[0] = h
    for k in range(L):
        h = h + scale * (incr[k].T @ activation(h))
        traj[k + 1] = h
    return traj


@dataclass
class RateFit:
    """Least-squares log-log convergence fit over at least 4 depths."""

    depths: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    degenerate: bool = False

    @classmethod
    def fit(cls, depths: Sequence[int], errors: Sequence[float]) -> "RateFit":
        depths = np.asarray(depths, dtype=np.float64)
        errors = np.asarray(errors, dtype=np.float64)
        if len(depths) < 4:
            raise ValueError("need at least 4 depths for a rate fit")
        if np.any(errors <= 0.0):
            return cls(depths=depths, errors=errors, slope=float("nan"),
                       intercept=float("nan"), degenerate=True)
        slope, intercept = np.polyfit(np.log(depths), np.log(errors), 1)
        return cls(depths=depths, errors=errors, slope=float(slope),
                   intercept=float(intercept))


def strong_error_sde(d: int, depths: Sequence[int], m: int, trials: int,
                     seed: int, activation: Activation = 2.0**-0.5) -> RateFit:
    """Terminal strong error of the L-step scheme vs its m-times-finer twin.

    All depths per trial ride one master Brownian path (every resolution
    is an exact block aggregation of it), so the depth profile of the
    error is a coupled trend.
    """
    depths = sorted(int(L) for L in depths)
    if m < 16:
        raise ValueError("refinement factor m must be >= 16")
    if len(depths) < 4:
        raise ValueError("need at least 4 depths")
    max_L = depths[-1]
    nested = all(max_L % L == 0 for L in depths)
    errs = np.zeros(len(depths))
    for t in range(trials):
        ts = derive_seed(seed, (t,))
        noise_seed = derive_seed(ts, (TRIAL_NOISE,))
        h0 = Stream(derive_seed(ts, (TRIAL_INPUT,))).gaussian(d)
        master = BrownianGrid.sample(d, max_L, m, noise_seed) if nested else None
        for i, L in enumerate(depths):
            if nested:
                grid = master.aggregate(max_L // L)
            else:
                grid = BrownianGrid.sample(d, L, m, derive_seed(noise_seed, (i,)))
            h_fine = euler_maruyama_res1(d, L * m, activation, grid.increments, h0)[-1]
            h_coarse = euler_maruyama_res1(d, L, activation,
                                           grid.coarse_increments(), h0)[-1]
            errs[i] += float(np.linalg.norm(h_fine - h_coarse))
    errs /= trials
    return RateFit.fit(depths, errs)


# ---------------------------------------------------------------------------
# smooth regime: piecewise-linear master paths and the neural ODE


@dataclass
class SmoothWeightPath:
    """A matrix path t -> (d, d), piecewise linear on a fixed master grid.

    Calling it with an array of times returns the stacked interpolated
    matrices.  Piecewise-linear interpolation keeps the path Lipschitz,
    which is exactly the regularity the smooth-regime results assume.
    """

    grid: np.ndarray  # (M+1,) increasing, spans [0, 1]
    values: np.ndarray  # (M+1, d, d)

    @classmethod
    def sample_gp(cls, d: int, spec: GPSpec, seed: int,
                  cells: int = MASTER_CELLS) -> "SmoothWeightPath":
        grid = np.arange(cells + 1, dtype=np.float64) / cells
        F = gp_factor_for_grid(grid, spec)
        Z = np.empty((cells + 1, d * d))
        for e in range(d * d):
            Z[:, e] = backend.fill_gaussian(derive_seed(seed, (e,)), cells + 1)
        values = np.ascontiguousarray((F @ Z).reshape(cells + 1, d, d))
        return cls(grid=grid, values=values)

    def add_diag(self, mu: float) -> "SmoothWeightPath":
        vals = self.values.copy()
        idx = np.arange(vals.shape[1])
        vals[:, idx, idx] += mu
        return SmoothWeightPath(grid=self.grid, values=vals)

    def __call__(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        idx = np.clip(np.searchsorted(self.grid, ts, side="right") - 1,
                      0, len(self.grid) - 2)
        span = self.grid[idx + 1] - self.grid[idx]
        w = ((ts - self.grid[idx]) / span)[:, None, None]
        return (1.0 - w) * self.values[idx] + w * self.values[idx + 1]


PathFun = Callable[[np.ndarray], np.ndarray]


ODE_BLOCK = 8192  # steps integrated per batch, capping tape memory


def ode_integrate(model: ModelSpec, V_fun: PathFun, W_fun: Optional[PathFun],
                  h_0: np.ndarray, N: int) -> np.ndarray:
    """Explicit Euler on dH = V_t g(H, Theta_t) dt with step 1/N.

    The coefficient is evaluated at the step's right endpoint (k+1)/N, so
    with N = L and tape matrices equal to the path values at k/L this is
    symbol-for-symbol the residual recurrence at alpha = 1/L.  Paths are
    materialized in blocks of at most ODE_BLOCK steps; the states are
    identical to a single whole-tape pass.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if model.uses_w and W_fun is None:
        raise ValueError(f"{model.arch} needs a Theta path")
    traj = np.empty((N + 1, model.d))
    traj[0] = h_0
    h = np.asarray(h_0, dtype=np.float64)
    for start in range(0, N, ODE_BLOCK):
        nb = min(ODE_BLOCK, N - start)
        ts = np.arange(start + 1, start + nb + 1, dtype=np.float64) / N
        Vt = np.ascontiguousarray(V_fun(ts))
        Wt = np.ascontiguousarray(W_fun(ts)) if model.uses_w else None
        states, _, _, ovf = backend.forward_tape(h, Vt, Wt, 1.0 / N,
                                                 model.kernel_arch_mat,
                                                 model.kernel_s_act)
        if ovf >= 0:
            raise FloatingPointError(f"non-finite state at step {start + ovf}")
        traj[start + 1 : start + nb + 1] = states[1:]
        h = states[-1]
    return traj


def _trial_paths(model: ModelSpec, spec: GPSpec, trial_seed: int, cells: int):
    tape_seed = derive_seed(trial_seed, (TRIAL_TAPE,))
    Vp = SmoothWeightPath.sample_gp(model.d, spec, derive_seed(tape_seed, (ROLE_V,)),
                                    cells)
    Wp = None
    if model.uses_w:
        Wp = SmoothWeightPath.sample_gp(model.d, spec,
                                        derive_seed(tape_seed, (ROLE_W,)), cells)
    return Vp, Wp


def ode_error_vs_depth(model: ModelSpec, spec: GPSpec, depths: Sequence[int],
                       N_ref: int, trials: int, seed: int,
                       cells: int = MASTER_CELLS) -> RateFit:
    """Terminal Euler error against a high-resolution run on the same path."""
    depths = sorted(int(L) for L in depths)
    if len(depths) < 4:
        raise ValueError("need at least 4 depths")
    if N_ref < 64 * depths[-1]:
        raise ValueError("N_ref must be at least 64x the largest depth")
    errs = np.zeros(len(depths))
    for t in range(trials):
        ts = derive_seed(seed, (t,))
        Vp, Wp = _trial_paths(model, spec, ts, cells)
        h0 = Stream(derive_seed(ts, (TRIAL_INPUT,))).gaussian(model.d)
        ref = ode_integrate(model, Vp, Wp, h0, N_ref)[-1]
        for i, L in enumerate(depths):
            coarse = ode_integrate(model, Vp, Wp, h0, L)[-1]
            errs[i] += float(np.linalg.norm(ref - coarse))
    errs /= trials
    return RateFit.fit(depths, errs)


@dataclass
class ProbeResult:
    depths: np.ndarray
    ratios: np.ndarray  # median across trials
    per_trial: np.ndarray  # (trials, n_depths)


def smooth_regime_probe(model: ModelSpec, spec: GPSpec, beta: float,
                        depths: Sequence[int], seed: int, trials: int = 1,
                        explosion_mu: Optional[float] = None,
                        cells: int = MASTER_CELLS) -> ProbeResult:
    """Stability ratios across depths on one smooth path per trial.

    Default mode: final ||h_L - h_0||/||h_0|| for the given model under
    alpha = L^{-beta}.  Explosion mode (``explosion_mu`` set): linear
    res-1 whose V path is mu*I plus the GP perturbation — mu > 0 plants
    the positive eigenvalue the divergence result requires — and the
    reported quantity is max_k ||h_k - h_0||/||h_0||.
    """
    depths = [int(L) for L in depths]
    if explosion_mu is not None:
        model = replace(model, arch="res1", s_act=1.0)
    per_trial = np.empty((trials, len(depths)))
    for t in range(trials):
        ts = derive_seed(seed, (t,))
        Vp, Wp = _trial_paths(model, spec, ts, cells)
        if explosion_mu is not None:
            Vp = Vp.add_diag(explosion_mu)
        h0 = Stream(derive_seed(ts, (TRIAL_INPUT,))).gaussian(model.d)
        for i, L in enumerate(depths):
            grid_ts = np.arange(1, L + 1, dtype=np.float64) / L
            Vt = np.ascontiguousarray(Vp(grid_ts))
            Wt = np.ascontiguousarray(Wp(grid_ts)) if Wp is not None else None
            alpha = float(L) ** (-beta)
            _, norms, diffs, _ = backend.forward_tape(
                h0, Vt, Wt, alpha, model.kernel_arch_mat, model.kernel_s_act)
            if explosion_mu is not None:
                per_trial[t, i] = float(np.sqrt(np.max(diffs) / norms[0]))
            else:
                per_trial[t, i] = float(np.sqrt(diffs[-1] / norms[0]))
    return ProbeResult(depths=np.asarray(depths, dtype=np.int64),
                       ratios=np.median(per_trial, axis=0),
                       per_trial=per_trial)
