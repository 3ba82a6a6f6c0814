"""Continuum limits: coupled Brownian grids, Euler schemes, rate fits."""

import numpy as np
import pytest

import depthlab.continuum as continuum
from depthlab.continuum import (
    BrownianGrid,
    RateFit,
    SmoothWeightPath,
    euler_maruyama_res1,
    ode_error_vs_depth,
    ode_integrate,
    smooth_regime_probe,
    strong_error_sde,
)
from depthlab.resnet_core import ModelSpec, ScalingRule, forward_state
from depthlab.rng import Stream
from depthlab.stochastic_init import GPSpec, build_weight_tape


# ---------------------------------------------------------------------------
# Brownian grids


def test_brownian_grid_sample_shape_and_variance():
    g = BrownianGrid.sample(d=3, n_coarse=20, m=16, seed=5)
    assert g.increments.shape == (320, 3, 3)
    assert g.n_fine == 320 and g.d == 3 and g.m == 16
    # entries are N(0, 1/n_fine)
    v = g.increments.var()
    n = g.increments.size
    assert abs(v - 1.0 / 320) < 5 * (2.0 / n) ** 0.5 * (1.0 / 320)
    again = BrownianGrid.sample(d=3, n_coarse=20, m=16, seed=5)
    assert np.array_equal(again.increments, g.increments)


def test_aggregate_is_exact_block_sum():
    g = BrownianGrid.sample(d=2, n_coarse=6, m=4, seed=1)
    agg = g.aggregate(4)
    manual = g.increments.reshape(6, 4, 2, 2).sum(axis=1)
    assert np.array_equal(agg.increments, manual)
    # coarse_increments is the m-fold aggregation
    assert np.array_equal(g.coarse_increments(), g.aggregate(g.m).increments)
    # total displacement is conserved by construction
    assert np.allclose(agg.increments.sum(axis=0), g.increments.sum(axis=0), rtol=1e-12)


def test_aggregate_validation():
    g = BrownianGrid.sample(d=2, n_coarse=5, m=3, seed=0)
    with pytest.raises(ValueError, match="does not divide"):
        g.aggregate(4)
    bad = BrownianGrid(increments=g.increments[:7], m=3)
    with pytest.raises(ValueError, match="not a multiple"):
        bad.coarse_increments()


# ---------------------------------------------------------------------------
# Euler-Maruyama


def test_euler_maruyama_hand_step():
    # one step, identity activation: h1 = h0 + sqrt(2/d) dB^T h0
    incr = np.array([[[0.5, 0.25], [0.1, -0.2]]])
    h0 = np.array([1.0, -1.0])
    traj = euler_maruyama_res1(2, 1, 1.0, incr, h0)
    want = np.array([1.0 + 0.5 - 0.1, -1.0 + 0.25 + 0.2])  # scale = 1 at d = 2
    assert np.allclose(traj[-1], want, rtol=1e-15)
    assert np.array_equal(traj[0], h0)


def test_euler_maruyama_slope_kernel_matches_callable():
    d, L, s = 4, 32, 2.0**-0.5
    g = BrownianGrid.sample(d, L, 1, seed=9)
    h0 = Stream(10).gaussian(d)
    fast = euler_maruyama_res1(d, L, s, g.increments, h0)
    slow = euler_maruyama_res1(
        d, L, lambda h: np.where(h > 0.0, h, s * h), g.increments, h0
    )
    assert np.allclose(fast, slow, rtol=1e-12, atol=1e-15)


def test_euler_maruyama_zero_drift():
    g = BrownianGrid.sample(3, 10, 1, seed=2)
    h0 = np.array([1.0, 2.0, 3.0])
    traj = euler_maruyama_res1(3, 10, lambda h: np.zeros_like(h), g.increments, h0)
    assert np.array_equal(traj, np.tile(h0, (11, 1)))


def test_euler_maruyama_validation():
    g = BrownianGrid.sample(3, 4, 1, seed=2)
    with pytest.raises(ValueError, match="square increments"):
        euler_maruyama_res1(3, 5, 1.0, g.increments, np.ones(3))
    with pytest.raises(ValueError, match="dimension mismatch"):
        euler_maruyama_res1(3, 4, 1.0, g.increments, np.ones(4))


# ---------------------------------------------------------------------------
# rate fits


def test_rate_fit_recovers_exact_power_law():
    depths = [8, 16, 32, 64, 128]
    errors = 3.2 * np.asarray(depths, dtype=float) ** -0.5
    fit = RateFit.fit(depths, errors)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.2), abs=1e-12)
    assert not fit.degenerate


def test_rate_fit_degenerate_and_short():
    fit = RateFit.fit([8, 16, 32, 64], [1.0, 0.5, 0.0, 0.1])
    assert fit.degenerate and np.isnan(fit.slope)
    with pytest.raises(ValueError, match="at least 4 depths"):
        RateFit.fit([8, 16, 32], [1.0, 0.5, 0.25])


def test_strong_error_sde_validation():
    with pytest.raises(ValueError, match="m must be >= 16"):
        strong_error_sde(4, [8, 16, 32, 64], m=8, trials=1, seed=0)
    with pytest.raises(ValueError, match="at least 4 depths"):
        strong_error_sde(4, [8, 16, 32], m=16, trials=1, seed=0)


def test_strong_error_sde_small_run():
    fit = strong_error_sde(4, [4, 8, 16, 32], m=16, trials=2, seed=7)
    assert np.all(fit.errors > 0)
    assert np.all(np.isfinite(fit.errors))
    assert fit.slope < -0.1  # refinement helps; exact rate is a slow-sample fact


def test_strong_error_sde_unnested_depths():
    # 5 does not divide 32: falls back to independent grids per depth
    fit = strong_error_sde(3, [5, 8, 16, 32], m=16, trials=1, seed=3)
    assert np.all(fit.errors > 0)


# ---------------------------------------------------------------------------
# smooth paths and the ODE


def test_smooth_path_interpolation():
    spec = GPSpec(lengthscale=0.2, variance=0.5)
    path = SmoothWeightPath.sample_gp(3, spec, seed=21, cells=16)
    assert path.values.shape == (17, 3, 3)
    # exact at the grid nodes, including both endpoints
    assert np.array_equal(path(path.grid[5:6])[0], path.values[5])
    assert np.array_equal(path(np.array([0.0]))[0], path.values[0])
    assert np.array_equal(path(np.array([1.0]))[0], path.values[-1])
    mid = 0.5 * (path.grid[3] + path.grid[4])
    assert np.allclose(path(np.array([mid]))[0],
                       0.5 * (path.values[3] + path.values[4]), rtol=1e-12)


def test_add_diag_shifts_only_diagonal():
    path = SmoothWeightPath.sample_gp(3, GPSpec(), seed=22, cells=8)
    shifted = path.add_diag(2.5)
    diff = shifted.values - path.values
    idx = np.arange(3)
    assert np.allclose(diff[:, idx, idx], 2.5)
    off = diff.copy()
    off[:, idx, idx] = 0.0
    assert np.all(off == 0.0)
    # original untouched
    assert not np.shares_memory(shifted.values, path.values)


def test_ode_matches_residual_recurrence_at_equal_resolution():
    # with N = L the integrator IS the recurrence at alpha = 1/L
    d, L = 4, 24
    spec = GPSpec(lengthscale=0.2, variance=0.04)
    model = ModelSpec(arch="res2", d=d, L=L, s_act=1.0)
    Vp = SmoothWeightPath.sample_gp(d, spec, seed=31, cells=L)
    Wp = SmoothWeightPath.sample_gp(d, spec, seed=32, cells=L)
    h0 = Stream(33).gaussian(d)
    traj = ode_integrate(model, Vp, Wp, h0, N=L)
    grid = np.arange(1, L + 1, dtype=np.float64) / L
    from depthlab._kernels import backend

    states, _, _, _ = backend.forward_tape(
        h0, np.ascontiguousarray(Vp(grid)), np.ascontiguousarray(Wp(grid)),
        1.0 / L, 1, 1.0,
    )
    assert np.array_equal(traj, states)


def test_ode_blockwise_equals_whole(monkeypatch):
    d, N = 3, 50
    model = ModelSpec(arch="res1", d=d, L=8, s_act=1.0)
    Vp = SmoothWeightPath.sample_gp(d, GPSpec(), seed=41, cells=64)
    h0 = Stream(42).gaussian(d)
    whole = ode_integrate(model, Vp, None, h0, N)
    monkeypatch.setattr(continuum, "ODE_BLOCK", 7)
    blocked = ode_integrate(model, Vp, None, h0, N)
    assert np.array_equal(whole, blocked)


def test_ode_scalar_linear_oracle():
    # d = 1, constant V = v, identity activation: exact Euler value is
    # (1 + v/N)^N h0, converging to e^v h0 at rate 1/N
    v, h0 = 0.8, np.array([1.5])
    model = ModelSpec(arch="res1", d=1, L=1, s_act=1.0)

    def V_fun(ts):
        return np.full((len(ts), 1, 1), v)

    exact = float(h0[0] * np.exp(v))
    errs = []
    for N in (64, 128, 256):
        hN = ode_integrate(model, V_fun, None, h0, N)[-1][0]
        assert hN == pytest.approx(h0[0] * (1 + v / N) ** N, rel=1e-12)
        errs.append(abs(hN - exact))
    assert 1.7 < errs[0] / errs[1] < 2.3
    assert 1.7 < errs[1] / errs[2] < 2.3


def test_ode_validation_and_overflow():
    model = ModelSpec(arch="res2", d=2, L=4)
    Vp = SmoothWeightPath.sample_gp(2, GPSpec(), seed=51, cells=8)
    with pytest.raises(ValueError, match="needs a Theta path"):
        ode_integrate(model, Vp, None, np.ones(2), 4)
    with pytest.raises(ValueError, match="N must be >= 1"):
        ode_integrate(ModelSpec(arch="res1", d=2, L=4), Vp, None, np.ones(2), 0)

    def huge(ts):
        return np.full((len(ts), 1, 1), 1e300)

    tiny = ModelSpec(arch="res1", d=1, L=4, s_act=1.0)
    with pytest.raises(FloatingPointError, match="non-finite state at step"):
        ode_integrate(tiny, huge, None, np.ones(1), 8)


def test_ode_error_vs_depth_small():
    model = ModelSpec(arch="res1", d=3, L=8, s_act=1.0)
    fit = ode_error_vs_depth(model, GPSpec(), [8, 16, 32, 64], N_ref=4096,
                             trials=2, seed=6, cells=128)
    assert np.all(fit.errors > 0)
    assert -1.3 < fit.slope < -0.7  # first-order scheme on a Lipschitz path


def test_ode_error_requires_fine_reference():
    model = ModelSpec(arch="res1", d=3, L=8)
    with pytest.raises(ValueError, match="64x"):
        ode_error_vs_depth(model, GPSpec(), [8, 16, 32, 64], N_ref=1024,
                           trials=1, seed=0)


def test_smooth_probe_identity_regime_decays():
    model = ModelSpec(arch="res2", d=4, L=8, s_act=1.0)
    res = smooth_regime_probe(model, GPSpec(), beta=2.0,
                              depths=[16, 64, 256], seed=8, trials=2, cells=64)
    assert res.per_trial.shape == (2, 3)
    assert res.ratios[0] > res.ratios[-1]  # beta = 2 contracts with depth


def test_smooth_probe_explosion_mode():
    # positive diagonal drift in a linear res-1: max excursion blows up
    model = ModelSpec(arch="res3", d=4, L=8)  # arch is overridden inside
    res = smooth_regime_probe(model, GPSpec(), beta=0.5,
                              depths=[16, 256], seed=9, trials=2,
                              explosion_mu=1.0, cells=64)
    assert res.ratios[-1] > 5.0 * res.ratios[0]


def test_em_step_is_res1_recurrence_on_tape():
    # the float-slope fast path literally reuses the residual forward kernel;
    # cross-check one trajectory against forward_state on the same weights
    d, L = 3, 12
    g = BrownianGrid.sample(d, L, 1, seed=13)
    h0 = Stream(14).gaussian(d)
    em = euler_maruyama_res1(d, L, 1.0, g.increments, h0)
    model = ModelSpec(arch="res1", d=d, L=L, s_act=1.0)
    tape = build_weight_tape(model, GPSpec(), 0)  # placeholder, overwritten
    tape._V = np.ascontiguousarray((2.0 / d) ** 0.5 * g.increments.transpose(0, 2, 1))
    traj = forward_state(model, tape, h0, ScalingRule(alpha=1.0))
    assert np.array_equal(em, traj.states)
