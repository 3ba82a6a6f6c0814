"""Residual recurrence: reference-loop oracle, moment laws, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthlab.resnet_core import (
    ModelSpec,
    Projections,
    ScalingRule,
    default_iid_scheme,
    embed_input,
    forward,
    forward_state,
    g_apply,
    norm_ratio_final,
    norm_ratio_output,
    realize_trial,
    readout,
    sample_projections,
)
from depthlab.rng import Stream, derive_seed
from depthlab.stochastic_init import (
    DistributionSpec,
    FBMSpec,
    GPSpec,
    build_weight_tape,
)


def _reference_forward(model, tape, h0, alpha):
    # transparent python re-implementation of the layer recurrence; the
    # kernels must agree with this on every finite trajectory
    s = model.kernel_s_act
    h = h0.astype(np.float64).copy()
    out = [h.copy()]
    for k in range(model.L):
        z = tape.W[k] @ h if model.uses_w else h
        g = np.where(z > 0.0, z, s * z)
        h = h + alpha * (tape.V[k] @ g)
        out.append(h.copy())
    return np.stack(out)


CASES = [
    ("res1", 1.0, DistributionSpec("UniformScaled", 7)),
    ("res1", 2.0**-0.5, DistributionSpec("GaussianScaled", 7)),
    ("res2", 0.8, DistributionSpec("GaussianScaled", 7)),
    ("res2", 1.0, DistributionSpec("Rademacher", 7)),
    ("res3", 1.0, DistributionSpec("UniformScaled", 7)),
    ("res2", 2.0**-0.5, GPSpec(lengthscale=0.2, variance=0.04)),
    ("res3", 1.0, FBMSpec(hurst=0.7)),
]


@pytest.mark.parametrize("arch,s_act,scheme", CASES)
def test_forward_matches_reference_loop(arch, s_act, scheme):
    model = ModelSpec(arch=arch, d=7, L=5, s_act=s_act)
    rule = ScalingRule(alpha=0.3)
    tape = build_weight_tape(model, scheme, seed=derive_seed(88, (arch == "res1",)))
    h0 = Stream(derive_seed(88, (5,))).gaussian(7)
    traj = forward_state(model, tape, h0, rule)
    ref = _reference_forward(model, tape, h0, 0.3)
    assert traj.overflow_layer is None
    assert np.allclose(traj.states, ref, rtol=1e-12, atol=1e-14)
    assert np.allclose(traj.norms_sq, np.sum(ref**2, axis=1), rtol=1e-12)
    assert np.allclose(traj.diffs_sq, np.sum((ref - ref[0]) ** 2, axis=1), rtol=1e-12, atol=1e-20)


def test_g_apply_hand_values():
    h = np.array([1.0, -2.0])
    W = np.eye(2)
    res2 = ModelSpec(arch="res2", d=2, L=1, s_act=2.0**-0.5)
    assert np.allclose(g_apply(res2, h, W), [1.0, -2.0 * 2.0**-0.5])
    res3 = ModelSpec(arch="res3", d=2, L=1)
    assert np.array_equal(g_apply(res3, h, W), [1.0, 0.0])
    res1 = ModelSpec(arch="res1", d=2, L=1, s_act=1.0)
    assert np.array_equal(g_apply(res1, h), h)  # identity slope: passthrough


def test_g_apply_shape_errors():
    res2 = ModelSpec(arch="res2", d=3, L=1)
    with pytest.raises(ValueError, match="needs a W"):
        g_apply(res2, np.ones(3))
    with pytest.raises(ValueError, match="shape mismatch"):
        g_apply(res2, np.ones(3), np.ones((2, 2)))
    with pytest.raises(ValueError, match="shape mismatch"):
        g_apply(ModelSpec(arch="res1", d=3, L=1), np.ones(4))


def test_model_spec_validation():
    with pytest.raises(ValueError, match="arch"):
        ModelSpec(arch="res9")
    with pytest.raises(ValueError, match="d must be >= 1"):
        ModelSpec(d=0)
    with pytest.raises(ValueError, match="s_act"):
        ModelSpec(arch="res1", s_act=0.5)  # below 1/sqrt(2)
    with pytest.raises(ValueError, match="s_act"):
        ModelSpec(arch="res1", s_act=1.1)


def test_kernel_codes():
    assert ModelSpec(arch="res1").kernel_arch_mat == 0
    assert ModelSpec(arch="res2").kernel_arch_mat == 1
    # res3 pins the kernel slope to hard ReLU regardless of s_act
    assert ModelSpec(arch="res3", s_act=1.0).kernel_s_act == 0.0
    assert ModelSpec(arch="res2", s_act=0.9).kernel_s_act == 0.9
    assert not ModelSpec(arch="res1").uses_w


def test_scaling_rule():
    assert ScalingRule(beta=0.5).alpha_for(400) == pytest.approx(0.05)
    assert ScalingRule(beta=1.0).alpha_for(10) == pytest.approx(0.1)
    assert ScalingRule(alpha=0.25).alpha_for(99999) == 0.25
    with pytest.raises(ValueError, match="exactly one"):
        ScalingRule()
    with pytest.raises(ValueError, match="exactly one"):
        ScalingRule(beta=0.5, alpha=0.1)
    with pytest.raises(ValueError, match="beta"):
        ScalingRule(beta=0.0)
    with pytest.raises(ValueError, match="alpha"):
        ScalingRule(alpha=-0.1)


def test_state_mean_is_preserved():
    # zero-mean weights make the state a martingale: E h_L = h_0
    model = ModelSpec(arch="res1", d=4, L=5, s_act=1.0)
    scheme = default_iid_scheme(model, "GaussianScaled")
    rule = ScalingRule(alpha=0.4)
    h0 = np.array([1.0, -0.5, 2.0, 0.25])
    n = 3000
    finals = np.empty((n, 4))
    for t in range(n):
        tape = build_weight_tape(model, scheme, derive_seed(4040, (t,)))
        finals[t] = forward_state(model, tape, h0, rule).final_state
    se = finals.std(axis=0, ddof=1) / n**0.5
    assert np.all(np.abs(finals.mean(axis=0) - h0) < 4 * se)


@pytest.mark.parametrize(
    "arch,s_act,c",
    [("res1", 1.0, 1.0), ("res2", 2.0**-0.5, 0.75), ("res3", 1.0, 0.5)],
)
def test_second_moment_growth_law(arch, s_act, c):
    # E ||h_L||^2 / ||h_0||^2 = (1 + c alpha^2)^L with c set by the branch:
    # identity slope 1, leaky 1/sqrt(2) slope 3/4, hard ReLU 1/2
    d, L, alpha, n = 32, 25, 0.2, 1200
    model = ModelSpec(arch=arch, d=d, L=L, s_act=s_act)
    scheme = default_iid_scheme(model, "UniformScaled")
    rule = ScalingRule(alpha=alpha)
    want = (1.0 + c * alpha * alpha) ** L
    ratios = np.empty(n)
    for t in range(n):
        tape = build_weight_tape(model, scheme, derive_seed(606 + ord(arch[-1]), (t,)))
        h0 = Stream(derive_seed(607, (t,))).gaussian(d)
        traj = forward_state(model, tape, h0, rule)
        ratios[t] = traj.norms_sq[-1] / traj.norms_sq[0]
    se = ratios.std(ddof=1) / n**0.5
    assert abs(ratios.mean() - want) < 4 * se


def test_doubling_input_doubles_trajectory_bitwise():
    # the recurrence is positively homogeneous and x2 is exact in binary fp
    model = ModelSpec(arch="res3", d=8, L=20)
    scheme = default_iid_scheme(model)
    tape = build_weight_tape(model, scheme, seed=123)
    h0 = Stream(9).gaussian(8)
    rule = ScalingRule(beta=0.5)
    t1 = forward_state(model, tape, h0, rule)
    t2 = forward_state(model, tape, 2.0 * h0, rule)
    assert np.array_equal(t2.states, 2.0 * t1.states)
    assert np.array_equal(t2.norms_sq, 4.0 * t1.norms_sq)


def test_forward_embeds_then_runs():
    model = ModelSpec(arch="res2", d=6, L=4, s_act=1.0, n_in=5, n_out=2)
    tape = build_weight_tape(model, default_iid_scheme(model), 77)
    proj = sample_projections(model, 101, 102)
    x = Stream(103).gaussian(5)
    traj = forward(model, tape, proj, x, ScalingRule(beta=1.0))
    assert np.array_equal(traj.states[0], proj.A @ x)
    assert traj.L == 4
    assert readout(proj, traj.final_state).shape == (2,)


def test_tape_model_mismatch_errors():
    model = ModelSpec(arch="res2", d=6, L=4)
    bad_L = build_weight_tape(ModelSpec(arch="res2", d=6, L=5), default_iid_scheme(model), 0)
    with pytest.raises(ValueError, match="dimensions"):
        forward_state(model, bad_L, np.ones(6), ScalingRule(alpha=0.1))
    no_w = build_weight_tape(ModelSpec(arch="res1", d=6, L=4), default_iid_scheme(model), 0)
    with pytest.raises(ValueError, match="W-availability"):
        forward_state(model, no_w, np.ones(6), ScalingRule(alpha=0.1))


def test_norm_ratios_recompute_from_states():
    model = ModelSpec(arch="res3", d=10, L=30)
    tape = build_weight_tape(model, default_iid_scheme(model), 5)
    h0 = Stream(6).gaussian(10)
    traj = forward_state(model, tape, h0, ScalingRule(beta=0.5))
    out = np.linalg.norm(traj.final_state - h0) / np.linalg.norm(h0)
    fin = np.linalg.norm(traj.final_state) / np.linalg.norm(h0)
    assert norm_ratio_output(traj) == pytest.approx(out, rel=1e-12)
    assert norm_ratio_final(traj) == pytest.approx(fin, rel=1e-12)
    assert traj.diffs_sq[0] == 0.0


def test_norm_ratio_rejects_zero_start():
    model = ModelSpec(arch="res3", d=4, L=2)
    tape = build_weight_tape(model, default_iid_scheme(model), 1)
    traj = forward_state(model, tape, np.zeros(4), ScalingRule(alpha=0.1))
    with pytest.raises(ValueError, match="zero initial state"):
        norm_ratio_output(traj)


def test_overflow_reports_inf_not_nan():
    model = ModelSpec(arch="res2", d=6, L=12, s_act=1.0)
    tape = build_weight_tape(model, default_iid_scheme(model, "GaussianScaled"), 2)
    h0 = np.full(6, 1e150)  # finite ||h0||^2; blow-up happens mid-run
    traj = forward_state(model, tape, h0, ScalingRule(alpha=1e4))
    assert traj.overflowed
    k = traj.overflow_layer
    assert 0 < k <= 12
    assert np.all(np.isinf(traj.norms_sq[k:]))
    assert np.all(np.isinf(traj.diffs_sq[k:]))
    r1, r2 = norm_ratio_output(traj), norm_ratio_final(traj)
    assert np.isinf(r1) and np.isinf(r2)
    assert not np.isnan(r1) and not np.isnan(r2)
    # frozen tail: every row from the overflow layer on is the same
    tail = traj.states[k:]
    same = np.equal(tail, tail[0]) | (np.isnan(tail) & np.isnan(tail[0]))
    assert np.all(same)


def test_projection_calibration():
    model = ModelSpec(d=50, n_in=80, n_out=3)
    proj = sample_projections(model, 11, 12)
    assert proj.A.shape == (50, 80)
    assert proj.B.shape == (3, 50)
    assert np.var(proj.A) == pytest.approx(1.0 / 80, rel=0.1)
    assert np.var(proj.B) == pytest.approx(1.0 / 50, rel=0.2)


def test_projection_shape_validation():
    with pytest.raises(ValueError, match=r"A must be \(d, n_in\)"):
        Projections(A=np.ones((3, 2)), B=np.ones((1, 4)))
    proj = Projections(A=np.ones((3, 2)), B=np.ones((1, 3)))
    with pytest.raises(ValueError, match="input dimension"):
        embed_input(proj, np.ones(3))
    with pytest.raises(ValueError, match="state dimension"):
        readout(proj, np.ones(4))


def test_realize_trial_streams():
    model = ModelSpec(arch="res3", d=8, L=6, n_in=5, n_out=2)
    scheme = default_iid_scheme(model)
    a = realize_trial(model, scheme, master_seed=900, trial_index=3)
    b = realize_trial(model, scheme, master_seed=900, trial_index=3)
    c = realize_trial(model, scheme, master_seed=900, trial_index=4)
    assert a.trial_seed == derive_seed(900, (3,))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.tape.V, b.tape.V)
    assert np.array_equal(a.proj.A, b.proj.A)
    assert not np.array_equal(a.x, c.x)
    assert not np.array_equal(a.tape.V, c.tape.V)
    assert a.x.shape == (5,) and a.y_target.shape == (2,)
    # weights, projections and data come from disjoint child streams
    assert not np.array_equal(a.proj.A.ravel()[:5], a.x)


def test_default_iid_scheme_matches_model():
    model = ModelSpec(d=23)
    scheme = default_iid_scheme(model, "Rademacher")
    assert scheme.d == 23 and scheme.kind == "Rademacher"


@settings(max_examples=30, deadline=None)
@given(
    arch=st.sampled_from(["res1", "res2", "res3"]),
    d=st.integers(min_value=1, max_value=9),
    L=st.integers(min_value=1, max_value=12),
    beta=st.floats(min_value=0.3, max_value=1.5),
    seed=st.integers(min_value=0, max_value=2**32),
)
def test_small_configs_stay_finite(arch, d, L, beta, seed):
    model = ModelSpec(arch=arch, d=d, L=L)
    tape = build_weight_tape(model, DistributionSpec("UniformScaled", d), seed)
    h0 = Stream(derive_seed(seed, (99,))).gaussian(d)
    traj = forward_state(model, tape, h0, ScalingRule(beta=beta))
    assert traj.states.shape == (L + 1, d)
    assert np.all(np.isfinite(traj.states))
    assert traj.overflow_layer is None
    assert np.all(traj.norms_sq >= 0.0)
    assert np.array_equal(traj.states[0], h0)
