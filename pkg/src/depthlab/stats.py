"""Monte-Carlo estimation, bound checks, distribution tests, and sweeps.

Everything here reduces to one pattern: realize independent trials from a
master seed, collect a stability ratio per trial, and compare statistics
of the collection against the analytic predictions.  Slack policy is 3
standard errors everywhere — the analytic bounds themselves are never
loosened, the slack only absorbs the Monte-Carlo layer.

Overflowed trials (forward pass left double range) enter order statistics
as +inf and are excluded — with their count reported — from moment
estimators.

Trials can fan out to a fork-based worker pool; results are merged in
trial order, so any worker count emits byte-identical statistics.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .resnet_core import (
    ModelSpec,
    ScalingRule,
    forward,
    norm_ratio_final,
    norm_ratio_output,
    realize_trial,
)
from .rng import Stream, derive_seed
from .sensitivity import gradient_ratio, loss_terminal_gradient, _kernel_backward
from .stochastic_init import (
    DistributionSpec,
    FBMSpec,
    GPSpec,
    InitScheme,
    fgn_autocovariance,
    sample_fgn,
    sample_iid_matrix,
)

Q_OUTPUT = "output_ratio"  # ||h_L - h_0|| / ||h_0||
Q_NORM = "output_norm_ratio"  # ||h_L|| / ||h_0||
Q_GRAD = "gradient_ratio"  # ||p_0 - p_L|| / ||p_L||

QUANTITIES = (Q_OUTPUT, Q_NORM, Q_GRAD)


def scheme_tag(scheme: InitScheme) -> str:
    if isinstance(scheme, DistributionSpec):
        return {"UniformScaled": "iid-uniform", "GaussianScaled": "iid-gauss",
                "Rademacher": "iid-rademacher"}[scheme.kind]
    if isinstance(scheme, GPSpec):
        return f"gp(l={scheme.lengthscale:g},v={scheme.variance:g})"
    return f"fbm(H={scheme.hurst:g})"


@dataclass(frozen=True)
class TrialConfig:
    """Everything one Monte-Carlo trial needs, minus the seed."""

    model: ModelSpec
    scheme: InitScheme
    rule: ScalingRule
    quantity: str = Q_OUTPUT

    def __post_init__(self):
        if self.quantity not in QUANTITIES:
            raise ValueError(f"unknown quantity {self.quantity!r}")

    def fingerprint(self) -> str:
        m, r = self.model, self.rule
        rtag = f"beta={r.beta:g}" if r.beta is not None else f"alpha={r.alpha:g}"
        return (f"{m.arch}-d{m.d}-L{m.L}-s{m.s_act:g}-{scheme_tag(self.scheme)}"
                f"-{rtag}-{self.quantity}")


@dataclass
class RatioSample:
    """One value per trial; overflowed trials carry +inf."""

    values: np.ndarray
    quantity: str
    fingerprint: str
    trials: int
    overflow_count: int

    def finite_values(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]

    def median(self) -> float:
        return float(np.median(self.values))


@dataclass
class BoundReport:
    identifier: str
    lower: float
    upper: float
    statistic: float
    se: float
    passed: bool
    kind: str = "expectation"  # or "coverage"
    applicable: bool = True
    note: str = ""


@dataclass
class RegimeLabel:
    label: str  # Identity | Critical | Explosion
    median_log10: float
    thresholds: tuple


@dataclass
class HeatmapGrid:
    hursts: np.ndarray
    betas: np.ndarray
    median_log10_output: np.ndarray  # (n_H, n_beta)
    median_log10_gradient: np.ndarray
    overflow_counts: np.ndarray  # (n_H, n_beta) int


# ---------------------------------------------------------------------------
# trial execution and the worker pool


def _trial_values(model: ModelSpec, scheme: InitScheme, rule: ScalingRule,
                  master_seed: int, t: int, want_gradient: bool):
    """(output_ratio, norm_ratio, gradient_ratio, overflowed) for trial t."""
    trial = realize_trial(model, scheme, master_seed, t)
    traj = forward(model, trial.tape, trial.proj, trial.x, rule)
    out = norm_ratio_output(traj)
    nrm = norm_ratio_final(traj)
    grad = math.nan
    if want_gradient:
        if traj.overflowed:
            grad = math.inf
        else:
            p_L = loss_terminal_gradient(trial.proj, traj.final_state, trial.y_target)
            nL = float(p_L @ p_L)
            if nL <= 0.0:
                raise ValueError("zero terminal gradient")
            p_0, _ = _kernel_backward(model, trial.tape, traj, p_L,
                                      rule.alpha_for(model.L))
            with np.errstate(over="ignore", invalid="ignore"):
                g = float(np.linalg.norm(p_0 - p_L) / math.sqrt(nL))
            grad = g if np.all(np.isfinite(p_0)) else math.inf
    return out, nrm, grad, traj.overflowed


_POOL_PAYLOAD = None


def _pool_init(payload):
    global _POOL_PAYLOAD
    _POOL_PAYLOAD = payload


def _pool_chunk(idx_chunk):
    model, scheme, rule, master_seed, want_gradient = _POOL_PAYLOAD
    return [_trial_values(model, scheme, rule, master_seed, t, want_gradient)
            for t in idx_chunk]


def _run_trials(model, scheme, rule, master_seed, trials, want_gradient,
                workers=1):
    """All trials in index order, fanning out to forked workers if asked."""
    if workers <= 1 or trials < 2:
        return [_trial_values(model, scheme, rule, master_seed, t, want_gradient)
                for t in range(trials)]
    payload = (model, scheme, rule, master_seed, want_gradient)
    idx = list(range(trials))
    step = max(1, math.ceil(trials / (4 * workers)))
    chunks = [idx[i : i + step] for i in range(0, trials, step)]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=workers, initializer=_pool_init,
                  initargs=(payload,)) as pool:
        parts = pool.map(_pool_chunk, chunks)
    return [row for part in parts for row in part]


def collect_ratio_samples(config: TrialConfig, trials: int, master_seed: int,
                          quantities: Sequence[str], workers: int = 1):
    """One forward pass per trial serving several quantities at once."""
    for q in quantities:
        if q not in QUANTITIES:
            raise ValueError(f"unknown quantity {q!r}")
    want_grad = Q_GRAD in quantities
    rows = _run_trials(config.model, config.scheme, config.rule, master_seed,
                       trials, want_grad, workers)
    cols = {Q_OUTPUT: 0, Q_NORM: 1, Q_GRAD: 2}
    n_over = sum(1 for r in rows if r[3])
    out = {}
    for q in quantities:
        vals = np.array([r[cols[q]] for r in rows], dtype=np.float64)
        out[q] = RatioSample(
            values=vals, quantity=q,
            fingerprint=replace(config, quantity=q).fingerprint(),
            trials=trials,
            overflow_count=int(n_over if q != Q_GRAD else np.sum(np.isinf(vals))),
        )
    return out


def monte_carlo_ratios(config: TrialConfig, trials: int, master_seed: int,
                       workers: int = 1) -> RatioSample:
    """Independent trials of the configured ratio from derived seeds."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    return collect_ratio_samples(config, trials, master_seed,
                                 (config.quantity,), workers)[config.quantity]


# ---------------------------------------------------------------------------
# bound checks


def _mean_se(values: np.ndarray):
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def expectation_bracket(L: int, alpha: float):
    """[(1 + a^2/2)^L - 1, (1 + a^2)^L - 1], the second-moment envelope."""
    a2 = alpha * alpha
    return (1.0 + 0.5 * a2) ** L - 1.0, (1.0 + a2) ** L - 1.0


def check_expectation_bracket(config: TrialConfig, trials: int,
                              master_seed: int = 0, workers: int = 1) -> BoundReport:
    """Mean squared output ratio against its analytic two-sided envelope."""
    sample = monte_carlo_ratios(replace(config, quantity=Q_OUTPUT), trials,
                                master_seed, workers)
    alpha = config.rule.alpha_for(config.model.L)
    lo, hi = expectation_bracket(config.model.L, alpha)
    finite = sample.finite_values()
    if len(finite) == 0:
        return BoundReport("expectation-bracket", lo, hi, math.nan, math.nan,
                           False, note="all trials overflowed")
    mean, se = _mean_se(finite**2)
    passed = (lo - 3 * se <= mean <= hi + 3 * se)
    note = f"overflows={sample.overflow_count}" if sample.overflow_count else ""
    return BoundReport("expectation-bracket", lo, hi, mean, se, passed, note=note)


def check_gradient_bracket(config: TrialConfig, trials: int,
                           master_seed: int = 0, workers: int = 1) -> BoundReport:
    """Mean squared gradient ratio against the same-form envelope."""
    sample = monte_carlo_ratios(replace(config, quantity=Q_GRAD), trials,
                                master_seed, workers)
    alpha = config.rule.alpha_for(config.model.L)
    lo, hi = expectation_bracket(config.model.L, alpha)
    finite = sample.finite_values()
    if len(finite) == 0:
        return BoundReport("gradient-bracket", lo, hi, math.nan, math.nan,
                           False, note="all trials overflowed")
    mean, se = _mean_se(finite**2)
    passed = (lo - 3 * se <= mean <= hi + 3 * se)
    note = f"overflows={sample.overflow_count}" if sample.overflow_count else ""
    return BoundReport("gradient-bracket", lo, hi, mean, se, passed, note=note)


def critical_coverage_bounds(d: int, delta: float):
    """Two-sided squared-ratio window at the critical scaling L*alpha^2 = 1."""
    lo = math.exp(3.0 / 8.0 - math.sqrt(22.0 / (d * delta))) - 1.0
    hi = math.exp(1.0 + math.sqrt(10.0 / (d * delta))) + 1.0
    return lo, hi


def check_highprob_bounds(config: TrialConfig, trials: int, delta: float,
                          master_seed: int = 0, workers: int = 1) -> BoundReport:
    """Coverage of the high-probability windows on the squared output ratio.

    At the critical scaling (L alpha^2 = 1, d >= 64) the two-sided window
    applies; in the contractive range (L alpha^2 <= 1) the one-sided
    identity-regime bound ratio^2 <= 2 L alpha^2 / delta applies.  Outside
    both, or at vacuous delta, the report is marked not applicable.
    """
    L = config.model.L
    alpha = config.rule.alpha_for(L)
    la2 = L * alpha * alpha
    if delta >= 1.0:
        return BoundReport("highprob-coverage", 0.0, math.inf, math.nan,
                           math.nan, True, kind="coverage", applicable=False,
                           note="vacuous at delta >= 1; skipped")
    critical = abs(la2 - 1.0) <= 1e-9 and config.model.d >= 64
    if not critical and la2 > 1.0 + 1e-12:
        return BoundReport("highprob-coverage", math.nan, math.nan, math.nan,
                           math.nan, False, kind="coverage", applicable=False,
                           note=f"side conditions unmet (L*alpha^2={la2:g})")
    sample = monte_carlo_ratios(replace(config, quantity=Q_OUTPUT), trials,
                                master_seed, workers)
    sq = sample.values**2
    if critical:
        lo, hi = critical_coverage_bounds(config.model.d, delta)
        hit = np.mean((sq > lo) & (sq < hi))
        ident = "highprob-critical-window"
    else:
        hi = 2.0 * la2 / delta
        lo = 0.0
        hit = np.mean(sq <= hi)
        ident = "highprob-identity-window"
    nominal = 1.0 - delta
    se = math.sqrt(nominal * delta / trials)
    passed = bool(hit >= nominal - 3 * se)
    return BoundReport(ident, lo, hi, float(hit), se, passed, kind="coverage",
                       note=f"nominal={nominal:g}")


# ---------------------------------------------------------------------------
# distribution testing (moment-based normality omnibus, from scratch)


def _skewness_z(x: np.ndarray) -> float:
    # D'Agostino's transformed skewness statistic
    n = len(x)
    m = x - x.mean()
    m2 = np.mean(m**2)
    b1 = np.mean(m**3) / m2**1.5
    y = b1 * math.sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)))
    beta2 = (3.0 * (n**2 + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
             / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0)))
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1.0))
    y = y / alpha
    return delta * math.log(y + math.sqrt(y * y + 1.0))


def _kurtosis_z(x: np.ndarray) -> float:
    # Anscombe-Glynn transformed kurtosis statistic
    n = len(x)
    m = x - x.mean()
    m2 = np.mean(m**2)
    b2 = np.mean(m**4) / m2**2
    e = 3.0 * (n - 1.0) / (n + 1.0)
    var = (24.0 * n * (n - 2.0) * (n - 3.0)
           / ((n + 1.0) ** 2 * (n + 3.0) * (n + 5.0)))
    xs = (b2 - e) / math.sqrt(var)
    sb1 = (6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
           * math.sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))))
    a = 6.0 + 8.0 / sb1 * (2.0 / sb1 + math.sqrt(1.0 + 4.0 / sb1**2))
    num = 1.0 - 2.0 / (9.0 * a)
    den = ((1.0 - 2.0 / a) / (1.0 + xs * math.sqrt(2.0 / (a - 4.0)))) ** (1.0 / 3.0)
    return (num - den) / math.sqrt(2.0 / (9.0 * a))


def normality_omnibus(x: np.ndarray):
    """Skewness-kurtosis K^2 statistic and its chi-square(2) p-value."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 20:
        raise ValueError("need at least 20 observations")
    k2 = _skewness_z(x) ** 2 + _kurtosis_z(x) ** 2
    return float(k2), float(math.exp(-k2 / 2.0))


def lognormality_test(sample: RatioSample):
    """Normality omnibus applied to log values; (statistic, p-value)."""
    vals = sample.finite_values()
    if len(vals) < 100:
        raise ValueError("need at least 100 finite values")
    if np.any(vals <= 0.0):
        raise ValueError("nonpositive values cannot be log-normal")
    return normality_omnibus(np.log(vals))


# ---------------------------------------------------------------------------
# regimes and the (Hurst, beta) sweep


def classify_regime(sample: RatioSample, lower: float = -1.0,
                    upper: float = 1.0) -> RegimeLabel:
    """Label by the median order of magnitude of the ratio."""
    if sample.trials < 30:
        raise ValueError("need at least 30 trials to classify")
    with np.errstate(divide="ignore"):
        med = float(np.median(np.log10(sample.values)))
    if med < lower:
        label = "Identity"
    elif med > upper:
        label = "Explosion"
    else:
        label = "Critical"
    return RegimeLabel(label=label, median_log10=med, thresholds=(lower, upper))


def _heatmap_cell_task(args):
    model, master_seed, hi, H, t, betas = args
    trial = realize_trial(model, FBMSpec(hurst=H), master_seed, t)
    out_row = np.empty(len(betas))
    grad_row = np.empty(len(betas))
    overflowed = np.zeros(len(betas), dtype=bool)
    for bi, beta in enumerate(betas):
        rule = ScalingRule(beta=float(beta))
        traj = forward(model, trial.tape, trial.proj, trial.x, rule)
        out_row[bi] = norm_ratio_output(traj)
        overflowed[bi] = traj.overflowed
        if traj.overflowed:
            grad_row[bi] = math.inf
            continue
        p_L = loss_terminal_gradient(trial.proj, traj.final_state, trial.y_target)
        p_0, _ = _kernel_backward(model, trial.tape, traj, p_L,
                                  rule.alpha_for(model.L))
        with np.errstate(over="ignore", invalid="ignore"):
            g = float(np.linalg.norm(p_0 - p_L) / np.linalg.norm(p_L))
        grad_row[bi] = g if np.all(np.isfinite(p_0)) else math.inf
    return hi, t, out_row, grad_row, overflowed


def heatmap_sweep(H_grid: Sequence[float], beta_grid: Sequence[float],
                  base_config: TrialConfig, trials: int, seed: int,
                  workers: int = 1) -> HeatmapGrid:
    """Median log10 of output and gradient ratios over an (H, beta) grid.

    One fractional tape per (H, trial) is shared across the whole beta
    row (the tape law does not depend on beta), and the same trial index
    reuses the same underlying Gaussian drivers across H values — common
    random numbers, so transitions in H and beta are smooth in the seed.
    """
    hursts = np.asarray(sorted(H_grid), dtype=np.float64)
    betas = np.asarray(sorted(beta_grid), dtype=np.float64)
    if len(hursts) == 0 or len(betas) == 0 or trials < 1:
        raise ValueError("grids must be nonempty and trials >= 1")
    model = base_config.model
    # warm the factor caches in the parent so forked workers inherit them
    from .stochastic_init import _fgn_factor

    for H in hursts:
        _fgn_factor(model.L, float(H))
    tasks = [(model, seed, hi, float(H), t, betas)
             for hi, H in enumerate(hursts) for t in range(trials)]
    if workers <= 1 or len(tasks) < 2:
        results = [_heatmap_cell_task(a) for a in tasks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            results = pool.map(_heatmap_cell_task, tasks, chunksize=1)
    out_vals = np.empty((len(hursts), trials, len(betas)))
    grad_vals = np.empty((len(hursts), trials, len(betas)))
    over = np.zeros((len(hursts), len(betas)), dtype=np.int64)
    for hi, t, out_row, grad_row, ovf in results:
        out_vals[hi, t] = out_row
        grad_vals[hi, t] = grad_row
        over[hi] += ovf
    with np.errstate(divide="ignore"):
        med_out = np.median(np.log10(out_vals), axis=1)
        med_grad = np.median(np.log10(grad_vals), axis=1)
    return HeatmapGrid(hursts=hursts, betas=betas, median_log10_output=med_out,
                       median_log10_gradient=med_grad, overflow_counts=over)


def beta_crossing(grid: HeatmapGrid, hurst: float,
                  which: str = "output") -> float:
    """Interpolated beta where the median log10 ratio crosses zero.

    Scans the row at ``hurst`` for the first sign change along increasing
    beta and linearly interpolates; NaN when the row never crosses.
    """
    hi = int(np.argmin(np.abs(grid.hursts - hurst)))
    if abs(grid.hursts[hi] - hurst) > 1e-9:
        raise ValueError(f"hurst {hurst} not in grid")
    row = (grid.median_log10_output if which == "output"
           else grid.median_log10_gradient)[hi]
    betas = grid.betas
    for i in range(len(betas) - 1):
        a, b = row[i], row[i + 1]
        if a == 0.0:
            return float(betas[i])
        if a > 0.0 >= b or a < 0.0 <= b:
            if not (np.isfinite(a) and np.isfinite(b)):
                return float(betas[i + 1] if np.isfinite(b) else betas[i])
            return float(betas[i] + (betas[i + 1] - betas[i]) * a / (a - b))
    return math.nan


# ---------------------------------------------------------------------------
# assumption suite


def _coverage_report(identifier: str, bound: float, hits: int, trials: int,
                     note: str = "") -> BoundReport:
    frac = hits / trials
    se = math.sqrt(max(bound * (1.0 - bound), 1.0 / trials) / trials)
    passed = bool(frac <= bound + 3 * se)
    return BoundReport(identifier, 0.0, bound, frac, se, passed,
                       kind="coverage", note=note)


def check_assumption_suite(arch: str, dist: DistributionSpec, trials: int,
                           seed: int = 0, s_act: float = 2.0**-0.5):
    """Monte-Carlo reports for the residual-branch moment assumptions.

    (a) energy envelope E||g(h)||^2/||h||^2 in [1/2, 1]; (b) the exact
    ReLU halving for res3; (c) E||Wx||^2 = ||x||^2 at entry variance 1/d;
    (d) sub-Gaussian tail of the normalized bilinear form <Vx, y>.
    """
    d = dist.d
    model = ModelSpec(arch=arch, d=d, L=1, s_act=s_act, n_in=d, n_out=1)
    reports = []

    env = np.empty(trials)
    halve = np.empty(trials)
    second = np.empty(trials)
    tail_stats = np.empty(trials)
    for t in range(trials):
        ts = derive_seed(seed, (t,))
        h = Stream(derive_seed(ts, (1,))).gaussian(d)
        W = sample_iid_matrix(dist, Stream(derive_seed(ts, (2,))))
        V = sample_iid_matrix(dist, Stream(derive_seed(ts, (3,))))
        hsq = float(h @ h)
        if model.uses_w:
            z = W @ h
            g = np.where(z > 0.0, z, model.kernel_s_act * z)
        else:
            g = np.where(h > 0.0, h, model.kernel_s_act * h)
        env[t] = float(g @ g) / hsq
        relu = np.maximum(W @ h, 0.0)
        halve[t] = float(relu @ relu) / hsq
        wx = W @ h
        second[t] = float(wx @ wx) / hsq
        y = Stream(derive_seed(ts, (4,))).gaussian(d)
        tail_stats[t] = float(h @ (V @ y)) / math.sqrt(hsq * float(y @ y))

    mean, se = _mean_se(env)
    reports.append(BoundReport("energy-envelope", 0.5, 1.0, mean, se,
                               0.5 - 3 * se <= mean <= 1.0 + 3 * se))
    mean, se = _mean_se(halve)
    reports.append(BoundReport("relu-halving", 0.5, 0.5, mean, se,
                               abs(mean - 0.5) <= 3 * se))
    mean, se = _mean_se(second)
    reports.append(BoundReport("matrix-second-moment", 1.0, 1.0, mean, se,
                               abs(mean - 1.0) <= 3 * se))
    s2 = dist.subgaussian_s2
    for tval in (0.1, 0.2, 0.5):
        bound = min(1.0, 2.0 * math.exp(-d * tval * tval / (4.0 * s2)))
        hits = int(np.sum(tail_stats >= tval))
        reports.append(_coverage_report(f"bilinear-tail-t{tval:g}", bound,
                                        hits, trials,
                                        note=f"s^2={s2:g}"))
    return reports


def check_fgn_autocov(H: float, L: int, sequences: int, seed: int = 0,
                      lags: Sequence[int] = (1,)) -> list:
    """Sample fGn autocovariance vs the closed form, 3-SE slack per lag."""
    spec = FBMSpec(hurst=H)
    data = np.stack([
        sample_fgn(L, spec, Stream(derive_seed(seed, (i,))))
        for i in range(sequences)
    ])
    reports = []
    for lag in lags:
        target = float(fgn_autocovariance(H, [lag])[0])
        prods = (data[:, : L - lag] * data[:, lag:]).mean(axis=1)
        mean, se = _mean_se(prods)
        reports.append(BoundReport(f"fgn-autocov-H{H:g}-lag{lag}", target,
                                   target, mean, se,
                                   abs(mean - target) <= 3 * se))
    return reports
