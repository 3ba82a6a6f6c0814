"""Experiment configuration, dispatch, and deterministic file emission.

Each experiment kind maps onto one module below and writes a single flat
CSV plus a JSON manifest.  The CSV body is a pure function of the config
and master seed: floats print with 17 significant digits, rows are
emitted in a fixed order, line endings are always ``\\n``, and the worker
count never changes a byte.  Non-finite numbers are never written; rows
whose value overflowed carry the ``overflow`` flag instead.
"""

from __future__ import annotations

import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .continuum import ode_error_vs_depth, strong_error_sde
from .resnet_core import ModelSpec, ScalingRule
from .rng import derive_seed
from .stochastic_init import DistributionSpec, FBMSpec, GPSpec, _fgn_factor
from .stats import (
    Q_GRAD,
    Q_NORM,
    Q_OUTPUT,
    TrialConfig,
    beta_crossing,
    check_assumption_suite,
    check_expectation_bracket,
    check_fgn_autocov,
    check_gradient_bracket,
    check_highprob_bounds,
    classify_regime,
    collect_ratio_samples,
    heatmap_sweep,
    scheme_tag,
)
from .rng import Stream
from ._kernels import backend as _backend

KINDS = ("norms", "gradients", "distribution", "heatmap", "sde-convergence",
         "ode-convergence", "regimes", "validate")

INIT_KINDS = ("iid-uniform", "iid-gauss", "iid-rademacher", "gp", "fbm")

_IID_MAP = {"iid-uniform": "UniformScaled", "iid-gauss": "GaussianScaled",
            "iid-rademacher": "Rademacher"}


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field."""


def default_depths() -> list:
    grid = np.unique(np.round(np.geomspace(10, 1000, 10)).astype(int))
    return [int(v) for v in grid]


def default_hursts() -> list:
    return [round(float(h), 6) for h in np.linspace(0.05, 0.97, 10)]


def default_heatmap_betas() -> list:
    return [round(float(b), 6) for b in np.linspace(0.2, 1.3, 12)]


@dataclass
class ExperimentConfig:
    """One experiment run; field defaults mirror the reference tables."""

    kind: str = "norms"
    arch: str = "res3"
    d: int = 40
    n_in: int = 64
    n_out: int = 1
    s_act: float = 1.0
    depths: list = field(default_factory=default_depths)
    beta: float = 0.5
    betas: Optional[list] = None
    hurst: float = 0.5
    hursts: Optional[list] = None
    init: str = "iid-uniform"
    gp_lengthscale: float = 0.1
    gp_variance: float = 1e-2
    fbm_normalization: str = "unit"
    trials: int = 50
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    delta: float = 0.1
    m_substeps: int = 32

    def scheme(self):
        if self.init in _IID_MAP:
            return DistributionSpec(_IID_MAP[self.init], self.d)
        if self.init == "gp":
            return GPSpec(lengthscale=self.gp_lengthscale,
                          variance=self.gp_variance)
        if self.init == "fbm":
            return FBMSpec(hurst=self.hurst,
                           normalization=self.fbm_normalization)
        raise ConfigError(f"init: unknown scheme {self.init!r}")

    def model(self, L: int) -> ModelSpec:
        return ModelSpec(arch=self.arch, d=self.d, L=L, s_act=self.s_act,
                         n_in=self.n_in, n_out=self.n_out)


# per-kind overrides matching the reference experiment protocols
_KIND_DEFAULTS = {
    "norms": {},
    "gradients": {},
    "distribution": {"d": 100, "depths": [1000], "trials": 10_000},
    "heatmap": {"init": "fbm", "depths": [1000], "trials": 30},
    "sde-convergence": {"d": 10, "depths": [8, 16, 32, 64, 128, 256, 512],
                        "trials": 200, "s_act": 2.0**-0.5, "arch": "res1"},
    "ode-convergence": {"init": "gp", "trials": 20,
                        "depths": [16, 32, 64, 128, 256, 512, 1024]},
    "regimes": {"betas": [0.25, 0.5, 1.0]},
    "validate": {"trials": 400},
}


def config_for(kind: str, **overrides) -> ExperimentConfig:
    """Kind defaults layered under explicit overrides."""
    if kind not in KINDS:
        raise ConfigError(f"kind: unknown experiment {kind!r}")
    merged = dict(_KIND_DEFAULTS[kind])
    merged.update(overrides)
    cfg = ExperimentConfig(kind=kind, **merged)
    if kind == "heatmap":
        if cfg.hursts is None:
            cfg.hursts = default_hursts()
        if cfg.betas is None:
            cfg.betas = default_heatmap_betas()
    if kind == "regimes" and cfg.betas is None:
        cfg.betas = [0.25, 0.5, 1.0]
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError(f"kind: unknown experiment {cfg.kind!r}")
    if cfg.init not in INIT_KINDS:
        raise ConfigError(f"init: must be one of {INIT_KINDS}")
    if cfg.trials < 1:
        raise ConfigError("trials: must be >= 1")
    if not cfg.depths or any(int(L) < 1 for L in cfg.depths):
        raise ConfigError("depths: need a nonempty list of depths >= 1")
    if cfg.d < 1:
        raise ConfigError("d: must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers: must be >= 1")
    if not (0.0 < cfg.delta <= 1.0):
        raise ConfigError("delta: must lie in (0, 1]")
    if cfg.kind == "heatmap" and (not cfg.hursts or not cfg.betas):
        raise ConfigError("hursts/betas: heatmap needs nonempty grids")
    if cfg.kind == "regimes" and not cfg.betas:
        raise ConfigError("betas: regimes needs a nonempty grid")
    if cfg.kind == "validate" and cfg.init not in _IID_MAP:
        raise ConfigError("init: validate requires an iid scheme")
    try:
        cfg.model(int(cfg.depths[0]))
        cfg.scheme()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e


# ---------------------------------------------------------------------------
# CSV plumbing

CSV_COLUMNS = ("fingerprint", "kind", "quantity", "arch", "d", "L", "beta",
               "hurst", "init", "trial", "statistic", "value", "se", "lower",
               "upper", "passed", "label", "note", "t", "trials", "overflow")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}" if math.isfinite(v) else ""
    return str(v)


def _row(**kw) -> dict:
    bad = set(kw) - set(CSV_COLUMNS)
    if bad:
        raise KeyError(f"unknown CSV columns {sorted(bad)}")
    return kw


def write_csv(path: Path, rows: list) -> str:
    """Write rows and return the body's sha256 (over exact bytes)."""
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c)) for c in CSV_COLUMNS))
    body = "\n".join(lines) + "\n"
    data = body.encode("ascii")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _value_cell(v: float) -> dict:
    """Value column plus overflow flag; never writes non-finite text."""
    if math.isfinite(v):
        return {"value": v, "overflow": 0}
    return {"value": None, "overflow": 1}


def _report_rows(cfg: ExperimentConfig, reports, L: int) -> list:
    rows = []
    for rep in reports:
        rows.append(_row(
            fingerprint=f"{cfg.kind}-{cfg.arch}-d{cfg.d}", kind=cfg.kind,
            arch=cfg.arch, d=cfg.d, L=L, init=cfg.init,
            statistic=rep.identifier, value=rep.statistic, se=rep.se,
            lower=rep.lower, upper=rep.upper,
            passed=bool(rep.passed and rep.applicable),
            label=rep.kind, note=rep.note, trials=cfg.trials,
        ))
    return rows


# ---------------------------------------------------------------------------
# experiment bodies


def _ratio_rows(cfg: ExperimentConfig, quantities) -> list:
    rows = []
    scheme = cfg.scheme()
    for L in cfg.depths:
        L = int(L)
        tc = TrialConfig(model=cfg.model(L), scheme=scheme,
                         rule=ScalingRule(beta=cfg.beta))
        samples = collect_ratio_samples(tc, cfg.trials,
                                        derive_seed(cfg.seed, (L,)),
                                        quantities, workers=cfg.workers)
        for q in quantities:
            s = samples[q]
            for t, v in enumerate(s.values):
                rows.append(_row(
                    fingerprint=s.fingerprint, kind=cfg.kind, quantity=q,
                    arch=cfg.arch, d=cfg.d, L=L, beta=cfg.beta, init=cfg.init,
                    trial=t, statistic="value", trials=cfg.trials,
                    **_value_cell(float(v)),
                ))
    return rows


def _run_norms(cfg: ExperimentConfig) -> list:
    return _ratio_rows(cfg, (Q_OUTPUT, Q_NORM))


def _run_gradients(cfg: ExperimentConfig) -> list:
    return _ratio_rows(cfg, (Q_GRAD,))


def _run_distribution(cfg: ExperimentConfig) -> list:
    return _ratio_rows(cfg, (Q_OUTPUT, Q_NORM))


def _run_regimes(cfg: ExperimentConfig) -> list:
    rows = []
    scheme = cfg.scheme()
    for L in cfg.depths:
        L = int(L)
        master = derive_seed(cfg.seed, (L,))
        for beta in cfg.betas:
            tc = TrialConfig(model=cfg.model(L), scheme=scheme,
                             rule=ScalingRule(beta=float(beta)))
            sample = collect_ratio_samples(tc, cfg.trials, master, (Q_OUTPUT,),
                                           workers=cfg.workers)[Q_OUTPUT]
            label = classify_regime(sample) if cfg.trials >= 30 else None
            med = (label.median_log10 if label is not None
                   else float(np.median(np.log10(sample.values))))
            rows.append(_row(
                fingerprint=sample.fingerprint, kind=cfg.kind,
                quantity=Q_OUTPUT, arch=cfg.arch, d=cfg.d, L=L,
                beta=float(beta), init=cfg.init,
                statistic="median_log10_output",
                label=label.label if label is not None else "",
                trials=cfg.trials, **_value_cell(med),
            ))
    return rows


def _fbm_path_rows(cfg: ExperimentConfig, L: int) -> list:
    """One example cumulative weight trajectory per Hurst value."""
    rows = []
    for H in cfg.hursts:
        F = _fgn_factor(L, float(H))
        z = Stream(derive_seed(cfg.seed, (9, 0))).gaussian(L)
        path = np.cumsum(F @ z)
        for k, v in enumerate(path):
            rows.append(_row(
                fingerprint=f"fbm-path-H{H:g}", kind=cfg.kind,
                quantity="weight_path", arch=cfg.arch, d=cfg.d, L=L,
                hurst=float(H), init="fbm", trial=0, statistic="path_value",
                t=(k + 1) / L, trials=1, **_value_cell(float(v)),
            ))
    return rows


def _run_heatmap(cfg: ExperimentConfig) -> list:
    L = int(cfg.depths[-1])
    base = TrialConfig(model=cfg.model(L), scheme=FBMSpec(hurst=cfg.hurst),
                       rule=ScalingRule(beta=cfg.beta))
    grid = heatmap_sweep(cfg.hursts, cfg.betas, base, cfg.trials, cfg.seed,
                         workers=cfg.workers)
    rows = []
    for hi, H in enumerate(grid.hursts):
        for bi, beta in enumerate(grid.betas):
            common = dict(kind=cfg.kind, arch=cfg.arch, d=cfg.d, L=L,
                          beta=float(beta), hurst=float(H), init="fbm",
                          trials=cfg.trials,
                          fingerprint=f"heatmap-H{H:g}-beta{beta:g}")
            n_over = int(grid.overflow_counts[hi, bi])
            for stat, val in (
                ("median_log10_output", grid.median_log10_output[hi, bi]),
                ("median_log10_gradient", grid.median_log10_gradient[hi, bi]),
            ):
                cell = _value_cell(float(val))
                if cell["overflow"]:
                    cell["overflow"] = n_over
                rows.append(_row(quantity=Q_OUTPUT if "output" in stat else Q_GRAD,
                                 statistic=stat, **common, **cell))
            rows.append(_row(quantity="", statistic="overflow_count",
                             value=float(n_over), overflow=0, **common))
    for hi, H in enumerate(grid.hursts):
        cross = beta_crossing(grid, float(H))
        if math.isfinite(cross):
            rows.append(_row(fingerprint=f"heatmap-H{H:g}", kind=cfg.kind,
                             quantity=Q_OUTPUT, arch=cfg.arch, d=cfg.d, L=L,
                             hurst=float(H), init="fbm",
                             statistic="beta_crossing", value=cross,
                             trials=cfg.trials, overflow=0))
    rows.extend(_fbm_path_rows(cfg, L))
    return rows


def _run_sde(cfg: ExperimentConfig) -> list:
    fit = strong_error_sde(cfg.d, [int(L) for L in cfg.depths],
                           cfg.m_substeps, cfg.trials, cfg.seed,
                           activation=cfg.s_act)
    rows = []
    for L, err in zip(fit.depths, fit.errors):
        rows.append(_row(fingerprint=f"sde-d{cfg.d}", kind=cfg.kind,
                         quantity="strong_error", d=cfg.d, L=int(L),
                         statistic="strong_error", value=float(err),
                         trials=cfg.trials, overflow=0))
    rows.append(_row(fingerprint=f"sde-d{cfg.d}", kind=cfg.kind,
                     quantity="strong_error", d=cfg.d,
                     statistic="slope", value=fit.slope, se=None,
                     trials=cfg.trials, overflow=0))
    return rows


def _run_ode(cfg: ExperimentConfig) -> list:
    if cfg.init != "gp":
        raise ConfigError("init: ode-convergence requires the gp scheme")
    L = int(cfg.depths[-1])
    fit = ode_error_vs_depth(cfg.model(L), cfg.scheme(),
                             [int(x) for x in cfg.depths],
                             N_ref=64 * L, trials=cfg.trials, seed=cfg.seed)
    rows = []
    for N, err in zip(fit.depths, fit.errors):
        rows.append(_row(fingerprint=f"ode-{cfg.arch}-d{cfg.d}", kind=cfg.kind,
                         quantity="euler_error", arch=cfg.arch, d=cfg.d,
                         L=int(N), statistic="euler_error", value=float(err),
                         trials=cfg.trials, overflow=0))
    rows.append(_row(fingerprint=f"ode-{cfg.arch}-d{cfg.d}", kind=cfg.kind,
                     quantity="euler_error", arch=cfg.arch, d=cfg.d,
                     statistic="slope", value=fit.slope, trials=cfg.trials,
                     overflow=0))
    return rows


def _run_validate(cfg: ExperimentConfig) -> list:
    dist = DistributionSpec(_IID_MAP[cfg.init], cfg.d)
    reports = list(check_assumption_suite(cfg.arch, dist, cfg.trials,
                                          seed=cfg.seed))
    reports.extend(check_fgn_autocov(0.5, 256, min(cfg.trials, 200),
                                     seed=derive_seed(cfg.seed, (1,))))
    bracket_model = ModelSpec(arch="res2", d=cfg.d, L=100, s_act=2.0**-0.5,
                              n_in=cfg.n_in, n_out=1)
    tc = TrialConfig(model=bracket_model, scheme=DistributionSpec(
        _IID_MAP[cfg.init], cfg.d), rule=ScalingRule(alpha=0.05))
    reports.append(check_expectation_bracket(
        tc, cfg.trials, derive_seed(cfg.seed, (2,)), workers=cfg.workers))
    reports.append(check_gradient_bracket(
        tc, cfg.trials, derive_seed(cfg.seed, (3,)), workers=cfg.workers))
    cover_d = max(cfg.d, 64)
    cover_model = ModelSpec(arch="res3", d=cover_d, L=100, s_act=1.0,
                            n_in=cfg.n_in, n_out=1)
    tc2 = TrialConfig(model=cover_model, scheme=DistributionSpec(
        _IID_MAP[cfg.init], cover_d), rule=ScalingRule(beta=0.5))
    reports.append(check_highprob_bounds(
        tc2, cfg.trials, cfg.delta, derive_seed(cfg.seed, (4,)),
        workers=cfg.workers))
    return _report_rows(cfg, reports, L=100)


_DISPATCH = {
    "norms": _run_norms,
    "gradients": _run_gradients,
    "distribution": _run_distribution,
    "heatmap": _run_heatmap,
    "sde-convergence": _run_sde,
    "ode-convergence": _run_ode,
    "regimes": _run_regimes,
    "validate": _run_validate,
}


def run(cfg: ExperimentConfig):
    """Execute one experiment; returns (exit_code, csv_path, manifest_path)."""
    validate_config(cfg)
    t0 = time.perf_counter()
    rows = _DISPATCH[cfg.kind](cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    digest = write_csv(csv_path, rows)
    manifest = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "rows": len(rows),
        "csv": csv_path.name,
        "csv_sha256": digest,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "versions": {
            "package": __version__,
            "backend": BACKEND,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    return 0, csv_path, manifest_path


def run_from_manifest(path) -> tuple:
    """Re-run the experiment recorded in a manifest, byte-for-byte."""
    doc = json.loads(Path(path).read_text())
    cfg = ExperimentConfig(**doc["config"])
    return run(cfg)
