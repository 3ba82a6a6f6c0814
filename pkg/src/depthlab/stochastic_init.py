"""Seedable sampling of all weight-initialization families.

Three families, one calibration: i.i.d. sub-Gaussian matrices whose entries
have mean zero and variance exactly 1/d; smooth Gaussian-process paths with
squared-exponential covariance (one independent path per scalar weight
entry, variance O(1) in depth); and fractional-Gaussian-noise sequences
normalized to unit marginal variance and then rescaled by 1/sqrt(d), so the
Hurst index changes only the correlation *across layers*, never the size of
an individual weight.  At H = 1/2 the fractional scheme reduces exactly in
law to the i.i.d. Gaussian scheme.

Gaussian-process and fractional sequences are drawn by multiplying an
i.i.d. Gaussian vector by a symmetric PSD square root of the covariance
matrix; the square roots are cached per covariance (they are immutable and
shared read-only across threads/processes).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .rng import Stream, derive_seed

ROLE_V = 1
ROLE_W = 2

# kernel-level distribution codes
KIND_UNIFORM = 0
KIND_GAUSSIAN = 1
KIND_RADEMACHER = 2

_IID_KINDS = {
    "UniformScaled": KIND_UNIFORM,
    "GaussianScaled": KIND_GAUSSIAN,
    "Rademacher": KIND_RADEMACHER,
}


@dataclass(frozen=True)
class DistributionSpec:
    """I.i.d. entry law for a d x d weight matrix.

    Every kind is calibrated to mean 0 and entry variance exactly 1/d:
    UniformScaled is uniform on [-sqrt(3/d), sqrt(3/d)], GaussianScaled is
    N(0, 1/d), Rademacher is +-1/sqrt(d).  sqrt(d) times an entry is
    sub-Gaussian with a parameter independent of d and L.
    """

    kind: str
    d: int

    def __post_init__(self):
        if self.kind not in _IID_KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.d < 1:
            raise ValueError(f"width must be >= 1, got {self.d}")

    @property
    def kernel_kind(self) -> int:
        return _IID_KINDS[self.kind]

    @property
    def kernel_param(self) -> float:
        """Scale constant handed to the fill kernels (bound / std / magnitude)."""
        if self.kind == "UniformScaled":
            return (3.0 / self.d) ** 0.5
        return self.d**-0.5

    @property
    def entry_variance(self) -> float:
        return 1.0 / self.d

    @property
    def subgaussian_s2(self) -> float:
        """Sub-Gaussian parameter s^2 of sqrt(d) * entry.

        Gaussian: the variance, 1.  Rademacher and uniform: Hoeffding's
        (b-a)^2/4 for supports {-1,1} and [-sqrt(3), sqrt(3)].
        """
        return 3.0 if self.kind == "UniformScaled" else 1.0


@dataclass(frozen=True)
class GPSpec:
    """Squared-exponential Gaussian-process law for one scalar weight path.

    K(x, x') = variance * exp(-(x-x')^2 / (2 lengthscale^2)) on the layer
    fraction t in [0,1].  The variance default follows the smooth-init
    experiments (1e-2); the lengthscale is a free knob (0.1 default).
    """

    lengthscale: float = 0.1
    variance: float = 1e-2

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be > 0")
        if not self.variance > 0:
            raise ValueError("variance must be > 0")


@dataclass(frozen=True)
class FBMSpec:
    """Fractional-Gaussian-noise law for one scalar weight sequence.

    ``hurst`` is the roughness index H in (0,1); increments of a length-L
    sequence have the fGn autocovariance gamma(k) proportional to
    (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H})/2.  With normalization "unit"
    (the default used by weight tapes) each increment has marginal variance
    exactly 1 whatever (H, L); "raw" keeps the native increment variance
    L^{-2H} of a fractional Brownian path on a 1/L grid.
    """

    hurst: float
    normalization: str = "unit"

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValueError(f"hurst must be in (0,1), got {self.hurst}")
        if self.normalization not in ("unit", "raw"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


InitScheme = Union[DistributionSpec, GPSpec, FBMSpec]


def fgn_autocovariance(H: float, lags) -> np.ndarray:
    """Exact fGn autocovariance gamma(k) at unit marginal variance."""
    k = np.asarray(lags, dtype=np.float64)
    return 0.5 * (
        np.abs(k + 1) ** (2 * H) + np.abs(k - 1) ** (2 * H) - 2 * np.abs(k) ** (2 * H)
    )


# ---------------------------------------------------------------------------
# covariance square roots, cached and immutable


_factor_cache: dict = {}
_factor_lock = threading.Lock()


def _sym_sqrt(C: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; one jitter retry on factorization failure.

    Eigenvalues that roundoff pushes slightly negative are clamped to zero
    (the PSD projection); an eigensolver failure gets a single diagonal
    jitter of 1e-12 * mean-diagonal before giving up.
    """
    n = C.shape[0]
    try:
        lam, Q = np.linalg.eigh(C)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * (np.trace(C) / n)
        try:
            lam, Q = np.linalg.eigh(C + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                f"covariance factorization failed even with jitter {jitter:g}"
            ) from exc
    root = Q * np.sqrt(np.clip(lam, 0.0, None))
    return root @ Q.T


def _gp_factor(grid_key, grid: np.ndarray, spec: GPSpec) -> np.ndarray:
    key = ("gp", grid_key, spec.lengthscale, spec.variance)
    with _factor_lock:
        hit = _factor_cache.get(key)
    if hit is not None:
        return hit
    diff = grid[:, None] - grid[None, :]
    C = spec.variance * np.exp(-(diff**2) / (2.0 * spec.lengthscale**2))
    F = _sym_sqrt(C)
    with _factor_lock:
        _factor_cache.setdefault(key, F)
    return F


def _fgn_factor(L: int, H: float) -> np.ndarray:
    key = ("fgn", L, H)
    with _factor_lock:
        hit = _factor_cache.get(key)
    if hit is not None:
        return hit
    gamma = fgn_autocovariance(H, np.arange(L))
    idx = np.arange(L)
    C = gamma[np.abs(idx[:, None] - idx[None, :])]
    F = _sym_sqrt(C)
    with _factor_lock:
        _factor_cache.setdefault(key, F)
    return F


def gp_factor_for_grid(grid: np.ndarray, spec: GPSpec) -> np.ndarray:
    """Covariance square root for GP values on an arbitrary sorted grid."""
    grid = np.asarray(grid, dtype=np.float64)
    key = (len(grid), float(grid[0]), float(grid[-1]))
    return _gp_factor(key, grid, spec)


# ---------------------------------------------------------------------------
# samplers


def sample_iid_matrix(dist: DistributionSpec, rng: Stream) -> np.ndarray:
    """One d x d matrix of i.i.d. entries drawn from ``dist`` via ``rng``."""
    d = dist.d
    kind = dist.kernel_kind
    if kind == KIND_UNIFORM:
        flat = rng.uniform_symmetric(d * d, dist.kernel_param)
    elif kind == KIND_GAUSSIAN:
        flat = rng.gaussian(d * d) * dist.kernel_param
    else:
        flat = rng.rademacher(d * d, dist.kernel_param)
    return flat.reshape(d, d)


def sample_gp_path(L: int, spec: GPSpec, rng: Stream) -> np.ndarray:
    """GP values at the layer grid k/L, k = 1..L."""
    if L < 1:
        raise ValueError("L must be >= 1")
    grid = np.arange(1, L + 1, dtype=np.float64) / L
    F = gp_factor_for_grid(grid, spec)
    return F @ rng.gaussian(L)


def sample_fgn(L: int, spec: FBMSpec, rng: Stream) -> np.ndarray:
    """Length-L fGn sequence; unit marginal variance unless ``raw``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    x = _fgn_factor(L, spec.hurst) @ rng.gaussian(L)
    if spec.normalization == "raw":
        x = x * float(L) ** (-spec.hurst)
    return x


# ---------------------------------------------------------------------------
# weight tapes


@dataclass
class WeightTape:
    """Per-layer weights for one network realization.

    ``V`` (and ``W`` for the two-matrix architectures) hold the stacked
    (L, d, d) matrices.  For i.i.d. schemes the arrays are materialized
    lazily: simulation kernels regenerate the same matrices from
    (``seed``, layer, entry) on the fly, bit-identically, so bulk
    Monte-Carlo runs never pay the tape's memory.  Replaying the same
    (scheme, seed) reproduces the tape exactly.
    """

    L: int
    d: int
    scheme: InitScheme
    seed: int
    has_w: bool
    _V: Optional[np.ndarray] = field(default=None, repr=False)
    _W: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def streaming_iid(self) -> bool:
        return isinstance(self.scheme, DistributionSpec)

    @property
    def V(self) -> np.ndarray:
        if self._V is None:
            self._V = self._materialize(ROLE_V)
        return self._V

    @property
    def W(self) -> Optional[np.ndarray]:
        if not self.has_w:
            return None
        if self._W is None:
            self._W = self._materialize(ROLE_W)
        return self._W

    def _materialize(self, role: int) -> np.ndarray:
        assert isinstance(self.scheme, DistributionSpec)
        d = self.d
        out = np.empty((self.L, d, d))
        for k in range(self.L):
            out[k] = sample_iid_matrix(
                self.scheme, Stream(derive_seed(self.seed, (role, k)))
            )
        return out


def _path_tape(role_seed: int, L: int, d: int, F: np.ndarray, scale: float) -> np.ndarray:
    # one independent path per scalar entry; entry e's Gaussian driver is
    # the stream derive_seed(role_seed, (e,)), consumed column-wise
    from ._kernels import backend

    Z = np.empty((L, d * d))
    for e in range(d * d):
        Z[:, e] = backend.fill_gaussian(derive_seed(role_seed, (e,)), L)
    paths = F @ Z
    if scale != 1.0:
        paths *= scale
    return np.ascontiguousarray(paths.reshape(L, d, d))


def build_weight_tape(model, scheme: InitScheme, seed: int) -> WeightTape:
    """Sample the full weight tape for ``model`` under ``scheme``.

    ``model`` is a resnet_core.ModelSpec (duck-typed here: needs arch, d,
    L).  Architectures res-2/res-3 get an independent W tape alongside V.
    """
    has_w = model.arch in ("res2", "res3")
    L, d = model.L, model.d
    if isinstance(scheme, DistributionSpec):
        if scheme.d != d:
            raise ValueError(f"scheme width {scheme.d} != model width {d}")
        return WeightTape(L=L, d=d, scheme=scheme, seed=seed, has_w=has_w)
    if isinstance(scheme, GPSpec):
        grid = np.arange(1, L + 1, dtype=np.float64) / L
        F = gp_factor_for_grid(grid, scheme)
        scale = 1.0
    elif isinstance(scheme, FBMSpec):
        F = _fgn_factor(L, scheme.hurst)
        scale = d**-0.5
        if scheme.normalization == "raw":
            scale *= float(L) ** (-scheme.hurst)
    else:
        raise TypeError(f"unsupported init scheme {type(scheme).__name__}")
    tape = WeightTape(L=L, d=d, scheme=scheme, seed=seed, has_w=has_w)
    tape._V = _path_tape(derive_seed(seed, (ROLE_V,)), L, d, F, scale)
    if has_w:
        tape._W = _path_tape(derive_seed(seed, (ROLE_W,)), L, d, F, scale)
    return tape
