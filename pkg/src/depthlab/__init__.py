"""depthlab: a numerical laboratory for deep residual networks at initialization.

Simulates the scaled residual recursion h_{k+1} = h_k + L^{-beta} V_{k+1}
g(h_k) for three residual families and three weight-process regularities
(i.i.d. layers, smooth Gaussian-process layers, fractional-Brownian layers),
and measures what the theory predicts at initialization: output and gradient
norm brackets, identity/stable/explosion regimes as a function of the scaling
exponent, and convergence to the continuum SDE/ODE limits.
"""

from ._kernels import BACKEND
from .rng import Stream, derive_seed, mix64

__version__ = "0.1.0"

__all__ = ["BACKEND", "Stream", "derive_seed", "mix64", "__version__"]
