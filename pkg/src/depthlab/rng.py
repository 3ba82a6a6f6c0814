"""Deterministic counter-based random number generation.

Every random quantity in this package is a pure function of a 64-bit seed
and an integer counter, so any value can be regenerated in isolation (the
simulation kernels rebuild weight matrices layer by layer, forward and
backward, without storing them) and independent streams can be handed to
parallel workers without coordination.

Layout of the generator:

* ``mix64`` is the splitmix64 finalizer, a bijective xor-shift-multiply
  avalanche on 64-bit words.
* ``derive_seed(master, indices)`` folds a tuple of nonnegative integers
  into a master seed, re-avalanching after each index.  Distinct index
  tuples give distinct streams except for birthday-level collisions.
* A *fill* with seed ``S`` defines value ``i`` through the entry word
  ``w_i = mix64(S + (i + 1) * GOLDEN)``:

  - symmetric uniforms map ``w_i`` to ``(2 u - 1) * bound`` with
    ``u = (w_i >> 11) * 2^-53``,
  - signs take the top bit of ``w_i``,
  - Gaussians treat ``w_i`` as the seed of a per-entry substream and run
    the polar (Marsaglia) variant of the Box-Muller transform on the
    uniforms ``mix64(w_i + (j + 1) * GOLDEN)``, ``j = 0, 1, ...``, keeping
    the first accepted root.

Integer words, uniforms, and signs are bit-identical across backends and
platforms.  Gaussians additionally involve ``log``, whose last bit may
differ between libm implementations; replay with a fixed backend is always
bit-exact.

The fills themselves are provided by the active backend (compiled or
NumPy); this module holds the seed algebra and the small ``Stream`` handle
that the sampling operations accept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX_M1 = 0xBF58476D1CE4E5B9
_MIX_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """Splitmix64 finalizer on a 64-bit word."""
    z &= MASK64
    z ^= z >> 30
    z = (z * _MIX_M1) & MASK64
    z ^= z >> 27
    z = (z * _MIX_M2) & MASK64
    z ^= z >> 31
    return z


def derive_seed(master: int, indices=()) -> int:
    """Derive a stream seed from ``master`` and a tuple of indices.

    Pure function; distinct index tuples yield distinct seeds up to
    2^-64-scale collision probability.  Used for every seed split in the
    package: trials, weight roles, layers, entries.
    """
    s = mix64((master + GOLDEN) & MASK64)
    for ix in indices:
        s = mix64((s + GOLDEN + (int(ix) & MASK64)) & MASK64)
    return s


def entry_word(seed: int, index: int) -> int:
    """The ``index``-th 64-bit word of the fill seeded by ``seed``."""
    return mix64((seed + ((index + 1) * GOLDEN)) & MASK64)


def _backend():
    from . import _kernels

    return _kernels.backend


@dataclass
class Stream:
    """Sequential handle over one fill: draws advance a private counter.

    Identical (seed, call sequence) replays identical values.  ``child``
    derives an independent stream, leaving this one untouched.
    """

    seed: int
    counter: int = field(default=0)

    def child(self, *indices: int) -> "Stream":
        return Stream(derive_seed(self.seed, indices))

    def _take(self, n: int) -> int:
        off = self.counter
        self.counter += int(n)
        return off

    def uniform_symmetric(self, n: int, bound: float) -> np.ndarray:
        return _backend().fill_uniform(self.seed, int(n), float(bound), self._take(n))

    def gaussian(self, n: int) -> np.ndarray:
        return _backend().fill_gaussian(self.seed, int(n), self._take(n))

    def rademacher(self, n: int, magnitude: float) -> np.ndarray:
        return _backend().fill_rademacher(self.seed, int(n), float(magnitude), self._take(n))
