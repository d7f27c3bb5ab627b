"""Deterministic random number generation.

All stochastic code in the package draws from :class:`Rng`, a thin wrapper
around numpy's counter-based Philox generator.  Philox produces the same
stream for the same (seed, call sequence) on every platform, which is what
makes k-space noise, latent samples and mask draws reproducible end to end.

Substreams are derived with :meth:`Rng.child`, mixing integer tags into the
second Philox key word, so independent components (per-patch samples,
per-coil noise, ...) get decorrelated streams without consuming the parent.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x32"

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Stable 64-bit mixer; used only to derive child keys.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Counter-based generator with deterministic substreams."""

    algorithm = ALGORITHM

    def __init__(self, seed: int, _subkey: int = 0):
        self.seed = int(seed) & _MASK64
        self._subkey = int(_subkey) & _MASK64
        key = np.array([self.seed, self._subkey], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, *tags: int) -> "Rng":
        """Derive an independent stream keyed by integer tags."""
        h = self._subkey
        for t in tags:
            h = _splitmix64(h ^ (int(t) & _MASK64))
        return Rng(self.seed, h)

    def normal(self, shape=None, loc: float = 0.0, scale: float = 1.0):
        out = self.generator.standard_normal(size=shape)
        if loc != 0.0 or scale != 1.0:
            out = loc + scale * out
        return out

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self.generator.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self.generator.integers(low, high, size=shape)

    def bytes(self, n: int) -> bytes:
        return self.generator.bytes(n)


def truncated_normal(rng: Rng, shape, std: float, trunc: float = 2.0) -> np.ndarray:
    """Normal draws with |x| <= trunc*std, by resampling rejected entries."""
    out = rng.normal(shape, scale=std)
    bound = trunc * std
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(int(bad.sum()), scale=std)
        bad = np.abs(out) > bound
    return out
