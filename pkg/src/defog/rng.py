"""Seeded splitmix64 random generator.

Single entropy source for the whole package: weight init, scene synthesis,
batch sampling. The generator is counter-based, so draws are reproducible
bit-for-bit for a given seed regardless of numpy version, and independent
streams can be derived from string labels.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on an array of uint64 states."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _label_hash(label: str) -> int:
    """FNV-1a over the label bytes, for deriving named substreams."""
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _U64_MASK
    return h


class Rng:
    """Counter-based splitmix64 stream with vectorized array draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64_MASK
        self._counter = 0

    def split(self, label: str) -> "Rng":
        """Derive an independent stream keyed by (seed, label)."""
        child = _mix(np.uint64((self.seed ^ _label_hash(label)) & _U64_MASK))
        return Rng(int(child) ^ 0x5851F42D4C957F2D)

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            base = np.uint64(self.seed) + _GOLDEN * np.uint64(self._counter & _U64_MASK)
            states = base + _GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
            out = _mix(states)
        self._counter += n
        return out

    def uniform(self, shape=(), lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Uniform draws in [lo, hi) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = lo + (hi - lo) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        """Gaussian draws via Box-Muller on paired uniforms."""
        n = int(np.prod(shape)) if shape else 1
        m = n + (n & 1)
        u = (self._raw(2 * m) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u1 = u[:m] * (1.0 - 2e-17) + 1e-17  # keep log() off exactly zero
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        out = std * z[:n]
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Integers in [lo, hi) by 53-bit uniform scaling."""
        if hi <= lo:
            raise ValueError(f"integers: empty range [{lo}, {hi})")
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = lo + np.floor(u * (hi - lo)).astype(np.int64)
        return out.reshape(shape) if shape else int(out[0])

    def shuffle_index(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting random keys."""
        return np.argsort(self._raw(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ValueError(f"choice: cannot draw {k} from {n}")
        return self.shuffle_index(n)[:k]
