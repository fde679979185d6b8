"""Seeded random streams.

Reproducibility rule: every tensor drawn anywhere in the package comes from
its own substream. A substream is identified by ``(seed, *keys)``; string
keys are mapped to integers with CRC32 and the whole tuple seeds a numpy
``SeedSequence`` that drives a PCG64 bit generator. Two draws with the same
identity are bit-identical, and draws with different identities are
statistically independent.

Gaussian deviates are produced by the Box-Muller transform on PCG64 doubles
rather than numpy's ziggurat, so other implementations can reproduce them:

    u1 = 1 - U[0, 1)            (never zero)
    u2 = U[0, 1)
    r  = sqrt(-2 log u1)
    z  = [r cos(2 pi u2) for the first half, r sin(2 pi u2) for the second half]

with ``ceil(n / 2)`` uniform pairs consumed for ``n`` deviates, u1 values
drawn before u2 values.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "normal", "complex_normal"]


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be nonnegative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed: int, *keys) -> np.random.Generator:
    """Return the generator for substream ``(seed, *keys)``."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def normal(gen: np.random.Generator, size, std: float = 1.0) -> np.ndarray:
    """Draw i.i.d. N(0, std**2) deviates with the Box-Muller convention above."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(shape, dtype=np.int64))
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return (std * z).reshape(shape)


def complex_normal(gen: np.random.Generator, size, component_std: float = 1.0) -> np.ndarray:
    """Real and imaginary parts i.i.d. N(0, component_std**2), real part drawn first."""
    re = normal(gen, size, component_std)
    im = normal(gen, size, component_std)
    return re + 1j * im
