"""
Portable seeded sampling.

Uniform doubles come from numpy's PCG64 bit generator (``Generator.random``,
53-bit mantissa). Normal deviates are produced here with the basic Box-Muller
transform rather than numpy's ziggurat, so another implementation only needs
PCG64 + SeedSequence and the two lines below to reproduce every tensor.

Box-Muller, per pair of uniforms (u1, u2):

    z0 = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
    z1 = sqrt(-2 ln(1 - u1)) * sin(2 pi u2)

Samples fill the output in row-major order: z0, z1, z0, z1, ...
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.typing import NDArray


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(seed: int | np.random.Generator, shape: tuple[int, ...]) -> NDArray[np.float64]:
    gen = generator(seed) if isinstance(seed, int) else seed
    size = int(np.prod(shape, dtype=np.int64))
    pairs = (size + 1) // 2
    u = gen.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = radius * np.cos(theta)
    z[:, 1] = radius * np.sin(theta)
    return z.reshape(-1)[:size].reshape(shape)


def derive_seed(seed: int, *labels: str) -> int:
    """Stable 64-bit child seed from a parent seed and string labels (SHA-256 based)."""
    h = hashlib.sha256(str(seed).encode())
    for label in labels:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")
