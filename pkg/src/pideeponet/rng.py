"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream id)`` so any
sub-stream can be regenerated without replaying the others.  Normal variates
come from an explicit Box-Muller transform of the uniforms.
"""

from __future__ import annotations

import numpy as np

# stream tags
SOURCE = 1
INTERIOR = 2
BOUNDARY = 3
TEST_SOURCE = 4
BATCH = 5

_MASK64 = (1 << 64) - 1


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    key = [int(seed) & _MASK64, ((int(tag) & 0xFFFF) << 48) | (int(index) & ((1 << 48) - 1))]
    return np.random.Generator(np.random.Philox(key=key))


def uniforms(gen: np.random.Generator, n: int) -> np.ndarray:
    return gen.random(n)


def standard_normals(gen: np.random.Generator, n: int) -> np.ndarray:
    """Box-Muller normals from ``2*ceil(n/2)`` uniforms."""
    k = (n + 1) // 2
    u = gen.random(2 * k)
    u1 = 1.0 - u[:k]  # in (0, 1], keeps log finite
    u2 = u[k:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * k)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]
