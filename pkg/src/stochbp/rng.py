"""Counter-based uniforms: U = mix(seed, directed edge, iteration).

Each draw is a pure function of its coordinates, so sweeps give the same
numbers no matter how edges are split across workers.  The mixer is the
SplitMix64 finaliser applied once per coordinate.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_bits(seed: int, edges, t: int) -> np.ndarray:
    """64-bit hashes for every ``(seed, edge, t)``; ``edges`` is array-like."""
    with np.errstate(over="ignore"):
        s = np.array([int(seed) & _MASK], dtype=np.uint64)
        e = np.asarray(edges, dtype=np.uint64).reshape(-1)
        tt = np.array([int(t) & _MASK], dtype=np.uint64)
        h = _mix(s + _GOLDEN)
        h = _mix(h ^ ((e + np.uint64(1)) * _GOLDEN))
        h = _mix(h ^ ((tt + np.uint64(1)) * _M1))
    return h


def stream_uniforms(seed: int, edges, t: int) -> np.ndarray:
    """Uniforms on [0, 1) with 53 random bits each."""
    return (stream_bits(seed, edges, t) >> np.uint64(11)).astype(np.float64) * 2.0**-53
