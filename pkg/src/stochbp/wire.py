"""Bit-packed transport of sampled column indices.

Each edge update is ceil(log2 d) bits, packed big-endian back to back; the
final byte is zero-padded on the right.
"""

from __future__ import annotations

from typing import Iterable

from .counters import bits_per_update


def pack_indices(indices: Iterable[int], d: int) -> bytes:
    k = bits_per_update(d)
    acc = 0
    n = 0
    for j in indices:
        j = int(j)
        if not 0 <= j < d:
            raise ValueError(f"index {j} outside 0..{d - 1}")
        acc = (acc << k) | j
        n += 1
    nbits = n * k
    nbytes = (nbits + 7) // 8
    return (acc << (8 * nbytes - nbits)).to_bytes(nbytes, "big")


def unpack_indices(data: bytes, d: int, count: int) -> list[int]:
    k = bits_per_update(d)
    nbits = count * k
    if len(data) != (nbits + 7) // 8:
        raise ValueError(f"expected {(nbits + 7) // 8} bytes for {count} indices, got {len(data)}")
    acc = int.from_bytes(data, "big") >> (8 * len(data) - nbits)
    mask = (1 << k) - 1
    out = [(acc >> (k * (count - 1 - i))) & mask for i in range(count)]
    if any(j >= d for j in out):
        raise ValueError("decoded index out of range")
    return out
