"""Deterministic pseudo-randomness for mask generation.

Every random choice in the toolkit flows through the fixed procedure here so
that identical (seed, layer name, row, group) inputs reproduce identical masks
on every platform and in every run:

  state0 = seed XOR fnv1a64(layer_name) XOR (row * GOLDEN mod 2^64) XOR group
  stream = SplitMix64 generator starting from state0
  order  = Fisher-Yates shuffle of [0, n) driven by stream, j = next() % (i+1)

The first k entries of `order` are the survivors of a k-of-n draw.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of `text`."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Scalar SplitMix64 stream: advance by GOLDEN, then scramble."""

    def __init__(self, state: int):
        self._state = state & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return _mix(self._state)


def derive_state(seed: int, layer_name: str, row: int, group: int) -> int:
    """Initial stream state for one (row, group) cell of one layer."""
    return (seed ^ fnv1a64(layer_name) ^ ((row * GOLDEN) & MASK64) ^ group) & MASK64


def shuffled_positions(state: int, n: int) -> list[int]:
    """Fisher-Yates permutation of range(n) from the stream at `state`."""
    gen = SplitMix64(state)
    pos = list(range(n))
    for i in range(n - 1, 0, -1):
        j = gen.next_u64() % (i + 1)
        pos[i], pos[j] = pos[j], pos[i]
    return pos


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def batch_shuffle(states: np.ndarray, n: int) -> np.ndarray:
    """Run `shuffled_positions` for many streams at once.

    `states` is a uint64 array of initial states; returns an int64 array of
    shape (len(states), n) whose rows match the scalar routine exactly.
    """
    states = states.astype(np.uint64, copy=True)
    count = states.shape[0]
    pos = np.tile(np.arange(n, dtype=np.int64), (count, 1))
    lanes = np.arange(count)
    for i in range(n - 1, 0, -1):
        states += np.uint64(GOLDEN)
        j = (_mix_vec(states) % np.uint64(i + 1)).astype(np.int64)
        left = pos[lanes, i]
        pos[lanes, i] = pos[lanes, j]
        pos[lanes, j] = left
    return pos
