"""Seeded, splittable random streams.

Generator: numpy's PCG64 (PCG XSL RR 128/64).  Stream ``k`` of seed ``s`` is
``PCG64(SeedSequence(entropy=s, spawn_key=(k,)))``.  Uniform doubles are
built from raw 64-bit outputs as ``(raw >> 11) * 2**-53``, so every draw is
pinned at the bit level and does not depend on numpy's ``Generator`` methods.
Test vectors live in ``tests/test_rng.py``.
"""
from __future__ import annotations

import numpy as np

_TWO_M53 = 2.0 ** -53
_UINT64_MAX = 2 ** 64 - 1

# fixed stream indices per consumer
STREAM_PATH = 0
STREAM_IID_FIRST = 1
STREAM_IID_SECOND = 2
STREAM_MC = 3


def parse_seed(text) -> int:
    """Accept ints, decimal strings or ``0x``-prefixed hex strings."""
    if isinstance(text, (int, np.integer)):
        value = int(text)
    else:
        s = str(text).strip().replace("_", "")
        value = int(s, 16) if s.lower().startswith("0x") else int(s, 10)
    if not 0 <= value <= _UINT64_MAX:
        raise ValueError(f"seed {text!r} is not a 64-bit unsigned integer")
    return value


class Stream:
    """Single-owner generator; never share one between workers."""

    def __init__(self, seed, stream_index: int = 0):
        self.seed = parse_seed(seed)
        self.stream_index = int(stream_index)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_index,))
        self._bitgen = np.random.PCG64(ss)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n).astype(np.uint64)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])


def rng_stream(seed, stream_index: int = 0) -> Stream:
    return Stream(seed, stream_index)
