"""Counter-based random number generation (Philox 2x32-10).

Every variate is a pure function of (seed, stream, counter), so estimates
are reproducible from the 64-bit seed recorded in a certificate and streams
can be drawn in any order or in parallel.
"""

from __future__ import annotations

import numpy as np

_M = np.uint64(0xD2511F53)
_W = np.uint32(0x9E3779B9)
_MASK = np.uint64(0xFFFFFFFF)
_INV = 1.0 / 4294967296.0


def _philox(ctr_lo: np.ndarray, ctr_hi: np.ndarray, key: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = ctr_lo.astype(np.uint64)
    hi = ctr_hi.astype(np.uint64)
    k = key.astype(np.uint32)
    for _ in range(10):
        prod = _M * lo
        p_hi = (prod >> np.uint64(32)).astype(np.uint32)
        p_lo = (prod & _MASK).astype(np.uint32)
        new_lo = (p_hi ^ k ^ hi.astype(np.uint32)).astype(np.uint64)
        hi = p_lo.astype(np.uint64)
        lo = new_lo
        k = (k + _W).astype(np.uint32)
    return lo.astype(np.uint32), hi.astype(np.uint32)


class CounterRng:
    """Vectorized counter RNG: uniform(stream, step, slot) in [0, 1)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key_lo = np.uint32(self.seed & 0xFFFFFFFF)
        self._key_hi = np.uint32((self.seed >> 32) & 0xFFFFFFFF)

    def uniform(self, stream: np.ndarray, step: int, slot: int = 0) -> np.ndarray:
        """One uniform per stream id, at (step, slot) of that stream.

        Streams and (step, slot) pairs index disjoint counters, so the
        variates are i.i.d. across walks and steps.
        """
        stream = np.asarray(stream, dtype=np.uint64)
        ctr = np.uint32(int(step) * 8 + int(slot))
        ctr_lo = np.full(stream.shape, ctr, dtype=np.uint32)
        ctr_hi = (stream & _MASK).astype(np.uint32) ^ self._key_hi
        out_lo, _ = _philox(ctr_lo, ctr_hi, np.full(stream.shape, self._key_lo, dtype=np.uint32))
        return (out_lo.astype(np.float64) + 0.5) * _INV
