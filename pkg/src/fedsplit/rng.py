"""Deterministic, portable PRNG used for every random choice in the system.

SplitMix64 (Vigna's public reference algorithm) drives parameter
initialization, fold assignment, batch shuffling, and synthetic data.  It is
trivially portable: both parties (and the centralized oracle) reproduce the
exact same streams from the shared seed, which is what makes cross-party
agreement possible without communicating anything beyond the seed.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a UTF-8 string; used to key named substreams."""
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(base: int, *keys: int | str) -> int:
    """Fold keys (ints or strings) into a base seed, deterministically.

    Same (base, keys) always yields the same seed in any implementation of
    this recipe, so per-tensor and per-epoch substreams never depend on
    which party, or in which order, draws them.
    """
    s = base & _MASK64
    for k in keys:
        kv = fnv1a64(k) if isinstance(k, str) else (k & _MASK64)
        s = _finalize((s ^ kv) + _GOLDEN & _MASK64)
    return s


class SplitMix64:
    """SplitMix64 stream with rejection-sampled bounded draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _finalize(self._state)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def next_float(self) -> float:
        """Uniform float64 in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def next_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "little")
        return bytes(out[:n])

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]
