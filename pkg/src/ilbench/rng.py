"""Seed derivation and a low-overhead scalar random stream."""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master_seed: int, *labels) -> int:
    """Stable 64-bit seed for ``(master_seed, *labels)``, independent of platform and hash salt."""
    text = "|".join([str(int(master_seed))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def child_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed(master_seed, *labels)))


class BufferedRng:
    """Scalar ``random()`` / ``integers(n)`` drawn from blocks of a numpy generator.

    Simulation loops that ask for one number at a time pay most of their cost
    in per-call overhead; this hands out pre-drawn uniforms instead.
    ``integers(n)`` is ``floor(n * u)``, whose bias is of order ``n / 2**53``.
    """

    def __init__(self, generator: np.random.Generator, block: int = 8192):
        self.generator = generator
        self.block = block
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self.generator.random(self.block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def integers(self, n: int) -> int:
        return int(self.random() * n)
