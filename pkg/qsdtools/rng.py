"""Seeded, splittable random streams for deterministic simulation."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

_BLOCK = 4096


class RandomStream:
    """Buffered wrapper around a PCG64 generator.

    Uniforms are drawn in blocks and served one at a time, so the event loop
    pays no per-call numpy overhead. Child streams come from the generator's
    SeedSequence and never overlap with the parent.
    """

    def __init__(self, seed: Union[int, Sequence[int], None] = None, seed_seq: Optional[np.random.SeedSequence] = None):
        self._seq = seed_seq if seed_seq is not None else np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))
        self._buf: list[float] = []
        self._pos = 0

    @property
    def entropy(self):
        return self._seq.entropy

    def _refill(self):
        self._buf = self._gen.random(_BLOCK).tolist()
        self._pos = 0

    def random(self) -> float:
        """Uniform on [0, 1)."""
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def exponential(self, rate: float) -> float:
        return -math.log(1.0 - self.random()) / rate

    def index(self, n: int) -> int:
        """Uniform integer in 0..n-1."""
        return min(int(self.random() * n), n - 1)

    def spawn(self, n: int) -> list["RandomStream"]:
        return [RandomStream(seed_seq=s) for s in self._seq.spawn(n)]

    def fork(self) -> "RandomStream":
        """One child stream for a sub-task."""
        return self.spawn(1)[0]


def replica_streams(seed: Union[int, Sequence[int]], replicas: int) -> list[RandomStream]:
    """Independent streams for replicas 0..replicas-1 of one experiment."""
    return RandomStream(seed).spawn(replicas)
