"""Reproducible, independent random streams.

A stream is addressed by ``(seed, stream_id)``. The pair is hashed through
:class:`numpy.random.SeedSequence` into a Philox key, so streams are
counter-based: trial ``i`` of an experiment always sees the same draws no
matter which worker runs it or in what order.
"""

from __future__ import annotations

import numpy as np

_SEED_MASK = (1 << 64) - 1


class RngStream:
    """A deterministic random stream keyed by ``(seed, stream_id)``."""

    __slots__ = ("seed", "stream_id", "_path", "generator")

    def __init__(self, seed: int, stream_id: int = 0, _path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        self.seed = int(seed) & _SEED_MASK
        self.stream_id = int(stream_id)
        self._path = tuple(_path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self._path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        """Independent sub-stream, e.g. one per amplification repetition."""
        return RngStream(self.seed, self.stream_id, (*self._path, int(index)))

    def children(self, count: int) -> list["RngStream"]:
        return [self.child(i) for i in range(count)]

    def __repr__(self) -> str:
        suffix = f", path={self._path}" if self._path else ""
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}{suffix})"


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
