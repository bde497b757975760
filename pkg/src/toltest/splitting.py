"""Domain splitting against a known reference distribution.

Symbol ``i`` of the original domain is replaced by ``a_i = 1 + floor(n q_i)``
copies, each carrying ``1/a_i`` of the symbol's mass. The split reference has
squared l2 norm at most ``1/n`` while l1 distances between any two split
distributions are unchanged. The new domain is flattened: block ``i`` occupies
``offsets[i] : offsets[i] + a[i]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .distributions import Histogram, Pmf
from .errors import DimensionError
from .rng import as_generator


@dataclass(frozen=True, eq=False)
class SplitMap:
    a: np.ndarray
    offsets: np.ndarray

    @property
    def n(self) -> int:
        return int(self.a.size)

    @property
    def new_domain_size(self) -> int:
        return int(self.offsets[-1] + self.a[-1])

    @property
    def owner(self) -> np.ndarray:
        """Original symbol of every cell in the split domain."""
        return np.repeat(np.arange(self.n), self.a)

    def to_json(self) -> str:
        return json.dumps({"a": self.a.tolist(), "new_domain_size": self.new_domain_size})

    @classmethod
    def from_json(cls, text: str) -> "SplitMap":
        return _from_counts(np.array(json.loads(text)["a"], dtype=np.int64))


def _from_counts(a: np.ndarray) -> SplitMap:
    a = np.asarray(a, dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(a)[:-1]))
    a.setflags(write=False)
    offsets.setflags(write=False)
    return SplitMap(a, offsets)


def build_split_map(q: Pmf) -> SplitMap:
    n = q.n
    # floor(n q_i) with a guard for values like n * 0.3 == 2.9999999999999996
    scaled = n * q.weights
    a = 1 + np.floor(scaled + 1e-9).astype(np.int64)
    return _from_counts(a)


def split_pmf(p: Pmf, split: SplitMap) -> Pmf:
    if p.n != split.n:
        raise DimensionError(f"pmf has {p.n} symbols, split map expects {split.n}")
    return Pmf(np.repeat(p.weights / split.a, split.a), normalize=False)


def split_histogram(h: Histogram, split: SplitMap, rng) -> Histogram:
    """Send each occurrence of symbol ``i`` to a uniformly chosen cell of block ``i``."""
    if h.n != split.n:
        raise DimensionError(f"histogram has {h.n} symbols, split map expects {split.n}")
    gen = as_generator(rng)
    out = np.zeros(split.new_domain_size, dtype=np.int64)
    trivial = split.a == 1
    out[split.offsets[trivial]] = h.counts[trivial]
    for a_val in np.unique(split.a[~trivial]):
        idx = np.flatnonzero(split.a == a_val)
        cells = gen.multinomial(h.counts[idx], np.full(a_val, 1.0 / a_val))
        out[split.offsets[idx][:, None] + np.arange(a_val)] = cells
    return Histogram(out, h.budget_m)
