"""Probability mass functions, distances, and Poissonized sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionError,
    InvalidBudgetError,
    InvalidDomainError,
    NormalizationError,
    UnsupportedExponentError,
)
from .rng import as_generator

NORMALIZATION_TOL = 1e-9
SUPPORTED_EXPONENTS = (2.0 / 3.0, 0.5)


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pmf:
    """A probability vector over the domain ``{0, ..., n-1}``.

    Weights must be nonnegative and sum to one within ``1e-9``. Nothing is
    renormalized unless ``normalize=True`` is passed explicitly.
    """

    weights: np.ndarray

    def __init__(self, weights: Sequence[float], normalize: bool = False):
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0:
            raise InvalidDomainError("a pmf needs at least one symbol")
        if not np.all(np.isfinite(w)):
            raise NormalizationError("weights must be finite")
        if np.any(w < 0):
            raise NormalizationError("weights must be nonnegative")
        total = float(w.sum())
        if normalize:
            if total <= 0:
                raise NormalizationError("cannot normalize an all-zero vector")
            w = w / total
        elif abs(total - 1.0) > NORMALIZATION_TOL:
            raise NormalizationError(f"weights sum to {total!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self) -> int:
        return int(self.weights.size)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i):
        return self.weights[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pmf):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.weights, other.weights))

    def __repr__(self) -> str:
        return f"Pmf(n={self.n}, weights={np.array2string(self.weights, threshold=8)})"

    def mass(self, indices) -> float:
        return float(self.weights[np.asarray(indices, dtype=int)].sum())

    def to_list(self) -> list[float]:
        return self.weights.tolist()


@dataclass(frozen=True, eq=False)
class SubPmf:
    """What is left of a pmf after its smallest entries are removed."""

    weights: np.ndarray
    retained_indices: np.ndarray
    removed_mass: float
    budget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "retained_indices", _frozen(self.retained_indices, int))

    @property
    def n(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True, eq=False)
class Histogram:
    """Per-symbol occurrence counts from one sample set.

    ``budget_m`` is the Poisson rate (or the fixed sample count) the counts
    were drawn with.
    """

    counts: np.ndarray
    budget_m: float = field(default=0.0)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1:
            raise DimensionError("histogram counts must be one-dimensional")
        if c.size and (np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0))):
            raise ValueError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", _frozen(c, np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def restrict(self, indices) -> "Histogram":
        return Histogram(self.counts[np.asarray(indices, dtype=int)], self.budget_m)

    def to_json(self) -> str:
        return json.dumps(self.counts.tolist())

    @classmethod
    def from_json(cls, text: str, budget_m: float = 0.0) -> "Histogram":
        return cls(np.array(json.loads(text), dtype=np.int64), budget_m)


def _weights(p) -> np.ndarray:
    if isinstance(p, (Pmf, SubPmf)):
        return p.weights
    return np.asarray(p, dtype=float)


def _check_same_domain(p, q) -> tuple[np.ndarray, np.ndarray]:
    a, b = _weights(p), _weights(q)
    if a.shape != b.shape:
        raise DimensionError(f"domain sizes differ: {a.size} vs {b.size}")
    return a, b


def make_uniform(n: int) -> Pmf:
    if n < 1:
        raise InvalidDomainError(f"domain size must be positive, got {n}")
    return Pmf(np.full(n, 1.0 / n))


def zipf_pmf(n: int, exponent: float = 1.0) -> Pmf:
    """Zipf law over ``n`` symbols: weight of rank ``i`` proportional to ``i**-exponent``."""
    if n < 1:
        raise InvalidDomainError(f"domain size must be positive, got {n}")
    w = np.arange(1, n + 1, dtype=float) ** (-exponent)
    return Pmf(w, normalize=True)


def l1_distance(p, q) -> float:
    """Full l1 norm ``sum |p_i - q_i|`` (twice the total variation distance)."""
    a, b = _check_same_domain(p, q)
    return float(np.abs(a - b).sum())


def l2_distance(p, q) -> float:
    a, b = _check_same_domain(p, q)
    return float(np.sqrt(np.square(a - b).sum()))


def quasinorm(p, r: float) -> float:
    """``(sum p_i**r) ** (1/r)`` for ``r`` in {2/3, 1/2}."""
    if not any(math.isclose(r, s, rel_tol=0, abs_tol=1e-12) for s in SUPPORTED_EXPONENTS):
        raise UnsupportedExponentError(f"exponent {r} not in {{2/3, 1/2}}")
    w = _weights(p)
    if np.any(w < 0):
        raise ValueError("quasinorm needs nonnegative weights")
    pos = w[w > 0]
    return float(np.power(np.power(pos, r).sum(), 1.0 / r))


def support_size(p) -> int:
    return int(np.count_nonzero(_weights(p) > 0))


def truncate_mass(q: Pmf, x: float) -> SubPmf:
    """Drop the smallest entries of ``q`` while the dropped mass stays ``<= x``.

    Entries are removed in ascending weight order, ties broken by ascending
    index; removal stops just before the running total would exceed ``x``.
    """
    if not 0 <= x < 1:
        raise InvalidBudgetError(f"truncation budget must lie in [0, 1), got {x}")
    w = _weights(q)
    order = np.lexsort((np.arange(w.size), w))
    cum = np.cumsum(w[order])
    # Small slack so that e.g. 0.1 + 0.1 <= 0.2 survives rounding.
    n_removed = int(np.searchsorted(cum, x * (1 + 1e-12) + 1e-15, side="right"))
    removed = order[:n_removed]
    keep = np.sort(order[n_removed:])
    removed_mass = float(w[removed].sum()) if n_removed else 0.0
    return SubPmf(w[keep], keep, removed_mass, float(x))


def sample_histogram_poisson(p: Pmf, m: float, rng) -> Histogram:
    """Counts ``X_i ~ Poi(m * p_i)``, independent across symbols."""
    if not m > 0:
        raise InvalidBudgetError(f"Poisson budget must be positive, got {m}")
    gen = as_generator(rng)
    return Histogram(gen.poisson(m * _weights(p)), float(m))


def sample_histogram_fixed(p: Pmf, m: int, rng) -> Histogram:
    """Multinomial counts for exactly ``m`` i.i.d. samples."""
    if int(m) != m or m < 1:
        raise InvalidBudgetError(f"sample budget must be a positive integer, got {m}")
    gen = as_generator(rng)
    w = _weights(p)
    # multinomial rejects pvals whose partial sums exceed 1 by rounding
    pvals = w / w.sum()
    return Histogram(gen.multinomial(int(m), pvals), float(m))


def paninski_perturbation(n: int, eps: float, rng, signs=None) -> Pmf:
    """Uniform with pairs ``(2k, 2k+1)`` set to ``(1 +- eps)/n`` under a random sign."""
    if n < 2 or n % 2:
        raise InvalidDomainError(f"paninski perturbation needs an even domain, got {n}")
    if not 0 <= eps <= 1:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if signs is None:
        signs = as_generator(rng).choice((-1.0, 1.0), size=n // 2)
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (n // 2,):
        raise DimensionError("need one sign per pair")
    w = np.empty(n)
    w[0::2] = (1 + eps * signs) / n
    w[1::2] = (1 - eps * signs) / n
    return Pmf(w)


def spike_perturbation(q: Pmf, eps: float, index: int | None = None) -> Pmf:
    """Move ``eps/2`` of mass onto a single symbol, taken proportionally from the rest.

    The l1 distance to ``q`` is exactly ``eps``. Defaults to the lightest
    symbol so the perturbation is as concentrated as possible.
    """
    w = _weights(q)
    if index is None:
        index = int(np.argmin(w))
    rest = 1.0 - w[index]
    if rest <= 0 or eps / 2 > rest:
        raise ValueError("not enough mass outside the spike symbol")
    out = w * (1 - eps / 2 / rest)
    out[index] = w[index] + eps / 2
    return Pmf(out, normalize=True)


def parse_pmf_text(text: str, normalize: bool = False) -> Pmf:
    """Parse either a JSON array or one decimal per line (``#`` comments allowed)."""
    stripped = text.strip()
    if stripped.startswith("["):
        values = json.loads(stripped)
    else:
        values = []
        for line in stripped.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                values.append(float(line))
    return Pmf(values, normalize=normalize)


def load_pmf(path, normalize: bool = False) -> Pmf:
    return parse_pmf_text(Path(path).read_text(), normalize=normalize)


def dump_pmf(p: Pmf, path=None, fmt: str = "lines") -> str:
    if fmt == "json":
        text = json.dumps(p.to_list())
    else:
        text = "\n".join(repr(float(v)) for v in p.weights) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
