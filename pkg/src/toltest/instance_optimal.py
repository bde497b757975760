"""Reference-dependent tolerant identity testing.

The bucketed tester drops a light set ``D`` of mass at most ``eps2/20``,
groups the remaining symbols into dyadic buckets ``D_j = {i : q_i in (2^-j,
2^-(j-1)]}`` and runs three families of sub-tests: one on ``p(D)``, one per
bucket on ``p(D_j)``, and one per heavy bucket on the conditional
distribution of ``p`` inside the bucket. It accepts only if every sub-test
accepts.

This module also holds the embedding that plants a distribution over
``[rat]`` inside an arbitrary reference ``q``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    Histogram,
    Pmf,
    l1_distance,
    make_uniform,
    quasinorm,
    sample_histogram_fixed,
    sample_histogram_poisson,
    support_size,
    truncate_mass,
)
from .errors import (
    DegenerateConditioningError,
    DimensionError,
    InvalidParametersError,
    InvalidSubsetError,
    UnsupportedToleranceError,
)
from .rng import RngStream
from .splitting import build_split_map, split_histogram, split_pmf
from .tester import (
    DEFAULT_C,
    Decision,
    TesterConfig,
    majority,
    repetitions,
    run_core_test,
    sufficient_samples,
)


@dataclass(frozen=True, eq=False)
class Bucketing:
    D: np.ndarray
    buckets: tuple[np.ndarray, ...]
    ell: int
    eps2: float

    def bucket_of(self, i: int) -> int:
        """0 for the light set, ``j >= 1`` for bucket ``D_j``, -1 if unsupported."""
        if i in set(self.D.tolist()):
            return 0
        for j, b in enumerate(self.buckets, start=1):
            if i in set(b.tolist()):
                return j
        return -1

    def to_json(self) -> str:
        return json.dumps({
            "D": self.D.tolist(),
            "buckets": [b.tolist() for b in self.buckets],
            "ell": self.ell,
            "eps2": self.eps2,
        })


def bucket_count(n: int, eps2: float) -> int:
    return math.floor(math.log2(20 * n / eps2)) + 1


def _dyadic_index(w: np.ndarray) -> np.ndarray:
    """Smallest ``j >= 1`` with ``w in (2^-j, 2^-(j-1)]``."""
    j = np.ceil(-np.log2(w)).astype(np.int64)
    j = np.maximum(j, 1)
    # log2 rounding can land one bucket off near powers of two
    j = np.where(w > 2.0 ** (-(j - 1)), j - 1, j)
    j = np.where(w <= 2.0 ** (-j), j + 1, j)
    return np.maximum(j, 1)


def build_bucketing(q: Pmf, eps2: float) -> Bucketing:
    if not 0 < eps2 <= 1:
        raise InvalidParametersError(f"eps2 must lie in (0, 1], got {eps2}")
    ell = bucket_count(q.n, eps2)
    sub = truncate_mass(q, eps2 / 20)
    keep = sub.retained_indices
    light = np.setdiff1d(np.arange(q.n), keep)
    j = _dyadic_index(q.weights[keep])
    buckets = tuple(keep[j == b] for b in range(1, ell + 1))
    if np.any(j > ell):
        raise AssertionError("a retained symbol fell below the last bucket")
    return Bucketing(light, buckets, ell, float(eps2))


def effective_support_stats(q: Pmf, alpha: float) -> tuple[float, float, int]:
    """(2/3-quasinorm, 1/2-quasinorm, support size) of ``q`` with ``alpha`` mass trimmed."""
    sub = truncate_mass(q, alpha)
    return quasinorm(sub, 2 / 3), quasinorm(sub, 0.5), support_size(sub)


def conditional_pmf(q: Pmf, subset) -> Pmf:
    idx = np.asarray(subset, dtype=int)
    mass = q.weights[idx].sum()
    if mass <= 0:
        raise DegenerateConditioningError("cannot condition on a zero-mass subset")
    return Pmf(q.weights[idx] / mass, normalize=True)


# --- embedding of uniform instances --------------------------------------


@dataclass(frozen=True, eq=False)
class EmbeddingSpec:
    S: np.ndarray
    rat: int
    partition: tuple[np.ndarray, ...]
    max_weight: float

    def to_json(self) -> str:
        return json.dumps({
            "S": self.S.tolist(),
            "rat": self.rat,
            "partition": [b.tolist() for b in self.partition],
            "max_weight": self.max_weight,
        })


def embedding_spec(q: Pmf, S) -> EmbeddingSpec:
    """Greedy partition of ``S`` into blocks of mass in ``[mas, 2 mas)``.

    The heaviest symbol opens the first block on its own (mass exactly
    ``mas``). The others are taken in ascending index order and a block is
    closed once it reaches ``mas``, so it stays below ``mas`` plus one
    element. The leftover is lighter than ``mas`` and joins the first block.
    """
    S = np.unique(np.asarray(S, dtype=int))
    if S.size == 0:
        raise InvalidSubsetError("S is empty")
    w = q.weights[S]
    mas = float(w.max())
    if mas <= 0:
        raise InvalidSubsetError("S carries no mass")
    rat = math.floor(w.sum() / (2 * mas))
    if rat < 1:
        raise InvalidSubsetError(f"rat(q, S) = {rat} < 1")
    top = int(np.argmax(w))
    blocks: list[list[int]] = [[int(S[top])]]
    current: list[int] = []
    acc = 0.0
    for k, (i, wi) in enumerate(zip(S.tolist(), w.tolist())):
        if k == top:
            continue
        current.append(i)
        acc += wi
        if acc >= mas:
            blocks.append(current)
            current, acc = [], 0.0
    blocks[0].extend(current)
    partition = tuple(np.array(b, dtype=int) for b in blocks)
    return EmbeddingSpec(S, rat, partition, mas)


def embed_uniform_instance(q: Pmf, S, p_small: Pmf, spec: EmbeddingSpec | None = None) -> Pmf:
    """Plant ``p_small`` (over ``rat`` symbols) into ``q`` on the blocks of ``S``.

    ``l1(result, q) == q(S)/4 * l1(p_small, Unif_rat)``.
    """
    spec = spec if spec is not None else embedding_spec(q, S)
    if p_small.n != spec.rat:
        raise DimensionError(f"p_small must live on rat(q, S) = {spec.rat} symbols")
    qS = float(q.weights[spec.S].sum())
    out = q.weights.copy()
    for j in range(spec.rat):
        block = spec.partition[j]
        qSj = q.weights[block].sum()
        out[block] = q.weights[block] * (1 + qS / (4 * qSj) * (p_small.weights[j] - 1 / spec.rat))
    return Pmf(out, normalize=True)


# --- bucketed tester -------------------------------------------------------


@dataclass
class SubTest:
    kind: str
    bucket: int
    decision: Decision
    statistic: float
    threshold: float
    runs: int = 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bucket": self.bucket, "decision": self.decision.value,
                "statistic": self.statistic, "threshold": self.threshold, "runs": self.runs}


@dataclass
class IoVerdict:
    decision: Decision
    subtests: list[SubTest]
    ell: int
    mass_samples: int
    poisson_rate: float
    batches: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def is_far(self) -> bool:
        return self.decision is Decision.FAR

    @property
    def samples(self) -> float:
        return self.mass_samples + self.poisson_rate * self.batches

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "ell": self.ell,
            "samples": self.samples,
            "mass_samples": self.mass_samples,
            "poisson_rate": self.poisson_rate,
            "batches": self.batches,
            "seed": self.seed,
            "subtests": [s.to_dict() for s in self.subtests],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class IoPlan:
    """Everything about the bucketed tester that does not depend on samples."""

    q: Pmf
    bucketing: Bucketing
    eps1: float
    eps2: float
    c: float
    mass_tolerance: float
    mass_samples: int
    heavy: tuple[int, ...]
    bucket_eps: dict
    bucket_rates: dict
    poisson_rate: float
    reps: int

    @property
    def batches(self) -> int:
        return 2 * self.reps if self.heavy else 0

    @property
    def samples(self) -> float:
        return self.mass_samples + self.poisson_rate * self.batches


def plan_io_test(q: Pmf, eps1: float, eps2: float, c: float = DEFAULT_C,
                 sample_constant: float = 8.0) -> IoPlan:
    bucketing = build_bucketing(q, eps2)
    ell = bucketing.ell
    if eps1 < 0 or eps1 > eps2 / (40 * ell):
        raise UnsupportedToleranceError(
            f"eps1={eps1} exceeds eps2/(40 ell) = {eps2 / (40 * ell)}")
    fail = 1 / (5 * (2 * ell + 1))
    # Half of the gap between the accept and reject sides of sub-test (2);
    # sub-test (1) has a wider gap, so one tolerance serves both.
    tol = (eps2 / (10 * ell) - eps1) / 2
    # Hoeffding for each of the ell + 1 masses with failure ``fail``.
    mass_samples = math.ceil(math.log(2 / fail) / (2 * tol**2))
    heavy = []
    bucket_eps, bucket_rates = {}, {}
    for j, b in enumerate(bucketing.buckets, start=1):
        qj = float(q.weights[b].sum())
        if b.size < 2 or qj < eps2 / (5 * ell):
            continue
        e2 = eps2 / (5 * ell * qj)
        e1 = 2 * eps1 / (ell * qj)
        # identity testing runs on the split bucket, 2|D_j| symbols at most
        m_j = sufficient_samples(2 * b.size, e1, e2, sample_constant)
        heavy.append(j)
        bucket_eps[j] = (e1, e2)
        bucket_rates[j] = m_j / qj
    rate = max(bucket_rates.values()) if heavy else 0.0
    return IoPlan(q, bucketing, eps1, eps2, c, tol, mass_samples, tuple(heavy),
                  bucket_eps, bucket_rates, rate, repetitions(fail))


def io_test_identity(q: Pmf, p_source, eps1: float, eps2: float, c: float = DEFAULT_C,
                     rng: RngStream | None = None, plan: IoPlan | None = None) -> IoVerdict:
    """Run the bucketed tolerant identity tester.

    ``p_source`` must provide both ``fixed(m, rng)`` (for the mass estimates)
    and ``__call__(rate, rng)`` (Poissonized batches); :class:`PmfSource`
    does both for a known pmf.
    """
    plan = plan if plan is not None else plan_io_test(q, eps1, eps2, c)
    rng = rng if rng is not None else RngStream(0)
    bk = plan.bucketing
    ell = bk.ell
    subtests: list[SubTest] = []

    # (1) and (2): one fixed-budget batch estimates every mass.
    mass_hist = p_source.fixed(plan.mass_samples, rng.child(0).generator)
    freq = mass_hist.counts / plan.mass_samples
    pD = float(freq[bk.D].sum()) if bk.D.size else 0.0
    thr1 = eps2 / 20 + eps1 + (eps2 / 5 - eps2 / 20 - eps1) / 2
    subtests.append(SubTest("light-mass", 0, Decision.FAR if pD >= thr1 else Decision.CLOSE, pD, thr1))
    thr2 = eps1 + plan.mass_tolerance
    for j, b in enumerate(bk.buckets, start=1):
        gap = abs(float(freq[b].sum()) - float(q.weights[b].sum()))
        subtests.append(SubTest("bucket-mass", j, Decision.FAR if gap >= thr2 else Decision.CLOSE, gap, thr2))

    # (3): conditional identity tests on heavy buckets, all fed by restricting
    # the same Poissonized batches of p.
    if plan.heavy:
        batch_rng = rng.child(1)
        batches = [p_source(plan.poisson_rate, r.generator) for r in batch_rng.children(plan.batches)]
        for j in plan.heavy:
            b = bk.buckets[j - 1]
            qj = float(q.weights[b].sum())
            q_cond = Pmf(q.weights[b] / qj, normalize=True)
            split = build_split_map(q_cond)
            q_split = split_pmf(q_cond, split)
            m_j = plan.poisson_rate * qj
            cfg = TesterConfig(min(plan.bucket_eps[j][1], 1.0), m_j, split.new_domain_size, c)
            sim = rng.child(2 + j)
            runs = []
            for r in range(plan.reps):
                g = sim.child(r).generator
                set1 = split_histogram(batches[2 * r].restrict(b), split, g)
                set2 = split_histogram(batches[2 * r + 1].restrict(b), split, g)
                # The restricted p-counts sit at rate p(D_j) * rate, not q(D_j) * rate;
                # matching the simulated reference to the realized totals removes
                # that bias, since given its total a Poisson vector is multinomial.
                runs.append(run_core_test(set1, _matched(q_split, set1, g),
                                          set2, _matched(q_split, set2, g), cfg))
            v = majority(runs)
            subtests.append(SubTest("conditional", j, v.decision, v.z_value, v.tau, v.runs))

    decision = Decision.FAR if any(s.decision is Decision.FAR for s in subtests) else Decision.CLOSE
    return IoVerdict(decision, subtests, ell, plan.mass_samples, plan.poisson_rate,
                     plan.batches, seed=rng.seed)


def _matched(q: Pmf, like: Histogram, rng) -> Histogram:
    if like.total == 0:
        return Histogram(np.zeros(q.n, dtype=np.int64), like.budget_m)
    return Histogram(rng.multinomial(like.total, q.weights / q.weights.sum()), like.budget_m)


class PmfSource:
    """Sample source for a known pmf: Poissonized batches and fixed-size draws."""

    def __init__(self, pmf: Pmf):
        self.pmf = pmf

    def __call__(self, m: float, rng) -> Histogram:
        return sample_histogram_poisson(self.pmf, m, rng)

    def fixed(self, m: int, rng) -> Histogram:
        return sample_histogram_fixed(self.pmf, m, rng)


def inflate_bucket(q: Pmf, bucketing: Bucketing, j: int, distance: float) -> Pmf:
    """Scale bucket ``j`` up by ``distance/2`` of mass and everything else down.

    The l1 distance to ``q`` is exactly ``distance``.
    """
    b = bucketing.buckets[j - 1]
    qj = q.weights[b].sum()
    if qj <= 0 or qj + distance / 2 > 1:
        raise InvalidParametersError("bucket too light or too heavy to inflate")
    out = q.weights * (1 - distance / 2 / (1 - qj))
    out[b] = q.weights[b] * (1 + distance / (2 * qj))
    return Pmf(out, normalize=True)


def perturb_conditionals(q: Pmf, bucketing: Bucketing, distance: float) -> Pmf:
    """Shift mass between neighbouring symbols inside each bucket.

    Symbols of a bucket are paired in index order and the pair ``(a, b)``
    moves ``e * min(q_a, q_b)`` from ``b`` to ``a``. Every bucket mass and the
    light set are untouched, so only the conditional sub-tests can notice;
    ``e`` is chosen so the l1 distance to ``q`` is exactly ``distance``.
    """
    w = q.weights.copy()
    pairs = []
    for b in bucketing.buckets:
        for k in range(0, b.size - 1, 2):
            pairs.append((b[k], b[k + 1]))
    if not pairs:
        raise InvalidParametersError("no bucket holds two symbols")
    a_idx = np.array([a for a, _ in pairs])
    b_idx = np.array([b for _, b in pairs])
    shift = np.minimum(w[a_idx], w[b_idx])
    e = distance / (2 * shift.sum())
    if e > 1:
        raise InvalidParametersError(f"distance {distance} not reachable inside the buckets")
    w[a_idx] += e * shift
    w[b_idx] -= e * shift
    return Pmf(w, normalize=True)


def claim_close_conditions(p: Pmf, q: Pmf, bucketing: Bucketing, eps1: float) -> list[bool]:
    """The three exact conditions every ``eps1``-close ``p`` satisfies."""
    pD = p.mass(bucketing.D) if bucketing.D.size else 0.0
    ok_mass = pD <= eps1 + bucketing.eps2 / 20 + 1e-12
    ok_buckets, ok_cond = True, True
    for b in bucketing.buckets:
        if b.size == 0:
            continue
        pj, qj = p.mass(b), q.mass(b)
        ok_buckets &= abs(pj - qj) <= eps1 + 1e-12
        if pj > 0:
            d = l1_distance(p.weights[b] / pj, q.weights[b] / qj)
            ok_cond &= d <= 2 * eps1 / qj + 1e-12
    return [bool(ok_mass), bool(ok_buckets), bool(ok_cond)]


def claim_far_conditions(p: Pmf, q: Pmf, bucketing: Bucketing) -> list[bool]:
    """Three exact conditions that together force ``l1(p, q) <= eps2``."""
    eps2, ell = bucketing.eps2, bucketing.ell
    pD = p.mass(bucketing.D) if bucketing.D.size else 0.0
    ok_mass = pD <= eps2 / 5
    ok_buckets, ok_cond = True, True
    for b in bucketing.buckets:
        if b.size == 0:
            continue
        pj, qj = p.mass(b), q.mass(b)
        ok_buckets &= abs(pj - qj) <= eps2 / (10 * ell)
        if qj >= eps2 / (5 * ell):
            d = l1_distance(p.weights[b] / pj, q.weights[b] / qj) if pj > 0 else 2.0
            ok_cond &= d <= eps2 / (5 * ell * qj)
    return [bool(ok_mass), bool(ok_buckets), bool(ok_cond)]


def plain_identity_samples(n: int, eps1: float, eps2: float, constant: float = 8.0) -> float:
    """Per-set budget of the plain tester on ``Unif_n`` (split domain ``2n``)."""
    return sufficient_samples(2 * n, eps1, eps2, constant)


__all__ = [
    "Bucketing", "EmbeddingSpec", "IoPlan", "IoVerdict", "PmfSource", "SubTest",
    "bucket_count", "build_bucketing", "claim_close_conditions", "claim_far_conditions",
    "conditional_pmf", "effective_support_stats", "embed_uniform_instance",
    "embedding_spec", "inflate_bucket", "io_test_identity", "perturb_conditionals", "plain_identity_samples",
    "plan_io_test", "make_uniform",
]
