"""Monte Carlo experiments: calibration, error rates, sample-complexity search."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .distributions import (
    Pmf,
    l1_distance,
    load_pmf,
    make_uniform,
    paninski_perturbation,
    spike_perturbation,
    zipf_pmf,
)
from .errors import CalibrationError, InvalidParametersError
from .instance_optimal import PmfSource, embed_uniform_instance, embedding_spec, io_test_identity
from .lower_bound import build_prior_instance, lb_parameters, solve_for_params
from .rng import RngStream
from .tester import DEFAULT_C, PoissonSampler, Verdict, test_equivalence, test_identity

TESTERS = ("identity", "equivalence", "instance_optimal")
FAMILIES = ("paninski", "spike", "embedded", "prior_pair", "custom")
MAX_M_FACTOR = 64


@dataclass(frozen=True)
class ExperimentSpec:
    n: int
    eps1: float
    eps2: float
    tester: str = "identity"
    family: str = "paninski"
    m_grid: tuple[float, ...] = ()
    trials: int = 200
    seed: int = 0
    c: float = DEFAULT_C
    delta: float = 0.2
    p_file: str | None = None
    q_file: str | None = None
    lb_L: int = 8

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidParametersError("trials must be at least 1")
        if not 0 <= self.eps1 < self.eps2 <= 1:
            raise InvalidParametersError(f"need 0 <= eps1 < eps2 <= 1, got {self.eps1}, {self.eps2}")
        if self.tester not in TESTERS:
            raise InvalidParametersError(f"unknown tester {self.tester!r}")
        if self.family not in FAMILIES:
            raise InvalidParametersError(f"unknown instance family {self.family!r}")
        if self.family == "custom" and self.p_file is None:
            raise InvalidParametersError("the custom family needs a p file")
        object.__setattr__(self, "m_grid", tuple(float(m) for m in self.m_grid))


@dataclass
class TrialRecord:
    m: float
    ground_truth: str
    verdict: Verdict
    distance: float

    @property
    def error(self) -> bool:
        return self.verdict.decision.value != self.ground_truth


def truth_of(distance: float, eps1: float, eps2: float) -> str | None:
    """``close`` / ``far`` for a realized distance, ``None`` in the gap."""
    if distance <= eps1 + 1e-12:
        return "close"
    if distance >= eps2 - 1e-12:
        return "far"
    return None


# --- instances -------------------------------------------------------------


def _reference(spec: ExperimentSpec) -> Pmf:
    if spec.q_file is not None:
        return load_pmf(spec.q_file)
    if spec.family == "embedded":
        return zipf_pmf(spec.n, 1.0)
    return make_uniform(spec.n)


def _planted(q: Pmf, eps: float, rng) -> Pmf:
    """Plant a Paninski-style instance at l1 distance ``eps`` from ``q``."""
    emb = embedding_spec(q, np.arange(q.n))
    qS = float(q.weights.sum())
    target = 4 * eps / qS
    rat = emb.rat
    if rat % 2 == 0 and target <= 1:
        small = paninski_perturbation(rat, target, rng)
    else:
        top = 2 * (1 - 1 / rat)
        if target > top:
            raise InvalidParametersError(f"distance {eps} cannot be planted in this reference")
        w = np.full(rat, (1 - target / top) / rat)
        w[0] += target / top
        small = Pmf(w, normalize=True)
    return embed_uniform_instance(q, emb.S, small, emb)


def make_instance(spec: ExperimentSpec, side: str, m: float, rng: RngStream) -> tuple[Pmf, Pmf] | None:
    """(reference q, distribution p) for one trial, or ``None`` when a random
    prior draw lands between the two tolerances."""
    g = rng.generator
    q = _reference(spec)
    eps = spec.eps1 if side == "close" else spec.eps2
    fam = spec.family
    if fam == "paninski":
        p = paninski_perturbation(q.n, eps, g) if q.n % 2 == 0 else spike_perturbation(q, eps)
        if spec.q_file is not None:
            p = _planted(q, eps, g)
    elif fam == "spike":
        p = spike_perturbation(q, eps)
    elif fam == "embedded":
        p = _planted(q, eps, g)
    elif fam == "prior_pair":
        pair = _prior_pair(q.n, float(m), spec.eps1 if spec.eps1 > 0 else spec.eps2 / 25, spec.lb_L)
        p, _ = build_prior_instance(pair, q.n, side, g)
        if truth_of(l1_distance(p, q), spec.eps1, spec.eps2) != side:
            return None
    else:
        p = load_pmf(spec.p_file)
        if truth_of(l1_distance(p, q), spec.eps1, spec.eps2) != side:
            return None
    return q, p


@lru_cache(maxsize=32)
def _prior_pair(n: int, m: float, eps1: float, L: int):
    return solve_for_params(lb_parameters(n, m, eps1, L))


def sides_for(spec: ExperimentSpec) -> tuple[str, ...]:
    if spec.family != "custom":
        return ("close", "far")
    q = _reference(spec)
    truth = truth_of(l1_distance(load_pmf(spec.p_file), q), spec.eps1, spec.eps2)
    if truth is None:
        raise InvalidParametersError("the custom pair sits strictly between eps1 and eps2")
    return (truth,)


def run_trial(spec: ExperimentSpec, side: str, m: float, rng: RngStream) -> TrialRecord | None:
    inst = make_instance(spec, side, m, rng.child(0))
    if inst is None:
        return None
    q, p = inst
    run_rng = rng.child(1)
    if spec.tester == "identity":
        v = test_identity(q, PoissonSampler(p), m, spec.eps2, spec.delta, spec.c, run_rng)
    elif spec.tester == "equivalence":
        v = test_equivalence(PoissonSampler(p), PoissonSampler(q), m, spec.eps2, spec.delta,
                             spec.c, run_rng)
    else:
        iv = io_test_identity(q, PmfSource(p), spec.eps1, spec.eps2, spec.c, run_rng)
        v = Verdict(iv.decision, float("nan"), float("nan"), iv.samples, q.n, spec.eps2, spec.c,
                    seed=spec.seed, samples=iv.samples)
    return TrialRecord(m, side, v, l1_distance(p, q))


# --- error rates -----------------------------------------------------------


def wilson_interval(errors: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    ci = binomtest(errors, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass
class SideRate:
    errors: int
    trials: int

    @property
    def rate(self) -> float:
        return self.errors / self.trials if self.trials else float("nan")

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.errors, self.trials)


@dataclass
class ErrorRow:
    m: float
    close: SideRate | None
    far: SideRate | None
    skipped: int = 0

    def passes(self, target: float) -> bool:
        sides = [s for s in (self.close, self.far) if s is not None]
        return bool(sides) and all(s.trials > 0 and s.interval[1] <= target for s in sides)

    def to_dict(self) -> dict:
        d = {"m": self.m, "skipped": self.skipped}
        for name, s in (("close", self.close), ("far", self.far)):
            if s is None:
                continue
            lo, hi = s.interval
            d.update({f"{name}_error": s.rate, f"{name}_lo": lo, f"{name}_hi": hi, f"{name}_trials": s.trials})
        return d


def error_row(spec: ExperimentSpec, m: float) -> ErrorRow:
    """Seeded trials at one budget. Trial ``t`` of side ``s`` always uses the
    same stream, so rows at different ``m`` share their randomness."""
    root = RngStream(spec.seed)
    rates = {}
    skipped = 0
    for k, side in enumerate(("close", "far")):
        if side not in sides_for(spec):
            rates[side] = None
            continue
        errs = done = 0
        for t in range(spec.trials):
            rec = run_trial(spec, side, m, root.child(k).child(t))
            if rec is None:
                skipped += 1
                continue
            done += 1
            errs += rec.error
        rates[side] = SideRate(errs, done)
    return ErrorRow(float(m), rates["close"], rates["far"], skipped)


def estimate_error_rate(spec: ExperimentSpec) -> list[ErrorRow]:
    grid = spec.m_grid or (default_budget(spec.n, spec.eps1, spec.eps2),)
    return [error_row(spec, m) for m in grid]


def default_budget(n: int, eps1: float, eps2: float, constant: float = 8.0) -> float:
    from .tester import sufficient_samples
    return sufficient_samples(n, eps1, eps2, constant)


# --- calibration -----------------------------------------------------------


def _ratios(n: int, eps2: float, m: float, trials: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    q = make_uniform(n)
    null, far = [], []
    for t in range(trials):
        tr = rng.child(t)
        p_far = paninski_perturbation(n, eps2, tr.child(0).generator)
        for p, out, k in ((q, null, 1), (p_far, far, 2)):
            v = test_identity(q, PoissonSampler(p), m, eps2, 0.2, 1.0, tr.child(k))
            out.append(v.z_value / v.tau)
    return np.sort(null), np.sort(far)


def calibrate_constant(n: int, eps2: float, trials: int = 400, rng: RngStream | int = 0,
                       max_error: float = 0.2) -> float:
    """Threshold constant separating ``Unif_n`` from Paninski-far at ``m = 8 sqrt(n)/eps2**2``.

    The decision at constant ``c`` is ``Z/tau_1 >= c`` with ``tau_1`` the
    threshold at ``c = 1``, so the set of ``c`` keeping both empirical
    error rates within ``max_error`` is an interval read off the sorted
    ratios. The midpoint is returned.
    """
    if trials < 200:
        raise InvalidParametersError("calibration needs at least 200 trials")
    rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    m = 8 * math.sqrt(n) / eps2**2
    null, far = _ratios(n, eps2, m, trials, rng)
    allowed = math.floor(max_error * trials)
    lo = max(null[trials - allowed - 1], 0.0)
    hi = far[allowed]
    if not lo < hi:
        raise CalibrationError(
            f"no threshold keeps both errors <= {max_error} at m={m:.1f}",
            close_ratios=null.tolist(), far_ratios=far.tolist())
    return float((lo + hi) / 2)


def calibrate_sample_constant(n: int, eps2: float, eps1_grid, c: float = DEFAULT_C,
                              trials: int = 200, seed: int = 0, max_error: float = 0.25,
                              start: float = 8.0, limit: float = 1024.0) -> float:
    """Smallest constant ``C`` (doubling, then bisection to 10%) such that
    ``m = C (n rho**2 + n rho + sqrt(n)/eps2**2)`` keeps the empirical error
    of both sides at most ``max_error`` for every ``eps1`` in the grid."""
    from .tester import sufficient_samples

    def ok(C):
        for k, e1 in enumerate(eps1_grid):
            spec = ExperimentSpec(n, e1, eps2, trials=trials, seed=seed + k, c=c)
            row = error_row(spec, sufficient_samples(n, e1, eps2, C))
            if row.close.rate > max_error or row.far.rate > max_error:
                return False
        return True

    C, lo = start, 0.0
    while not ok(C):
        lo = C
        C *= 2
        if C > limit:
            raise CalibrationError(f"no sample constant up to {limit} meets the error target",
                                   close_ratios=[], far_ratios=[])
    hi = C
    while lo > 0 and hi - lo > 0.1 * hi:
        mid = (lo + hi) / 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


# --- sample complexity -----------------------------------------------------


@dataclass
class SampleComplexity:
    m: float
    resolved: bool
    evaluations: list[ErrorRow] = field(default_factory=list)


def find_sample_complexity(spec: ExperimentSpec, target_error: float = 0.2,
                           m_start: float | None = None, rel_tol: float = 0.05) -> SampleComplexity:
    """Doubling search for a passing budget, then bisection down to ``rel_tol``.

    A budget passes when the Wilson upper bound of every side's error rate is
    at most ``target_error``. Budgets are capped at ``64 n``.
    """
    if not 0 < target_error < 0.5:
        raise InvalidParametersError("target_error must lie in (0, 1/2)")
    cap = MAX_M_FACTOR * spec.n
    m = m_start if m_start is not None else max(1.0, math.sqrt(spec.n) / 4)
    evals = []

    def check(budget):
        row = error_row(spec, budget)
        evals.append(row)
        return row.passes(target_error)

    lo = 0.0
    while not check(m):
        lo = m
        if m >= cap:
            return SampleComplexity(float(cap), False, evals)
        m = min(2 * m, cap)
    hi = m
    while lo > 0 and hi - lo > rel_tol * hi:
        mid = (lo + hi) / 2
        if check(mid):
            hi = mid
        else:
            lo = mid
    return SampleComplexity(float(hi), True, evals)


# --- phase diagram ---------------------------------------------------------

TERM_LABELS = ("sqrt(n)/eps2^2", "n*rho", "n*rho^2")


def complexity_terms(n: int, eps1: float, eps2: float) -> tuple[float, float, float]:
    rho = eps1 / eps2**2
    return (math.sqrt(n) / eps2**2, n * rho, n * rho**2)


def dominant_term(n: int, eps1: float, eps2: float) -> str:
    terms = complexity_terms(n, eps1, eps2)
    return TERM_LABELS[int(np.argmax(terms))]


PHASE_COLUMNS = ("eps1", "eps2", "m_star", "resolved", "label", "term_sqrt", "term_rho", "term_rho2")


def phase_diagram(n: int, eps1_grid, eps2_grid, trials: int = 100, seed: int = 0,
                  c: float = DEFAULT_C, target_error: float = 0.2,
                  family: str = "paninski") -> list[dict]:
    pairs = [(float(e1), float(e2)) for e2 in eps2_grid for e1 in eps1_grid]
    bad = [(e1, e2) for e1, e2 in pairs if not e1 < e2]
    if bad:
        raise InvalidParametersError(f"every eps1 must be below every eps2; offending pairs {bad}")
    rows = []
    for k, (e1, e2) in enumerate(pairs):
        spec = ExperimentSpec(n, e1, e2, "identity", family, (), trials, seed + k, c)
        res = find_sample_complexity(spec, target_error)
        terms = complexity_terms(n, e1, e2)
        rows.append({"eps1": e1, "eps2": e2, "m_star": res.m, "resolved": res.resolved,
                     "label": dominant_term(n, e1, e2), "term_sqrt": terms[0],
                     "term_rho": terms[1], "term_rho2": terms[2]})
    return rows


def rows_to_csv(rows: list[dict], columns=None) -> str:
    columns = columns or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def load_phase_csv(source) -> list[dict]:
    text = Path(source).read_text() if isinstance(source, Path) or (
        isinstance(source, str) and "\n" not in source and Path(source).exists()) else source
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({
            "eps1": float(r["eps1"]), "eps2": float(r["eps2"]), "m_star": float(r["m_star"]),
            "resolved": r["resolved"] == "True", "label": r["label"],
            "term_sqrt": float(r["term_sqrt"]), "term_rho": float(r["term_rho"]),
            "term_rho2": float(r["term_rho2"]),
        })
    return rows
