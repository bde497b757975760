"""Moment-matching construction behind the sample-complexity lower bound.

Two random variables ``Y`` and ``Y'`` on ``[-B, A]`` share their first ``L``
moments while ``E|Y| <= eps1/2`` and ``E|Y'|`` is as large as possible. After
centering and rescaling they become priors ``U``, ``U'`` on per-symbol
probabilities; drawing ``n`` i.i.d. values from either and normalizing gives
a random distribution that is close to uniform (from ``U``) or far from
uniform (from ``U'``), yet the two Poissonized sample laws are nearly equal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import poisson

from .distributions import Pmf, l1_distance, make_uniform
from .errors import InvalidParametersError, LPSolveError, OutOfRangeError
from .rng import as_generator

MAX_DEGREE = 32
MOMENT_TOL = 1e-8


@dataclass(frozen=True)
class LbParams:
    n: int
    m: float
    eps1: float
    kappa: float
    M: float
    L: int
    A: float
    B: float
    regime: str
    flagged: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _endpoints(n, m, eps1, kappa, M):
    A = n * (M + kappa) / m - 1 - eps1
    B = n * (M - kappa) / m + 1 - eps1
    return A, B


def lb_parameters(n: int, m: float, eps1: float, L_override: int | None = None) -> LbParams:
    """Pick (kappa, M, L) for the sparse (m << n log n) or dense (m >> n log n) regime.

    Budgets between the two are assigned to whichever regime boundary is
    nearer on a log scale and flagged.
    """
    if n < 2 or not m > 0:
        raise InvalidParametersError("need n >= 2 and m > 0")
    ln = math.log(n)
    lo, hi = n * ln / 4, 4 * n * ln
    flagged = lo <= m <= hi
    if m < lo or (flagged and math.log(m / lo) <= math.log(hi / m)):
        regime, kappa, M = "sparse", ln, ln
    else:
        regime, kappa, M = "dense", m / n, math.sqrt(m * ln / n)
    L = L_override if L_override is not None else math.ceil(4 * math.e**2 * ln)
    A, B = _endpoints(n, m, eps1, kappa, M)
    return LbParams(n, m, eps1, kappa, M, L, A, B, regime, flagged)


def explicit_parameters(n: int, m: float, eps1: float, kappa: float, M: float, L: int) -> LbParams:
    """LbParams with hand-picked ``kappa`` and ``M`` (desk-scale runs)."""
    if kappa < M or M < 0:
        raise InvalidParametersError(f"need kappa >= M >= 0, got kappa={kappa}, M={M}")
    A, B = _endpoints(n, m, eps1, kappa, M)
    return LbParams(n, m, eps1, kappa, M, L, A, B, "explicit", False)


@dataclass(frozen=True, eq=False)
class MomentProblem:
    grid: np.ndarray
    L: int
    eps1: float

    @classmethod
    def from_endpoints(cls, A: float, B: float, L: int, eps1: float, points: int = 401) -> "MomentProblem":
        """Uniform grid on ``[-B, A]`` with ``0`` added.

        Without ``0`` the constraint ``E|Y| <= eps1/2`` can be infeasible
        when the grid is coarser than ``eps1``.
        """
        if A <= 0 or B <= 0:
            raise InvalidParametersError(f"need A, B > 0, got A={A}, B={B}")
        grid = np.union1d(np.linspace(-B, A, points), [0.0])
        return cls(grid, L, eps1)

    @classmethod
    def from_params(cls, params: LbParams, points: int = 401) -> "MomentProblem":
        return cls.from_endpoints(params.A, params.B, params.L, params.eps1, points)


@dataclass(frozen=True, eq=False)
class MomentMatchedPair:
    support: np.ndarray
    w: np.ndarray
    w_prime: np.ndarray
    objective: float
    L: int
    eps1: float
    moment_gap: float
    params: LbParams | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_y(self) -> float:
        return float(self.w @ self.support)

    def priors(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(support of U, weights of U, weights of U') after ``U = (Y - E Y + 1)/n``."""
        u = (self.support - self.mean_y + 1) / n
        return u, self.w, self.w_prime

    def eps2(self) -> float:
        """``n E|U' - 1/n| = E|Y' - E Y|``, the far-side distance scale."""
        return float(self.w_prime @ np.abs(self.support - self.mean_y))

    def eps1_realized(self) -> float:
        return float(self.w @ np.abs(self.support - self.mean_y))

    def to_dict(self) -> dict:
        d = {
            "support": self.support.tolist(),
            "w": self.w.tolist(),
            "w_prime": self.w_prime.tolist(),
            "objective": self.objective,
            "L": self.L,
            "eps1": self.eps1,
            "moment_gap": self.moment_gap,
        }
        if self.params is not None:
            d.update(kappa=self.params.kappa, M=self.params.M, n=self.params.n, m=self.params.m)
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MomentMatchedPair":
        d = json.loads(text)
        return cls(np.array(d["support"]), np.array(d["w"]), np.array(d["w_prime"]),
                   d["objective"], d["L"], d["eps1"], d["moment_gap"])


def moment_gap(support, w, w_prime, L: int) -> float:
    """``max_k |E Y^k - E Y'^k| / R^k`` over ``k = 1..L`` with ``R = max |s|``."""
    if L == 0:
        return 0.0
    s = np.asarray(support) / np.abs(support).max()
    powers = s[None, :] ** np.arange(1, L + 1)[:, None]
    return float(np.abs(powers @ (np.asarray(w) - np.asarray(w_prime))).max())


def solve_moment_lp(prob: MomentProblem) -> MomentMatchedPair:
    if prob.grid.size == 0:
        raise InvalidParametersError("empty grid")
    if not prob.eps1 > 0:
        raise InvalidParametersError("eps1 must be positive")
    if prob.L > MAX_DEGREE:
        raise InvalidParametersError(f"L={prob.L} exceeds the double-precision cap {MAX_DEGREE}")
    s = prob.grid
    G = s.size
    absval = np.abs(s)
    # Chebyshev basis on s/R spans the same polynomials as monomials and keeps
    # the constraint rows bounded by 1.
    x = s / absval.max()
    cheb = np.polynomial.chebyshev.chebvander(x, prob.L)[:, 1:].T
    A_eq = np.zeros((prob.L + 2, 2 * G))
    A_eq[: prob.L, :G] = cheb
    A_eq[: prob.L, G:] = -cheb
    A_eq[prob.L, :G] = 1
    A_eq[prob.L + 1, G:] = 1
    b_eq = np.zeros(prob.L + 2)
    b_eq[prob.L:] = 1
    A_ub = np.concatenate([absval, np.zeros(G)])[None, :]
    b_ub = [prob.eps1 / 2]
    cost = np.concatenate([np.zeros(G), -absval])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise LPSolveError(f"LP solver failed: {res.message}")
    w = np.clip(res.x[:G], 0, None)
    wp = np.clip(res.x[G:], 0, None)
    w, wp = w / w.sum(), wp / wp.sum()
    gap = moment_gap(s, w, wp, prob.L)
    return MomentMatchedPair(s.copy(), w, wp, float(wp @ absval), prob.L, prob.eps1, gap,
                             extra={"lp_dual_ub": float(-res.ineqlin.marginals[0]),
                                    "lp_dual_eq": (-res.eqlin.marginals).tolist()})


def solve_for_params(params: LbParams, points: int = 401) -> MomentMatchedPair:
    pair = solve_moment_lp(MomentProblem.from_params(params, points))
    return MomentMatchedPair(pair.support, pair.w, pair.w_prime, pair.objective, pair.L,
                             pair.eps1, pair.moment_gap, params, pair.extra)


def mm_tv_bound(kappa: float, M: float, L: int) -> float:
    """Upper bound on TV between Poisson mixtures whose mixing laws on
    ``[kappa - M, kappa + M]`` share ``L`` moments."""
    if kappa < M or M < 0:
        raise InvalidParametersError(f"need kappa >= M >= 0, got kappa={kappa}, M={M}")
    if M == 0:
        return 0.0
    return 2 * (math.e * M / math.sqrt(kappa * (L + 1))) ** (L + 1)


def mixture_tv(rates_a, weights_a, rates_b, weights_b, tail_eps: float = 1e-12) -> float:
    """Certified upper bound on ``TV(E Poi(R_a), E Poi(R_b))``.

    Sums the pmf difference up to ``K`` with every component's tail beyond
    ``K`` below ``tail_eps``, then adds ``tail_eps``.
    """
    if not tail_eps > 0:
        raise InvalidParametersError("tail_eps must be positive")
    ra, wa = _active(rates_a, weights_a)
    rb, wb = _active(rates_b, weights_b)
    top = float(max(ra.max(), rb.max()))
    K = int(math.ceil(top + 20 * math.sqrt(top) + 50))
    while poisson.sf(K, top) >= tail_eps:
        K *= 2
    k = np.arange(K + 1)
    fa = wa @ poisson.pmf(k[None, :], ra[:, None])
    fb = wb @ poisson.pmf(k[None, :], rb[:, None])
    return float(0.5 * np.abs(fa - fb).sum() + tail_eps)


def _active(rates, weights):
    r = np.asarray(rates, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    if np.any(r[keep] < 0):
        raise InvalidParametersError("Poisson rates must be nonnegative")
    return r[keep], w[keep] / w[keep].sum()


def poisson_mixture_tv(pair: MomentMatchedPair, m: float, tail_eps: float = 1e-12, n: int | None = None) -> float:
    n = n if n is not None else (pair.params.n if pair.params is not None else None)
    if n is None:
        raise InvalidParametersError("n is needed to map the pair to priors")
    u, w, wp = pair.priors(n)
    return mixture_tv(m * u, w, m * u, wp, tail_eps)


@dataclass
class EventReport:
    which: str
    total: float
    abs_dev: float
    eps1: float
    eps2: float
    event_held: bool
    distance: float
    distance_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def build_prior_instance(pair: MomentMatchedPair, n: int, which: str, rng) -> tuple[Pmf, EventReport]:
    """Draw one random distribution from the close (``U``) or far (``U'``) prior.

    Nothing is rejected; the report says whether the conditioning event held
    and carries the per-draw distance bound that event implies.
    """
    if which not in ("close", "far"):
        raise InvalidParametersError("which must be 'close' or 'far'")
    u, w, wp = pair.priors(n)
    weights = w if which == "close" else wp
    gen = as_generator(rng)
    idx = gen.choice(u.size, size=n, p=weights / weights.sum())
    draws = u[idx]
    total = float(draws.sum())
    dev = float(np.abs(draws - 1 / n).sum())
    D = Pmf(draws / total, normalize=True)
    dist = l1_distance(D, make_uniform(n))
    eps1, eps2 = pair.eps1, pair.eps2()
    if which == "close":
        held = abs(total - 1) <= 0.1 and dev <= 10 * eps1
        bound = (dev + abs(total - 1)) / total
    else:
        held = abs(total - 1) <= eps2 / 10 and dev >= 9 * eps2 / 10
        bound = (dev - abs(total - 1)) / total
    return D, EventReport(which, total, dev, eps1, eps2, bool(held), dist, bound)


def dual_bound_value(eps1: float, A: float, B: float, L: int) -> float:
    if not 0 < eps1 <= min(A / 4, B / 4):
        raise OutOfRangeError(f"need 0 < eps1 <= min(A/4, B/4); got eps1={eps1}, A={A}, B={B}")
    return max(math.sqrt(eps1 * (A + B) / (32 * L**2)),
               math.sqrt(eps1 * math.sqrt(A * B) / (16 * L))) / 12


def dual_objective(grid, eps1: float, coeffs, alpha: float) -> float:
    """Value of a dual-feasible point: an upper bound on the LP optimum.

    ``coeffs[k-1]`` multiplies ``x**k`` in a polynomial ``P`` without constant
    term, and ``alpha >= 0`` prices the ``E|Y|`` budget. For any such pair,
    ``E|Y'| <= alpha eps1/2 + max_s(|s| - P(s)) + max_s(P(s) - alpha |s|)``.
    """
    if alpha < 0:
        raise InvalidParametersError("alpha must be nonnegative")
    s = np.asarray(grid, dtype=float)
    P = np.polynomial.polynomial.polyval(s, np.concatenate([[0.0], np.asarray(coeffs, dtype=float)]))
    return float(alpha * eps1 / 2 + np.max(np.abs(s) - P) + np.max(P - alpha * np.abs(s)))


def quadratic_dual_witness(grid, eps1: float) -> float:
    """Dual value for ``P = c x**2`` with the best ``c`` on a small scan."""
    s = np.asarray(grid, dtype=float)
    R = np.abs(s).max()
    best = math.inf
    for c in np.geomspace(1e-4, 1e4, 161) / R:
        for alpha in (c * R, 2 * c * R):
            best = min(best, dual_objective(s, eps1, [0.0, c], alpha))
    return best
