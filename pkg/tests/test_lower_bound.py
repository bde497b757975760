import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from toltest.distributions import make_uniform
from toltest.errors import InvalidParametersError, OutOfRangeError
from toltest.lower_bound import (
    MAX_DEGREE,
    MomentMatchedPair,
    MomentProblem,
    build_prior_instance,
    dual_bound_value,
    dual_objective,
    explicit_parameters,
    lb_parameters,
    mixture_tv,
    mm_tv_bound,
    moment_gap,
    poisson_mixture_tv,
    quadratic_dual_witness,
    solve_for_params,
    solve_moment_lp,
)
from toltest.rng import RngStream


@pytest.fixture(scope="module")
def desk_pair():
    return solve_for_params(explicit_parameters(64, 16, 0.05, 4, 4, 8))


class TestParameters:
    def test_sparse(self):
        p = lb_parameters(64, 16, 0.1)
        ln = math.log(64)
        assert p.regime == "sparse" and not p.flagged
        assert math.isclose(p.kappa, 4.1589, rel_tol=1e-4) and p.kappa == p.M
        assert math.isclose(p.A, 2 * 64 * ln / 16 - 1 - 0.1)
        assert math.isclose(p.B, 1 - 0.1)
        assert p.L == math.ceil(4 * math.e**2 * ln)

    def test_dense(self):
        n, m, e = 50, 1000, 0.05
        p = lb_parameters(n, m, e)
        assert p.regime == "dense" and not p.flagged
        r = math.sqrt(n * math.log(n) / m)
        assert math.isclose(p.A, r - e) and math.isclose(p.B, r - e)

    def test_intermediate_is_flagged(self):
        n = 100
        p = lb_parameters(n, n * math.log(n), 0.05)
        assert p.flagged and p.regime in ("sparse", "dense")

    def test_override(self):
        assert lb_parameters(64, 16, 0.1, L_override=6).L == 6

    def test_bad_explicit(self):
        with pytest.raises(InvalidParametersError):
            explicit_parameters(64, 16, 0.1, 2, 3, 4)


class TestTvBound:
    def test_examples(self):
        assert mm_tv_bound(4, 0, 5) == 0
        assert math.isclose(mm_tv_bound(4, 2, 3), 2 * (math.e / 2) ** 4)
        assert math.isclose(mm_tv_bound(4, 2, 3), 6.8247, rel_tol=1e-4)

    def test_decreasing_in_L(self):
        vals = [mm_tv_bound(100, 2, L) for L in range(1, 20)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_rejects_kappa_below_M(self):
        with pytest.raises(InvalidParametersError):
            mm_tv_bound(1, 2, 3)


class TestMixtureTv:
    def test_point_masses(self):
        assert math.isclose(mixture_tv([0.0], [1.0], [1.0], [1.0]), 1 - math.exp(-1), abs_tol=1e-11)
        assert mixture_tv([1.0], [1.0], [1.0], [1.0]) <= 1.1e-12

    def test_against_direct_sum(self):
        ra, wa = np.array([2.0, 7.0]), np.array([0.3, 0.7])
        rb, wb = np.array([5.0]), np.array([1.0])
        k = np.arange(200)
        fa = sum(w * np.exp(-r + k * np.log(r) - [math.lgamma(x + 1) for x in k]) for r, w in zip(ra, wa))
        fb = np.exp(-5 + k * np.log(5) - np.array([math.lgamma(x + 1) for x in k]))
        assert math.isclose(mixture_tv(ra, wa, rb, wb), 0.5 * np.abs(fa - fb).sum(), abs_tol=1e-10)

    def test_large_rates_truncation(self):
        # the tail beyond K is below tail_eps even for rates in the thousands
        assert mixture_tv([3000.0], [1.0], [3000.0], [1.0], tail_eps=1e-9) <= 2e-9

    def test_identical_pair(self, desk_pair):
        same = MomentMatchedPair(desk_pair.support, desk_pair.w, desk_pair.w, 0, 8, 0.05, 0, desk_pair.params)
        assert poisson_mixture_tv(same, 16) <= 1.1e-12


class TestMomentLp:
    def test_moments_and_feasibility(self, desk_pair):
        assert desk_pair.moment_gap <= 1e-8
        assert desk_pair.w @ np.abs(desk_pair.support) <= 0.05 / 2 + 1e-9
        assert np.all(desk_pair.w >= 0) and np.all(desk_pair.w_prime >= 0)
        assert math.isclose(desk_pair.w.sum(), 1) and math.isclose(desk_pair.w_prime.sum(), 1)

    def test_objective_at_least_trivial(self, desk_pair):
        # Y' = Y is feasible, so the optimum is at least E|Y| for any feasible Y
        assert desk_pair.objective >= 0.05 / 2 - 1e-9

    def test_no_matching_reaches_far_endpoint(self):
        prob = MomentProblem.from_endpoints(3.0, 1.0, 0, 0.1)
        assert math.isclose(solve_moment_lp(prob).objective, 3.0)

    def test_degree_cap(self):
        with pytest.raises(InvalidParametersError):
            solve_moment_lp(MomentProblem.from_endpoints(3.0, 1.0, MAX_DEGREE + 1, 0.1))

    def test_objective_grows_as_L_shrinks(self):
        vals = [solve_moment_lp(MomentProblem.from_endpoints(5.0, 0.9, L, 0.1)).objective for L in (16, 8, 4, 2)]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_weak_duality(self):
        for params in (explicit_parameters(64, 16, 0.05, 4, 4, 4), explicit_parameters(64, 16, 0.2, 4, 4, 8)):
            pair = solve_for_params(params)
            assert quadratic_dual_witness(pair.support, params.eps1) >= pair.objective - 1e-9

    def test_strong_duality_from_solver_multipliers(self, desk_pair):
        # rebuild the dual polynomial from the solver's multipliers and evaluate it
        s = desk_pair.support
        R = np.abs(s).max()
        alpha = desk_pair.extra["lp_dual_ub"]
        lam = np.array(desk_pair.extra["lp_dual_eq"][:desk_pair.L])
        cheb = np.polynomial.chebyshev.chebvander(s / R, desk_pair.L)[:, 1:]
        P = -(cheb @ lam)  # the solver reports multipliers of the minimized negated objective
        value = alpha * 0.05 / 2 + np.max(np.abs(s) - P) + np.max(P - alpha * np.abs(s))
        assert value >= desk_pair.objective - 1e-9
        assert math.isclose(value, desk_pair.objective, rel_tol=1e-5, abs_tol=1e-8)

    def test_dual_objective_rejects_negative_alpha(self):
        with pytest.raises(InvalidParametersError):
            dual_objective([0.0, 1.0], 0.1, [1.0], -1)

    def test_json_round_trip(self, desk_pair):
        back = MomentMatchedPair.from_json(desk_pair.to_json())
        assert np.array_equal(back.w_prime, desk_pair.w_prime) and back.objective == desk_pair.objective

    def test_moment_gap_detects_mismatch(self):
        s = np.array([-1.0, 0.0, 1.0])
        assert moment_gap(s, [0.5, 0, 0.5], [0, 1, 0], 1) == 0
        assert math.isclose(moment_gap(s, [0.5, 0, 0.5], [0, 1, 0], 2), 1.0)


class TestPriors:
    def test_transform(self, desk_pair):
        n = 64
        u, w, wp = desk_pair.priors(n)
        assert math.isclose(w @ u, 1 / n, abs_tol=1e-9)
        assert math.isclose(wp @ u, 1 / n, abs_tol=1e-9)
        k, M, m = 4, 4, 16
        active = (w > 0) | (wp > 0)
        assert u[active].min() >= (k - M) / m - 1e-12 and u[active].max() <= (k + M) / m + 1e-12

    def test_tv_below_bound(self, desk_pair):
        assert poisson_mixture_tv(desk_pair, 16) <= mm_tv_bound(4, 4, 8)

    def test_point_mass_gives_uniform(self):
        pair = MomentMatchedPair(np.array([0.0]), np.array([1.0]), np.array([1.0]), 0, 2, 0.1, 0)
        D, rep = build_prior_instance(pair, 30, "close", RngStream(1))
        assert np.allclose(D.weights, make_uniform(30).weights)
        assert rep.event_held and rep.distance == 0

    def test_event_implications(self, desk_pair):
        for t in range(200):
            for which in ("close", "far"):
                D, rep = build_prior_instance(desk_pair, 64, which, RngStream(t, 3))
                assert math.isclose(D.weights.sum(), 1)
                if rep.event_held and which == "close":
                    assert rep.distance <= 25 * desk_pair.eps1
                if rep.event_held and which == "far":
                    assert rep.distance >= rep.eps2 / 2

    def test_bad_side(self, desk_pair):
        with pytest.raises(InvalidParametersError):
            build_prior_instance(desk_pair, 64, "maybe", RngStream(0))


class TestDualBound:
    def test_example(self):
        assert math.isclose(dual_bound_value(0.01, 1, 1, 4), 0.0125 / 12, rel_tol=1e-12)

    def test_range(self):
        with pytest.raises(OutOfRangeError):
            dual_bound_value(0.3, 1, 1, 4)
        with pytest.raises(OutOfRangeError):
            dual_bound_value(0.0, 1, 1, 4)

    @given(st.floats(1e-6, 0.2), st.floats(1, 50), st.floats(1, 50), st.integers(1, 32))
    @settings(max_examples=50)
    def test_sqrt_scaling(self, eps1, A, B, L):
        a = dual_bound_value(eps1, A, B, L)
        b = dual_bound_value(eps1 / 4, A, B, L)
        assert math.isclose(a, 2 * b, rel_tol=1e-12)
