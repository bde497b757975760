import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toltest.distributions import (
    Histogram,
    Pmf,
    make_uniform,
    paninski_perturbation,
    sample_histogram_poisson,
    zipf_pmf,
)
from toltest.errors import DimensionError, InvalidParametersError, InvalidScalingError
from toltest.rng import RngStream
from toltest.tester import (
    DEFAULT_C,
    Decision,
    PoissonSampler,
    TesterConfig,
    Verdict,
    expected_z_exact,
    majority,
    repetitions,
    run_core_test,
    scaling_factor_estimate,
    scaling_factor_true,
    statistic_z,
    sufficient_samples,
    tau_value,
    test_equivalence as equivalence,
    test_identity as identity,
    threshold_tau,
    variance_z_exact,
    warn_if_tolerance_too_large,
)


def zeros(n):
    return Histogram(np.zeros(n, dtype=int))


class TestScalingFactors:
    def test_true_examples(self):
        assert scaling_factor_true(0, 0, 50, 10) == 1
        assert math.isclose(scaling_factor_true(0.2, 0.1, 100, 10), 3.16228, rel_tol=1e-5)
        assert scaling_factor_true(0.5, 0.3, 5, 10) == 4

    def test_estimate_examples(self):
        assert scaling_factor_estimate(0, 0, 100, 4) == 1
        assert math.isclose(scaling_factor_estimate(10, 2, 100, 4), 1.6)
        assert scaling_factor_estimate(3, 1, 5, 10) == 4

    @given(st.integers(0, 500), st.integers(0, 500), st.floats(1, 1e5), st.integers(1, 10**4))
    def test_estimate_at_least_one(self, x, y, m, n):
        assert scaling_factor_estimate(x, y, m, n) >= 1


class TestStatistic:
    def test_examples(self):
        assert statistic_z(zeros(3), zeros(3), [1, 1, 1]) == 0
        assert statistic_z(Histogram(np.array([2, 0])), Histogram(np.array([0, 2])), [1, 1]) == 4
        assert statistic_z(Histogram(np.array([1, 1])), Histogram(np.array([1, 1])), [1, 1]) == -4

    def test_rejects_small_scaling(self):
        with pytest.raises(InvalidScalingError):
            statistic_z(zeros(2), zeros(2), [1, 0.5])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            statistic_z(zeros(2), zeros(3), [1, 1])


class TestThreshold:
    def test_example(self):
        assert threshold_tau(TesterConfig(0.5, 100, 100, 1.0)) == 25

    def test_zero_eps(self):
        assert tau_value(100, 100, 0.0, 1.0) == 0

    def test_config_validation(self):
        with pytest.raises(InvalidParametersError):
            TesterConfig(0.0, 10, 10)
        with pytest.raises(InvalidParametersError):
            TesterConfig(0.5, 10, 10, c=0)


class TestExactMoments:
    def test_examples(self):
        assert np.all(expected_z_exact(zipf_pmf(5), zipf_pmf(5), 30) == 0)
        assert math.isclose(expected_z_exact([0.2], [0.1], 10)[0], 1.0)
        assert variance_z_exact([0.0], [0.0], 10)[0] == 0
        assert math.isclose(variance_z_exact([0.2], [0.1], 10)[0], 30)

    def test_against_simulation(self):
        # one small instance; the acceptance suite covers 20 random ones
        g = RngStream(11).generator
        p, q, m, reps = np.array([0.5, 0.3, 0.2]), np.array([0.2, 0.3, 0.5]), 20.0, 200_000
        X = g.poisson(m * p, size=(reps, 3))
        Y = g.poisson(m * q, size=(reps, 3))
        Z = (X - Y) ** 2 - X - Y
        se = Z.std(0) / math.sqrt(reps)
        assert np.all(np.abs(Z.mean(0) - expected_z_exact(p, q, m)) < 4 * se)
        assert np.all(np.abs(Z.var(0) / variance_z_exact(p, q, m) - 1) < 0.03)


class TestCoreTest:
    def test_all_zero_is_close(self):
        cfg = TesterConfig(0.5, 10, 4, 0.5)
        v = run_core_test(zeros(4), zeros(4), zeros(4), zeros(4), cfg)
        assert v.decision is Decision.CLOSE and v.z_value == 0

    def test_tie_goes_to_far(self):
        # fhat = 1 everywhere, Z = (36 - 6) + (25 - 5) = 50 = tau at c = 2
        cfg = TesterConfig(0.5, 100, 100, 2.0)
        x = np.zeros(100, dtype=int)
        x[:2] = [6, 5]
        v = run_core_test(zeros(100), zeros(100), Histogram(x), zeros(100), cfg)
        assert v.z_value == v.tau == 50
        assert v.is_far

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            run_core_test(zeros(3), zeros(3), zeros(3), zeros(3), TesterConfig(0.5, 10, 4))

    def test_close_rate_uniform(self):
        n = 500
        m = 4 * math.sqrt(n) / 0.25
        cfg = TesterConfig(0.5, m, n)
        q = make_uniform(n)
        close = 0
        for t in range(400):
            g = RngStream(t, 101).generator
            close += not run_core_test(*[sample_histogram_poisson(q, m, g) for _ in range(4)], cfg).is_far
        assert close / 400 >= 0.75

    @pytest.mark.xfail(strict=True, reason="at m = 4 sqrt(n)/eps2^2 the far rate measures about 0.67 "
                                           "with the calibrated c; the margin is too thin at this budget")
    def test_far_rate_paninski(self):
        n = 500
        m = 4 * math.sqrt(n) / 0.25
        cfg = TesterConfig(0.5, m, n)
        q = make_uniform(n)
        far = 0
        for t in range(400):
            g = RngStream(t, 102).generator
            p = paninski_perturbation(n, 0.5, g)
            far += run_core_test(*[sample_histogram_poisson(x, m, g) for x in (p, q, p, q)], cfg).is_far
        assert far / 400 >= 0.75


class TestAmplification:
    def test_repetitions(self):
        assert repetitions(0.2) == 1
        assert repetitions(0.01) == 83
        assert repetitions(0.1) == math.ceil(18 * math.log(10))
        with pytest.raises(InvalidParametersError):
            repetitions(1.0)

    def test_majority_far_wins_ties(self):
        far = Verdict(Decision.FAR, 10.0, 5.0, 1, 1, 0.5, 1)
        close = Verdict(Decision.CLOSE, 1.0, 5.0, 1, 1, 0.5, 1)
        v = majority([close, far])
        assert v.is_far and v.far_votes == 1 and v.runs == 2
        assert majority([close, close, far]).decision is Decision.CLOSE

    def test_amplified_runs(self):
        q = make_uniform(50)
        v = identity(q, PoissonSampler(q), 200, 0.5, delta=0.05, rng=RngStream(2))
        assert v.runs == repetitions(0.05)
        assert v.samples == 2 * 200 * v.runs


class TestWrappers:
    def test_identity_reproducible(self):
        q = zipf_pmf(64)
        a = identity(q, PoissonSampler(q), 300, 0.5, rng=RngStream(42))
        b = identity(q, PoissonSampler(q), 300, 0.5, rng=RngStream(42))
        assert a.to_dict() == b.to_dict()

    def test_equivalence_budget_and_json(self):
        q = zipf_pmf(64)
        v = equivalence(PoissonSampler(q), PoissonSampler(q), 300, 0.5, rng=RngStream(1))
        d = json.loads(v.to_json())
        assert d["samples"] == 4 * 300 and d["decision"] in ("close", "far") and "z" in d

    def test_identity_close_rate_500(self):
        n = 500
        q = make_uniform(n)
        m = 8 * math.sqrt(2 * n) / 0.25
        close = sum(not identity(q, PoissonSampler(q), m, 0.5, rng=RngStream(t, 7)).is_far
                    for t in range(400))
        assert close / 400 >= 0.75

    def test_far_detected_at_large_budget(self):
        q = make_uniform(100)
        p = paninski_perturbation(100, 0.5, RngStream(3).generator)
        m = 50 * math.sqrt(200) / 0.25
        assert sum(identity(q, PoissonSampler(p), m, 0.5, rng=RngStream(t, 9)).is_far
                   for t in range(50)) >= 48

    def test_tolerance_grows_with_budget(self):
        # the same statistic accepts a fixed eps1-close p more often as m grows
        n, e1 = 128, 0.1
        q = make_uniform(n)
        p = paninski_perturbation(n, e1, RngStream(5).generator)
        rates = []
        for m in (sufficient_samples(2 * n, 0, 0.5), sufficient_samples(2 * n, e1, 0.5, 32)):
            rates.append(sum(not identity(q, PoissonSampler(p), m, 0.5, rng=RngStream(t, 13)).is_far
                             for t in range(200)) / 200)
        assert rates[1] >= rates[0] and rates[1] >= 0.9

    def test_warns_on_large_tolerance(self):
        with pytest.warns(UserWarning):
            warn_if_tolerance_too_large(0.2, 0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            warn_if_tolerance_too_large(0.01, 0.5)
            warn_if_tolerance_too_large(None, 0.5)


def test_sufficient_samples_formula():
    n, e1, e2 = 256, 0.05, 0.5
    rho = e1 / e2**2
    assert math.isclose(sufficient_samples(n, e1, e2, 1.0), n * rho**2 + n * rho + 16 / 0.25)


def test_default_constant_is_the_calibrated_value():
    assert DEFAULT_C == 0.4611
