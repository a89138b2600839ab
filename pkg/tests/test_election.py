import itertools
import math

import numpy as np
import pytest
from scipy.stats import chi2

from adaptive_conformal.core import AciConfig
from adaptive_conformal.election import (
    CountyRecord,
    cqr_prediction_stream,
    fit_quantile_regression,
    generate_synthetic_counties,
    pinball_loss,
    replay_prediction_stream,
    run_election_experiment,
    sample_ordering,
)
from adaptive_conformal.errors import ConfigurationError, DomainError, NoDataError


def mean_pinball(responses, design, model):
    resid = responses - model.predict(design)
    return float(np.mean(pinball_loss(resid, model.level)))


class TestPinball:
    @pytest.mark.parametrize("u,p,expected", [(1.0, 0.9, 0.9), (-1.0, 0.9, 0.1), (0.0, 0.5, 0.0)])
    def test_values(self, u, p, expected):
        assert pinball_loss(u, p) == pytest.approx(expected)

    def test_level_domain(self):
        with pytest.raises(DomainError):
            pinball_loss(1.0, 0.0)


class TestQuantileRegression:
    def test_constant_responses(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        model = fit_quantile_regression(X, np.full(40, 5.0), 0.5)
        assert model.intercept == pytest.approx(5.0, abs=1e-9)
        np.testing.assert_allclose(model.coefficients, 0.0, atol=1e-9)

    @pytest.mark.parametrize("level,lo,hi", [(0.5, 50.0, 51.0), (0.9, 90.0, 91.0)])
    def test_intercept_only_matches_grid_scan(self, level, lo, hi):
        responses = np.arange(1.0, 101.0)
        model = fit_quantile_regression(np.empty((100, 0)), responses, level)
        assert lo <= model.intercept <= hi
        # Grid-scan oracle at resolution 1e-3 over the candidates' range.
        grid = np.arange(0.0, 102.0, 1e-3)
        losses = [float(np.mean(pinball_loss(responses - g, level))) for g in grid]
        best = min(losses)
        fitted = float(np.mean(pinball_loss(responses - model.intercept, level)))
        assert fitted <= best + 1e-5

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(120, 3))
        y = 1.5 + X @ np.array([2.0, -1.0, 0.5]) + rng.standard_t(df=4, size=120)
        model = fit_quantile_regression(X, y, 0.3)
        base = mean_pinball(y, X, model)
        beta = np.concatenate([[model.intercept], model.coefficients])
        for _ in range(100):
            pert = beta + rng.normal(scale=1e-2, size=beta.size)
            resid = y - (pert[0] + X @ pert[1:])
            assert base <= float(np.mean(pinball_loss(resid, 0.3))) + 1e-12

    def test_rank_deficient_design_gets_flagged_fallback(self):
        rng = np.random.default_rng(5)
        col = rng.normal(size=60)
        X = np.column_stack([col, 2.0 * col])  # collinear
        y = 0.5 + col + rng.normal(scale=0.1, size=60)
        model = fit_quantile_regression(X, y, 0.5)
        assert model.regularized
        # Still close to the optimum of the (degenerate) problem.
        direct = fit_quantile_regression(col[:, None], y, 0.5)
        assert mean_pinball(y, X, model) <= mean_pinball(y, col[:, None], direct) + 1e-4

    def test_underdetermined_rejected(self):
        with pytest.raises(NoDataError):
            fit_quantile_regression(np.random.default_rng(0).normal(size=(3, 5)), np.zeros(3), 0.5)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(200, 4))
        y = X @ np.ones(4) + rng.normal(size=200)
        m1 = fit_quantile_regression(X, y, 0.05)
        m2 = fit_quantile_regression(X, y, 0.05)
        assert m1.intercept == m2.intercept
        np.testing.assert_array_equal(m1.coefficients, m2.coefficients)


class TestOrdering:
    def test_infinite_sigma_sorts_by_population(self):
        order = sample_ordering([5.0, 9.0, 1.0], math.inf, np.random.default_rng(0))
        np.testing.assert_array_equal(order, [1, 0, 2])

    def test_single_county(self):
        np.testing.assert_array_equal(sample_ordering([7.0], 3.0, np.random.default_rng(0)), [0])

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            sample_ordering([1.0, 2.0], -0.1, np.random.default_rng(0))

    def test_sigma_zero_is_uniform(self):
        # Chi-square over all 24 permutations of 4 counties, 1e5 draws.
        rng = np.random.default_rng(123)
        pops = np.array([1.0, 2.0, 3.0, 4.0])
        perms = {p: i for i, p in enumerate(itertools.permutations(range(4)))}
        counts = np.zeros(24)
        draws = 100_000
        for _ in range(draws):
            counts[perms[tuple(sample_ordering(pops, 0.0, rng))]] += 1
        expected = draws / 24
        stat = float(np.sum((counts - expected) ** 2 / expected))
        assert 1.0 - chi2.cdf(stat, df=23) > 0.001

    def test_matches_sequential_sampling_distribution(self):
        # Exact permutation probabilities of sequential weighted sampling
        # without replacement: prod_i w_{pi_i} / (remaining weight).
        rng = np.random.default_rng(77)
        pops = np.array([0.2, 0.9, 1.7, 0.5])
        sigma = 1.3
        w = np.exp(sigma * pops)
        exact = {}
        for perm in itertools.permutations(range(4)):
            prob, rest = 1.0, list(range(4))
            for i in perm:
                prob *= w[i] / w[rest].sum()
                rest.remove(i)
            exact[perm] = prob
        draws = 100_000
        counts = {p: 0 for p in exact}
        for _ in range(draws):
            counts[tuple(sample_ordering(pops, sigma, rng))] += 1
        tv = 0.5 * sum(abs(counts[p] / draws - exact[p]) for p in exact)
        assert tv <= 0.02


class TestSyntheticCounties:
    def test_empty(self):
        assert generate_synthetic_counties(0, 3, seed=0) == []

    def test_deterministic(self):
        a = generate_synthetic_counties(50, 5, seed=9)
        b = generate_synthetic_counties(50, 5, seed=9)
        assert a == b

    def test_shape_matches_study_scale(self):
        counties = generate_synthetic_counties(3000, 11, seed=1)
        assert len(counties) == 3000
        assert all(c.covariates.shape == (11,) for c in counties[:10])
        assert all(c.population > 0 and c.y_prev > 0 and c.y >= 0 for c in counties)

    def test_record_validation(self):
        with pytest.raises(ConfigurationError):
            CountyRecord("x", 0.0, np.zeros(2), 10.0, 5.0)
        with pytest.raises(ConfigurationError):
            CountyRecord("x", 10.0, np.zeros(2), 0.0, 5.0)


class TestExperiment:
    CONFIG = AciConfig(0.1, 0.005)

    def _setup(self, n=680, seed=3):
        counties = generate_synthetic_counties(n, 4, seed=seed)
        pops = np.array([c.population for c in counties])
        order = sample_ordering(pops, 0.0, np.random.default_rng(seed))
        return counties, order

    def test_warmup_produces_no_predictions(self):
        counties, order = self._setup()
        report = run_election_experiment(
            counties, order, self.CONFIG, warmup=500, refit_every=30,
            rng=np.random.default_rng(0),
        )
        assert len(report) == len(counties) - 500
        assert report.step_labels[0] == counties[order[500]].id

    def test_coverage_bound_on_trajectory(self):
        counties, order = self._setup(seed=5)
        report = run_election_experiment(
            counties, order, self.CONFIG, warmup=500, refit_every=30,
            rng=np.random.default_rng(1),
        )
        n = len(report)
        gap = abs(float(np.mean(report.errs)) - 0.1)
        assert gap <= (0.9 + 0.005) / (n * 0.005)

    def test_vote_interval_is_affine_image_and_dual_to_err(self):
        counties, order = self._setup(seed=7)
        report = run_election_experiment(
            counties, order, self.CONFIG, warmup=500, refit_every=30,
            rng=np.random.default_rng(2),
        )
        seq = [counties[i] for i in order][500:]
        for county, err, iv in zip(seq, report.errs, report.intervals):
            if not iv.is_empty and not iv.is_whole_line:
                r_lo = iv.lower / county.y_prev - 1.0
                r_hi = iv.upper / county.y_prev - 1.0
                assert r_lo <= r_hi
            assert bool(err) == (not iv.contains(county.y))

    def test_stream_replay_matches_direct_run(self):
        counties, order = self._setup(seed=11)
        direct = run_election_experiment(
            counties, order, self.CONFIG, warmup=500, refit_every=30,
            rng=np.random.default_rng(42),
        )
        stream = cqr_prediction_stream(
            counties, order, 0.1, warmup=500, refit_every=30,
            rng=np.random.default_rng(42),
        )
        assert replay_prediction_stream(stream, self.CONFIG) == direct

    def test_too_few_counties(self):
        counties, order = self._setup(n=100)
        with pytest.raises(NoDataError):
            run_election_experiment(counties, order, self.CONFIG, warmup=500)
