import math

import numpy as np
import pytest
from scipy import stats

from dncbmf.randist import (BesselParams, RngStream, philox4x64, sample_bessel,
                            sample_beta, sample_dncb, sample_gamma, sample_multinomial,
                            sample_poisson)
from dncbmf.specfun import DomainError
from oracles import bessel_pmf_table, chisq_pvalue, dncb_equal_mass_bins


def test_philox_block_matches_numpy():
    for key, ctr in [((5, 7), (10, 0, 0, 0)), ((2**63 + 5, 3), (2**40, 9, 1, 4))]:
        bg = np.random.Philox(key=np.array(key, np.uint64),
                              counter=np.array(ctr, np.uint64))
        # numpy advances the counter before producing a block
        c = [np.uint64(ctr[0] + 1)] + [np.uint64(t) for t in ctr[1:]]
        ours = philox4x64(*c, np.uint64(key[0]), np.uint64(key[1]))
        np.testing.assert_array_equal(np.array(ours, dtype=np.uint64), bg.random_raw(4))


class TestRngStream:
    def test_same_key_same_sequence(self):
        a = sample_gamma(0.3, 1.0, RngStream(11, 2), size=1000)
        b = sample_gamma(0.3, 1.0, RngStream(11, 2), size=1000)
        np.testing.assert_array_equal(a, b)

    def test_bessel_sequence_is_reproducible(self):
        p = BesselParams(-0.25, 7.0)
        a = sample_bessel(p, RngStream(3, 0), size=5000)
        b = sample_bessel(p, RngStream(3, 0), size=5000)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_independent(self):
        a = RngStream(11, 0).random(20_000)
        b = RngStream(11, 1).random(20_000)
        assert not np.array_equal(a, b)
        assert abs(stats.pearsonr(a, b)[0]) < 4 / math.sqrt(20_000)
        assert stats.ks_2samp(a, b).pvalue > 1e-3

    def test_uniforms_open_interval(self):
        u = RngStream(0).random(100_000)
        assert u.min() > 0 and u.max() < 1
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_rejects_negative_seed(self):
        with pytest.raises(DomainError):
            RngStream(-1)


class TestGamma:
    def test_mean(self):
        x = sample_gamma(2.0, 4.0, RngStream(1), size=100_000)
        se = math.sqrt(2.0) / 4.0 / math.sqrt(x.size)
        assert abs(x.mean() - 0.5) < 4 * se

    def test_unit_shape_is_exponential(self):
        x = sample_gamma(1.0, 1.0, RngStream(2), size=100_000)
        assert stats.kstest(x, "expon").pvalue > 1e-3

    @pytest.mark.parametrize("shape", [0.05, 0.3, 0.9, 3.0, 40.0])
    def test_distribution(self, shape):
        x = sample_gamma(shape, 2.5, RngStream(3), size=50_000)
        assert stats.kstest(x, stats.gamma(shape, scale=1 / 2.5).cdf).pvalue > 1e-3

    def test_sparse_prior_no_zero_or_nan(self):
        x = sample_gamma(0.1, 0.1, RngStream(4), size=1_000_000)
        assert np.all(np.isfinite(x)) and np.all(x > 0)

    @pytest.mark.parametrize("shape, rate", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0),
                                             (math.nan, 1.0)])
    def test_domain(self, shape, rate):
        with pytest.raises(DomainError):
            sample_gamma(shape, rate, RngStream(0))


class TestPoisson:
    @pytest.mark.parametrize("lam", [0.3, 4.0, 9.99, 10.0, 37.5, 1e4])
    def test_pmf(self, lam):
        x = sample_poisson(lam, RngStream(5), size=100_000)
        assert abs(x.mean() - lam) < 4 * math.sqrt(lam / x.size)
        hi = int(lam + 12 * math.sqrt(lam) + 15)
        counts = np.bincount(np.minimum(x, hi), minlength=hi + 1)
        probs = stats.poisson.pmf(np.arange(hi + 1), lam)
        probs[-1] += stats.poisson.sf(hi, lam)
        assert chisq_pvalue(counts, probs) > 1e-3

    def test_zero_rate(self):
        assert np.all(sample_poisson(0.0, RngStream(0), size=100) == 0)


class TestMultinomial:
    def test_zero_trials(self):
        np.testing.assert_array_equal(sample_multinomial(0, [1.0, 2.0], RngStream(0)), [0, 0])

    def test_single_category(self):
        np.testing.assert_array_equal(sample_multinomial(17, [0.3], RngStream(0)), [17])

    def test_component_means(self):
        x = sample_multinomial(100, [1.0, 1.0, 2.0], RngStream(6), size=10_000)
        assert np.all(x.sum(axis=1) == 100)
        p = np.array([0.25, 0.25, 0.5])
        se = np.sqrt(100 * p * (1 - p) / len(x))
        assert np.all(np.abs(x.mean(axis=0) - 100 * p) < 4 * se)

    @pytest.mark.parametrize("n", [3, 50, 5000])
    def test_marginal_is_binomial(self, n):
        x = sample_multinomial(n, [0.2, 3.0, 1.0], RngStream(7), size=20_000)[:, 0]
        p = 0.2 / 4.2
        probs = stats.binom.pmf(np.arange(n + 1), n, p)
        assert chisq_pvalue(np.bincount(x, minlength=n + 1), probs) > 1e-3

    @pytest.mark.parametrize("w", [[], [1.0, 0.0], [1.0, -2.0], [1.0, math.inf]])
    def test_domain(self, w):
        with pytest.raises(DomainError):
            sample_multinomial(5, w, RngStream(0))


class TestBessel:
    def test_zero_argument(self):
        assert np.all(sample_bessel(BesselParams(-0.25, 0.0), RngStream(0), size=1000) == 0)

    def test_mean_against_bessel_ratio(self):
        p = BesselParams(-0.25, 2.0)
        x = sample_bessel(p, RngStream(8), size=100_000)
        pmf = bessel_pmf_table(-0.25, 2.0)
        k = np.arange(pmf.size)
        sd = math.sqrt(np.sum(pmf * k**2) - np.sum(pmf * k) ** 2)
        assert abs(x.mean() - p.mean()) < 4 * sd / math.sqrt(x.size)

    @pytest.mark.parametrize("v, a", [(0.0, 5.0), (-0.9, 0.009), (-0.9, 1.0),
                                      (2.5, 60.0), (-0.25, 900.0), (0.0, 2e5)])
    def test_exact_pmf(self, v, a):
        x = sample_bessel(BesselParams(v, a), RngStream(9), size=100_000)
        pmf = bessel_pmf_table(v, a)
        counts = np.bincount(np.minimum(x, pmf.size - 1), minlength=pmf.size)
        assert chisq_pvalue(counts, pmf) > 1e-3

    def test_analytic_mean_matches_pmf(self):
        pmf = bessel_pmf_table(1.0, 20.0)
        assert BesselParams(1.0, 20.0).mean() == pytest.approx(
            np.sum(pmf * np.arange(pmf.size)), rel=1e-12)

    @pytest.mark.parametrize("v, a", [(-1.0, 1.0), (0.0, -1.0), (0.0, math.inf)])
    def test_domain(self, v, a):
        with pytest.raises(DomainError):
            BesselParams(v, a)


class TestBetaAndDncb:
    def test_beta_draws(self):
        x = sample_beta(0.5, 3.0, RngStream(10), size=100_000)
        assert stats.kstest(x, stats.beta(0.5, 3.0).cdf).pvalue > 1e-3

    def test_zero_noncentrality_is_beta(self):
        x = sample_dncb(2.0, 3.0, 0.0, 0.0, RngStream(11), size=100_000)
        assert stats.kstest(x, stats.beta(2.0, 3.0).cdf).pvalue > 1e-3

    def test_histogram_matches_density(self):
        e1, e2, l1, l2 = 0.5, 0.5, 10.0, 10.0
        x = sample_dncb(e1, e2, l1, l2, RngStream(12), size=100_000)
        edges, masses = dncb_equal_mass_bins(e1, e2, l1, l2)
        counts, _ = np.histogram(x, edges)
        assert chisq_pvalue(counts, masses / masses.sum()) > 1e-3

    def test_strictly_interior(self):
        for e1, e2 in [(0.05, 0.05), (0.25, 3.0)]:
            x = sample_dncb(e1, e2, 0.0, 0.0, RngStream(13), size=200_000)
            assert x.min() > 0 and x.max() < 1

    def test_rejects_invalid(self):
        with pytest.raises(DomainError):
            sample_dncb(0.0, 1.0, 1.0, 1.0, RngStream(0))
        with pytest.raises(DomainError):
            sample_dncb(1.0, 1.0, -1.0, 1.0, RngStream(0))


@pytest.mark.parametrize("draw", [
    lambda r: sample_gamma(0.05, 3.0, r, size=1_000_000),
    lambda r: sample_poisson(123.4, r, size=1_000_000),
    lambda r: sample_beta(0.1, 0.1, r, size=1_000_000),
    lambda r: sample_bessel(BesselParams(-0.5, 30.0), r, size=1_000_000),
    lambda r: sample_dncb(0.25, 0.25, 3.0, 1.0, r, size=1_000_000),
])
def test_million_draws_finite(draw):
    x = np.asarray(draw(RngStream(99)), dtype=float)
    assert np.all(np.isfinite(x)) and np.all(x >= 0)
