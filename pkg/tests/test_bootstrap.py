import numpy as np
import pytest

from jointimpute.bootstrap import (
    BootstrapConfig,
    batch_tilde_statistics,
    bootstrap_variance,
    percentile_ci,
    replicate_statistics,
    rescaled_weights,
    rwy_weights,
)
from jointimpute.errors import DataError
from jointimpute.popgen import benchmark_spec, generate_population
from jointimpute.rng import RngStream
from jointimpute.sampling import generate_response, srswor

from conftest import make_dataset


def masked_sample(n=300, seed=42):
    spec = benchmark_spec()
    pop = generate_population(spec)
    rng = RngStream(seed)
    samp = srswor(pop, n, rng.child(0))
    return generate_response(samp, spec, rng.child(1)).masked


class TestRescaledWeights:
    def test_identity_resample(self):
        w = rescaled_weights(10.0, 4, 4, 100, np.ones(4))
        assert np.allclose(w, 10.0, atol=1e-15)

    def test_two_unit_example(self):
        # n=2, N=4, n'=2, m=(2,0): c = 2*(1-0.5)/1 = 1, weights (2w, 0)
        w = rescaled_weights(3.0, 2, 2, 4, [2, 0])
        assert np.allclose(w, [6.0, 0.0], atol=1e-12)

    def test_weight_mean_unbiased_large_population(self):
        base, n = 5.0, 100
        rng = RngStream(7)
        acc = np.zeros(n)
        reps = 4000
        for c in range(reps):
            gen = rng.child(c).generator()
            m = np.bincount(gen.integers(0, n, size=n), minlength=n)
            acc += rescaled_weights(base, n, n, 10**9, m)
        mean = acc / reps
        se = base * np.sqrt(1.0 / n) / np.sqrt(reps) * np.sqrt(n)  # ~w*sd(m)/sqrt(R)
        assert np.all(np.abs(mean - base) < 4 * se)

    def test_rwy_weights_match_helper(self):
        data = masked_sample(n=50)
        config = BootstrapConfig(replicates=2)
        rep = rwy_weights(data, config, RngStream(3, 1))
        expect = rescaled_weights(float(data.weights[0]), data.n, data.n,
                                  data.population_size, rep.multiplicities)
        assert np.array_equal(rep.weights, expect)
        assert rep.multiplicities.sum() == data.n

    def test_requires_equal_weights(self):
        data = make_dataset([("a", 1, 1, 1, 1), ("b", 2, 1, 0, 0)],
                            population_size=4)
        with pytest.raises(DataError, match="equal-weight"):
            rwy_weights(data, BootstrapConfig(replicates=2), RngStream(1))

    def test_requires_two_units(self):
        data = make_dataset([("a", 2, 1, 1, 1)], population_size=2)
        with pytest.raises(DataError):
            rwy_weights(data, BootstrapConfig(replicates=2), RngStream(1))

    def test_negative_weights_pass_through(self):
        data = masked_sample(n=20, seed=9)
        found_negative = False
        for c in range(50):
            rep = rwy_weights(data, BootstrapConfig(replicates=2),
                              RngStream(5, c))
            if rep.weights.min() < 0:
                found_negative = True
                break
        assert found_negative

    def test_weight_sum_invariant(self):
        # sum of rescaled weights is exactly n * w for every resample
        data = masked_sample(n=80, seed=11)
        for c in range(20):
            rep = rwy_weights(data, BootstrapConfig(replicates=2),
                              RngStream(6, c))
            assert rep.weights.sum() == pytest.approx(
                data.weights.sum(), abs=1e-8)


class TestPercentileCi:
    def test_paper_scale_ranks(self):
        stats = np.arange(1, 2001, dtype=float)
        lo, hi = percentile_ci(stats, 0.025)
        assert (lo, hi) == (50.0, 1950.0)

    def test_small_sample_ranks(self):
        stats = np.arange(1, 41, dtype=float)
        lo, hi = percentile_ci(stats, 0.025)
        assert (lo, hi) == (1.0, 39.0)

    def test_constant_sequence(self):
        lo, hi = percentile_ci(np.full(100, 3.25), 0.05)
        assert lo == hi == 3.25

    def test_too_few_replicates(self):
        with pytest.raises(DataError, match="replicates"):
            percentile_ci(np.arange(10.0), 0.025)


class TestBootstrapVariance:
    def test_degenerate_population_zero_variance(self):
        # every unit identical: the estimator is the constant sum(w*)/N,
        # and the rescaled weight total is invariant across resamples
        data = make_dataset([(f"u{i}", 5.0, 1, 1, 1) for i in range(20)],
                            population_size=100, x_categories=2,
                            y_categories=2)
        result = bootstrap_variance(data, BootstrapConfig(replicates=50),
                                    RngStream(1))
        assert result.variances["p_11"] == pytest.approx(0.0, abs=1e-28)
        assert np.isnan(result.variances["odds_ratio"])  # undefined throughout

    def test_two_replicates_formula(self):
        data = masked_sample(n=120, seed=3)
        result = bootstrap_variance(data, BootstrapConfig(replicates=2),
                                    RngStream(2))
        a, b = result.statistics["p_11"]
        assert result.variances["p_11"] == pytest.approx((a - b) ** 2 / 2)

    def test_batch_matches_scalar_path(self):
        data = masked_sample(n=240, seed=5)
        config = BootstrapConfig(replicates=6)
        result = bootstrap_variance(data, config, RngStream(4))
        for c in range(config.replicates):
            rep = rwy_weights(data, config, RngStream(4).child(c))
            scalar = replicate_statistics(data, rep.weights)
            for i, key in enumerate(("p_x1", "p_y1", "p_11", "odds_ratio")):
                assert result.statistics[key][c] == pytest.approx(
                    scalar[key], abs=1e-12)

    def test_replicate_path_uses_no_rng(self):
        data = masked_sample(n=100, seed=6)
        rep = rwy_weights(data, BootstrapConfig(replicates=2), RngStream(9, 0))
        w = np.tile(rep.weights, (2, 1))
        a, _ = batch_tilde_statistics(data, w)
        b, _ = batch_tilde_statistics(data, w)
        assert np.array_equal(a, b)
        assert np.array_equal(a[0], a[1])

    def test_deterministic_given_stream(self):
        data = masked_sample(n=100, seed=8)
        cfg = BootstrapConfig(replicates=30)
        a = bootstrap_variance(data, cfg, RngStream(12))
        b = bootstrap_variance(data, cfg, RngStream(12))
        assert a.variances == b.variances

    def test_dropped_replicates_counted_and_flagged(self):
        # one complete pair and one doubly missing unit: resamples that
        # zero out the pair's weight cannot estimate the joint law
        data = make_dataset([("a", 2.0, 1, 1, 1), ("b", 2.0, 1, None, None)],
                            population_size=4, x_categories=2,
                            y_categories=2)
        result = bootstrap_variance(data, BootstrapConfig(replicates=400),
                                    RngStream(13))
        assert result.n_dropped > 0
        assert result.unreliable
        assert result.n_dropped + len(result.statistics["p_x1"]) == 400

    def test_variance_magnitude_sane(self):
        # replicate variance should approximate Var(HT) order of magnitude
        data = masked_sample(n=400, seed=14)
        result = bootstrap_variance(data, BootstrapConfig(replicates=400),
                                    RngStream(15))
        n, big_n = 400, 20000
        p = 0.6
        ht_var = (1 - n / big_n) * p * (1 - p) / n
        assert 0.3 * ht_var < result.variances["p_x1"] < 8 * ht_var

    def test_interval_method(self):
        data = masked_sample(n=200, seed=16)
        result = bootstrap_variance(data, BootstrapConfig(replicates=200),
                                    RngStream(17))
        lo, hi = result.percentile_interval("p_11", 0.05)
        assert lo < hi
        stats = result.statistics["p_11"]
        assert lo >= stats.min() and hi <= stats.max()
