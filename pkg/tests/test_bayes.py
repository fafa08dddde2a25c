import math

import numpy as np
import pytest
from scipy import stats

from conftest import AERO1_SPEC, PEAK_SPEC, aero1_data, fd_gradient, peak_data
from nvhmeta.bayes import (InverseGamma, KnownMeanVarianceModel, Normal, PriorSpec, build_bm1,
                           build_bm2, conjugate_oracle_posterior, default_priors,
                           log_jacobian, order_forward, order_inverse, posterior_predictive,
                           sample_posterior, to_constrained, to_unconstrained)
from nvhmeta.dataset import Dataset
from nvhmeta.exceptions import (ConfigurationError, DomainError, ExtrapolationError, SpecError)
from nvhmeta.sampler import SamplerConfig
from nvhmeta.surrogate import ParameterVector, SurrogateSpec, evaluate


def max_rel_grad_error(model, u):
    _, g = model.logp_grad(u)
    fd = fd_gradient(lambda w: model.logp_grad(w)[0], u)
    return float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1.0)))


@pytest.fixture(scope="module")
def bm1():
    return build_bm1(aero1_data(3, reps=2), AERO1_SPEC)


@pytest.fixture(scope="module")
def bm2():
    return build_bm2(peak_data(3, reps=2), PEAK_SPEC)


class TestPriors:
    def test_inverse_gamma_density(self):
        ig = InverseGamma(2.5, 0.7)
        x = np.array([0.1, 1.0, 3.0])
        np.testing.assert_allclose(ig.logpdf(x), stats.invgamma(2.5, scale=0.7).logpdf(x),
                                   rtol=1e-12)
        q = np.array([0.05, 0.5, 0.95])
        np.testing.assert_allclose(ig.ppf(q), stats.invgamma(2.5, scale=0.7).ppf(q), rtol=1e-10)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            Normal(0.0, 0.0)
        with pytest.raises(ConfigurationError):
            InverseGamma(0.0, 1.0)

    def test_incomplete(self):
        d = aero1_data(0)
        with pytest.raises(ConfigurationError, match="sigma2"):
            build_bm1(d, AERO1_SPEC, PriorSpec({"poly": Normal()}))
        with pytest.raises(ConfigurationError):
            build_bm1(d, AERO1_SPEC, PriorSpec({"poly": InverseGamma(), "sigma2": InverseGamma()}))

    def test_round_trip(self):
        p = default_priors(PEAK_SPEC)
        q = PriorSpec.from_dict(p.to_dict())
        assert q.to_dict() == p.to_dict()

    def test_unknown_distribution(self):
        with pytest.raises(ConfigurationError):
            PriorSpec.from_dict({"poly": {"dist": "cauchy"}})


class TestBm1Density:
    def test_hand_composed_single_point(self):
        spec = SurrogateSpec("AeroPolynomial", m=2)
        mu = np.array([-40.0, -3.0, 0.5])
        sd = np.array([5.0, 2.0, 0.5])
        ig = InverseGamma(3.0, 1.5)
        v, f = 140.0, 800.0
        y = evaluate(spec, ParameterVector(poly=mu), v, f)
        model = build_bm1(Dataset.from_arrays([v], [f], [y]), spec,
                          PriorSpec({"poly": Normal(mu.tolist(), sd.tolist()), "sigma2": ig}),
                          standardize=False)
        s2 = 1.7
        want = (stats.norm(y, math.sqrt(s2)).logpdf(y)
                + stats.norm(mu, sd).logpdf(mu).sum()
                + stats.invgamma(3.0, scale=1.5).logpdf(s2) + math.log(s2))
        lp, _ = model.logp_grad(np.concatenate([mu, [math.log(s2)]]))
        assert lp == pytest.approx(want, rel=1e-12)

    def test_gradient(self, bm1, rng):
        u0 = bm1.initial_unconstrained()
        errs = [max_rel_grad_error(bm1, u0 + 0.5 * rng.standard_normal(u0.size))
                for _ in range(20)]
        assert max(errs) < 1e-5

    def test_flat_prior_limit(self, rng):
        d = aero1_data(1)
        model = build_bm1(d, AERO1_SPEC, PriorSpec({"poly": Normal(0.0, 1e6),
                                                    "sigma2": InverseGamma(2.0, 0.01)}))
        u1 = model.initial_unconstrained()
        u2 = u1.copy()
        u2[:-1] += 0.3 * rng.standard_normal(u1.size - 1)
        dlp = model.logp_grad(u1)[0] - model.logp_grad(u2)[0]
        dll = model.log_likelihood(u1) - model.log_likelihood(u2)
        assert abs(dlp - dll) < 1e-6

    def test_physical_round_trip(self, bm1, rng):
        u = bm1.initial_unconstrained() + 0.2 * rng.standard_normal(bm1.dimension)
        np.testing.assert_allclose(bm1.from_physical(bm1.to_physical(u)), u, atol=1e-10)

    def test_physical_mean_matches_surrogate(self, bm1, rng):
        theta = bm1.to_physical(bm1.initial_unconstrained())
        params = bm1.params_from_physical(theta)
        want = evaluate(AERO1_SPEC, params, bm1.v, bm1.f)
        np.testing.assert_allclose(bm1.physical_mean(theta, bm1.v, bm1.f)[0], want, rtol=1e-12)

    def test_log_likelihood_physical_scale(self, bm1, rng):
        u = bm1.initial_unconstrained() + 0.1 * rng.standard_normal(bm1.dimension)
        theta = bm1.to_physical(u)
        mu = bm1.physical_mean(theta, bm1.v, bm1.f)[0]
        want = stats.norm(mu, math.sqrt(theta[-1])).logpdf(bm1.y).sum()
        assert bm1.log_likelihood(u) == pytest.approx(want, rel=1e-10)

    def test_wrong_family(self):
        with pytest.raises(SpecError):
            build_bm1(peak_data(0, reps=1), PEAK_SPEC)
        with pytest.raises(SpecError):
            build_bm2(aero1_data(0), AERO1_SPEC)


class TestBm2Density:
    def test_dimension(self, bm2):
        # intercept + 3n basis parameters + mu_c + one variance per band
        assert bm2.dimension == 1 + 3 * 3 + 1 + 20

    def test_gradient(self, bm2, rng):
        u0 = bm2.initial_unconstrained()
        errs = [max_rel_grad_error(bm2, u0 + 0.3 * rng.standard_normal(u0.size))
                for _ in range(20)]
        assert max(errs) < 1e-5

    def test_gradient_without_hierarchy_or_ordering(self, rng):
        d = peak_data(1, reps=1)
        pri = default_priors(PEAK_SPEC, hierarchical=False)
        model = build_bm2(d, PEAK_SPEC, pri, ordered=False)
        u0 = model.initial_unconstrained()
        errs = [max_rel_grad_error(model, u0 + 0.3 * rng.standard_normal(u0.size))
                for _ in range(5)]
        assert max(errs) < 1e-5

    def test_single_band_is_homoscedastic(self, rng):
        spec = SurrogateSpec("AeroGaussian", n=1)
        d = Dataset.from_arrays(np.linspace(100, 220, 12), [1000.0] * 12,
                                70 + rng.standard_normal(12))
        het = build_bm2(d, spec, heteroscedastic=True)
        assert het.n_bands == 1
        u = het.initial_unconstrained() + 0.1 * rng.standard_normal(het.dimension)
        theta = het.to_physical(u)
        mu = evaluate(spec, het.params_from_physical(theta), het.v, het.f)
        want = stats.norm(mu, math.sqrt(theta[-1])).logpdf(het.y).sum()
        assert het.log_likelihood(u) == pytest.approx(want, rel=1e-10)
        hom = build_bm2(d, spec, heteroscedastic=False)
        assert hom.logp_grad(u)[0] == pytest.approx(het.logp_grad(u)[0], rel=1e-12)

    def test_permutation_invariance(self, rng):
        d = peak_data(2, reps=1)
        perm = rng.permutation(len(d))
        m1 = build_bm2(d, PEAK_SPEC)
        m2 = build_bm2(d.subset(perm), PEAK_SPEC)
        u = m1.initial_unconstrained() + 0.2 * rng.standard_normal(m1.dimension)
        assert m2.logp_grad(u)[0] == pytest.approx(m1.logp_grad(u)[0], rel=1e-12)

    def test_physical_round_trip_and_order(self, bm2, rng):
        u = bm2.initial_unconstrained() + 0.2 * rng.standard_normal(bm2.dimension)
        theta = bm2.to_physical(u)
        assert np.all(np.diff(theta[4:7]) > 0)
        np.testing.assert_allclose(bm2.from_physical(theta), u, atol=1e-10)

    def test_band_map_checked(self):
        d = peak_data(0, reps=1)
        bands = {float(f): i for i, f in enumerate(sorted(set(d.frequencies())))}
        build_bm2(d, PEAK_SPEC, band_index=bands)
        bad = dict(bands)
        bad.pop(min(bad))
        with pytest.raises(ConfigurationError):
            build_bm2(d, PEAK_SPEC, band_index=bad)
        extra = dict(bands)
        extra[12345.0] = len(extra)
        with pytest.raises(ConfigurationError):
            build_bm2(d, PEAK_SPEC, band_index=extra)


class TestTransforms:
    def test_unit_variance(self):
        assert to_unconstrained(1.0) == 0.0
        assert to_constrained(0.0) == 1.0

    def test_round_trip(self, rng):
        for _ in range(100):
            x = np.exp(rng.normal(scale=3.0, size=5))
            np.testing.assert_allclose(to_constrained(to_unconstrained(x)), x, rtol=1e-12)
            b = np.sort(rng.normal(size=4)) + np.arange(4) * 1e-3
            np.testing.assert_allclose(order_forward(order_inverse(b)), b, rtol=1e-12,
                                       atol=1e-12)

    def test_jacobian_matches_derivative(self):
        u = np.linspace(-4, 4, 17)
        h = 1e-6
        deriv = (to_constrained(u + h) - to_constrained(u - h)) / (2 * h)
        np.testing.assert_allclose(np.log(deriv), log_jacobian(u), atol=1e-8)

    def test_domain(self):
        with pytest.raises(DomainError):
            to_unconstrained([1.0, 0.0])
        with pytest.raises(DomainError):
            order_inverse([1.0, 1.0])


class TestConjugateOracle:
    def test_no_data(self):
        prior = InverseGamma(2.0, 2.0)
        assert conjugate_oracle_posterior([], 0.0, prior) == prior

    def test_plug_in(self):
        assert conjugate_oracle_posterior([0.0, 0.0], 0.0, InverseGamma(2.0, 2.0)) == \
            InverseGamma(3.0, 2.0)

    def test_consistency(self, rng):
        y = rng.normal(0.0, 1.0, 10_000)
        gaps = []
        for n in (10, 100, 1000, 10_000):
            post = conjugate_oracle_posterior(y[:n], 0.0, InverseGamma(2.0, 2.0))
            gaps.append(abs(post.mean() - np.mean(y[:n] ** 2)))
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-3

    def test_model_gradient(self, rng):
        model = KnownMeanVarianceModel(rng.normal(size=30), 0.0, InverseGamma(2.0, 2.0))
        for u in (-1.0, 0.0, 0.7):
            assert max_rel_grad_error(model, np.array([u])) < 1e-6

    def test_pointwise_sums_to_likelihood(self, rng):
        model = KnownMeanVarianceModel(rng.normal(size=30), 0.5, InverseGamma(2.0, 2.0))
        ll = model.pointwise_loglik(np.array([[1.3]]))
        assert ll.sum() == pytest.approx(model.log_likelihood(np.array([math.log(1.3)])),
                                         abs=1e-10)


class TestPosteriorPredictive:
    def test_degenerate_collapses(self, bm1):
        theta = bm1.to_physical(bm1.initial_unconstrained())
        theta[-1] = 1e-30
        draws = np.tile(theta, (200, 1))
        grid = np.array([[140.0, 500.0], [200.0, 2000.0]])
        pp = posterior_predictive(bm1, draws, grid)
        curve = bm1.physical_mean(theta, grid[:, 0], grid[:, 1])[0]
        np.testing.assert_allclose(pp.mean, curve, atol=1e-9)
        np.testing.assert_allclose(pp.lower95, curve, atol=1e-9)
        np.testing.assert_allclose(pp.upper95, curve, atol=1e-9)

    def test_width_grows_with_noise(self, bm1):
        theta = bm1.to_physical(bm1.initial_unconstrained())
        grid = np.array([[140.0, 500.0], [200.0, 2000.0]])
        widths = []
        for s2 in (0.25, 1.0, 4.0):
            t = theta.copy()
            t[-1] = s2
            pp = posterior_predictive(bm1, np.tile(t, (2000, 1)), grid, rng=7)
            widths.append(pp.upper95 - pp.lower95)
        assert np.all(widths[0] < widths[1]) and np.all(widths[1] < widths[2])

    def test_ordering_invariant(self, bm2):
        u = bm2.initial_unconstrained()
        draws = np.stack([bm2.to_physical(u + 0.05 * k) for k in range(50)])
        grid = np.column_stack([np.full(20, 140.0), bm2.band_freqs])
        pp = posterior_predictive(bm2, draws, grid, rng=1)
        assert np.all(pp.lower95 <= pp.mean) and np.all(pp.mean <= pp.upper95)

    def test_extrapolation(self, bm2):
        theta = bm2.to_physical(bm2.initial_unconstrained())[None, :]
        with pytest.raises(ExtrapolationError):
            posterior_predictive(bm2, theta, [[140.0, 777.0]])
        pp = posterior_predictive(bm2, theta, [[140.0, 777.0]], fallback="nearest")
        assert np.isfinite(pp.mean).all()

    def test_empty_grid(self, bm1):
        theta = bm1.to_physical(bm1.initial_unconstrained())[None, :]
        pp = posterior_predictive(bm1, theta, np.zeros((0, 2)))
        assert pp.mean.size == 0

    def test_coverage_of_held_out_replicates(self):
        """95% predictive intervals cover fresh replicates at 0.95 +/- 0.03."""
        grid_f = np.array([100.0, 160.0, 250.0, 400.0, 630.0, 1000.0, 1600.0, 2500.0,
                           4000.0, 6300.0])
        hits = total = 0
        for seed in range(5):
            train = aero1_data(100 + seed)
            model = build_bm1(train, AERO1_SPEC)
            s = sample_posterior(model, SamplerConfig(chains=4, draws=1000, warmup=500,
                                                      seed=seed))
            fresh = aero1_data(200 + seed, reps=20)
            keep = np.isin(fresh.frequencies(), grid_f)
            X, y = fresh.to_xy()
            X, y = X[keep], y[keep]
            pp = posterior_predictive(model, s, X, rng=seed)
            hits += int(np.sum((y >= pp.lower95) & (y <= pp.upper95)))
            total += y.size
        assert total == 2000
        assert abs(hits / total - 0.95) <= 0.03
