import numpy as np
import pytest

from conftest import AERO1_POLY, AERO1_SPEC, aero1_data
from nvhmeta.dataset import Dataset, SynthConfig, synthesize
from nvhmeta.exceptions import (ConditioningError, DegenerateVarianceError, PartitionError,
                                PreconditionError)
from nvhmeta.fit import kfold_cv, kfold_partition, nls_fit, r_squared, run_rng
from nvhmeta.surrogate import ParameterVector, SurrogateSpec, physical_aero_term


class TestRSquared:
    def test_examples(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r_squared(y, y) == 1.0
        assert r_squared(y, np.full(3, 2.0)) == 0.0
        assert r_squared(y, [1.0, 2.0, 4.0]) == pytest.approx(0.5, abs=1e-15)

    def test_constant_response(self):
        with pytest.raises(DegenerateVarianceError):
            r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


class TestNls:
    def test_zero_noise_start_at_truth(self):
        d = aero1_data(0, noise=0.0)
        truth = ParameterVector(poly=AERO1_POLY)
        res = nls_fit(d, AERO1_SPEC, truth)
        assert res.converged and res.iterations <= 2
        np.testing.assert_allclose(res.params.poly, AERO1_POLY, rtol=1e-8, atol=1e-8)

    def test_matches_ols(self):
        d = aero1_data(4, noise=1.5, reps=2)
        res = nls_fit(d, AERO1_SPEC)
        x = np.log10(d.frequencies())
        X = x[:, None] ** np.arange(5)
        target = d.spl() - physical_aero_term(d.speeds(), AERO1_SPEC)
        ols = np.linalg.lstsq(X, target, rcond=None)[0]
        np.testing.assert_allclose(res.params.poly, ols, rtol=1e-8, atol=1e-8)
        resid = target - X @ ols
        assert res.residual_sd == pytest.approx(np.sqrt(resid @ resid / (len(d) - 5)), rel=1e-8)

    def test_gaussian_basis_recovery(self):
        spec = SurrogateSpec("AeroGaussian", n=2)
        truth = ParameterVector(b_scale=1e-7, amp=[9.0, 5.0], loc=[2.5, 3.3], width=[0.2, 0.25])
        d = synthesize(SynthConfig(spec, truth, noise_sd_db=0.0))
        start = ParameterVector(b_scale=2e-7, amp=[7.0, 4.0], loc=[2.45, 3.35],
                                width=[0.25, 0.2])
        res = nls_fit(d, spec, start)
        assert res.converged
        np.testing.assert_allclose(res.params.loc, truth.loc, rtol=1e-6)
        np.testing.assert_allclose(res.params.width, truth.width, rtol=1e-6)
        assert res.params.b_scale == pytest.approx(1e-7, rel=1e-6)

    def test_too_few_points(self):
        d = Dataset.from_arrays([140.0] * 5, [100, 200, 300, 400, 500], np.arange(5.0))
        with pytest.raises(PreconditionError):
            nls_fit(d, AERO1_SPEC)

    def test_singular_design(self):
        # one distinct frequency cannot identify five polynomial coefficients
        d = Dataset.from_arrays(np.linspace(100, 200, 10), [500.0] * 10, np.arange(10.0))
        with pytest.raises(ConditioningError) as err:
            nls_fit(d, AERO1_SPEC)
        assert err.value.condition_number >= 1e10

    def test_iteration_cap_is_not_an_error(self):
        spec = SurrogateSpec("AeroGaussian", n=2)
        truth = ParameterVector(b_scale=1e-7, amp=[9.0, 5.0], loc=[2.5, 3.3], width=[0.2, 0.25])
        d = synthesize(SynthConfig(spec, truth, noise_sd_db=0.3, rng_seed=1))
        start = ParameterVector(b_scale=1e-7, amp=[1.0, 1.0], loc=[2.2, 3.6], width=[0.4, 0.4])
        res = nls_fit(d, spec, start, max_iter=1)
        assert not res.converged


class TestKfold:
    def test_partition_exact(self):
        folds = kfold_partition(23, 5, run_rng(0, 0))
        allidx = np.concatenate(folds)
        assert sorted(allidx.tolist()) == list(range(23))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1

    @pytest.mark.parametrize("n,k", [(10, 1), (10, 11), (10, 10), (9, 5)])
    def test_partition_errors(self, n, k):
        with pytest.raises(PartitionError):
            kfold_partition(n, k, run_rng(0, 0))

    def test_zero_noise(self):
        d = aero1_data(0, noise=0.0)
        for k in (5, 10):
            rep = kfold_cv(d, AERO1_SPEC, k=k, runs=3, seed=1)
            assert rep.r2_cv > 0.999
            assert rep.fold_r2.shape == (3, k)

    def test_mean_of_folds(self):
        d = aero1_data(2, noise=2.0)
        rep = kfold_cv(d, AERO1_SPEC, k=5, runs=4, seed=9)
        np.testing.assert_allclose(rep.r2_cv_runs, rep.fold_r2.mean(axis=1))
        assert rep.r2_cv == pytest.approx(rep.r2_cv_runs.mean())
        assert rep.r2_var >= 0

    def test_reproducible(self):
        d = aero1_data(2, noise=2.0)
        a = kfold_cv(d, AERO1_SPEC, k=5, runs=3, seed=7)
        b = kfold_cv(d, AERO1_SPEC, k=5, runs=3, seed=7)
        assert a.fold_r2.tobytes() == b.fold_r2.tobytes()
        c = kfold_cv(d, AERO1_SPEC, k=5, runs=3, seed=8)
        assert c.fold_r2.tobytes() != a.fold_r2.tobytes()
