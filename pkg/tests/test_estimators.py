import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import KFold, cross_val_score

from conftest import AERO1_POLY, AERO1_SPEC, aero1_data
from nvhmeta.dataset import TIRE_SPEEDS_KMH, SynthConfig, synthesize
from nvhmeta.estimators import (BayesianSurrogateRegressor, ParametricBootstrapRegressor,
                                SurrogateRegressor)
from nvhmeta.exceptions import DomainError
from nvhmeta.surrogate import ParameterVector, SurrogateSpec, evaluate


@pytest.fixture(scope="module")
def aero_xy():
    return aero1_data(3, noise=0.5).to_xy()


@pytest.fixture(scope="module")
def tire_xy():
    spec = SurrogateSpec("Tire", m=2, n=0, r1=0.0)
    d = synthesize(SynthConfig(spec, ParameterVector(poly=[40.0, 1.5, -0.02]),
                               speeds=TIRE_SPEEDS_KMH, noise_sd_db=0.5, rng_seed=1))
    return d.to_xy()


class TestSklearnContract:
    @pytest.mark.parametrize("cls", [SurrogateRegressor, BayesianSurrogateRegressor,
                                     ParametricBootstrapRegressor])
    def test_clone_round_trip(self, cls):
        est = cls(seed=7) if "seed" in cls().get_params() else cls(max_iter=9)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin is not est

    def test_set_params(self):
        est = SurrogateRegressor().set_params(m=2, family="Tire")
        assert est.m == 2 and est.family == "Tire"

    def test_predict_before_fit(self, aero_xy):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            SurrogateRegressor().predict(aero_xy[0])


class TestInputChecks:
    def test_wrong_columns(self):
        with pytest.raises(ValueError):
            SurrogateRegressor().fit(np.ones((5, 3)), np.ones(5))

    def test_non_positive(self):
        X = np.array([[100.0, 0.0], [100.0, 10.0]])
        with pytest.raises(DomainError):
            SurrogateRegressor().fit(X, np.ones(2))

    def test_non_finite(self):
        X = np.array([[100.0, np.nan], [100.0, 10.0]])
        with pytest.raises(ValueError):
            SurrogateRegressor().fit(X, np.ones(2))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SurrogateRegressor().fit(np.ones((4, 2)), np.ones(3))


class TestSurrogateRegressor:
    def test_recovers_polynomial(self, aero_xy):
        # Coefficients are nearly collinear in log-frequency; compare curves.
        X, y = aero_xy
        est = SurrogateRegressor(m=4).fit(X, y)
        truth = evaluate(AERO1_SPEC, ParameterVector(poly=AERO1_POLY), X[:, 0], X[:, 1])
        assert np.sqrt(np.mean((est.predict(X) - truth) ** 2)) < 0.5
        assert est.score(X, y) > 0.95

    def test_cross_val_score(self, aero_xy):
        scores = cross_val_score(SurrogateRegressor(m=4), *aero_xy,
                                 cv=KFold(5, shuffle=True, random_state=0))
        assert np.all(scores > 0.9)


class TestBayesianRegressor:
    def test_fit_predict(self, aero_xy):
        est = BayesianSurrogateRegressor(m=4, chains=2, draws=300, warmup=300, seed=2)
        est.fit(*aero_xy)
        pred = est.predict(aero_xy[0])
        assert pred.shape == (len(aero_xy[1]),)
        assert np.sqrt(np.mean((pred - aero_xy[1]) ** 2)) < 1.0
        band = est.predict_interval(aero_xy[0][:10])
        assert np.all(band.lower95 < band.mean) and np.all(band.mean < band.upper95)
        assert est.loo().n_obs == len(aero_xy[1])


class TestBootstrapRegressor:
    def test_fit_predict_bands(self, tire_xy):
        est = ParametricBootstrapRegressor(m=2, n=0, replicates=100, seed=4).fit(*tire_xy)
        assert est.param_sd_.shape == (3,)
        assert np.all(est.param_sd_ > 0)
        bands = est.predict_bands(tire_xy[0][:5])
        assert np.all(bands.lower95 <= est.predict(tire_xy[0][:5]))
        assert np.all(est.predict(tire_xy[0][:5]) <= bands.upper95)
