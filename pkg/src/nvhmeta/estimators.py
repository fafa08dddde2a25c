"""scikit-learn style estimators over the surrogate families.

All estimators take ``X`` with columns ``[speed_kmph, frequency_hz]`` and
``y`` in dB.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_X, check_X_y
from .bayes import (PriorSpec, build_bm1, build_bm2, posterior_predictive, sample_posterior)
from .bootstrap import BootstrapConfig, parametric_bootstrap, predict_bands
from .dataset import Dataset
from .fit import nls_fit
from .loo import psis_loo
from .sampler import SamplerConfig
from .surrogate import Family, ParameterVector, SurrogateSpec, evaluate


class _SpecMixin:
    def _spec(self) -> SurrogateSpec:
        return SurrogateSpec(self.family, m=self.m, n=self.n, r=self.r, r1=self.r1,
                             r2=self.r2, c0=self.c0, freq_transform=self.freq_transform)


class SurrogateRegressor(_SpecMixin, RegressorMixin, BaseEstimator):
    """Least-squares surrogate fit.

    Parameters
    ----------
    family : str
        ``AeroPolynomial``, ``AeroGaussian`` or ``Tire``.
    m, n, r, r1, r2, c0, freq_transform
        See :class:`~nvhmeta.surrogate.SurrogateSpec`.
    init : dict or None
        Starting parameters as in ``ParameterVector.to_dict``.
    max_iter : int
        Levenberg-Marquardt iteration cap.
    """

    def __init__(self, family="AeroPolynomial", m=4, n=6, r=6, r1=0.0, r2=1.0, c0=343.0,
                 freq_transform="log10", init=None, max_iter=500):
        self.family = family
        self.m = m
        self.n = n
        self.r = r
        self.r1 = r1
        self.r2 = r2
        self.c0 = c0
        self.freq_transform = freq_transform
        self.init = init
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.spec_ = self._spec()
        init = None if self.init is None else ParameterVector.from_dict(self.init)
        self.fit_result_ = nls_fit(X, self.spec_, init, y=y, max_iter=self.max_iter)
        self.params_ = self.fit_result_.params
        self.residual_sd_ = self.fit_result_.residual_sd
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_X(X)
        return np.asarray(evaluate(self.spec_, self.params_, X[:, 0], X[:, 1]),
                          dtype=float).reshape(-1)


class BayesianSurrogateRegressor(_SpecMixin, RegressorMixin, BaseEstimator):
    """NUTS posterior of BM1 (``AeroPolynomial``) or BM2 (``AeroGaussian``).

    ``predict`` returns the posterior mean of the mean curve;
    ``predict_interval`` the posterior predictive mean and 95% interval.
    """

    def __init__(self, family="AeroPolynomial", m=4, n=6, r=6, r1=0.0, r2=1.0, c0=343.0,
                 freq_transform="log10", priors=None, heteroscedastic=None, chains=4,
                 draws=10_000, warmup=2_000, target_accept=0.8, max_tree_depth=10,
                 seed=0, precondition="laplace", n_jobs=1):
        self.family = family
        self.m = m
        self.n = n
        self.r = r
        self.r1 = r1
        self.r2 = r2
        self.c0 = c0
        self.freq_transform = freq_transform
        self.priors = priors
        self.heteroscedastic = heteroscedastic
        self.chains = chains
        self.draws = draws
        self.warmup = warmup
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.seed = seed
        self.precondition = precondition
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.spec_ = self._spec()
        data = Dataset.from_arrays(X[:, 0], X[:, 1], y)
        priors = None if self.priors is None else PriorSpec.from_dict(self.priors)
        kwargs = {}
        if self.heteroscedastic is not None:
            kwargs["heteroscedastic"] = bool(self.heteroscedastic)
        if self.spec_.family is Family.AERO_GAUSSIAN:
            self.model_ = build_bm2(data, self.spec_, priors, **kwargs)
        else:
            self.model_ = build_bm1(data, self.spec_, priors, **kwargs)
        cfg = SamplerConfig(chains=self.chains, draws=self.draws, warmup=self.warmup,
                            target_accept=self.target_accept,
                            max_tree_depth=self.max_tree_depth, seed=self.seed,
                            n_jobs=self.n_jobs)
        self.samples_ = sample_posterior(self.model_, cfg, self.precondition)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "samples_")
        X = check_X(X)
        mu = self.model_.physical_mean(self.samples_.pooled(), X[:, 0], X[:, 1])
        return mu.mean(axis=0)

    def predict_interval(self, X, fallback=None, max_draws=None):
        check_is_fitted(self, "samples_")
        X = check_X(X)
        return posterior_predictive(self.model_, self.samples_, X, rng=self.seed,
                                    fallback=fallback, max_draws=max_draws)

    def loo(self, model_id=None):
        check_is_fitted(self, "samples_")
        return psis_loo(self.model_, self.samples_, model_id or self.family)


class ParametricBootstrapRegressor(_SpecMixin, RegressorMixin, BaseEstimator):
    """Tire surrogate with parametric-bootstrap parameter uncertainty."""

    def __init__(self, family="Tire", m=2, n=2, r=6, r1=0.0, r2=1.0, c0=343.0,
                 freq_transform="log10", replicates=1000, noise_mode="residual",
                 noise_sd=None, input_resampling=True, seed=0, init=None, max_iter=500,
                 n_jobs=1):
        self.family = family
        self.m = m
        self.n = n
        self.r = r
        self.r1 = r1
        self.r2 = r2
        self.c0 = c0
        self.freq_transform = freq_transform
        self.replicates = replicates
        self.noise_mode = noise_mode
        self.noise_sd = noise_sd
        self.input_resampling = input_resampling
        self.seed = seed
        self.init = init
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.spec_ = self._spec()
        cfg = BootstrapConfig(
            spec=self.spec_, replicates=self.replicates, noise_mode=self.noise_mode,
            noise_sd=self.noise_sd, seed=self.seed, input_resampling=self.input_resampling,
            init=None if self.init is None else ParameterVector.from_dict(self.init),
            max_iter=self.max_iter, n_jobs=self.n_jobs)
        self.result_ = parametric_bootstrap(Dataset.from_arrays(X[:, 0], X[:, 1], y), cfg)
        self.params_ = self.result_.theta_hat
        self.param_sd_ = self.result_.param_sd
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_X(X)
        return np.asarray(evaluate(self.spec_, self.params_, X[:, 0], X[:, 1]),
                          dtype=float).reshape(-1)

    def predict_bands(self, X, add_noise=False):
        check_is_fitted(self, "result_")
        return predict_bands(self.result_, check_X(X), add_noise=add_noise)
