"""Physics-informed probabilistic surrogates of vehicle noise spectra."""

__version__ = "0.1.0"

from .bayes import (BayesModel, InverseGamma, KnownMeanVarianceModel, Normal, PriorSpec,
                    build_bm1, build_bm2, conjugate_oracle_posterior, posterior_predictive)
from .bootstrap import BootstrapConfig, parametric_bootstrap, predict_bands
from .dataset import CategoricalSelector, Dataset, SpectrumRecord, SynthConfig, load_csv, select, synthesize
from .diagnostics import convergence_report, ess, r_hat, rank_histogram
from .estimators import (BayesianSurrogateRegressor, ParametricBootstrapRegressor,
                         SurrogateRegressor)
from .fit import kfold_cv, nls_fit, r_squared
from .loo import compare, psis_loo, psis_smooth
from .sampler import PosteriorSamples, SamplerConfig, TargetDensity, run_chains
from .surrogate import Family, ParameterVector, SurrogateSpec, evaluate

__all__ = [
    "BayesModel", "BayesianSurrogateRegressor", "BootstrapConfig", "CategoricalSelector",
    "Dataset", "Family", "InverseGamma", "KnownMeanVarianceModel", "Normal", "ParameterVector",
    "ParametricBootstrapRegressor", "PosteriorSamples", "PriorSpec", "SamplerConfig",
    "SpectrumRecord", "SurrogateRegressor", "SurrogateSpec", "SynthConfig", "TargetDensity",
    "build_bm1", "build_bm2", "compare", "conjugate_oracle_posterior", "convergence_report",
    "ess", "evaluate", "kfold_cv", "load_csv", "nls_fit", "parametric_bootstrap",
    "posterior_predictive", "predict_bands", "psis_loo", "psis_smooth", "r_hat",
    "r_squared", "rank_histogram", "run_chains", "select", "synthesize",
]
