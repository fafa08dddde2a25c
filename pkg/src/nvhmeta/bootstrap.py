"""Parametric bootstrap for the tire-road surrogate.

1. Fit the point estimate ``theta_hat`` by least squares.
2. For each replicate: draw inputs, simulate ``y = f(X*; theta_hat) + eta``
   with Gaussian ``eta`` and refit, warm-started at ``theta_hat``.
3. The replicate estimates approximate the sampling distribution of
   ``theta_hat``; their spread gives standard errors and bands.

Every replicate has its own Philox substream keyed by ``(seed, i)``, so the
output does not depend on execution order or ``n_jobs``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import Dataset
from .exceptions import ConfigurationError, NVHMetaError, SpecError
from .fit import nls_fit
from .surrogate import (Family, ParameterVector, SurrogateSpec, evaluate, mean_param_vector,
                        with_mean_params)


@dataclass
class BootstrapConfig:
    spec: SurrogateSpec = field(default_factory=lambda: SurrogateSpec(Family.TIRE, m=2, n=2))
    replicates: int = 1000
    noise_mode: str = "residual"  # or "fixed"
    noise_sd: float | None = None
    seed: int = 0
    input_resampling: bool = True
    init: ParameterVector | None = None
    max_iter: int = 500
    n_jobs: int = 1

    def __post_init__(self):
        if self.spec.family is not Family.TIRE:
            raise SpecError("the parametric bootstrap is defined for the Tire surrogate")
        if self.replicates < 2:
            raise ConfigurationError("replicates must be at least 2", path="replicates")
        if self.noise_mode not in ("residual", "fixed"):
            raise ConfigurationError(f"unknown noise_mode {self.noise_mode!r}", path="noise_mode")
        if self.noise_mode == "fixed" and (self.noise_sd is None or self.noise_sd < 0):
            raise ConfigurationError("fixed noise_mode needs noise_sd >= 0", path="noise_sd")

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "replicates": self.replicates,
            "noise_mode": self.noise_mode,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "input_resampling": self.input_resampling,
            "init": None if self.init is None else self.init.to_dict(),
            "max_iter": self.max_iter,
            "n_jobs": self.n_jobs,
        }

    @classmethod
    def from_dict(cls, data) -> "BootstrapConfig":
        kw = {k: data[k] for k in ("replicates", "noise_mode", "noise_sd", "seed",
                                   "input_resampling", "max_iter", "n_jobs") if k in data}
        if "spec" in data:
            kw["spec"] = SurrogateSpec.from_dict(data["spec"])
        if data.get("init") is not None:
            kw["init"] = ParameterVector.from_dict(data["init"])
        return cls(**kw)


@dataclass
class PredictionBands:
    grid: np.ndarray
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray

    def to_dict(self):
        return {"grid": self.grid.tolist(), "mean": self.mean.tolist(),
                "lower95": self.lower95.tolist(), "upper95": self.upper95.tolist()}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "speed_kmph", "frequency_hz", "mean", "lower95", "upper95"])
            for i, (v, f) in enumerate(self.grid):
                w.writerow([i, repr(float(v)), repr(float(f)), repr(float(self.mean[i])),
                            repr(float(self.lower95[i])), repr(float(self.upper95[i]))])


@dataclass
class BootstrapResult:
    spec: SurrogateSpec
    theta_hat: ParameterVector
    replicate_params: np.ndarray
    param_names: list[str]
    noise_sd: float
    failed_replicates: int
    seed: int
    prediction_bands: PredictionBands | None = None

    @property
    def param_sd(self) -> np.ndarray:
        if self.replicate_params.shape[0] < 2:
            return np.full(len(self.param_names), np.nan)
        return self.replicate_params.std(axis=0, ddof=1)

    def replicate(self, i) -> ParameterVector:
        return with_mean_params(self.spec, self.theta_hat, self.replicate_params[i])

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "theta_hat": self.theta_hat.to_dict(),
            "param_names": self.param_names,
            "param_mean": self.replicate_params.mean(axis=0).tolist()
            if self.replicate_params.size else [],
            "param_sd": self.param_sd.tolist(),
            "noise_sd": self.noise_sd,
            "replicates_ok": int(self.replicate_params.shape[0]),
            "failed_replicates": self.failed_replicates,
            "seed": self.seed,
            "prediction_bands": None if self.prediction_bands is None
            else self.prediction_bands.to_dict(),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def replicates_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate"] + self.param_names)
            for i, row in enumerate(self.replicate_params):
                w.writerow([i] + [repr(float(x)) for x in row])

    @classmethod
    def from_files(cls, result_json, replicates_csv) -> "BootstrapResult":
        meta = json.loads(Path(result_json).read_text())
        with open(replicates_csv, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [[float(x) for x in row[1:]] for row in reader]
        spec = SurrogateSpec.from_dict(meta["spec"])
        arr = np.asarray(rows, dtype=float).reshape(-1, len(meta["param_names"]))
        return cls(spec, ParameterVector.from_dict(meta["theta_hat"]), arr,
                   list(meta["param_names"]), float(meta["noise_sd"]),
                   int(meta["failed_replicates"]), int(meta["seed"]))


def mean_param_names(spec: SurrogateSpec) -> list[str]:
    names = ["b_scale"] if spec.has_dipole_term else []
    names += [f"poly[{i}]" for i in range(spec.n_poly)]
    for block in ("amp", "loc", "width"):
        names += [f"{block}[{k}]" for k in range(spec.n_gauss)]
    return names


def replicate_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))


def _one_replicate(i, cfg, theta_hat, X, sd):
    rng = replicate_rng(cfg.seed, i)
    n = X.shape[0]
    Xs = X[rng.integers(0, n, n)] if cfg.input_resampling else X
    y = np.asarray(evaluate(cfg.spec, theta_hat, Xs[:, 0], Xs[:, 1]), dtype=float)
    y = y + sd * rng.standard_normal(n)
    try:
        fit = nls_fit(Xs, cfg.spec, theta_hat, y=y, max_iter=cfg.max_iter)
    except (NVHMetaError, np.linalg.LinAlgError, FloatingPointError):
        return None
    if not fit.converged:
        return None
    return mean_param_vector(cfg.spec, fit.params)


def parametric_bootstrap(d: Dataset, cfg: BootstrapConfig) -> BootstrapResult:
    """Run the parametric bootstrap; failed refits are counted and excluded."""
    X, y = d.to_xy()
    point = nls_fit(d, cfg.spec, cfg.init, max_iter=cfg.max_iter)
    theta_hat = point.params
    sd = point.residual_sd if cfg.noise_mode == "residual" else float(cfg.noise_sd)
    if cfg.n_jobs == 1:
        out = [_one_replicate(i, cfg, theta_hat, X, sd) for i in range(cfg.replicates)]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_one_replicate)(i, cfg, theta_hat, X, sd) for i in range(cfg.replicates))
    good = [r for r in out if r is not None]
    p = len(mean_param_names(cfg.spec))
    reps = np.asarray(good, dtype=float).reshape(-1, p)
    return BootstrapResult(cfg.spec, theta_hat, reps, mean_param_names(cfg.spec), float(sd),
                           cfg.replicates - len(good), cfg.seed)


def predict_bands(result: BootstrapResult, grid, add_noise: bool = False,
                  rng: np.random.Generator | int | None = None) -> PredictionBands:
    """Pointwise mean and 2.5/97.5% quantiles of the replicate mean curves.

    These are confidence bands; ``add_noise`` adds Gaussian observation
    noise with the bootstrap noise sd, giving predictive bands.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1, 2)
    if grid.shape[0] == 0:
        e = np.zeros(0)
        return PredictionBands(grid, e, e, e)
    if result.replicate_params.shape[0] < 2:
        raise ConfigurationError("need at least two successful replicates for bands")
    curves = np.stack([
        np.asarray(evaluate(result.spec, result.replicate(i), grid[:, 0], grid[:, 1]),
                   dtype=float).reshape(-1)
        for i in range(result.replicate_params.shape[0])
    ])
    if add_noise:
        if not isinstance(rng, np.random.Generator):
            rng = replicate_rng(result.seed if rng is None else rng, -1 % (1 << 32))
        curves = curves + result.noise_sd * rng.standard_normal(curves.shape)
    lo, hi = np.quantile(curves, [0.025, 0.975], axis=0)
    mean = curves.mean(axis=0)
    lo, hi = np.minimum(lo, mean), np.maximum(hi, mean)
    bands = PredictionBands(grid, mean, lo, hi)
    result.prediction_bands = bands
    return bands
