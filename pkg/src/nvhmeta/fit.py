"""Least-squares point estimation and K-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import (ConditioningError, DegenerateVarianceError, DimensionError,
                         PartitionError, PreconditionError)
from .surrogate import (Family, ParameterVector, SurrogateSpec, default_init, evaluate,
                        jacobian, mean_param_vector, with_mean_params)

logger = logging.getLogger(__name__)

FTOL = 1e-10
GTOL = 1e-8
COND_LIMIT = 1e10
_LAMBDA_MAX = 1e16
_LAMBDA_GN = 1e-9


@dataclass
class FitResult:
    params: ParameterVector
    residual_sd: float
    r_squared: float
    iterations: int
    converged: bool
    cost: float = 0.0
    condition_number: float = 1.0
    free_names: list[str] = field(default_factory=list)
    free_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    free_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "residual_sd": self.residual_sd,
            "r_squared": self.r_squared,
            "iterations": self.iterations,
            "converged": self.converged,
            "cost": self.cost,
            "condition_number": self.condition_number,
            "free_names": list(self.free_names),
            "free_values": np.asarray(self.free_values).tolist(),
            "free_cov": np.asarray(self.free_cov).tolist(),
        }


# -- free-parameter mapping ----------------------------------------------------
#
# b_scale is collinear with the constant polynomial term and stays fixed for
# AeroPolynomial; for AeroGaussian it is the only intercept and is fitted
# on the dB scale (10 log10 b), which keeps the problem linear in it.

def _fits_b(spec: SurrogateSpec) -> bool:
    return spec.family is Family.AERO_GAUSSIAN


def free_names(spec: SurrogateSpec) -> list[str]:
    names = ["intercept_db"] if _fits_b(spec) else []
    names += [f"poly[{i}]" for i in range(spec.n_poly)]
    for block in ("amp", "loc", "width"):
        names += [f"{block}[{k}]" for k in range(spec.n_gauss)]
    return names


def to_free(spec: SurrogateSpec, params: ParameterVector) -> np.ndarray:
    flat = mean_param_vector(spec, params)
    if not spec.has_dipole_term:
        return flat
    if _fits_b(spec):
        return np.concatenate([[10.0 * np.log10(flat[0])], flat[1:]])
    return flat[1:]


def from_free(spec: SurrogateSpec, params: ParameterVector, theta) -> ParameterVector:
    theta = np.asarray(theta, dtype=float)
    if not spec.has_dipole_term:
        flat = theta
    elif _fits_b(spec):
        flat = np.concatenate([[10.0 ** (theta[0] / 10.0)], theta[1:]])
    else:
        flat = np.concatenate([[params.b_scale], theta])
    out = with_mean_params(spec, params, flat)
    out.width = np.abs(out.width)
    return out


def free_jacobian(spec: SurrogateSpec, params: ParameterVector, v, f) -> np.ndarray:
    J = jacobian(spec, params, v, f)
    if not spec.has_dipole_term:
        return J
    if _fits_b(spec):
        J = J.copy()
        J[:, 0] = 1.0  # d mean / d(10 log10 b)
        return J
    return J[:, 1:]


# -- goodness of fit -------------------------------------------------------------

def r_squared(y, yhat) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.size != yhat.size:
        raise DimensionError("y and yhat must have equal lengths")
    if y.size < 2:
        raise DimensionError("R-squared needs at least two observations")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateVarianceError("observed response is constant")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


# -- Levenberg-Marquardt -----------------------------------------------------------

def _column_scaled_condition(J):
    norms = np.linalg.norm(J, axis=0)
    if np.any(norms == 0):
        return np.inf
    return float(np.linalg.cond(J / norms))


def _polish(spec, init, params, resid, cost, v, f, y):
    # One undamped Gauss-Newton step: the gradient test can fire while
    # ill-conditioned directions still carry error well above rounding.
    J = free_jacobian(spec, params, v, f)
    delta = np.linalg.lstsq(J, resid, rcond=None)[0]
    trial = from_free(spec, init, to_free(spec, params) + delta)
    try:
        trial_resid = y - evaluate(spec, trial, v, f)
    except Exception:
        return params, resid, cost
    trial_cost = 0.5 * float(trial_resid @ trial_resid)
    if np.isfinite(trial_cost) and trial_cost <= cost + 1e-12 * max(cost, 1.0):
        return trial, trial_resid, trial_cost
    return params, resid, cost


def nls_fit(data, spec: SurrogateSpec, init: ParameterVector | None = None, *,
            max_iter: int = 500, y=None) -> FitResult:
    """Levenberg-Marquardt fit of the surrogate mean to the observed SPL.

    ``data`` is a :class:`~nvhmeta.dataset.Dataset`, or an ``(N, 2)`` array
    ``[speed_kmph, frequency_hz]`` together with ``y``.

    Damping starts at 1e-3 and is multiplied by 10 on a rejected step and
    divided by 10 on an accepted one, scaled by the diagonal of ``J^T J``.
    The fit has converged when an accepted, essentially undamped step lowers
    the cost by a relative amount below 1e-10, the gradient infinity-norm drops below 1e-8, or no
    step can lower the cost at machine precision.
    """
    if y is None:
        v, f, y = data.speeds(), data.frequencies(), data.spl()
    else:
        X = np.asarray(data, dtype=float)
        v, f, y = X[:, 0], X[:, 1], np.asarray(y, dtype=float).ravel()
    if init is None:
        init = default_init(spec, v, f, y)
    init = init.copy()
    init.validate(spec)
    theta = to_free(spec, init)
    p = theta.size
    n_obs = y.size
    if n_obs <= p:
        raise PreconditionError(f"need more observations ({n_obs}) than free parameters ({p})")

    params = from_free(spec, init, theta)
    resid = y - evaluate(spec, params, v, f)
    cost = 0.5 * float(resid @ resid)
    lam = 1e-3
    converged = False
    iterations = 0
    while iterations < max_iter:
        J = free_jacobian(spec, params, v, f)
        grad = J.T @ resid
        if np.max(np.abs(grad), initial=0.0) < GTOL:
            converged = True
            break
        diag = np.sum(J * J, axis=0)
        diag = np.where(diag > 0, diag, max(float(diag.max(initial=0.0)), 1.0) * 1e-12)
        accepted = False
        while lam <= _LAMBDA_MAX:
            A = np.vstack([J, np.diag(np.sqrt(lam * diag))])
            b = np.concatenate([resid, np.zeros(p)])
            delta = np.linalg.lstsq(A, b, rcond=None)[0]
            trial = from_free(spec, init, theta + delta)
            try:
                trial_resid = y - evaluate(spec, trial, v, f)
            except Exception:  # step left the domain of the mean
                trial_resid = None
            trial_cost = (0.5 * float(trial_resid @ trial_resid)
                          if trial_resid is not None and np.all(np.isfinite(trial_resid))
                          else np.inf)
            if trial_cost < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            logger.debug("LM stagnated at machine precision after %d iterations", iterations)
            break
        iterations += 1
        rel_drop = (cost - trial_cost) / cost if cost > 0 else 0.0
        theta = to_free(spec, trial)
        params, resid, cost = trial, trial_resid, trial_cost
        # A small decrease only signals convergence once the step is
        # essentially Gauss-Newton; heavy damping also yields small decreases.
        if rel_drop < FTOL and lam <= _LAMBDA_GN:
            converged = True
            break
        lam = max(lam / 10.0, 1e-15)

    if converged:
        params, resid, cost = _polish(spec, init, params, resid, cost, v, f, y)
    theta = to_free(spec, params)
    J = free_jacobian(spec, params, v, f)
    cond = _column_scaled_condition(J)
    if not cond < COND_LIMIT:
        raise ConditioningError(
            f"least-squares problem is ill-conditioned (scaled condition number {cond:.3g})",
            condition_number=cond,
        )
    dof = n_obs - p
    rss = float(resid @ resid)
    resid_sd = float(np.sqrt(rss / dof))
    try:
        cov = resid_sd ** 2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((p, p), np.nan)
    params.noise_sd = resid_sd if resid_sd > 0 else np.finfo(float).tiny
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = float(1.0 - rss / ss_tot) if ss_tot > 0 else float("nan")
    return FitResult(params=params, residual_sd=resid_sd, r_squared=r2,
                     iterations=iterations, converged=converged, cost=cost,
                     condition_number=cond, free_names=free_names(spec),
                     free_values=theta, free_cov=cov)


# -- K-fold cross-validation -----------------------------------------------------------

def run_rng(seed: int, run: int) -> np.random.Generator:
    """Counter-based generator for run ``run`` derived from the master seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(run,))))


def kfold_partition(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random split of ``range(n)`` into ``k`` folds whose sizes differ by at most one."""
    if k < 2 or k > n:
        raise PartitionError(f"k must satisfy 2 <= k <= N (k={k}, N={n})")
    if n // k < 2:
        raise PartitionError(
            f"k={k} leaves folds with fewer than two records (N={n}); R-squared is undefined"
        )
    return np.array_split(rng.permutation(n), k)


@dataclass
class CvReport:
    """Repeated K-fold cross-validation summary.

    ``fold_r2`` holds one row of ``k`` held-out R-squared values per run and
    ``r2_cv_runs`` their per-run means. ``r2_cv`` averages the runs and
    ``r2_var`` is the variance of ``r2_cv_runs`` across runs.
    """

    k: int
    fold_r2: np.ndarray
    r2_cv_runs: np.ndarray
    r2_cv: float
    r2_var: float
    runs: int
    rng_seed: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "fold_r2": np.asarray(self.fold_r2).tolist(),
            "r2_cv_runs": np.asarray(self.r2_cv_runs).tolist(),
            "r2_cv": self.r2_cv,
            "r2_var": self.r2_var,
            "runs": self.runs,
            "rng_seed": self.rng_seed,
        }


def kfold_cv(data, spec: SurrogateSpec, init: ParameterVector | None = None,
             k: int = 5, runs: int = 1, seed: int = 0, *, max_iter: int = 500) -> CvReport:
    """Repeated random K-fold CV scored by held-out R-squared.

    Every run reshuffles the folds with its own counter-based stream, so the
    result is reproducible from ``seed`` alone. ``init=None`` uses the
    default initialisation of each training split.
    """
    n = len(data)
    v, f, y = data.speeds(), data.frequencies(), data.spl()
    fold_r2 = np.empty((runs, k))
    for run in range(runs):
        folds = kfold_partition(n, k, run_rng(seed, run))
        for j, test in enumerate(folds):
            train = np.setdiff1d(np.arange(n), test, assume_unique=True)
            X_train = np.column_stack([v[train], f[train]])
            start = init if init is not None else default_init(spec, v[train], f[train], y[train])
            res = nls_fit(X_train, spec, start, y=y[train], max_iter=max_iter)
            yhat = evaluate(spec, res.params, v[test], f[test])
            fold_r2[run, j] = r_squared(y[test], yhat)
    per_run = fold_r2.mean(axis=1)
    return CvReport(k=k, fold_r2=fold_r2, r2_cv_runs=per_run, r2_cv=float(per_run.mean()),
                    r2_var=float(per_run.var(ddof=1)) if runs > 1 else 0.0,
                    runs=runs, rng_seed=seed)
