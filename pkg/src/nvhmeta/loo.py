"""Pareto-smoothed importance-sampling leave-one-out cross-validation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import ComparisonError, ConfigurationError

K_GOOD = 0.5
K_FLAG = 0.7
MIN_DRAWS = 100


# -- generalized Pareto tail ------------------------------------------------------------

def gpd_fit(x) -> tuple[float, float]:
    """Shape ``k`` and scale ``sigma`` of a generalized Pareto fit to sorted exceedances.

    Empirical-Bayes profile estimate of Zhang and Stephens (2009), with the
    weakly informative shrinkage of ``k`` toward 0.5 used by PSIS.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    prior_bs, prior_k = 3.0, 10.0
    m = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1, dtype=float) - 0.5))
    b /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    profile = n * (np.log(-b / k) - k - 1.0)
    weights = softmax(profile)
    keep = weights >= 10 * np.finfo(float).eps
    weights, b = weights[keep], b[keep]
    weights /= weights.sum()
    b_post = float(np.sum(b * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def gpd_quantile(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if sigma <= 0:
        return np.full_like(p, np.nan)
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(n_draws: int) -> int:
    return int(math.ceil(min(0.2 * n_draws, 3.0 * math.sqrt(n_draws))))


def psis_smooth(log_weights, normalize: bool = True) -> tuple[np.ndarray, float]:
    """Pareto-smooth one observation's raw log importance weights.

    Returns smoothed weights and the fitted tail shape ``k_hat``. Weights sum
    to one unless ``normalize=False``, in which case they are on the scale of
    ``exp(log_weights)``. With fewer than 100 draws only truncation is
    applied and ``k_hat`` is ``nan``; identical weights give uniform output
    and ``k_hat = 0``.
    """
    lw = np.asarray(log_weights, dtype=float).ravel().copy()
    s = lw.size
    if s == 0:
        raise ConfigurationError("no draws")
    shift = lw.max()
    lw -= shift

    def out(lw_s, k):
        if normalize:
            return np.exp(lw_s - logsumexp(lw_s)), k
        return np.exp(lw_s + shift), k

    if np.all(lw == 0):
        return out(lw, 0.0)
    if s < MIN_DRAWS:
        # Truncated importance sampling: cap at sqrt(S) times the mean weight.
        cap = logsumexp(lw) - math.log(s) + 0.5 * math.log(s)
        return out(np.minimum(lw, cap), float("nan"))

    m = tail_length(s)
    order = np.argsort(lw, kind="stable")
    cutoff = max(lw[order[-m - 1]], math.log(np.finfo(float).tiny))
    tail = np.flatnonzero(lw > cutoff)
    k_hat = math.inf
    if tail.size > 4:
        tail = tail[np.argsort(lw[tail], kind="stable")]
        exp_cut = math.exp(cutoff)
        k_hat, sigma = gpd_fit(np.exp(lw[tail]) - exp_cut)
        if math.isfinite(k_hat):
            p = (np.arange(tail.size) + 0.5) / tail.size
            lw[tail] = np.log(gpd_quantile(p, k_hat, sigma) + exp_cut)
            lw = np.minimum(lw, 0.0)  # never above the largest raw weight
    return out(lw, float(k_hat))


# -- log-likelihood matrix ---------------------------------------------------------------

def pointwise_loglik(model, samples) -> np.ndarray:
    """``log f(y_i | theta_j)`` for every pooled draw ``j`` and observation ``i``."""
    names = list(model.output_names())
    draws = samples.pooled() if hasattr(samples, "pooled") else np.atleast_2d(samples)
    if hasattr(samples, "param_names") and list(samples.param_names) != names:
        raise ConfigurationError(
            f"samples carry parameters {list(samples.param_names)}, model expects {names}")
    if draws.shape[1] != len(names):
        raise ConfigurationError(
            f"draws have {draws.shape[1]} columns, model has {len(names)} parameters")
    return model.pointwise_loglik(draws)


# -- LOO ------------------------------------------------------------------------------

@dataclass
class LooReport:
    elpd: float
    p_loo: float
    se: float
    k_hat: np.ndarray
    pointwise: np.ndarray
    lpd: np.ndarray
    model_id: str = "model"
    frequencies: np.ndarray | None = None
    rank_table: list = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return int(self.k_hat.size)

    def flagged(self, threshold: float = K_FLAG) -> np.ndarray:
        """Indices of observations whose ``k_hat`` exceeds ``threshold`` (or is nan)."""
        k = self.k_hat
        return np.flatnonzero(~(k <= threshold))

    def to_dict(self) -> dict:
        k = self.k_hat
        return {
            "model_id": self.model_id,
            "elpd": self.elpd,
            "p_loo": self.p_loo,
            "se": self.se,
            "n_obs": self.n_obs,
            "k_hat_good_fraction": float(np.mean(k <= K_GOOD)),
            "k_hat_above_0.7": int(np.sum(~(k <= K_FLAG))),
            "single_observation": self.n_obs == 1,
            "rank_table": self.rank_table,
            "pointwise_elpd": self.pointwise.tolist(),
            "k_hat": [None if not math.isfinite(x) else x for x in k.tolist()],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, data) -> "LooReport":
        k = np.array([np.nan if x is None else x for x in data["k_hat"]], dtype=float)
        pw = np.asarray(data["pointwise_elpd"], dtype=float)
        return cls(float(data["elpd"]), float(data["p_loo"]), float(data["se"]), k, pw,
                   np.full(pw.size, np.nan), data.get("model_id", "model"),
                   rank_table=data.get("rank_table", []))

    def k_hat_to_csv(self, path) -> None:
        """Per-observation ``k_hat`` ordered by frequency (file order if unknown)."""
        idx = np.arange(self.n_obs)
        freq = self.frequencies
        if freq is not None:
            idx = np.argsort(freq, kind="stable")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["observation", "frequency_hz", "k_hat", "elpd_i"])
            for i in idx:
                w.writerow([int(i), repr(float(freq[i])) if freq is not None else "",
                            repr(float(self.k_hat[i])), repr(float(self.pointwise[i]))])


def loo_from_loglik(ll, model_id: str = "model", frequencies=None) -> LooReport:
    """PSIS-LOO from a ``(draws, observations)`` log-likelihood matrix."""
    ll = np.asarray(ll, dtype=float)
    if ll.ndim != 2:
        raise ConfigurationError("log-likelihood must be shaped (draws, observations)")
    s, n = ll.shape
    elpd_i = np.empty(n)
    k_hat = np.empty(n)
    for i in range(n):
        w, k_hat[i] = psis_smooth(-ll[:, i])
        with np.errstate(divide="ignore"):
            elpd_i[i] = logsumexp(np.log(w) + ll[:, i])
    lpd = logsumexp(ll, axis=0) - math.log(s)
    elpd = float(elpd_i.sum())
    se = float(math.sqrt(n * np.var(elpd_i))) if n > 1 else 0.0
    return LooReport(elpd, float(np.sum(lpd - elpd_i)), se, k_hat, elpd_i, lpd, model_id,
                     None if frequencies is None else np.asarray(frequencies, dtype=float))


def psis_loo(model, samples, model_id: str = "model") -> LooReport:
    ll = pointwise_loglik(model, samples)
    freqs = getattr(model, "f", None)
    return loo_from_loglik(ll, model_id, freqs)


def compare(reports) -> list[dict]:
    """Rank models by elpd (rank 0 best); ties go to lower se, then model id.

    Each row carries the elpd difference to the best model and the standard
    error of that difference from the paired pointwise contributions.
    """
    reports = list(reports)
    if not reports:
        return []
    n = {r.n_obs for r in reports}
    if len(n) != 1:
        raise ComparisonError(f"reports cover different numbers of observations: {sorted(n)}")
    ranked = sorted(reports, key=lambda r: (-r.elpd, r.se, str(r.model_id)))
    best = ranked[0]
    rows = []
    for rank, r in enumerate(ranked):
        diff = r.pointwise - best.pointwise
        rows.append({
            "model_id": r.model_id,
            "rank": rank,
            "elpd": r.elpd,
            "p_loo": r.p_loo,
            "se": r.se,
            "elpd_diff": float(r.elpd - best.elpd),
            "dse": float(math.sqrt(diff.size * np.var(diff))) if diff.size > 1 else 0.0,
        })
    return rows
