"""Convergence diagnostics over multi-chain draws: R-hat, rank histograms, ESS."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .exceptions import DimensionError


def _chains(x, min_draws=1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError("expected samples shaped [chains][draws]")
    if x.shape[0] < 2:
        raise DimensionError("at least two chains are required")
    if x.shape[1] < min_draws:
        raise DimensionError(f"at least {min_draws} draws per chain are required")
    return x


def within_between(x) -> tuple[float, float]:
    """Within-chain variance ``W`` and between-chain variance ``B``.

    ``W`` is the mean of the per-chain sample variances and ``B`` is ``N``
    times the sample variance of the chain means.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    B = float(n * np.var(np.mean(x, axis=1), ddof=1))
    return W, B


def r_hat(x, split: bool = False) -> float:
    """Potential scale reduction ``sqrt(var_plus / W)``.

    ``var_plus = (N - 1) / N * W + B / N``. With ``split=True`` each chain
    is halved first, which also detects drift within a chain. Returns
    ``inf`` when the chains are individually constant but disagree.
    Needs two draws per chain, four when splitting.
    """
    x = _chains(x, 4 if split else 2)
    if split:
        half = x.shape[1] // 2
        x = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = x.shape[1]
    W, B = within_between(x)
    if W == 0:
        return math.inf if B > 0 else 1.0
    var_plus = (n - 1) / n * W + B / n
    return math.sqrt(var_plus / W)


def rank_histogram(x, bins: int = 20) -> np.ndarray:
    """Per-chain histogram of pooled ranks, shape ``(chains, bins)``.

    Ties get their average rank. Ranks run from 1 to ``S`` (pooled draws)
    and the bins split ``[0.5, S + 0.5]`` evenly.
    """
    x = _chains(x)
    if bins < 1:
        raise ValueError("bins must be positive")
    ranks = rankdata(x.ravel(), method="average").reshape(x.shape)
    edges = np.linspace(0.5, x.size + 0.5, bins + 1)
    return np.stack([np.histogram(r, bins=edges)[0] for r in ranks])


def _autocov(x):
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def ess(x) -> float:
    """Effective sample size with Geyer's initial monotone sequence.

    Accepts one chain (1-D) or ``[chains][draws]``; autocorrelations are
    averaged over chains as in the multi-chain estimator. A constant
    sample has no usable autocorrelation and is reported as ``1.0``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = np.stack([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    if W == 0:
        return 1.0
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Sums of adjacent pairs must stay positive and non-increasing.
    pairs = []
    for t in range(0, n - 1, 2):
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        if pairs and p > pairs[-1]:
            p = pairs[-1]
        pairs.append(p)
    tau = -1.0 + 2.0 * sum(pairs)
    tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 10 else max(tau, 1e-12)
    return float(m * n / tau)


@dataclass
class ConvergenceReport:
    param_names: list[str]
    r_hat: np.ndarray
    ess: np.ndarray
    W: np.ndarray
    B: np.ndarray
    rank_histograms: np.ndarray  # (params, chains, bins)
    split: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def max_r_hat(self) -> float:
        return float(np.max(self.r_hat)) if self.r_hat.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "max_r_hat": self.max_r_hat,
            "params": {
                name: {"r_hat": float(self.r_hat[i]), "ess": float(self.ess[i]),
                       "W": float(self.W[i]), "B": float(self.B[i])}
                for i, name in enumerate(self.param_names)
            },
            **self.extra,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def rank_histograms_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "chain", "bin", "count"])
            for i, name in enumerate(self.param_names):
                for c, row in enumerate(self.rank_histograms[i]):
                    for b, count in enumerate(row):
                        w.writerow([name, c, b, int(count)])


def convergence_report(samples, bins: int = 20, split: bool = False) -> ConvergenceReport:
    """Diagnostics for every parameter of a :class:`PosteriorSamples`."""
    draws = samples.draws
    names = list(samples.param_names)
    rh, es, Ws, Bs, hists = [], [], [], [], []
    for j in range(draws.shape[2]):
        x = draws[:, :, j]
        rh.append(r_hat(x, split=split))
        es.append(ess(x))
        W, B = within_between(x)
        Ws.append(W)
        Bs.append(B)
        hists.append(rank_histogram(x, bins))
    extra = {"divergences": np.asarray(samples.divergences).astype(int).tolist()}
    return ConvergenceReport(names, np.array(rh), np.array(es), np.array(Ws), np.array(Bs),
                             np.array(hists), split, extra)
