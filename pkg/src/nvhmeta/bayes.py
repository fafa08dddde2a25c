"""Hierarchical Bayesian surrogate models as sampler targets.

Two models are provided:

* BM1: polynomial aero model, ``y ~ N(L_aero1(v, f), sigma2)``.
* BM2: Gaussian-basis aero model with one variance per frequency band and a
  hierarchical prior on the basis widths, ``c_k ~ N+(mu_c, sigma_c)``,
  ``mu_c ~ N(mu_cc, sigma_cc)``.

Internally the response and transformed frequency are standardised and the
dipole term enters as a fixed, centred offset, so priors act on unit-scale
parameters. Positive quantities are sampled on the log scale and Gaussian
centres through an ordering transform (``b_1 = u_1``,
``b_k = b_{k-1} + exp(u_k)``); all Jacobians are part of the density.

Draws handed back to the user are always on the physical scale, named as in
:meth:`BayesModel.output_names`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import optimize, special

from .dataset import Dataset
from .exceptions import (ConfigurationError, DomainError, ExtrapolationError, SpecError)
from .sampler import PosteriorSamples, SamplerConfig, TargetDensity, run_chains
from .surrogate import Family, ParameterVector, SurrogateSpec, physical_aero_term

_LOG_2PI = math.log(2.0 * math.pi)


# -- priors ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normal:
    mu: Any = 0.0
    sigma: Any = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.sigma, dtype=float) <= 0):
            raise ConfigurationError("Normal prior needs sigma > 0")

    def arrays(self, size):
        return (np.broadcast_to(np.asarray(self.mu, float), (size,)).copy(),
                np.broadcast_to(np.asarray(self.sigma, float), (size,)).copy())

    def to_dict(self):
        return {"dist": "normal", "mu": np.asarray(self.mu).tolist(),
                "sigma": np.asarray(self.sigma).tolist()}


@dataclass(frozen=True)
class InverseGamma:
    alpha: float = 2.0
    beta: float = 0.01

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigurationError("InverseGamma prior needs alpha > 0 and beta > 0")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (self.alpha * math.log(self.beta) - special.gammaln(self.alpha)
                - (self.alpha + 1.0) * np.log(x) - self.beta / x)

    def ppf(self, q):
        # X ~ IG(a, b)  <=>  1/X ~ Gamma(a, rate=b)
        return self.beta / special.gammainccinv(self.alpha, np.asarray(q, dtype=float))

    def mean(self):
        return self.beta / (self.alpha - 1.0) if self.alpha > 1 else math.inf

    def to_dict(self):
        return {"dist": "inverse_gamma", "alpha": float(self.alpha), "beta": float(self.beta)}


def _dist_from_dict(data, path):
    kind = data.get("dist") if isinstance(data, Mapping) else None
    try:
        if kind == "normal":
            return Normal(data["mu"], data["sigma"])
        if kind == "inverse_gamma":
            return InverseGamma(float(data["alpha"]), float(data["beta"]))
    except KeyError as err:
        raise ConfigurationError(f"{path}: missing {err.args[0]!r}", path=path) from None
    raise ConfigurationError(f"{path}: unknown distribution {kind!r}", path=path)


BM1_BLOCKS = {"poly": Normal, "sigma2": InverseGamma}
BM2_BLOCKS = {"intercept": Normal, "amp": Normal, "loc": Normal, "width": Normal,
              "sigma2": InverseGamma}


@dataclass(frozen=True)
class PriorSpec:
    """Prior per parameter block, on the model's internal (standardised) scale.

    Blocks are ``poly`` and ``sigma2`` for BM1; ``intercept``, ``amp``,
    ``loc``, ``width``, ``sigma2`` and optionally ``mu_c`` for BM2. Normal
    ``mu``/``sigma`` may be scalars or one value per block entry. The
    ``width`` prior is truncated to positive values; when ``mu_c`` is present
    its location is the sampled hyperparameter ``mu_c`` and ``width.mu`` is
    unused.
    """

    blocks: Mapping[str, Any] = field(default_factory=dict)

    def require(self, needed: Mapping[str, type]) -> None:
        for name, kind in needed.items():
            if name not in self.blocks:
                raise ConfigurationError(f"priors.{name}: no prior given", path=f"priors.{name}")
            if not isinstance(self.blocks[name], kind):
                raise ConfigurationError(
                    f"priors.{name}: expected {kind.__name__}, "
                    f"got {type(self.blocks[name]).__name__}", path=f"priors.{name}")
        if "mu_c" in self.blocks and not isinstance(self.blocks["mu_c"], Normal):
            raise ConfigurationError("priors.mu_c: expected Normal", path="priors.mu_c")

    def __getitem__(self, name):
        return self.blocks[name]

    def __contains__(self, name):
        return name in self.blocks

    def to_dict(self):
        return {k: v.to_dict() for k, v in self.blocks.items()}

    @classmethod
    def from_dict(cls, data):
        return cls({k: _dist_from_dict(v, f"priors.{k}") for k, v in data.items()})


def default_priors(spec: SurrogateSpec, z_range=(-1.7, 1.7), hierarchical=True) -> PriorSpec:
    """Weakly informative priors for standardised data.

    ``z_range`` is the span of the standardised transformed frequency; loc
    priors are centred on evenly spread points with sd ``range / n``.
    """
    sigma2 = InverseGamma(2.0, 0.01)
    if spec.family is Family.AERO_POLYNOMIAL:
        return PriorSpec({"poly": Normal(0.0, 10.0), "sigma2": sigma2})
    if spec.family is not Family.AERO_GAUSSIAN:
        raise SpecError(f"no Bayesian model for family {spec.family.value}")
    lo, hi = z_range
    n = spec.n
    span = (hi - lo) if hi > lo else 1.0
    w0 = span / n
    centres = np.linspace(lo, hi, n) if n > 1 else np.array([0.5 * (lo + hi)])
    blocks = {
        "intercept": Normal(0.0, 10.0),
        "amp": Normal(0.0, 10.0),
        "loc": Normal(centres.tolist(), w0),
        "width": Normal(w0, w0),
        "sigma2": sigma2,
    }
    if hierarchical:
        blocks["mu_c"] = Normal(w0, w0)
    return PriorSpec(blocks)


def _normal_lp(x, mu, sigma):
    d = (x - mu) / sigma
    return float(np.sum(-0.5 * _LOG_2PI - np.log(sigma) - 0.5 * d * d)), -d / sigma


def _ig_lp_log(u, prior: InverseGamma):
    """log IG(exp(u)) + u, the density of ``u = log sigma2``, and its gradient."""
    a, b = prior.alpha, prior.beta
    e = np.exp(-u)
    lp = np.sum(a * math.log(b) - special.gammaln(a) - a * u - b * e)
    return float(lp), -a + b * e


# -- constraint transforms ----------------------------------------------------------------

def to_unconstrained(x):
    """Log transform for positive parameters."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("constrained value must be positive")
    return np.log(x)


def to_constrained(u):
    return np.exp(np.asarray(u, dtype=float))


def log_jacobian(u):
    """``log |d exp(u) / du|``, which is ``u`` itself."""
    return np.asarray(u, dtype=float)


def order_forward(u):
    """Unconstrained vector to an increasing one: ``b_1 = u_1``, ``b_k = b_{k-1} + exp(u_k)``."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return u.copy()
    return np.cumsum(np.concatenate([u[:1], np.exp(u[1:])]))


def order_inverse(b):
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return b.copy()
    gaps = np.diff(b)
    if np.any(gaps <= 0):
        raise DomainError("ordered values must be strictly increasing")
    return np.concatenate([b[:1], np.log(gaps)])


# -- models ---------------------------------------------------------------------------

class BayesModel(TargetDensity):
    """Posterior density of BM1 or BM2 on the internal unconstrained scale.

    The instance is itself a :class:`TargetDensity` whose draws are reported
    on the physical scale; :meth:`target` returns a Laplace-whitened version
    better suited to an identity-metric sampler.
    """

    def __init__(self, data: Dataset, spec: SurrogateSpec, priors: PriorSpec | None = None, *,
                 heteroscedastic: bool = False, band_index: Mapping[float, int] | None = None,
                 standardize: bool = True, ordered: bool = True):
        if spec.family not in (Family.AERO_POLYNOMIAL, Family.AERO_GAUSSIAN):
            raise SpecError(f"no Bayesian model for family {spec.family.value}")
        if len(data) == 0:
            raise ConfigurationError("dataset is empty")
        self.spec = spec
        self.data = data
        self.heteroscedastic = bool(heteroscedastic)
        self.standardize = bool(standardize)
        self.ordered = bool(ordered)
        self.v = data.speeds()
        self.f = data.frequencies()
        self.y = data.spl()
        self.x = spec.transform_frequency(self.f)
        self.dipole = np.asarray(physical_aero_term(self.v, spec, 1.0), dtype=float)

        if self.standardize:
            self.y_mean, self.y_scale = float(self.y.mean()), float(self.y.std())
            self.x_mean, self.x_scale = float(self.x.mean()), float(self.x.std())
            self.y_scale = self.y_scale if self.y_scale > 0 else 1.0
            self.x_scale = self.x_scale if self.x_scale > 0 else 1.0
            self.d0 = float(self.dipole.mean())
        else:
            self.y_mean, self.y_scale, self.x_mean, self.x_scale, self.d0 = 0.0, 1.0, 0.0, 1.0, 0.0
        self.yt = (self.y - self.y_mean) / self.y_scale
        self.z = (self.x - self.x_mean) / self.x_scale
        self.off = (self.dipole - self.d0) / self.y_scale

        self.band_index = self._resolve_bands(band_index)
        self.band_freqs = np.array(sorted(self.band_index, key=self.band_index.get))
        self.bands = np.array([self.band_index[float(fr)] for fr in self.f], dtype=int)
        self.n_bands = len(self.band_index) if self.heteroscedastic else 1
        if not self.heteroscedastic:
            self.bands = np.zeros(self.y.size, dtype=int)

        if priors is None:
            priors = default_priors(spec, (float(self.z.min()), float(self.z.max())))
        self.priors = priors
        if spec.family is Family.AERO_POLYNOMIAL:
            priors.require(BM1_BLOCKS)
            self.hierarchical = False
            self._zpow = self.z[:, None] ** np.arange(spec.m + 1)
            self.n_mean = spec.m + 1
        else:
            priors.require(BM2_BLOCKS)
            self.hierarchical = "mu_c" in priors
            self.n_mean = 1 + 3 * spec.n + (1 if self.hierarchical else 0)
        self._prior_arrays()

        super().__init__(dimension=self.n_mean + self.n_bands, logp_grad=self.logp_grad,
                         param_names=self.output_names(), transform=self.to_physical,
                         initial_point=None)
        self._map = None

    # -- layout --------------------------------------------------------------------

    def _resolve_bands(self, band_index):
        freqs = sorted(set(float(fr) for fr in self.f))
        if band_index is None:
            return {fr: j for j, fr in enumerate(freqs)}
        band_index = {float(k): int(v) for k, v in band_index.items()}
        missing = [fr for fr in freqs if fr not in band_index]
        if missing:
            raise ConfigurationError(f"band map has no entry for frequencies {missing}")
        unused = sorted(set(band_index) - set(freqs))
        if unused:
            raise ConfigurationError(f"band map lists frequencies absent from data: {unused}")
        ids = sorted(set(band_index.values()))
        if ids != list(range(len(ids))):
            raise ConfigurationError("band ids must be 0..B-1")
        if len(ids) != len(freqs):
            raise ConfigurationError("band map must assign one band per distinct frequency")
        return band_index

    def _prior_arrays(self):
        n = self.spec.n
        p = self.priors
        if self.spec.family is Family.AERO_POLYNOMIAL:
            self._poly_mu, self._poly_sd = p["poly"].arrays(self.spec.m + 1)
        else:
            self._int_mu, self._int_sd = p["intercept"].arrays(1)
            self._amp_mu, self._amp_sd = p["amp"].arrays(n)
            self._loc_mu, self._loc_sd = p["loc"].arrays(n)
            self._wid_mu, self._wid_sd = p["width"].arrays(n)
            if self.hierarchical:
                self._muc_mu, self._muc_sd = p["mu_c"].arrays(1)

    def output_names(self) -> list[str]:
        n = self.spec.n
        if self.spec.family is Family.AERO_POLYNOMIAL:
            names = [f"poly[{i}]" for i in range(self.spec.m + 1)]
        else:
            names = (["intercept_db"] + [f"amp[{k}]" for k in range(n)]
                     + [f"loc[{k}]" for k in range(n)] + [f"width[{k}]" for k in range(n)])
            if self.hierarchical:
                names.append("mu_c")
        if self.n_bands == 1:
            return names + ["sigma2"]
        return names + [f"sigma2[{j}]" for j in range(self.n_bands)]

    def _split(self, u):
        u = np.asarray(u, dtype=float)
        return u[:self.n_mean], u[self.n_mean:]

    # -- density -------------------------------------------------------------------

    def _mean_and_partials(self, um):
        """Internal mean at every record and what the gradient pass needs."""
        if self.spec.family is Family.AERO_POLYNOMIAL:
            return self.off + self._zpow @ um, None
        n = self.spec.n
        alpha = um[0]
        a = um[1:1 + n]
        ub = um[1 + n:1 + 2 * n]
        w = um[1 + 2 * n:1 + 3 * n]
        b = order_forward(ub) if self.ordered else ub
        c = np.exp(w)
        diff = self.z[:, None] - b
        G = np.exp(-(diff / c) ** 2)
        return self.off + alpha + G @ a, (a, ub, b, w, c, diff, G)

    def log_likelihood(self, u) -> float:
        """Gaussian log-likelihood of the physical responses."""
        um, ls2 = self._split(u)
        mean, _ = self._mean_and_partials(um)
        s2 = np.exp(ls2)[self.bands]
        r = self.yt - mean
        return float(np.sum(-0.5 * (_LOG_2PI + np.log(s2)) - 0.5 * r * r / s2)
                     - self.y.size * math.log(self.y_scale))

    def logp_grad(self, u):
        u = np.asarray(u, dtype=float)
        um, ls2 = self._split(u)
        mean, parts = self._mean_and_partials(um)
        s2 = np.exp(ls2)
        s2_i = s2[self.bands]
        r = self.yt - mean
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(s2)) or np.any(s2 == 0):
            return -math.inf, np.zeros_like(u)
        ll = float(np.sum(-0.5 * (_LOG_2PI + np.log(s2_i)) - 0.5 * r * r / s2_i)
                   - self.y.size * math.log(self.y_scale))
        e = r / s2_i
        g_ls2 = np.bincount(self.bands, weights=0.5 * r * r / s2_i - 0.5,
                            minlength=self.n_bands)
        lp_s2, gp_s2 = _ig_lp_log(ls2, self.priors["sigma2"])
        if self.spec.family is Family.AERO_POLYNOMIAL:
            lp_c, gp_c = _normal_lp(um, self._poly_mu, self._poly_sd)
            grad_m = self._zpow.T @ e + gp_c
            lp = ll + lp_c + lp_s2
        else:
            lp_m, grad_m = self._bm2_mean_grad(um, e, parts)
            lp = ll + lp_m + lp_s2
        grad = np.concatenate([grad_m, g_ls2 + gp_s2])
        if not math.isfinite(lp):
            return -math.inf, np.zeros_like(u)
        return lp, grad

    def _bm2_mean_grad(self, um, e, parts):
        n = self.spec.n
        a, ub, b, w, c, diff, G = parts
        eG = e[:, None] * G
        g_alpha = np.array([e.sum()])
        g_a = eG.sum(axis=0)
        g_b = a * np.sum(eG * 2.0 * diff, axis=0) / c ** 2
        g_c = a * np.sum(eG * 2.0 * diff ** 2, axis=0) / c ** 3

        lp_int, gp_int = _normal_lp(um[:1], self._int_mu, self._int_sd)
        lp_amp, gp_amp = _normal_lp(a, self._amp_mu, self._amp_sd)
        lp_loc, gp_loc = _normal_lp(b, self._loc_mu, self._loc_sd)
        g_b = g_b + gp_loc

        # Truncated-normal width prior: N(c | mu_c, sd) / Phi(mu_c / sd).
        mu_c = um[1 + 3 * n] if self.hierarchical else self._wid_mu
        sd = self._wid_sd
        lp_wid, gp_wid = _normal_lp(c, mu_c, sd)
        t = mu_c / sd
        log_phi_cdf = special.log_ndtr(t)
        lp_wid -= float(np.sum(log_phi_cdf))
        g_c = g_c + gp_wid
        g_w = g_c * c + 1.0  # + log-Jacobian of c = exp(w)
        lp_jac = float(np.sum(w))

        if self.ordered and n > 0:
            tail = np.cumsum(g_b[::-1])[::-1]
            g_ub = tail.copy()
            g_ub[1:] = np.exp(ub[1:]) * tail[1:] + 1.0
            lp_jac += float(np.sum(ub[1:]))
        else:
            g_ub = g_b

        pieces = [g_alpha + gp_int, g_a + gp_amp, g_ub, g_w]
        lp = lp_int + lp_amp + lp_loc + lp_wid + lp_jac
        if self.hierarchical:
            mills = np.exp(-0.5 * t * t - 0.5 * _LOG_2PI - log_phi_cdf)
            g_muc = np.sum((c - mu_c) / sd ** 2) - np.sum(mills / sd)
            lp_h, gp_h = _normal_lp(np.array([mu_c]), self._muc_mu, self._muc_sd)
            lp += lp_h
            pieces.append(np.array([g_muc]) + gp_h)
        return lp, np.concatenate(pieces)

    # -- physical scale --------------------------------------------------------------

    def _poly_map(self):
        m = self.spec.m
        M = np.zeros((m + 1, m + 1))
        for k in range(m + 1):
            for j in range(k + 1):
                M[j, k] = comb(k, j) * (-self.x_mean) ** (k - j) / self.x_scale ** k
        return self.y_scale * M

    def to_physical(self, u) -> np.ndarray:
        um, ls2 = self._split(u)
        s2 = np.exp(ls2) * self.y_scale ** 2
        shift = self.y_mean - self.d0
        if self.spec.family is Family.AERO_POLYNOMIAL:
            poly = self._poly_map() @ um
            poly[0] += shift
            return np.concatenate([poly, s2])
        n = self.spec.n
        b = order_forward(um[1 + n:1 + 2 * n]) if self.ordered else um[1 + n:1 + 2 * n]
        out = [[shift + self.y_scale * um[0]], self.y_scale * um[1:1 + n],
               self.x_mean + self.x_scale * b, self.x_scale * np.exp(um[1 + 2 * n:1 + 3 * n])]
        if self.hierarchical:
            out.append([self.x_scale * um[1 + 3 * n]])
        return np.concatenate(out + [s2])

    def from_physical(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        k = self.n_mean
        s2 = theta[k:k + self.n_bands]
        ls2 = to_unconstrained(s2 / self.y_scale ** 2)
        shift = self.y_mean - self.d0
        if self.spec.family is Family.AERO_POLYNOMIAL:
            poly = theta[:k].copy()
            poly[0] -= shift
            return np.concatenate([np.linalg.solve(self._poly_map(), poly), ls2])
        n = self.spec.n
        b = (theta[1 + n:1 + 2 * n] - self.x_mean) / self.x_scale
        out = [[(theta[0] - shift) / self.y_scale], theta[1:1 + n] / self.y_scale,
               order_inverse(b) if self.ordered else b,
               to_unconstrained(theta[1 + 2 * n:1 + 3 * n] / self.x_scale)]
        if self.hierarchical:
            out.append([theta[1 + 3 * n] / self.x_scale])
        return np.concatenate(out + [ls2])

    def params_from_physical(self, theta) -> ParameterVector:
        """Surrogate parameters (for :func:`surrogate.evaluate`) of one physical draw."""
        theta = np.asarray(theta, dtype=float)
        s2 = theta[self.n_mean:]
        noise = float(np.sqrt(s2[0])) if s2.size == 1 else np.sqrt(s2)
        if self.spec.family is Family.AERO_POLYNOMIAL:
            return ParameterVector(b_scale=1.0, poly=theta[:self.n_mean], noise_sd=noise)
        n = self.spec.n
        return ParameterVector(b_scale=10.0 ** (theta[0] / 10.0), amp=theta[1:1 + n],
                               loc=theta[1 + n:1 + 2 * n], width=theta[1 + 2 * n:1 + 3 * n],
                               noise_sd=noise)

    def physical_mean(self, draws, v, f, chunk=2048) -> np.ndarray:
        """Mean SPL, shape ``(draws, points)``, for physical draws."""
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        v = np.asarray(v, dtype=float).ravel()
        f = np.asarray(f, dtype=float).ravel()
        x = self.spec.transform_frequency(f)
        dip = np.asarray(physical_aero_term(v, self.spec, 1.0), dtype=float).reshape(-1)
        if self.spec.family is Family.AERO_POLYNOMIAL:
            X = x[:, None] ** np.arange(self.spec.m + 1)
            return dip + draws[:, :self.n_mean] @ X.T
        n = self.spec.n
        out = np.empty((draws.shape[0], x.size))
        for s in range(0, draws.shape[0], chunk):
            d = draws[s:s + chunk]
            amp, loc, wid = d[:, 1:1 + n], d[:, 1 + n:1 + 2 * n], d[:, 1 + 2 * n:1 + 3 * n]
            G = np.exp(-((x[None, :, None] - loc[:, None, :]) / wid[:, None, :]) ** 2)
            out[s:s + chunk] = dip + d[:, :1] + np.einsum("snk,sk->sn", G, amp)
        return out

    def band_of(self, f, fallback: str | None = None) -> np.ndarray:
        """Band id of each frequency (all zero for a homoscedastic model)."""
        f = np.asarray(f, dtype=float).ravel()
        if not self.heteroscedastic:
            return np.zeros(f.size, dtype=int)
        out = np.empty(f.size, dtype=int)
        for i, fr in enumerate(f):
            hit = np.flatnonzero(np.isclose(self.band_freqs, fr, rtol=1e-12, atol=0))
            if hit.size:
                out[i] = hit[0]
            elif fallback == "nearest":
                out[i] = int(np.argmin(np.abs(np.log(self.band_freqs) - math.log(fr))))
            else:
                raise ExtrapolationError(f"frequency {fr} Hz is not one of the model's bands")
        return out

    def physical_variance(self, draws, f, fallback=None) -> np.ndarray:
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        return draws[:, self.n_mean:][:, self.band_of(f, fallback)]

    def pointwise_loglik(self, draws) -> np.ndarray:
        mu = self.physical_mean(draws, self.v, self.f)
        s2 = self.physical_variance(draws, self.f)
        r = self.y - mu
        return -0.5 * (_LOG_2PI + np.log(s2)) - 0.5 * r * r / s2

    # -- initialisation and preconditioning ------------------------------------------------

    def initial_unconstrained(self, init: ParameterVector | None = None) -> np.ndarray:
        """Starting point on the internal scale from least squares (or ``init``)."""
        n = self.spec.n
        if self.spec.family is Family.AERO_POLYNOMIAL:
            c = np.linalg.lstsq(self._zpow, self.yt - self.off, rcond=None)[0]
            resid = self.yt - self.off - self._zpow @ c
            um = c
        elif init is not None:
            order = np.argsort(init.loc)
            alpha = (10.0 * math.log10(init.b_scale) - self.y_mean + self.d0) / self.y_scale
            a = init.amp[order] / self.y_scale
            b = (init.loc[order] - self.x_mean) / self.x_scale
            c = np.clip(np.abs(init.width[order]) / self.x_scale, 1e-3, None)
            for k in range(1, n):  # strict ordering for the transform
                b[k] = max(b[k], b[k - 1] + 1e-6)
        else:
            # Evenly spread bases; intercept and amplitudes by ridge least
            # squares, which is linear once centres and widths are fixed.
            b = self._loc_mu.copy()
            b.sort()
            for k in range(1, n):
                b[k] = max(b[k], b[k - 1] + 1e-6)
            c = np.clip(np.where(self._wid_mu > 0, self._wid_mu, 1.0), 1e-3, None)
            G = np.exp(-((self.z[:, None] - b) / c) ** 2)
            A = np.column_stack([np.ones_like(self.z), G])
            prec = np.concatenate([1.0 / self._int_sd ** 2, 1.0 / self._amp_sd ** 2])
            rhs = A.T @ (self.yt - self.off) + prec * np.concatenate([self._int_mu, self._amp_mu])
            coef = np.linalg.solve(A.T @ A + np.diag(prec), rhs)
            alpha, a = coef[0], coef[1:]
        if self.spec.family is Family.AERO_GAUSSIAN:
            ub = order_inverse(b) if self.ordered else b
            um = [np.array([alpha]), a, ub, np.log(c)]
            if self.hierarchical:
                um.append([float(np.mean(c))])
            um = np.concatenate(um)
            resid = self.yt - self._mean_and_partials(um)[0]
        var = np.bincount(self.bands, weights=resid ** 2, minlength=self.n_bands)
        cnt = np.bincount(self.bands, minlength=self.n_bands)
        var = np.maximum(var / np.maximum(cnt, 1), 1e-6)
        return np.concatenate([um, np.log(var)])

    def find_map(self, u0=None) -> np.ndarray:
        u0 = self.initial_unconstrained() if u0 is None else np.asarray(u0, dtype=float)

        def neg(u):
            lp, g = self.logp_grad(u)
            if not math.isfinite(lp):
                return 1e300, np.zeros_like(u)
            return -lp, -g

        res = optimize.minimize(neg, u0, jac=True, method="L-BFGS-B",
                                options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-9})
        return res.x

    def laplace(self, u0=None):
        """MAP point and a square root ``L`` of the inverse negative Hessian there."""
        u_map = self.find_map(u0)
        d = u_map.size
        H = np.empty((d, d))
        for j in range(d):
            h = 1e-5 * max(1.0, abs(u_map[j]))
            step = np.zeros(d)
            step[j] = h
            H[:, j] = -(self.logp_grad(u_map + step)[1] - self.logp_grad(u_map - step)[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        w, V = np.linalg.eigh(H)
        if not np.all(np.isfinite(w)) or w.max() <= 0:
            return u_map, np.eye(d)
        # Non-positive curvature directions get the scale of the flattest good one.
        w = np.where(w > 1e-10 * w.max(), w, max(w[w > 1e-10 * w.max()].min(), 1e-10 * w.max()))
        L = V / np.sqrt(w)
        return u_map, L

    def target(self, precondition: str = "laplace", u0=None) -> TargetDensity:
        """Sampler target; ``laplace`` whitens by the MAP curvature (``u = u_map + L w``)."""
        if precondition == "none":
            centre = self.initial_unconstrained() if u0 is None else np.asarray(u0, float)
            return TargetDensity(self.dimension, self.logp_grad, self.output_names(),
                                 self.to_physical, centre)
        if precondition != "laplace":
            raise ConfigurationError(f"unknown preconditioning {precondition!r}")
        u_map, L = self.laplace(u0)
        self._map = u_map

        def logp_grad(w):
            lp, g = self.logp_grad(u_map + L @ w)
            return lp, L.T @ g

        def transform(w):
            return self.to_physical(u_map + L @ w)

        return TargetDensity(self.dimension, logp_grad, self.output_names(), transform,
                             np.zeros(self.dimension))


def build_bm1(data: Dataset, spec: SurrogateSpec, priors: PriorSpec | None = None,
              **kwargs) -> BayesModel:
    """BM1: polynomial aero surrogate with a scalar noise variance."""
    if spec.family is not Family.AERO_POLYNOMIAL:
        raise SpecError("BM1 needs an AeroPolynomial surrogate")
    kwargs.setdefault("heteroscedastic", False)
    return BayesModel(data, spec, priors, **kwargs)


def build_bm2(data: Dataset, spec: SurrogateSpec, priors: PriorSpec | None = None,
              **kwargs) -> BayesModel:
    """BM2: Gaussian-basis aero surrogate, per-band variances, hierarchical widths."""
    if spec.family is not Family.AERO_GAUSSIAN:
        raise SpecError("BM2 needs an AeroGaussian surrogate")
    kwargs.setdefault("heteroscedastic", True)
    return BayesModel(data, spec, priors, **kwargs)


# -- conjugate oracle -------------------------------------------------------------------

def conjugate_oracle_posterior(data, known_mean: float, prior: InverseGamma) -> InverseGamma:
    """Exact posterior of a Gaussian variance with known mean under an InverseGamma prior."""
    y = data.spl() if isinstance(data, Dataset) else np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        return prior
    return InverseGamma(prior.alpha + 0.5 * y.size,
                        prior.beta + 0.5 * float(np.sum((y - known_mean) ** 2)))


class KnownMeanVarianceModel(TargetDensity):
    """``y_i ~ N(mean, sigma2)`` with ``sigma2 ~ InverseGamma``, sampled as ``log sigma2``."""

    def __init__(self, y, known_mean: float, prior: InverseGamma):
        self.y = np.asarray(y, dtype=float).ravel()
        self.known_mean = float(known_mean)
        self.prior = prior
        self._ss = float(np.sum((self.y - self.known_mean) ** 2))
        super().__init__(dimension=1, logp_grad=self.logp_grad, param_names=["sigma2"],
                         transform=np.exp, initial_point=None)

    def logp_grad(self, u):
        u = np.asarray(u, dtype=float)
        s = float(u[0])
        n = self.y.size
        ll = -0.5 * n * (_LOG_2PI + s) - 0.5 * self._ss * math.exp(-s)
        lp, g = _ig_lp_log(u, self.prior)
        grad = g + (-0.5 * n + 0.5 * self._ss * math.exp(-s))
        return ll + lp, grad

    def log_likelihood(self, u) -> float:
        s = float(np.asarray(u, dtype=float)[0])
        return -0.5 * self.y.size * (_LOG_2PI + s) - 0.5 * self._ss * math.exp(-s)

    def output_names(self):
        return ["sigma2"]

    def pointwise_loglik(self, draws) -> np.ndarray:
        s2 = np.atleast_2d(np.asarray(draws, dtype=float))[:, :1]
        r = self.y - self.known_mean
        return -0.5 * (_LOG_2PI + np.log(s2)) - 0.5 * r * r / s2


def sample_posterior(model: BayesModel, config: SamplerConfig | None = None,
                     precondition: str = "laplace") -> PosteriorSamples:
    """Run NUTS on a model, returning physical-scale draws."""
    target = model.target(precondition) if isinstance(model, BayesModel) else model
    return run_chains(target, config or SamplerConfig())


# -- posterior predictive ----------------------------------------------------------------

@dataclass
class PosteriorPredictive:
    grid: np.ndarray
    samples: np.ndarray
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "speed_kmph", "frequency_hz", "mean", "lower95", "upper95"])
            for i, (v, f) in enumerate(self.grid):
                w.writerow([i, repr(float(v)), repr(float(f)), repr(float(self.mean[i])),
                            repr(float(self.lower95[i])), repr(float(self.upper95[i]))])

    def to_dict(self):
        return {"grid": self.grid.tolist(), "mean": self.mean.tolist(),
                "lower95": self.lower95.tolist(), "upper95": self.upper95.tolist()}


def posterior_predictive(model: BayesModel, samples: PosteriorSamples | np.ndarray, grid,
                         rng: np.random.Generator | int | None = 0, fallback: str | None = None,
                         max_draws: int | None = None) -> PosteriorPredictive:
    """Simulate new SPL at ``grid`` (rows ``[speed_kmph, frequency_hz]``) for every draw."""
    draws = samples.pooled() if isinstance(samples, PosteriorSamples) else np.atleast_2d(samples)
    if isinstance(samples, PosteriorSamples) and samples.param_names != model.output_names():
        raise ConfigurationError("samples do not belong to this model")
    if max_draws is not None and draws.shape[0] > max_draws:
        idx = np.linspace(0, draws.shape[0] - 1, max_draws).round().astype(int)
        draws = draws[idx]
    grid = np.asarray(grid, dtype=float).reshape(-1, 2)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if grid.shape[0] == 0:
        empty = np.zeros(0)
        return PosteriorPredictive(grid, np.zeros((draws.shape[0], 0)), empty, empty, empty)
    mu = model.physical_mean(draws, grid[:, 0], grid[:, 1])
    s2 = model.physical_variance(draws, grid[:, 1], fallback)
    sim = mu + np.sqrt(s2) * rng.standard_normal(mu.shape)
    lo, hi = np.quantile(sim, [0.025, 0.975], axis=0)
    mean = sim.mean(axis=0)
    # A zero-dispersion sample can put the mean one ulp outside its quantiles.
    lo, hi = np.minimum(lo, mean), np.maximum(hi, mean)
    return PosteriorPredictive(grid, sim, mean, lo, hi)


def load_priors(path) -> PriorSpec:
    return PriorSpec.from_dict(json.loads(Path(path).read_text()))
