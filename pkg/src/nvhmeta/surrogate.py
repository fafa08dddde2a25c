"""Deterministic mean functions of the three noise surrogate families.

Every family is an additive model in vehicle speed ``v`` (km/h) and band
centre frequency ``f`` (Hz):

* ``AeroPolynomial``: dipole term + polynomial in the transformed frequency.
* ``AeroGaussian``: dipole term + sum of Gaussian bumps in transformed frequency.
* ``Tire``: ``T(f)**r1 * poly(v) + v**r2 * gauss(T(f))``.

Speeds are converted to m/s before entering any power law. All evaluation
functions are vectorised over ``v`` and ``f``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .exceptions import DimensionError, DomainError, SpecError

KMH_TO_MS = 1.0 / 3.6
_LN10 = np.log(10.0)


class Family(str, Enum):
    AERO_POLYNOMIAL = "AeroPolynomial"
    AERO_GAUSSIAN = "AeroGaussian"
    TIRE = "Tire"


@dataclass(frozen=True)
class SurrogateSpec:
    """Model family, basis sizes and physical constants of a surrogate.

    Parameters
    ----------
    family : Family or str
        One of ``AeroPolynomial``, ``AeroGaussian`` or ``Tire``.
    m : int
        Polynomial order (``m + 1`` coefficients).
    n : int
        Number of Gaussian basis functions.
    r : int
        Speed exponent of the dipole term.
    r1, r2 : float
        Frequency and speed exponents of the tire model.
    c0 : float
        Reference speed in the dipole term (m/s).
    freq_transform : {"log10", "identity"}
        Map applied to the frequency before the basis expansions.
    """

    family: Family = Family.AERO_POLYNOMIAL
    m: int = 4
    n: int = 6
    r: int = 6
    r1: float = 0.0
    r2: float = 1.0
    c0: float = 343.0
    freq_transform: str = "log10"

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise SpecError(f"unknown surrogate family {self.family!r}") from None
        if int(self.m) != self.m or self.m < 0:
            raise SpecError("m must be a non-negative integer")
        if int(self.n) != self.n or self.n < 0:
            raise SpecError("n must be a non-negative integer")
        if int(self.r) != self.r or self.r < 1:
            raise SpecError("r must be an integer >= 1")
        if not self.c0 > 0:
            raise SpecError("c0 must be positive")
        if self.freq_transform not in ("log10", "identity"):
            raise SpecError(f"unknown frequency transform {self.freq_transform!r}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "r", int(self.r))

    @property
    def uses_poly(self) -> bool:
        return self.family in (Family.AERO_POLYNOMIAL, Family.TIRE)

    @property
    def uses_gauss(self) -> bool:
        return self.family in (Family.AERO_GAUSSIAN, Family.TIRE)

    @property
    def has_dipole_term(self) -> bool:
        return self.family is not Family.TIRE

    @property
    def n_poly(self) -> int:
        return self.m + 1 if self.uses_poly else 0

    @property
    def n_gauss(self) -> int:
        return self.n if self.uses_gauss else 0

    def transform_frequency(self, f):
        f = np.asarray(f, dtype=float)
        if self.freq_transform == "log10":
            if np.any(f <= 0):
                raise DomainError("frequency must be positive for the log10 transform")
            return np.log10(f)
        return f

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "m": self.m,
            "n": self.n,
            "r": self.r,
            "r1": float(self.r1),
            "r2": float(self.r2),
            "c0": float(self.c0),
            "freq_transform": self.freq_transform,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SurrogateSpec":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


def _block(values) -> np.ndarray:
    return np.atleast_1d(np.asarray(values, dtype=float)).copy()


@dataclass
class ParameterVector:
    """Named parameter blocks of a surrogate.

    The flat ordering is ``b_scale, poly, amp, loc, width, noise_sd``, with
    the blocks not used by a family left out. ``noise_sd`` is a scalar or
    one entry per frequency band.
    """

    b_scale: float = 1.0
    poly: np.ndarray = field(default_factory=lambda: np.zeros(0))
    amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loc: np.ndarray = field(default_factory=lambda: np.zeros(0))
    width: np.ndarray = field(default_factory=lambda: np.zeros(0))
    noise_sd: Any = 1.0

    def __post_init__(self):
        self.b_scale = float(self.b_scale)
        self.poly = _block(self.poly)
        self.amp = _block(self.amp)
        self.loc = _block(self.loc)
        self.width = _block(self.width)
        ns = np.asarray(self.noise_sd, dtype=float)
        self.noise_sd = float(ns) if ns.ndim == 0 else ns.copy()

    def validate(self, spec: SurrogateSpec) -> "ParameterVector":
        if spec.has_dipole_term and not self.b_scale > 0:
            raise DomainError("b_scale must be positive")
        if len(self.poly) != spec.n_poly:
            raise DimensionError(
                f"poly block has {len(self.poly)} entries, {spec.family.value} "
                f"with m={spec.m} needs {spec.n_poly}"
            )
        for name in ("amp", "loc", "width"):
            if len(getattr(self, name)) != spec.n_gauss:
                raise DimensionError(
                    f"{name} block has {len(getattr(self, name))} entries, "
                    f"{spec.family.value} with n={spec.n} needs {spec.n_gauss}"
                )
        if np.any(self.width <= 0):
            raise DomainError("Gaussian widths must be positive")
        if np.any(np.asarray(self.noise_sd) <= 0):
            raise DomainError("noise_sd entries must be positive")
        return self

    def flatten(self, spec: SurrogateSpec) -> np.ndarray:
        parts = []
        if spec.has_dipole_term:
            parts.append([self.b_scale])
        parts += [self.poly, self.amp, self.loc, self.width, np.atleast_1d(self.noise_sd)]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def unflatten(cls, spec: SurrogateSpec, flat, n_noise: int = 1) -> "ParameterVector":
        flat = np.asarray(flat, dtype=float)
        sizes = [1 if spec.has_dipole_term else 0, spec.n_poly, spec.n_gauss,
                 spec.n_gauss, spec.n_gauss, n_noise]
        if flat.size != sum(sizes):
            raise DimensionError(f"expected {sum(sizes)} values, got {flat.size}")
        pieces = np.split(flat, np.cumsum(sizes)[:-1])
        noise = pieces[5][0] if n_noise == 1 else pieces[5]
        return cls(
            b_scale=pieces[0][0] if spec.has_dipole_term else 1.0,
            poly=pieces[1], amp=pieces[2], loc=pieces[3], width=pieces[4],
            noise_sd=noise,
        )

    def names(self, spec: SurrogateSpec) -> list[str]:
        out = ["b_scale"] if spec.has_dipole_term else []
        out += [f"poly[{i}]" for i in range(spec.n_poly)]
        for block in ("amp", "loc", "width"):
            out += [f"{block}[{k}]" for k in range(spec.n_gauss)]
        ns = np.atleast_1d(self.noise_sd)
        out += ["noise_sd"] if ns.size == 1 else [f"noise_sd[{j}]" for j in range(ns.size)]
        return out

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.b_scale, self.poly, self.amp, self.loc,
                               self.width, self.noise_sd)

    def to_dict(self) -> dict[str, Any]:
        return {
            "b_scale": self.b_scale,
            "poly": self.poly.tolist(),
            "amp": self.amp.tolist(),
            "loc": self.loc.tolist(),
            "width": self.width.tolist(),
            "noise_sd": np.asarray(self.noise_sd).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ParameterVector":
        return cls(
            b_scale=data.get("b_scale", 1.0),
            poly=data.get("poly", []),
            amp=data.get("amp", []),
            loc=data.get("loc", []),
            width=data.get("width", []),
            noise_sd=data.get("noise_sd", 1.0),
        )


# -- elementary terms -------------------------------------------------------

def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def physical_aero_term(v, spec: SurrogateSpec, b_scale: float = 1.0):
    """Dipole level ``10 log10(b v**r / (c0**(r-3) 1e-12))`` with v in m/s."""
    v_arr = np.asarray(v, dtype=float)
    _require_finite(v_arr)
    if np.any(v_arr <= 0):
        raise DomainError("speed must be positive")
    if not b_scale > 0:
        raise DomainError("b_scale must be positive")
    v_ms = v_arr * KMH_TO_MS
    # Expanded in logs so that large r cannot overflow.
    level = 10.0 * (np.log10(b_scale) + spec.r * np.log10(v_ms)
                    - (spec.r - 3) * np.log10(spec.c0) + 12.0)
    return _scalar_or_array(level, v)


def poly_basis_eval(x, coeffs):
    """Evaluate ``sum_k coeffs[k] * x**k`` by Horner's rule."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size == 0:
        raise DomainError("polynomial needs at least one coefficient")
    x_arr = np.asarray(x, dtype=float)
    _require_finite(x_arr, coeffs)
    out = np.full_like(x_arr, coeffs[-1], dtype=float)
    for c in coeffs[-2::-1]:
        out = out * x_arr + c
    return _scalar_or_array(out, x)


def gauss_basis_eval(x, amp, loc, width):
    """Evaluate ``sum_k amp[k] * exp(-(x - loc[k])**2 / width[k]**2)``."""
    amp = np.asarray(amp, dtype=float)
    loc = np.asarray(loc, dtype=float)
    width = np.asarray(width, dtype=float)
    if not (amp.shape == loc.shape == width.shape):
        raise DimensionError("amp, loc and width must have equal lengths")
    if np.any(width <= 0):
        raise DomainError("Gaussian widths must be positive")
    x_arr = np.asarray(x, dtype=float)
    _require_finite(x_arr, amp, loc, width)
    if amp.size == 0:
        return _scalar_or_array(np.zeros_like(x_arr), x)
    g = np.exp(-((x_arr[..., None] - loc) / width) ** 2)
    return _scalar_or_array(g @ amp, x)


# -- family means -----------------------------------------------------------

def _check_family(spec, family):
    if spec.family is not family:
        raise SpecError(f"expected a {family.value} surrogate, got {spec.family.value}")


def mean_aero1(v, f, spec: SurrogateSpec, params: ParameterVector):
    _check_family(spec, Family.AERO_POLYNOMIAL)
    out = (physical_aero_term(np.asarray(v, float), spec, params.b_scale)
           + poly_basis_eval(spec.transform_frequency(f), params.poly))
    return _scalar_or_array(out, v if np.ndim(v) else f)


def mean_aero2(v, f, spec: SurrogateSpec, params: ParameterVector):
    _check_family(spec, Family.AERO_GAUSSIAN)
    out = (physical_aero_term(np.asarray(v, float), spec, params.b_scale)
           + gauss_basis_eval(spec.transform_frequency(f), params.amp,
                              params.loc, params.width))
    return _scalar_or_array(out, v if np.ndim(v) else f)


def _tire_freq_power(x, r1):
    if float(r1) != int(r1) and np.any(x < 0):
        raise DomainError("negative transformed frequency with fractional exponent r1")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(x, r1)
    if not np.all(np.isfinite(out)):
        raise DomainError("transformed frequency power is not finite")
    return out


def mean_tire(v, f, spec: SurrogateSpec, params: ParameterVector):
    _check_family(spec, Family.TIRE)
    v_arr = np.asarray(v, dtype=float)
    _require_finite(v_arr)
    if np.any(v_arr <= 0):
        raise DomainError("speed must be positive")
    v_ms = v_arr * KMH_TO_MS
    x = spec.transform_frequency(f)
    out = (_tire_freq_power(x, spec.r1) * poly_basis_eval(v_ms, params.poly)
           + v_ms ** spec.r2 * gauss_basis_eval(x, params.amp, params.loc, params.width))
    return _scalar_or_array(out, v if np.ndim(v) else f)


_MEANS = {
    Family.AERO_POLYNOMIAL: mean_aero1,
    Family.AERO_GAUSSIAN: mean_aero2,
    Family.TIRE: mean_tire,
}


def evaluate(spec: SurrogateSpec, params: ParameterVector, v, f):
    """Family-dispatched mean, vectorised over ``v`` and ``f``."""
    return _MEANS[spec.family](v, f, spec, params)


def mean_vector(data, spec: SurrogateSpec, params: ParameterVector) -> np.ndarray:
    """Mean SPL for every record of ``data`` (a Dataset or an ``(N, 2)`` array).

    Errors raised while evaluating are re-raised with the index of the first
    offending record attached.
    """
    v, f = _speed_freq(data)
    if v.size == 0:
        raise DimensionError("dataset is empty")
    params.validate(spec)
    try:
        return np.asarray(evaluate(spec, params, v, f), dtype=float).reshape(-1)
    except DomainError as err:
        for i in range(v.size):
            try:
                evaluate(spec, params, v[i], f[i])
            except DomainError as inner:
                raise DomainError(f"record {i}: {inner}") from err
        raise


def _speed_freq(data):
    if hasattr(data, "speeds") and hasattr(data, "frequencies"):
        return data.speeds(), data.frequencies()
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise DimensionError("expected an (N, 2) array of [speed_kmph, frequency_hz]")
    return X[:, 0], X[:, 1]


# -- derivatives -------------------------------------------------------------

def jacobian(spec: SurrogateSpec, params: ParameterVector, v, f) -> np.ndarray:
    """Partial derivatives of the mean w.r.t. every mean parameter.

    Columns follow the flat order ``b_scale, poly, amp, loc, width`` with
    absent blocks omitted (noise parameters do not enter the mean).
    """
    v = np.atleast_1d(np.asarray(v, dtype=float))
    f = np.atleast_1d(np.asarray(f, dtype=float))
    v, f = np.broadcast_arrays(v, f)
    x = spec.transform_frequency(f)
    v_ms = v * KMH_TO_MS
    cols = []
    if spec.has_dipole_term:
        cols.append(np.full(v.shape, 10.0 / (params.b_scale * _LN10))[:, None])
    if spec.uses_poly:
        if spec.family is Family.TIRE:
            powers = v_ms[:, None] ** np.arange(spec.n_poly)
            cols.append(_tire_freq_power(x, spec.r1)[:, None] * powers)
        else:
            cols.append(x[:, None] ** np.arange(spec.n_poly))
    if spec.uses_gauss:
        diff = x[:, None] - params.loc
        g = np.exp(-(diff / params.width) ** 2)
        scale = v_ms[:, None] ** spec.r2 if spec.family is Family.TIRE else 1.0
        cols.append(scale * g)
        cols.append(scale * params.amp * g * 2.0 * diff / params.width ** 2)
        cols.append(scale * params.amp * g * 2.0 * diff ** 2 / params.width ** 3)
    return np.hstack(cols) if cols else np.zeros((v.size, 0))


def mean_param_vector(spec: SurrogateSpec, params: ParameterVector) -> np.ndarray:
    """Flat mean parameters in the column order used by :func:`jacobian`."""
    parts = [[params.b_scale]] if spec.has_dipole_term else []
    parts += [params.poly, params.amp, params.loc, params.width]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def with_mean_params(spec: SurrogateSpec, params: ParameterVector, flat) -> ParameterVector:
    out = params.copy()
    flat = np.asarray(flat, dtype=float)
    i = 0
    if spec.has_dipole_term:
        out.b_scale = float(flat[0])
        i = 1
    out.poly = flat[i:i + spec.n_poly].copy()
    i += spec.n_poly
    k = spec.n_gauss
    out.amp, out.loc, out.width = (flat[i:i + k].copy(), flat[i + k:i + 2 * k].copy(),
                                   flat[i + 2 * k:i + 3 * k].copy())
    return out


# -- initialisation -----------------------------------------------------------

def default_init(spec: SurrogateSpec, v, f, y=None) -> ParameterVector:
    """Reproducible starting point for least-squares fitting.

    Polynomial and amplitude blocks start at zero, Gaussian locations are
    spread evenly over the observed transformed-frequency range and widths
    are ``range / n``. For ``AeroGaussian`` the dipole scale is set so the
    dipole term matches the mean response, when ``y`` is given.
    """
    x = spec.transform_frequency(f)
    lo, hi = float(np.min(x)), float(np.max(x))
    span = hi - lo if hi > lo else 1.0
    n = spec.n_gauss
    loc = np.linspace(lo, hi, n) if n > 1 else np.full(n, 0.5 * (lo + hi))
    width = np.full(n, span / max(n, 1))
    b_scale = 1.0
    if spec.family is Family.AERO_GAUSSIAN and y is not None:
        offset = np.mean(np.asarray(y, float) - physical_aero_term(np.asarray(v, float), spec, 1.0))
        b_scale = 10.0 ** (offset / 10.0)
    return ParameterVector(b_scale=b_scale, poly=np.zeros(spec.n_poly),
                           amp=np.zeros(n), loc=loc, width=width, noise_sd=1.0)
