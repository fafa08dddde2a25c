import numpy as np
import pytest

from nvhmeta.dataset import SynthConfig, synthesize
from nvhmeta.surrogate import ParameterVector, SurrogateSpec

# Polynomial aero truth: a smooth spectrum falling with frequency, about 60-90 dB.
AERO1_SPEC = SurrogateSpec("AeroPolynomial", m=4)
AERO1_POLY = np.array([-40.0, -10.0, 5.0, -2.0, 0.2])

# Three separated spectral peaks (log10 Hz) with noise growing with frequency.
PEAK_SPEC = SurrogateSpec("AeroGaussian", n=3)
PEAK_TRUE = ParameterVector(b_scale=1e-7, amp=[8.0, 12.0, 6.0], loc=[2.3, 2.9, 3.5],
                            width=[0.12, 0.12, 0.12])
PEAK_NOISE = np.linspace(0.5, 2.0, 20)


def aero1_data(seed, noise=1.0, reps=1, poly=AERO1_POLY):
    cfg = SynthConfig(AERO1_SPEC, ParameterVector(poly=poly), noise_sd_db=noise,
                      replicate_count=reps, rng_seed=seed)
    return synthesize(cfg)


def peak_data(seed, reps=5):
    cfg = SynthConfig(PEAK_SPEC, PEAK_TRUE, noise_sd_db=PEAK_NOISE, replicate_count=reps,
                      rng_seed=seed)
    return synthesize(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def fd_gradient(fun, u, rel=1e-6):
    """Central differences with step ``rel * max(1, |u_j|)``."""
    u = np.asarray(u, dtype=float)
    g = np.empty_like(u)
    for j in range(u.size):
        h = rel * max(1.0, abs(u[j]))
        e = np.zeros_like(u)
        e[j] = h
        g[j] = (fun(u + e) - fun(u - e)) / (2 * h)
    return g
