import json
import math

import numpy as np
import pytest
from scipy import stats

from nvhmeta.diagnostics import (convergence_report, ess, r_hat, rank_histogram,
                                 within_between)
from nvhmeta.exceptions import DimensionError
from nvhmeta.sampler import PosteriorSamples


def ar1(rng, phi, chains, n):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / math.sqrt(1 - phi ** 2)
    eps = rng.standard_normal((chains, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + eps[:, t]
    return x


class TestRHat:
    def test_identical_three_draw_chains(self):
        x = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        assert within_between(x) == (1.0, 0.0)
        assert abs(r_hat(x) - math.sqrt(2.0 / 3.0)) < 1e-12

    def test_same_distribution(self, rng):
        assert 0.999 <= r_hat(rng.standard_normal((4, 10_000))) <= 1.01

    def test_separated_chains(self, rng):
        x = rng.standard_normal((2, 1000))
        x[1] += 10.0
        assert r_hat(x) > 3.0

    def test_stuck_chains(self):
        assert r_hat(np.array([[1.0] * 5, [2.0] * 5])) == math.inf
        assert r_hat(np.ones((3, 5))) == 1.0

    def test_affine_invariance(self, rng):
        x = rng.standard_normal((4, 300)) + np.arange(4)[:, None] * 0.1
        for a, b in [(3.0, -2.0), (-0.5, 100.0), (1e4, 1.0)]:
            assert r_hat(a * x + b) == pytest.approx(r_hat(x), rel=1e-10)

    def test_split_detects_drift(self):
        trend = np.tile(np.linspace(0, 10, 400), (4, 1))
        noise = np.random.default_rng(0).standard_normal((4, 400))
        x = trend + noise
        assert r_hat(x) < 1.05 < r_hat(x, split=True)

    def test_preconditions(self):
        with pytest.raises(DimensionError):
            r_hat(np.ones((1, 10)))
        with pytest.raises(DimensionError):
            r_hat(np.ones((2, 1)))
        with pytest.raises(DimensionError):
            r_hat(np.ones((2, 3)), split=True)


class TestRankHistogram:
    def test_identical_chains_uniform(self, rng):
        c = rng.permutation(100).astype(float)
        h = rank_histogram(np.stack([c, c]), bins=20)
        np.testing.assert_array_equal(h, np.full((2, 20), 5))

    def test_shifted_chain_in_top_bins(self, rng):
        x = rng.standard_normal((2, 500))
        x[1] += 100.0
        h = rank_histogram(x, bins=10)
        assert h[1, 5:].sum() == 500 and h[0, :5].sum() == 500

    def test_rows_sum_to_draws(self, rng):
        h = rank_histogram(rng.standard_normal((3, 777)), bins=20)
        assert h.sum(axis=1).tolist() == [777, 777, 777]

    def test_monotone_invariance(self, rng):
        x = rng.standard_normal((4, 250))
        np.testing.assert_array_equal(rank_histogram(np.exp(3 * x) - 7), rank_histogram(x))

    def test_chi_square_under_null(self):
        rng = np.random.default_rng(1234)
        chains, draws, bins = 4, 200, 20
        crit = stats.chi2((chains - 1) * (bins - 1)).ppf(0.999)
        expected = draws / bins
        below = 0
        for _ in range(1000):
            h = rank_histogram(rng.standard_normal((chains, draws)), bins)
            below += np.sum((h - expected) ** 2 / expected) < crit
        assert below >= 990


class TestEss:
    def test_iid(self, rng):
        x = rng.standard_normal((4, 5000))
        assert abs(ess(x) / x.size - 1.0) <= 0.10

    def test_ar1(self, rng):
        phi = 0.9
        x = ar1(rng, phi, 4, 20_000)
        want = x.size * (1 - phi) / (1 + phi)
        assert abs(ess(x) / want - 1.0) <= 0.20

    def test_constant(self):
        assert ess(np.ones((2, 100))) == 1.0

    def test_single_chain(self, rng):
        x = rng.standard_normal(4000)
        assert abs(ess(x) / 4000 - 1.0) <= 0.15


class TestReport:
    def test_report_files(self, rng, tmp_path):
        draws = rng.standard_normal((3, 100, 2))
        s = PosteriorSamples(draws, ["a", "b"], np.zeros((3, 100)), np.ones(3),
                             np.zeros(3, dtype=int))
        rep = convergence_report(s, bins=10)
        assert rep.rank_histograms.shape == (2, 3, 10)
        assert np.all(rep.W >= 0) and np.all(rep.B >= 0)
        rep.to_json(tmp_path / "c.json")
        data = json.loads((tmp_path / "c.json").read_text())
        assert set(data["params"]) == {"a", "b"}
        assert data["max_r_hat"] == pytest.approx(rep.r_hat.max())
        rep.rank_histograms_to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 3 * 10
