"""Property-based checks of invariances that hold for any input."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvhmeta.bayes import order_forward, order_inverse, to_constrained, to_unconstrained
from nvhmeta.dataset import Dataset, load_csv, write_csv
from nvhmeta.diagnostics import r_hat, rank_histogram
from nvhmeta.loo import psis_smooth
from nvhmeta.surrogate import poly_basis_eval

finite = st.floats(-1e3, 1e3, allow_nan=False)
chains = arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(8, 60)),
                elements=st.floats(-100, 100, allow_nan=False))


class TestDiagnosticsProperties:
    @settings(max_examples=60, deadline=None)
    @given(chains, st.floats(0.01, 100), finite)
    def test_r_hat_affine_invariant(self, x, a, b):
        base = r_hat(x)
        moved = r_hat(a * x + b)
        if np.isfinite(base) and np.ptp(x) > 1e-3:
            np.testing.assert_allclose(moved, base, rtol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(chains)
    def test_rank_histogram_monotone_invariant(self, x):
        np.testing.assert_array_equal(rank_histogram(np.arctan(x / 50.0)), rank_histogram(x))


class TestSurrogateProperties:
    @given(st.lists(finite, min_size=1, max_size=6), st.floats(-5, 5))
    def test_horner_matches_polyval(self, coeffs, x):
        got = poly_basis_eval(x, coeffs)
        want = np.polyval(coeffs[::-1], x)
        assert abs(got - want) <= 1e-9 * (1 + np.sum(np.abs(coeffs)) * 5.0 ** len(coeffs))


class TestTransformProperties:
    @given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)))
    def test_order_round_trip(self, u):
        b = order_forward(u)
        assert np.all(np.diff(b) > 0)
        np.testing.assert_allclose(order_inverse(b), u, atol=1e-9)

    @given(st.floats(-30, 30))
    def test_log_round_trip(self, u):
        assert to_constrained(u) > 0
        assert abs(to_unconstrained(to_constrained(u)) - u) < 1e-9


class TestPsisProperties:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(100, 600), elements=st.floats(-20, 20)))
    def test_weights_normalised_and_capped(self, lw):
        w, _ = psis_smooth(lw)
        assert abs(w.sum() - 1.0) < 1e-10
        raw, _ = psis_smooth(lw, normalize=False)
        assert raw.max() <= np.exp(lw).max() * (1 + 1e-10)


class TestDatasetProperties:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.floats(1, 300), st.floats(10, 20_000), st.floats(0, 150)),
                    min_size=1, max_size=20))
    def test_csv_round_trip(self, tmp_path_factory, rows):
        v, f, y = map(np.array, zip(*rows))
        path = tmp_path_factory.mktemp("csv") / "d.csv"
        write_csv(Dataset.from_arrays(v, f, y), path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.speeds(), v)
        np.testing.assert_array_equal(back.frequencies(), f)
        np.testing.assert_array_equal(back.spl(), y)
