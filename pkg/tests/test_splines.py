import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from kanforge.errors import InvalidArgumentError, InvalidInputError
from kanforge.splines import (
    DegenerateFitWarning,
    SplineFunction,
    SplineGrid,
    basis_derivative,
    basis_eval,
    extend_grid,
    fit_coefficients,
)

CONFIGS = [(2, 3), (4, 4), (8, 3), (1, 1), (5, 2)]


def scipy_basis(grid, x):
    """Independent route: scipy's B-spline design matrix on the same knots."""
    return BSpline.design_matrix(np.atleast_1d(x), grid.knots, grid.degree_k, extrapolate=False).toarray()


class TestGrid:
    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_knot_layout(self, G, k):
        g = SplineGrid(G, k, -2.0, 3.0)
        assert len(g.knots) == G + 2 * k + 1
        assert g.basis_count == G + k
        assert np.all(np.diff(g.knots) > 0)
        inside = g.knots[(g.knots >= -2.0) & (g.knots <= 3.0)]
        assert len(inside) == G + 1
        assert inside[0] == -2.0 and inside[-1] == 3.0

    def test_bad_domain(self):
        with pytest.raises(InvalidArgumentError):
            SplineGrid(2, 3, 1.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            SplineGrid(0, 3)

    def test_knots_read_only(self):
        g = SplineGrid(2, 3)
        with pytest.raises(ValueError):
            g.knots[0] = 5.0


class TestBasisEval:
    def test_hat_at_apex(self):
        B = basis_eval(SplineGrid(2, 1, 0.0, 1.0), 0.5)
        np.testing.assert_array_equal(B, [0.0, 1.0, 0.0])

    def test_cubic_hand_oracle(self):
        # x = 0.25 sits at local parameter u = 1/2 of interval [0, 0.5]; the
        # uniform cubic pieces there are (1-u)^3/6, (3u^3-6u^2+4)/6,
        # (-3u^3+3u^2+3u+1)/6, u^3/6
        u = 0.5
        expected = [(1 - u) ** 3 / 6, (3 * u ** 3 - 6 * u ** 2 + 4) / 6,
                    (-3 * u ** 3 + 3 * u ** 2 + 3 * u + 1) / 6, u ** 3 / 6, 0.0]
        np.testing.assert_allclose(expected, [1 / 48, 23 / 48, 23 / 48, 1 / 48, 0.0], rtol=0, atol=1e-15)
        B = basis_eval(SplineGrid(2, 3, 0.0, 1.0), 0.25)
        np.testing.assert_allclose(B, expected, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_matches_scipy(self, G, k):
        g = SplineGrid(G, k, -1.0, 1.0)
        x = np.random.default_rng(1).uniform(-1, 1, 200)
        np.testing.assert_allclose(basis_eval(g, x), scipy_basis(g, x), rtol=0, atol=1e-13)

    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_partition_of_unity_and_range(self, G, k):
        g = SplineGrid(G, k, -1.0, 1.0)
        x = np.concatenate([np.random.default_rng(2).uniform(-1, 1, 1000), [-1.0, 1.0], g.knots[k:k + G + 1]])
        B = basis_eval(g, x)
        assert B.shape == (len(x), G + k)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) <= 1e-12
        assert B.min() >= 0.0 and B.max() <= 1.0

    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_local_support(self, G, k):
        g = SplineGrid(G, k, -1.0, 1.0)
        x = np.linspace(-1, 1, 401)
        B = basis_eval(g, x)
        for i in range(g.basis_count):
            outside = (x < g.knots[i]) | (x > g.knots[i + k + 1])
            assert np.all(B[outside, i] == 0.0)

    def test_clamping(self):
        g = SplineGrid(4, 3, 0.0, 2.0)
        np.testing.assert_array_equal(basis_eval(g, -5.0), basis_eval(g, 0.0))
        np.testing.assert_array_equal(basis_eval(g, 7.0), basis_eval(g, 2.0))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(InvalidInputError):
            basis_eval(SplineGrid(2, 3), bad)
        with pytest.raises(InvalidInputError):
            basis_derivative(SplineGrid(2, 3), [0.0, bad])

    @settings(max_examples=60, deadline=None)
    @given(G=st.integers(1, 12), k=st.integers(0, 5),
           lo=st.floats(-50, 50), width=st.floats(1e-3, 100), t=st.floats(0, 1))
    def test_unity_property(self, G, k, lo, width, t):
        g = SplineGrid(G, k, lo, lo + width)
        B = basis_eval(g, lo + t * width)
        assert abs(B.sum() - 1.0) <= 1e-12
        assert B.min() >= 0.0


class TestDerivative:
    def test_degree_zero(self):
        g = SplineGrid(4, 0)
        np.testing.assert_array_equal(basis_derivative(g, [-0.6, 0.1, 0.7]), np.zeros((3, 4)))

    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_sums_to_zero(self, G, k):
        g = SplineGrid(G, k)
        x = np.random.default_rng(3).uniform(-1, 1, 100)
        assert np.max(np.abs(basis_derivative(g, x).sum(axis=1))) <= 1e-10

    @pytest.mark.parametrize("G,k", CONFIGS)
    def test_finite_differences(self, G, k):
        g = SplineGrid(G, k)
        x = np.random.default_rng(4).uniform(-1 + 1e-5, 1 - 1e-5, 100)
        h = 1e-6
        fd = (basis_eval(g, x + h) - basis_eval(g, x - h)) / (2 * h)
        assert np.max(np.abs(basis_derivative(g, x) - fd)) <= 1e-5

    def test_cubic_at_quarter(self):
        g = SplineGrid(2, 3, 0.0, 1.0)
        h = 1e-6
        fd = (basis_eval(g, 0.25 + h) - basis_eval(g, 0.25 - h)) / (2 * h)
        # closed-form derivative of the uniform cubic pieces at u = 1/2, times du/dx = 2
        exact = 2 * np.array([-(0.5 ** 2) / 2, (9 * 0.25 - 12 * 0.5) / 6, (-9 * 0.25 + 6 * 0.5 + 3) / 6, 0.25 / 2, 0.0])
        np.testing.assert_allclose(basis_derivative(g, 0.25), exact, atol=1e-13)
        np.testing.assert_allclose(basis_derivative(g, 0.25), fd, atol=1e-5)

    def test_zero_outside_domain(self):
        g = SplineGrid(3, 2)
        np.testing.assert_array_equal(basis_derivative(g, [-1.5, 2.0]), np.zeros((2, 5)))


class TestFit:
    def test_zero_targets(self):
        g = SplineGrid(4, 3)
        fn = fit_coefficients(g, np.linspace(-1, 1, 30), np.zeros(30))
        np.testing.assert_array_equal(fn.coefficients, 0.0)

    def test_constant_reproduction(self):
        g = SplineGrid(5, 3)
        fn = fit_coefficients(g, np.linspace(-1, 1, 200), np.full(200, 3.7))
        assert np.max(np.abs(fn(np.linspace(-1, 1, 999)) - 3.7)) <= 1e-8

    def test_cubic_polynomial(self):
        g = SplineGrid(3, 3)
        p = np.polynomial.Polynomial([0.3, -1.2, 0.5, 2.0])
        xs = np.linspace(-1, 1, 40)
        fn = fit_coefficients(g, xs, p(xs))
        assert np.max(np.abs(fn(xs) - p(xs))) <= 1e-6

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(5)
        g = SplineGrid(4, 2)
        xs, ys = rng.uniform(-1, 1, 25), rng.normal(size=25)
        A = basis_eval(g, xs)
        c_ne = np.linalg.solve(A.T @ A, A.T @ ys)
        fn = fit_coefficients(g, xs, ys)
        np.testing.assert_allclose(fn.coefficients, c_ne, atol=1e-9)
        best = np.sum((A @ fn.coefficients - ys) ** 2)
        for _ in range(20):
            assert np.sum((A @ (fn.coefficients + 1e-3 * rng.normal(size=6)) - ys) ** 2) >= best

    def test_projection_recovers_coefficients(self):
        rng = np.random.default_rng(6)
        g = SplineGrid(6, 3)
        c = rng.normal(size=g.basis_count)
        xs = np.linspace(-1, 1, 100)
        fn = fit_coefficients(g, xs, basis_eval(g, xs) @ c)
        np.testing.assert_allclose(fn.coefficients, c, atol=1e-8)

    def test_rank_deficient_warns(self):
        g = SplineGrid(4, 3)
        xs = np.full(10, 0.3)
        with pytest.warns(DegenerateFitWarning):
            fn = fit_coefficients(g, xs, np.full(10, 2.0))
        assert np.isfinite(fn.coefficients).all()
        assert abs(fn(0.3) - 2.0) < 1e-9

    def test_too_few_samples(self):
        with pytest.raises(InvalidArgumentError):
            fit_coefficients(SplineGrid(4, 3), [0.0, 0.1], [1.0, 2.0])

    def test_coefficient_count_checked(self):
        with pytest.raises(InvalidArgumentError):
            SplineFunction(SplineGrid(2, 3), np.zeros(4))


class TestExtend:
    def test_same_grid(self):
        fn = SplineFunction(SplineGrid(2, 3), np.random.default_rng(7).normal(size=5))
        ext = extend_grid(fn, 2)
        np.testing.assert_allclose(ext.coefficients, fn.coefficients, rtol=0, atol=1e-12)

    def test_nested_refinement_exact(self):
        fn = SplineFunction(SplineGrid(2, 3), np.random.default_rng(8).normal(size=5))
        ext = extend_grid(fn, 4)
        x = np.linspace(-1, 1, 100)
        assert np.max(np.abs(ext(x) - fn(x))) < 1e-8

    def test_dense_sampling_residual(self):
        fn = SplineFunction(SplineGrid(2, 3), np.random.default_rng(9).uniform(-0.1, 0.1, 5))
        ext = extend_grid(fn, 8)
        xs = np.linspace(-1, 1, 10 * ext.grid.basis_count)
        assert np.max(np.abs(ext(xs) - fn(xs))) < 1e-8

    def test_non_nested_is_least_squares(self):
        fn = SplineFunction(SplineGrid(3, 3), np.random.default_rng(10).normal(size=6))
        ext = extend_grid(fn, 5)
        xs = np.linspace(-1, 1, 10 * ext.grid.basis_count)
        ref = fit_coefficients(ext.grid, xs, fn(xs))
        np.testing.assert_allclose(ext.coefficients, ref.coefficients, atol=1e-12)

    def test_shrinking_rejected(self):
        with pytest.raises(InvalidArgumentError):
            extend_grid(SplineFunction(SplineGrid(4, 3), np.zeros(7)), 2)


def test_no_warning_on_regular_fit():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_coefficients(SplineGrid(4, 3), np.linspace(-1, 1, 50), np.sin(np.linspace(-1, 1, 50)))
