import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycv.polycore import (
    VANDERMONDE_INV,
    Box,
    NestedRuleConfig,
    eval_poly,
    fit_polynomial,
    integrate_poly,
    monomial_basis,
    nested_integrals,
    tensor_grid,
)


def random_poly(rng, dim):
    """Random tensor polynomial of per-dim degree <= 2 as a callable plus its exact box integral."""
    c = rng.normal(size=(3,) * dim)

    def f(x):
        out = np.zeros(x.shape[0])
        for idx in itertools.product(range(3), repeat=dim):
            out += c[idx] * np.prod([x[:, d] ** idx[d] for d in range(dim)], axis=0)
        return out

    def integral(lo, hi):
        total = 0.0
        for idx in itertools.product(range(3), repeat=dim):
            total += c[idx] * np.prod([(hi[d] ** (idx[d] + 1) - lo[d] ** (idx[d] + 1)) / (idx[d] + 1) for d in range(dim)])
        return total

    return f, integral


def random_box(rng, dim, low=-2.0, high=2.0):
    a = rng.uniform(low, high, dim)
    b = rng.uniform(low, high, dim)
    lo, hi = np.minimum(a, b), np.maximum(a, b) + 0.05
    return Box(lo, hi)


class TestBox:
    def test_unit_box(self):
        b = Box.unit(3)
        assert b.dim == 3
        assert b.volume == 1.0
        np.testing.assert_array_equal(b.mid, [0.5, 0.5, 0.5])

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Box([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(ValueError):
            Box([0.0], [np.inf])

    def test_split_halves(self):
        lo, hi = Box([0.0, 0.0], [1.0, 2.0]).split(1)
        assert lo == Box([0.0, 0.0], [1.0, 1.0])
        assert hi == Box([0.0, 1.0], [1.0, 2.0])
        assert lo.volume + hi.volume == 2.0

    def test_intersect(self):
        a = Box([0.0, 0.0], [1.0, 1.0])
        b = Box([0.5, -1.0], [2.0, 0.5])
        assert a.intersect(b) == Box([0.5, 0.0], [1.0, 0.5])
        assert a.intersect(Box([2.0, 2.0], [3.0, 3.0])) is None

    def test_arrays_read_only(self):
        b = Box.unit(2)
        with pytest.raises(ValueError):
            b.lo[0] = 1.0


class TestBasis:
    def test_vandermonde_inverse(self):
        t = np.array([0.0, 0.5, 1.0])
        V = np.stack([np.ones(3), t, t * t], axis=1)
        np.testing.assert_allclose(VANDERMONDE_INV @ V, np.eye(3), atol=1e-15)

    def test_grid_is_lexicographic(self):
        pts = tensor_grid(Box.unit(2))
        assert pts.shape == (9, 2)
        np.testing.assert_array_equal(pts[:3], [[0, 0], [0, 0.5], [0, 1]])
        np.testing.assert_array_equal(pts[3], [0.5, 0.0])

    def test_monomials(self):
        t = np.array([[0.5, 2.0]])
        np.testing.assert_allclose(monomial_basis(t)[0], [1, 2, 4, 0.5, 1, 2, 0.25, 0.5, 1])


class TestSpecExamples:
    def test_square_on_unit_interval(self):
        box = Box.unit(1)
        values = tensor_grid(box)[:, 0] ** 2
        high, low = nested_integrals(values, box)
        assert high == pytest.approx(1 / 3, abs=1e-15)
        assert low[0] == pytest.approx(0.5, abs=1e-15)
        assert integrate_poly(fit_polynomial(values, 1), box) == pytest.approx(1 / 3, abs=1e-15)

    def test_product_of_squares(self):
        box = Box.unit(2)
        p = tensor_grid(box)
        values = p[:, 0] ** 2 * p[:, 1] ** 2
        high, low = nested_integrals(values, box)
        assert high == pytest.approx(1 / 9, abs=1e-15)
        np.testing.assert_allclose(low, [1 / 6, 1 / 6], atol=1e-15)

    def test_scaled_box(self):
        box = Box([0.0], [2.0])
        values = tensor_grid(box)[:, 0] ** 2
        assert integrate_poly(fit_polynomial(values, 1), box) == pytest.approx(8 / 3, rel=1e-14)

    def test_eval_outside_box_raises(self):
        box = Box.unit(1)
        coeffs = fit_polynomial(np.zeros(3), 1)
        with pytest.raises(ValueError):
            eval_poly(coeffs, box, np.array([[1.5]]))

    def test_sub_box_must_be_inside(self):
        box = Box.unit(1)
        coeffs = fit_polynomial(np.zeros(3), 1)
        with pytest.raises(ValueError):
            integrate_poly(coeffs, box, Box([0.5], [1.5]))


class TestNestedRuleConfig:
    def test_defaults(self):
        cfg = NestedRuleConfig()
        assert (cfg.order_high, cfg.order_low, cfg.epsilon) == (2, 1, 1e-5)

    def test_rejects_bad_orders(self):
        with pytest.raises(ValueError):
            NestedRuleConfig(order_high=1, order_low=1)


class TestExactness:
    @pytest.mark.parametrize("dim", [1, 2, 3, 4])
    def test_reproduces_quadratics(self, dim):
        rng = np.random.default_rng(dim)
        for _ in range(10):
            f, integral = random_poly(rng, dim)
            box = random_box(rng, dim)
            coeffs = fit_polynomial(f(tensor_grid(box)), dim)
            x = box.lo + box.extent * rng.random((50, dim))
            np.testing.assert_allclose(eval_poly(coeffs, box, x), f(x), rtol=1e-9, atol=1e-9)
            exact = integral(box.lo, box.hi)
            assert integrate_poly(coeffs, box) == pytest.approx(exact, rel=1e-10, abs=1e-10)
            high, _ = nested_integrals(f(tensor_grid(box)), box)
            assert high == pytest.approx(exact, rel=1e-10, abs=1e-10)

    def test_vector_valued(self):
        box = Box.unit(2)
        p = tensor_grid(box)
        values = np.stack([p[:, 0] ** 2, p[:, 1], np.ones(9)], axis=1)
        np.testing.assert_allclose(integrate_poly(fit_polynomial(values, 2), box), [1 / 3, 1 / 2, 1], atol=1e-15)


@st.composite
def poly_and_box(draw):
    dim = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    return dim, np.random.default_rng(seed)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(poly_and_box())
    def test_additivity_over_split(self, case):
        dim, rng = case
        f, _ = random_poly(rng, dim)
        box = random_box(rng, dim)
        coeffs = fit_polynomial(f(tensor_grid(box)), dim)
        d = int(rng.integers(dim))
        a, b = box.split(d)
        whole = integrate_poly(coeffs, box)
        parts = integrate_poly(coeffs, box, a) + integrate_poly(coeffs, box, b)
        assert parts == pytest.approx(whole, rel=1e-10, abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(poly_and_box(), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, case, s, t):
        dim, rng = case
        box = random_box(rng, dim)
        f1, i1 = random_poly(rng, dim)
        f2, i2 = random_poly(rng, dim)
        pts = tensor_grid(box)
        coeffs = fit_polynomial(s * f1(pts) + t * f2(pts), dim)
        expected = s * i1(box.lo, box.hi) + t * i2(box.lo, box.hi)
        assert integrate_poly(coeffs, box) == pytest.approx(expected, rel=1e-9, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(poly_and_box(), st.floats(0.1, 5.0), st.floats(-5, 5))
    def test_affine_change_of_box(self, case, scale, shift):
        """Node values determine the integral up to the box volume."""
        dim, rng = case
        values = rng.normal(size=3**dim)
        unit = integrate_poly(fit_polynomial(values, dim), Box.unit(dim))
        box = Box(np.full(dim, shift), np.full(dim, shift + scale))
        moved = integrate_poly(fit_polynomial(values, dim), box)
        assert moved == pytest.approx(unit * scale**dim, rel=1e-10, abs=1e-10)
