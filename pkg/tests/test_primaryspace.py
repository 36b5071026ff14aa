import math

import numpy as np
import pytest

from polycv.primaryspace import (
    MappingSet,
    equiangular_mapping,
    exponential_mapping,
    identity_mapping,
    linear_mapping,
    make_primary_integrand,
    mis_weight,
    mis_weights,
    uniform_interval_mapping,
)


def trapezoid(y, x):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)


class TestMappings:
    @pytest.mark.parametrize(
        "mapping,upper",
        [
            (uniform_interval_mapping(2.0), 2.0),
            (exponential_mapping(1.5), None),
            (linear_mapping(), 1.0),
            (equiangular_mapping([0.5, 0.2, 0.0], [0, 0, 0], [1, 0, 0], 1.0), 1.0),
        ],
    )
    def test_pdf_matches_warp(self, mapping, upper):
        """The pdf is the inverse Jacobian of the warp."""
        u = np.linspace(0.01, 0.95, 200)[:, None]
        x = mapping.warp(u)
        h = 1e-6
        dx = (mapping.warp(u + h) - mapping.warp(u - h))[:, 0] / (2 * h)
        np.testing.assert_allclose(mapping.pdf(x), 1.0 / dx, rtol=1e-5)

    def test_equiangular_normalized(self):
        m = equiangular_mapping([0.3, 0.1, 0.0], [0, 0, 0], [1, 0, 0], 2.0)
        s = np.linspace(0, 2, 200_001)
        assert trapezoid(m.pdf(s[:, None]), s) == pytest.approx(1.0, rel=1e-8)

    def test_equiangular_endpoints(self):
        m = equiangular_mapping([0.5, 0.15, 0.0], [0, 0, 0], [1, 0, 0], 1.0)
        np.testing.assert_array_equal(m.warp(np.array([[0.0], [1.0]]))[:, 0], [0.0, 1.0])

    def test_equiangular_rejects_light_on_ray(self):
        with pytest.raises(ValueError):
            equiangular_mapping([0.5, 0.0, 0.0], [0, 0, 0], [1, 0, 0], 1.0)

    def test_identity(self):
        m = identity_mapping(3)
        u = np.random.default_rng(0).random((5, 3))
        np.testing.assert_array_equal(m.warp(u), u)
        np.testing.assert_array_equal(m.pdf(u), 1.0)


class TestMISWeights:
    def test_hand_values(self):
        w = mis_weights(np.array([[1.0, 3.0]]))
        assert w[0, 0] == 0.1
        assert w[0, 1] == 0.9
        assert mis_weight([1.0, 3.0], 1) == 0.9

    def test_two_techniques_sum_exactly(self):
        pdfs = np.random.default_rng(1).exponential(size=(100_000, 2))
        np.testing.assert_array_equal(mis_weights(pdfs).sum(axis=1), 1.0)

    def test_partition_of_unity(self):
        pdfs = np.random.default_rng(1).exponential(size=(100_000, 3))
        s = mis_weights(pdfs).sum(axis=1)
        np.testing.assert_allclose(s, 1.0, rtol=0, atol=4 * np.finfo(float).eps)

    def test_zero_pdfs(self):
        np.testing.assert_array_equal(mis_weights(np.array([[0.0, 0.0]])), [[0.0, 0.0]])

    def test_balance_heuristic(self):
        np.testing.assert_allclose(mis_weights(np.array([[1.0, 3.0]]), beta=1.0), [[0.25, 0.75]])

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            mis_weights(np.array([[-1.0, 1.0]]))


class TestPrimaryIntegrand:
    def test_single_mapping_is_ratio(self):
        m = exponential_mapping(2.0)
        g = make_primary_integrand(lambda x: np.exp(-x[:, 0]), m)
        u = np.random.default_rng(2).random((1000, 1))
        x = m.warp(u)
        np.testing.assert_array_equal(g(u), np.exp(-x[:, 0]) / m.pdf(x))

    def test_counter(self):
        g = make_primary_integrand(lambda x: x[:, 0], identity_mapping(1))
        g(np.zeros((5, 1)))
        g(np.zeros((7, 1)))
        assert g.evals == 12

    def test_mis_integral(self):
        f = lambda x: np.exp(-x[:, 0]) * (x[:, 0] < 1)
        ms = MappingSet((uniform_interval_mapping(1.0), linear_mapping()))
        g = make_primary_integrand(f, ms)
        u = (np.arange(200_000)[:, None] + 0.5) / 200_000
        assert g(u).mean() == pytest.approx(1 - math.exp(-1), rel=1e-6)

    def test_mismatched_dims(self):
        with pytest.raises(ValueError):
            MappingSet((identity_mapping(1), identity_mapping(2)))
