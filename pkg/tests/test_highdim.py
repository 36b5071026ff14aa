import numpy as np
import pytest

from polycv.applications.benchmarks import get_benchmark
from polycv.builder import PiecewiseCV
from polycv.highdim import (
    ProjectionConfig,
    build_projected_cv,
    estimate_highdim,
    estimate_highdim_runs,
    node_uniforms,
    project_integrand,
)


class TestNodeUniforms:
    def test_deterministic(self):
        u = np.random.default_rng(0).random((10, 2))
        np.testing.assert_array_equal(node_uniforms(u, 3, 8), node_uniforms(u, 3, 8))

    def test_seed_changes_values(self):
        u = np.full((1, 2), 0.25)
        assert not np.array_equal(node_uniforms(u, 1, 4), node_uniforms(u, 2, 4))

    def test_range_and_mean(self):
        u = np.random.default_rng(1).random((20000, 2))
        v = node_uniforms(u, 0, 4)
        assert v.min() >= 0.0 and v.max() < 1.0
        assert v.mean() == pytest.approx(0.5, abs=0.01)


class TestProjection:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            ProjectionConfig(3, 2)
        with pytest.raises(ValueError):
            ProjectionConfig(2, 6, n_star=0)

    def test_projected_value_is_inner_average(self):
        f = lambda u: u[:, 0] + u[:, 2]
        cfg = ProjectionConfig(2, 3, n_star=4, seed=5)
        u = np.array([[0.2, 0.7]])
        inner = node_uniforms(u, 5, 4)
        assert project_integrand(f, cfg)(u)[0] == pytest.approx(0.2 + inner.mean())

    def test_node_cost(self):
        calls = []
        bench = get_benchmark("hd-product-6d")

        def g(u):
            calls.append(u.shape[0])
            return bench.f(u)

        cfg = ProjectionConfig(2, 6, n_star=4)
        cv = build_projected_cv(g, cfg, 100)
        assert sum(calls) == 4 * cv.eval_count


class TestEstimate:
    def test_dimension_mismatch(self):
        cfg = ProjectionConfig(2, 6)
        with pytest.raises(ValueError):
            estimate_highdim(PiecewiseCV.constant(3), lambda u: u[:, 0], cfg, 10, np.random.default_rng(0))

    def test_unbiased_with_poor_cv(self):
        """Trailing structure missed by the CV still averages out."""
        bench = get_benchmark("hd-additive-6d")
        cfg = ProjectionConfig(2, 6, n_star=1)
        cv = build_projected_cv(bench.f, cfg, 9)
        values, _ = estimate_highdim_runs(cv, bench.f, cfg, 32, 3000, np.random.default_rng(0), alpha=1.0)
        se = values.std(ddof=1) / np.sqrt(values.size)
        assert abs(values.mean() - bench.reference) < 4 * se

    def test_per_run_alpha_bias_vanishes(self):
        """Estimating alpha from the same samples is biased at O(1/N) only."""
        bench = get_benchmark("hd-additive-6d")
        cfg = ProjectionConfig(2, 6, n_star=1)
        cv = build_projected_cv(bench.f, cfg, 9)
        values, _ = estimate_highdim_runs(cv, bench.f, cfg, 512, 1000, np.random.default_rng(0))
        se = values.std(ddof=1) / np.sqrt(values.size)
        assert abs(values.mean() - bench.reference) < 4 * se
