"""Low-dimensional control variates for high-dimensional integrands.

The CV lives on the first ``L`` primary dimensions.  While building it, the
integrand at a node ``u`` is replaced by a small Monte Carlo average over the
trailing ``D - L`` dimensions.  The residual is then estimated in the full
``D``-dimensional space, with fresh trailing coordinates for every sample,
so the final estimate stays unbiased whatever the quality of the CV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .builder import DEFAULT_EPSILON, PiecewiseCV, build_cv, evaluate
from .estimator import AlphaMode, Estimate, estimate_full, estimate_full_runs

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class ProjectionConfig:
    cv_dims: int  # L
    full_dims: int  # D
    n_star: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.cv_dims <= self.full_dims:
            raise ValueError(f"need 1 <= cv_dims <= full_dims, got {self.cv_dims}, {self.full_dims}")
        if self.n_star < 1:
            raise ValueError("n_star must be at least 1")

    @property
    def extra_dims(self) -> int:
        return self.full_dims - self.cv_dims


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def node_uniforms(u: np.ndarray, seed: int, count: int) -> np.ndarray:
    """Deterministic uniforms in [0, 1) keyed by the bit pattern of each row of ``u``.

    Returns an ``(n, count)`` array; identical ``(seed, u)`` always give
    identical values, so a node shared by parent and child regions sees the
    same inner samples.
    """
    u = np.ascontiguousarray(np.atleast_2d(u), dtype=np.float64)
    bits = u.view(np.uint64)
    with np.errstate(over="ignore"):
        h = np.full(u.shape[0], np.uint64(seed) & _MASK64)
        for d in range(bits.shape[1]):
            h = _splitmix64(h ^ bits[:, d])
        counters = np.arange(count, dtype=np.uint64)
        out = _splitmix64(h[:, None] + counters[None, :] * np.uint64(0xD1B54A32D192ED03))
    return (out >> np.uint64(11)).astype(np.float64) * (1.0 / 2.0**53)


def project_integrand(g_full, cfg: ProjectionConfig):
    """``L``-dimensional integrand averaging ``g_full`` over ``n_star`` trailing points.

    Only meant for building the CV: the inner points are a deterministic
    function of ``(cfg.seed, u)``.
    """
    L, extra, n_star = cfg.cv_dims, cfg.extra_dims, cfg.n_star

    def g(u):
        u = np.atleast_2d(u)
        if extra == 0:
            return g_full(u)
        n = u.shape[0]
        inner = node_uniforms(u, cfg.seed, n_star * extra).reshape(n, n_star, extra)
        points = np.concatenate([np.repeat(u[:, None, :], n_star, axis=1), inner], axis=2).reshape(n * n_star, L + extra)
        values = evaluate(g_full, points)
        out = values.reshape(n, n_star, -1).mean(axis=1)
        return out[:, 0] if out.shape[1] == 1 else out

    return g


def build_projected_cv(g_full, cfg: ProjectionConfig, budget_nodes: int, epsilon: float = DEFAULT_EPSILON) -> PiecewiseCV:
    """Build the ``L``-dimensional CV; ``budget_nodes`` counts CV nodes, each costing ``n_star`` evaluations."""
    return build_cv(project_integrand(g_full, cfg), cfg.cv_dims, budget_nodes, epsilon)


def estimate_highdim(cv: PiecewiseCV, g_full, cfg: ProjectionConfig, n_residual: int, rng: np.random.Generator, alpha: AlphaMode = "per_run") -> Estimate:
    """Unbiased ``D``-dimensional estimate using an ``L``-dimensional CV."""
    if cv.dim != cfg.cv_dims:
        raise ValueError(f"CV has {cv.dim} dimensions, config expects {cfg.cv_dims}")
    return estimate_full(cv, g_full, n_residual, rng, alpha, extra_dims=cfg.extra_dims)


def estimate_highdim_runs(cv: PiecewiseCV, g_full, cfg: ProjectionConfig, n_residual: int, runs: int, rng: np.random.Generator, alpha: AlphaMode = "per_run"):
    return estimate_full_runs(cv, g_full, n_residual, runs, rng, alpha, extra_dims=cfg.extra_dims)
