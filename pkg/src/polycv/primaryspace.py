"""Mappings from primary sample space to problem space, and MIS combination.

A :class:`Mapping` warps points of the unit cube into problem space and
reports the density of the warped points.  A :class:`MappingSet` turns a
problem-space integrand ``f`` into the primary-space integrand

    g(u) = sum_t W_t(x_t) f(x_t) / p_t(x_t),    x_t = warp_t(u),

with power-heuristic weights.  The same ``g`` is evaluated at deterministic
quadrature nodes while building the control variate and at random points when
estimating the residual.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class Mapping:
    """Warp ``u -> x`` with density ``pdf(x)``.

    ``pdf`` must be defined on the whole support of every mapping it is
    combined with, since MIS evaluates each technique's density at the
    points produced by the others.
    """

    dim: int
    warp: Callable[[np.ndarray], np.ndarray]
    pdf: Callable[[np.ndarray], np.ndarray]
    name: str = "mapping"


def identity_mapping(dim: int) -> Mapping:
    def pdf(x):
        x = np.atleast_2d(x)
        inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
        return inside.astype(float)

    return Mapping(dim, lambda u: np.atleast_2d(u).copy(), pdf, "identity")


def uniform_interval_mapping(t_max: float) -> Mapping:
    """Uniform distances on ``[0, t_max]``."""

    def pdf(x):
        x = np.atleast_2d(x)[:, 0]
        return np.where((x >= 0) & (x <= t_max), 1.0 / t_max, 0.0)

    return Mapping(1, lambda u: np.atleast_2d(u) * t_max, pdf, "uniform")


def exponential_mapping(sigma: float) -> Mapping:
    """Distances distributed as ``sigma * exp(-sigma x)`` on ``[0, inf)``."""

    def warp(u):
        u = np.atleast_2d(u)
        # u = 1 maps to +inf; clamp to the last representable value below 1
        return -np.log1p(-np.minimum(u, np.nextafter(1.0, 0.0))) / sigma

    def pdf(x):
        x = np.atleast_2d(x)[:, 0]
        return np.where(x >= 0, sigma * np.exp(-sigma * np.maximum(x, 0.0)), 0.0)

    return Mapping(1, warp, pdf, "exponential")


def linear_mapping() -> Mapping:
    """Density ``2x`` on ``[0, 1]`` (inverse CDF ``sqrt(u)``)."""

    def pdf(x):
        x = np.atleast_2d(x)[:, 0]
        return np.where((x >= 0) & (x <= 1), 2.0 * x, 0.0)

    return Mapping(1, lambda u: np.sqrt(np.atleast_2d(u)), pdf, "linear")


def equiangular_mapping(light, origin, direction, t_max: float) -> Mapping:
    """Equiangular distance sampling along a ray towards a point light.

    The density of distance ``s`` on ``[0, t_max]`` is proportional to the
    inverse squared distance from ``origin + s * direction`` to ``light``.
    """
    light = np.asarray(light, dtype=float)
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0 or not t_max > 0:
        raise ValueError("ray direction must be nonzero and t_max positive")
    direction = direction / norm
    delta = float(np.dot(light - origin, direction))  # ray parameter closest to the light
    dist = float(np.linalg.norm(light - origin - delta * direction))
    if dist <= 1e-12 * max(1.0, abs(delta), t_max):
        raise ValueError("light lies on the ray; equiangular sampling is undefined")
    theta_a = np.arctan2(-delta, dist)
    theta_b = np.arctan2(t_max - delta, dist)
    span = theta_b - theta_a

    def warp(u):
        u = np.atleast_2d(u)
        # clamp so u = 0 and u = 1 land exactly on the interval ends
        return np.clip(delta + dist * np.tan(theta_a + u * span), 0.0, t_max)

    def pdf(x):
        s = np.atleast_2d(x)[:, 0]
        h = s - delta
        p = dist / (span * (dist * dist + h * h))
        return np.where((s >= 0) & (s <= t_max), p, 0.0)

    return Mapping(1, warp, pdf, "equiangular")


def mis_weights(pdfs: np.ndarray, beta: float = 2.0) -> np.ndarray:
    """Power-heuristic weights along the last axis of ``pdfs``.

    Rows whose densities are all zero get all-zero weights (zero contribution).
    The largest weight is computed as one minus the others, which makes the
    weights of two techniques sum to exactly 1 in floating point.
    """
    pdfs = np.asarray(pdfs, dtype=float)
    if np.any(pdfs < 0):
        raise ValueError("densities must be nonnegative")
    powered = pdfs**beta
    total = powered.sum(axis=-1, keepdims=True)
    w = np.where(total > 0, powered / np.where(total > 0, total, 1.0), 0.0)
    # the dominant weight absorbs the rounding so that two weights sum to exactly 1
    top = np.argmax(w, axis=-1)[..., None]
    others = w.sum(axis=-1, keepdims=True) - np.take_along_axis(w, top, axis=-1)
    if w.shape[-1] == 2:
        others = np.take_along_axis(w, 1 - top, axis=-1)
    np.put_along_axis(w, top, np.where(total > 0, 1.0 - others, 0.0), axis=-1)
    return w


def mis_weight(pdfs: Sequence[float], t: int, beta: float = 2.0) -> float:
    """Power-heuristic weight of technique ``t`` among densities ``pdfs``."""
    return float(mis_weights(np.asarray(pdfs, dtype=float)[None, :], beta)[0, t])


@dataclass(frozen=True)
class MappingSet:
    mappings: tuple
    beta: float = 2.0

    def __post_init__(self):
        if len(self.mappings) < 1:
            raise ValueError("a mapping set needs at least one mapping")
        dims = {m.dim for m in self.mappings}
        if len(dims) != 1:
            raise ValueError(f"mappings disagree on primary dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.mappings[0].dim


class PrimaryIntegrand:
    """Primary-space integrand with a thread-safe evaluation counter.

    Calling it on ``(n, D)`` points increments :attr:`evals` by ``n``.
    """

    def __init__(self, g: Callable[[np.ndarray], np.ndarray], dim: int):
        self._g = g
        self.dim = dim
        self.evals = 0
        self._lock = threading.Lock()

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        with self._lock:
            self.evals += u.shape[0]
        return self._g(u)


def make_primary_integrand(f: Callable[[np.ndarray], np.ndarray], mappings: MappingSet | Mapping) -> PrimaryIntegrand:
    """Compose ``f`` with the mappings of ``mappings`` into a primary-space integrand."""
    if isinstance(mappings, Mapping):
        mappings = MappingSet((mappings,))
    techniques = mappings.mappings
    beta = mappings.beta

    if len(techniques) == 1:
        m = techniques[0]

        def g(u):
            x = m.warp(u)
            p = m.pdf(x)
            fx = np.asarray(f(x), dtype=float)
            return _ratio(fx, p)

        return PrimaryIntegrand(g, m.dim)

    def g(u):
        total = None
        for t, m in enumerate(techniques):
            x = m.warp(u)
            pdfs = np.stack([other.pdf(x) for other in techniques], axis=-1)
            w = mis_weights(pdfs, beta)[:, t]
            fx = np.asarray(f(x), dtype=float)
            term = _ratio(fx, pdfs[:, t], w)
            total = term if total is None else total + term
        return total

    return PrimaryIntegrand(g, mappings.dim)


def _ratio(fx: np.ndarray, p: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """``w * f / p`` with zero wherever the sample carries no weight."""
    if fx.ndim == 2:
        p = p[:, None]
        w = None if w is None else w[:, None]
    positive = p > 0
    out = np.divide(fx, p, out=np.zeros(np.broadcast_shapes(fx.shape, p.shape)), where=positive)
    if w is not None:
        out = out * w
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite integrand value in primary-space composition")
    return out
