"""Transmittance along a ray through procedural heterogeneous media.

Three unbiased estimators of ``T = exp(-int_0^t mu(s) ds)``:

* delta tracking with the medium majorant;
* residual ratio tracking around a constant control extinction (the
  per-unit-length average);
* residual ratio tracking around an adaptive piecewise-quadratic control
  extinction built from nine medium queries.

All estimators are vectorized over independent runs and report the number
of medium queries each run made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..builder import PiecewiseCV, build_cv

PROBE_POINTS = 1024
RESIDUAL_MARGIN = 0.1


@dataclass(frozen=True)
class Medium:
    name: str
    mu: Callable[[np.ndarray], np.ndarray]
    majorant: float
    length: float = 1.0

    def check(self, n: int = 100_001) -> None:
        s = np.linspace(0.0, self.length, n)
        m = self.mu(s)
        if np.any(m < 0) or np.any(m > self.majorant):
            raise ValueError(f"medium {self.name}: extinction outside [0, majorant]")


def _gauss(s, c, w):
    return np.exp(-((s - c) ** 2) / (2 * w * w))


def _grid_majorant(mu, lipschitz: float, length: float = 1.0, n: int = 20_001) -> float:
    """Grid maximum plus the Lipschitz slack over half a cell: a valid upper bound."""
    grid = np.linspace(0.0, length, n)
    return float(mu(grid).max()) + lipschitz * 0.5 * length / (n - 1)


def _bumps_medium() -> Medium:
    def mu(s):
        s = np.asarray(s, dtype=float)
        return 0.2 + 3.0 * _gauss(s, 0.3, 0.05) + 2.0 * _gauss(s, 0.75, 0.1)

    # |d/ds A exp(-x^2 / 2w^2)| <= A / (w sqrt(e))
    lipschitz = (3.0 / 0.05 + 2.0 / 0.1) / math.sqrt(math.e)
    return Medium("bumps", mu, _grid_majorant(mu, lipschitz))


def _noise_medium() -> Medium:
    rng = np.random.default_rng(20240611)
    k = 6
    freqs = rng.uniform(1.0, 6.0, k)
    amps = rng.uniform(0.05, 0.15, k)
    phases = rng.uniform(0, 2 * math.pi, k)
    base = 1.0

    def mu(s):
        s = np.asarray(s, dtype=float)
        return base + np.sum(amps[:, None] * np.sin(2 * math.pi * freqs[:, None] * s.reshape(-1)[None, :] + phases[:, None]), axis=0).reshape(s.shape)

    lipschitz = float(np.sum(amps * 2 * math.pi * freqs))
    return Medium("noise", mu, _grid_majorant(mu, lipschitz))


def media() -> dict[str, Medium]:
    return {
        "homogeneous": Medium("homogeneous", lambda s: np.full(np.shape(s), 2.0), 2.0),
        "linear": Medium("linear", lambda s: 0.5 + 2.0 * np.asarray(s, dtype=float), 2.5),
        "bump": Medium("bump", lambda s: 0.3 + 4.0 * _gauss(np.asarray(s, dtype=float), 0.6, 0.08), 4.3),
        "bumps": _bumps_medium(),
        "noise": _noise_medium(),
    }


def get_medium(name: str) -> Medium:
    registry = media()
    if name not in registry:
        raise KeyError(f"unknown medium {name!r}; choose from {sorted(registry)}")
    return registry[name]


def simpson(f, a: float, b: float, n: int, chunk: int = 1 << 20) -> float:
    """Composite Simpson with ``n`` (even) intervals, evaluated in chunks."""
    if n % 2:
        n += 1
    h = (b - a) / n
    total = 0.0
    for start in range(0, n + 1, chunk):
        i = np.arange(start, min(start + chunk, n + 1))
        w = np.where((i == 0) | (i == n), 1.0, np.where(i % 2 == 1, 4.0, 2.0))
        total += float(np.dot(w, f(a + i * h)))
    return total * h / 3.0


def tau_oracle(medium: Medium, tol: float = 1e-10, n0: int = 64, n_max: int = 1 << 24) -> float:
    """Optical depth by composite Simpson, doubling until the Richardson estimate is below ``tol``."""
    n = n0
    prev = simpson(medium.mu, 0.0, medium.length, n)
    while n < n_max:
        n *= 2
        cur = simpson(medium.mu, 0.0, medium.length, n)
        if abs(cur - prev) / 15.0 < tol:
            return cur
        prev = cur
    return prev


@dataclass
class ControlExtinction:
    """Control extinction ``mu_c(s) = h(s / t)`` with analytic optical depth ``tau_c``."""

    cv: PiecewiseCV
    length: float
    residual_majorant: float
    build_queries: int
    probe_queries: int

    @property
    def tau_c(self) -> float:
        return self.length * self.cv.total

    def mu_c(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        u = np.clip(s.reshape(-1, 1) / self.length, 0.0, 1.0)
        return self.cv(u).reshape(s.shape)


def residual_majorant(medium: Medium, mu_c, probe: int = PROBE_POINTS, margin: float = RESIDUAL_MARGIN) -> float:
    """``(1 + margin) * max |mu - mu_c|`` over a probe grid; exact zero residuals give 0."""
    s = np.linspace(0.0, medium.length, probe)
    r = float(np.max(np.abs(medium.mu(s) - mu_c(s))))
    # rounding noise of an exactly representable medium counts as zero residual
    if r <= 1e-12 * max(medium.majorant, 1.0):
        return 0.0
    return (1.0 + margin) * r


def optical_depth_cv(medium: Medium, budget_evals: int = 9, probe: int = PROBE_POINTS) -> ControlExtinction:
    """Adaptive control extinction from ``budget_evals`` medium queries (9 -> four regions)."""
    t = medium.length
    cv = build_cv(lambda u: medium.mu(u[:, 0] * t), 1, budget_evals)
    control = ControlExtinction(cv, t, 0.0, cv.eval_count, probe)
    control.residual_majorant = residual_majorant(medium, control.mu_c, probe)
    return control


def constant_control(medium: Medium, probe: int = PROBE_POINTS) -> ControlExtinction:
    """Constant control at the average extinction ``tau / t`` (a forced single-region CV)."""
    cv = PiecewiseCV.constant(1, tau_oracle(medium) / medium.length)
    control = ControlExtinction(cv, medium.length, 0.0, 0, probe)
    control.residual_majorant = residual_majorant(medium, control.mu_c, probe)
    return control


def transmittance_delta_tracking(medium: Medium, rng: np.random.Generator, runs: int = 1):
    """Binary delta-tracking estimates.  Returns ``(values, queries)`` per run."""
    if not medium.majorant > 0:
        raise ValueError("delta tracking needs a positive majorant")
    s = np.zeros(runs)
    value = np.zeros(runs)
    queries = np.zeros(runs, dtype=np.int64)
    alive = np.ones(runs, dtype=bool)
    while np.any(alive):
        idx = np.flatnonzero(alive)
        s[idx] += rng.exponential(1.0 / medium.majorant, idx.size)
        escaped = s[idx] >= medium.length
        value[idx[escaped]] = 1.0
        alive[idx[escaped]] = False
        coll = idx[~escaped]
        queries[coll] += 1
        absorbed = rng.random(coll.size) * medium.majorant < medium.mu(s[coll])
        alive[coll[absorbed]] = False
    return value, queries


def transmittance_ratio_tracking(medium: Medium, control: ControlExtinction, rng: np.random.Generator, runs: int = 1, check_factors: bool = False):
    """Residual ratio tracking around ``control``.  Returns ``(values, queries)`` per run.

    Collisions follow a Poisson process of rate ``control.residual_majorant``;
    each multiplies the estimate by ``1 - (mu - mu_c) / majorant``.
    """
    base = math.exp(-control.tau_c)
    rate = control.residual_majorant
    if rate == 0.0:
        return np.full(runs, base), np.zeros(runs, dtype=np.int64)
    s = np.zeros(runs)
    weight = np.ones(runs)
    queries = np.zeros(runs, dtype=np.int64)
    alive = np.ones(runs, dtype=bool)
    while np.any(alive):
        idx = np.flatnonzero(alive)
        s[idx] += rng.exponential(1.0 / rate, idx.size)
        done = s[idx] >= medium.length
        alive[idx[done]] = False
        coll = idx[~done]
        queries[coll] += 1
        factor = 1.0 - (medium.mu(s[coll]) - control.mu_c(s[coll])) / rate
        if check_factors and np.any(np.abs(factor - 1.0) > 1.0):
            raise AssertionError("residual exceeds the residual majorant")
        weight[coll] *= factor
    return base * weight, queries


def transmittance_adaptive_rrt(medium: Medium, control: ControlExtinction, rng: np.random.Generator, runs: int = 1):
    return transmittance_ratio_tracking(medium, control, rng, runs)
