"""Analytic benchmark integrands over the unit cube.

Most benchmarks are sums of separable products of 1D factors, which gives
closed-form integrals over any axis-aligned box (and hence exact per-bucket
references).  Complex factors are allowed; the integrand is the real part,
which is how the oscillatory family gets its closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf


@dataclass(frozen=True)
class Factor:
    """1D factor ``f`` with antiderivative ``F``."""

    f: Callable[[np.ndarray], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]

    def integral(self, a, b):
        return self.F(np.asarray(b, dtype=float)) - self.F(np.asarray(a, dtype=float))


def one() -> Factor:
    return Factor(lambda x: np.ones_like(x), lambda x: x)


def poly(c0: float, c1: float, c2: float) -> Factor:
    return Factor(lambda x: c0 + c1 * x + c2 * x * x, lambda x: c0 * x + c1 * x * x / 2 + c2 * x**3 / 3)


def gaussian(center: float, sigma: float) -> Factor:
    k = sigma * math.sqrt(math.pi / 2)
    s2 = math.sqrt(2) * sigma
    return Factor(lambda x: np.exp(-((x - center) ** 2) / (2 * sigma * sigma)), lambda x: k * erf((x - center) / s2))


def step(threshold: float) -> Factor:
    return Factor(lambda x: (x > threshold).astype(float), lambda x: np.maximum(x - threshold, 0.0))


def peak(center: float, width: float) -> Factor:
    return Factor(lambda x: 1.0 / ((x - center) ** 2 + width * width), lambda x: np.arctan((x - center) / width) / width)


def exponential(rate: float) -> Factor:
    return Factor(lambda x: np.exp(-rate * x), lambda x: -np.exp(-rate * x) / rate)


def phase(freq: float) -> Factor:
    """``exp(i * freq * x)``."""
    return Factor(lambda x: np.exp(1j * freq * x), lambda x: np.exp(1j * freq * x) / (1j * freq))


@dataclass(frozen=True)
class Term:
    coeff: complex
    factors: tuple


@dataclass(frozen=True)
class Benchmark:
    name: str
    dim: int
    f: Callable[[np.ndarray], np.ndarray]
    reference: float
    provenance: str
    box_integral: Callable | None = None
    cv_dims: int | None = None  # set for high-dimensional benchmarks
    notes: dict = field(default_factory=dict)

    def __call__(self, u):
        return self.f(np.atleast_2d(u))

    def bucket_reference(self, resolution) -> np.ndarray:
        """Reference bucket means over a grid on the first dimensions (trailing dims integrated)."""
        if self.box_integral is None:
            raise ValueError(f"benchmark {self.name} has no closed-form box integral")
        res = tuple(int(r) for r in np.atleast_1d(resolution))
        mesh = np.meshgrid(*[np.arange(r) for r in res], indexing="ij")
        idx = np.stack([m.reshape(-1) for m in mesh], axis=-1).astype(float)
        lo = np.concatenate([idx / res, np.zeros((idx.shape[0], self.dim - len(res)))], axis=1)
        hi = np.concatenate([(idx + 1) / res, np.ones((idx.shape[0], self.dim - len(res)))], axis=1)
        vol = np.prod(hi - lo, axis=1)
        return self.box_integral(lo, hi) / vol


def separable(name: str, dim: int, terms: list[Term], provenance: str, **kw) -> Benchmark:
    def f(u):
        total = np.zeros(u.shape[0], dtype=complex)
        for t in terms:
            prod = np.full(u.shape[0], t.coeff, dtype=complex)
            for d, fac in enumerate(t.factors):
                prod = prod * fac.f(u[:, d])
            total += prod
        return total.real

    def box_integral(lo, hi):
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        total = np.zeros(lo.shape[0], dtype=complex)
        for t in terms:
            prod = np.full(lo.shape[0], t.coeff, dtype=complex)
            for d, fac in enumerate(t.factors):
                prod = prod * fac.integral(lo[:, d], hi[:, d])
            total += prod
        return total.real

    reference = float(box_integral(np.zeros((1, dim)), np.ones((1, dim)))[0])
    return Benchmark(name, dim, f, reference, provenance, box_integral, **kw)


def _disk() -> Benchmark:
    cx, cy, r = 0.4, 0.45, 0.3

    def f(u):
        return (((u[:, 0] - cx) ** 2 + (u[:, 1] - cy) ** 2) < r * r).astype(float)

    return Benchmark("disk-2d", 2, f, math.pi * r * r, "closed form: disk area pi r^2 (disk inside the square)")


def _family(kind: str, dim: int) -> Benchmark:
    name = f"{kind}-{dim}d"
    if kind == "constant":
        return separable(name, dim, [Term(1.5, (one(),) * dim)], "closed form")
    if kind == "quadratic":
        return separable(name, dim, [Term(1.0, (poly(0.5, 1.0, -0.7),) * dim)], "closed form: polynomial antiderivative")
    if kind == "gaussian":
        return separable(name, dim, [Term(1.0, tuple(gaussian(0.45 + 0.05 * d, 0.15) for d in range(dim)))], "closed form: error functions")
    if kind == "step":
        return separable(name, dim, [Term(1.0, (step(0.5),) + (one(),) * (dim - 1))], "closed form: step(x0 > 0.5)")
    if kind == "product-peak":
        return separable(name, dim, [Term(1.0, (peak(0.3, 0.2),) * dim)], "closed form: arctan")
    if kind == "oscillatory":
        w, a = 0.3, 3.0
        return separable(name, dim, [Term(np.exp(2j * math.pi * w), (phase(a),) * dim)], "closed form: real part of complex exponential product")
    if kind == "spike":
        terms = [
            Term(0.6, tuple(gaussian(0.35, 0.2) for _ in range(dim))),
            Term(1.5, tuple(gaussian(0.71, 0.015) for _ in range(dim))),
        ]
        return separable(name, dim, terms, "closed form: error functions (smooth bump plus narrow spike)")
    raise KeyError(kind)


FAMILIES = ("constant", "quadratic", "gaussian", "step", "product-peak", "oscillatory", "spike")


def _highdim() -> list[Benchmark]:
    """D = 6 integrands whose structure is mostly in the first two dimensions."""
    L, D = 2, 6
    out = []
    q = tuple(gaussian(0.4 + 0.1 * d, 0.15) for d in range(L))
    out.append(separable("hd-product-6d", D, [Term(1.0, q + (poly(0.8, 0.4, 0.0),) * (D - L))], "closed form: separable product", cv_dims=L))
    cosine = Factor(lambda x: np.cos(math.pi * x), lambda x: np.sin(math.pi * x) / math.pi)
    terms = [Term(1.0, q + (one(),) * (D - L))]
    terms += [Term(0.15, (one(),) * (L + j) + (cosine,) + (one(),) * (D - L - j - 1)) for j in range(D - L)]
    out.append(separable("hd-additive-6d", D, terms, "closed form: separable sum", cv_dims=L))
    p = (peak(0.3, 0.25), peak(0.6, 0.25))
    out.append(separable("hd-peak-6d", D, [Term(0.1, p + (exponential(0.5),) * (D - L))], "closed form: arctan times exponential", cv_dims=L))
    return out


def benchmark_suite() -> list[Benchmark]:
    suite = [_family(kind, d) for kind in FAMILIES for d in (1, 2, 3, 4)]
    suite.append(_disk())
    suite.extend(_highdim())
    return suite


_REGISTRY: dict[str, Benchmark] | None = None


def get_benchmark(name: str) -> Benchmark:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = {b.name: b for b in benchmark_suite()}
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; run 'polycv bench-list' for the available names") from None
