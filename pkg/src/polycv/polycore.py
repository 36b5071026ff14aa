"""Polynomial and quadrature primitives on axis-aligned boxes.

Every region carries a quadratic-per-dimension tensor polynomial fitted to the
3^D grid of integrand values at ``{lo, mid, hi}`` in each dimension.  The
monomial basis is expressed in region-local coordinates ``(x - lo) / (hi - lo)``
so the Vandermonde inverse is the same constant 3x3 matrix for every region.

Grid values are stored as arrays of shape ``(3,) * D + (C,)`` where ``C`` is
the number of channels (1 for scalar integrands).  Flattening such an array in
C order gives the lexicographic node ordering used throughout the package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Inverse Vandermonde for nodes {0, 1/2, 1} and basis {1, t, t^2}.
VANDERMONDE_INV = np.array([[1, 0, 0], [-3, 4, -1], [2, -4, 2]], dtype=np.int64)

# Newton-Cotes weights as integer numerators over a common denominator.
SIMPSON_NUM, SIMPSON_DEN = np.array([1, 4, 1], dtype=np.int64), 6
TRAPEZOID_NUM, TRAPEZOID_DEN = np.array([1, 0, 1], dtype=np.int64), 2

NODES_PER_DIM = 3


@dataclass(frozen=True)
class NestedRuleConfig:
    """Simpson/Trapezoidal pair used for the per-dimension error estimate.

    Orders are polynomial orders (2 and 1), i.e. three and two nodes per
    dimension respectively.
    """

    order_high: int = 2
    order_low: int = 1
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.order_high != 2 or self.order_low != 1:
            raise ValueError("only the Simpson (2) / Trapezoidal (1) pair is supported")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


class Box:
    """Axis-aligned box ``[lo, hi]`` in primary space."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.array(lo, dtype=float).reshape(-1)
        hi = np.array(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError(f"box bounds must be nonempty and of equal length: {lo}, {hi}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError(f"box bounds must be finite: {lo}, {hi}")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.lo = lo
        self.hi = hi

    @classmethod
    def unit(cls, dim: int) -> Box:
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains_box(self, other: Box) -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def intersect(self, other: Box) -> Box | None:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.all(lo < hi):
            return Box(lo, hi)
        return None

    def split(self, dim: int) -> tuple[Box, Box]:
        m = 0.5 * (self.lo[dim] + self.hi[dim])
        hi_a = self.hi.copy()
        hi_a[dim] = m
        lo_b = self.lo.copy()
        lo_b[dim] = m
        return Box(self.lo, hi_a), Box(lo_b, self.hi)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def node_coordinates(box: Box) -> list[np.ndarray]:
    """Per-dimension node triples ``(lo, mid, hi)``."""
    return [np.array([a, 0.5 * (a + b), b]) for a, b in zip(box.lo, box.hi)]


def tensor_grid(box: Box) -> np.ndarray:
    """Return the ``3^D x D`` node array in lexicographic multi-index order."""
    axes = node_coordinates(box)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def multi_indices(dim: int) -> np.ndarray:
    """All ``3^D`` multi-indices in lexicographic order, shape ``(3^D, D)``."""
    return np.array(list(itertools.product(range(NODES_PER_DIM), repeat=dim)), dtype=np.int64).reshape(-1, dim)


def _contract_axis(mat: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(mat, arr, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def _contract_vector(vec: np.ndarray, arr: np.ndarray, axis: int) -> np.ndarray:
    return np.tensordot(vec, arr, axes=([0], [axis]))


def _as_grid(values: np.ndarray, dim: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[:dim] != (NODES_PER_DIM,) * dim:
        values = values.reshape((NODES_PER_DIM,) * dim + values.shape[1:])
    return values


def fit_polynomial(values: np.ndarray, dim: int) -> np.ndarray:
    """Interpolating coefficients for grid ``values`` in region-local coordinates.

    ``values`` has shape ``(3,)*dim + extra`` (or ``(3**dim,) + extra`` in
    lexicographic order).  The result has the same shape, indexed by the
    monomial exponent in each dimension.
    """
    coeffs = _as_grid(values, dim)
    vinv = VANDERMONDE_INV.astype(float)
    for axis in range(dim):
        coeffs = _contract_axis(vinv, coeffs, axis)
    return coeffs


def local_coordinates(box: Box, x: np.ndarray) -> np.ndarray:
    return (np.atleast_2d(x) - box.lo) / box.extent


def monomial_basis(t: np.ndarray) -> np.ndarray:
    """Tensor monomial basis ``prod_d t_d^{i_d}`` for local points ``t`` of shape (n, D).

    Returns an ``(n, 3^D)`` array in lexicographic exponent order.
    """
    n, dim = t.shape
    powers = np.stack([np.ones_like(t), t, t * t], axis=-1)  # (n, D, 3)
    basis = powers[:, 0, :]
    for d in range(1, dim):
        basis = (basis[:, :, None] * powers[:, d, None, :]).reshape(n, -1)
    return basis


def eval_poly(coeffs: np.ndarray, box: Box, x: np.ndarray, check: bool = True) -> np.ndarray:
    """Evaluate the region polynomial at points ``x`` (shape (n, D) or (D,))."""
    dim = box.dim
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if check and not np.all(box.contains(x)):
        raise ValueError("evaluation point outside the region box")
    basis = monomial_basis(local_coordinates(box, x))
    flat = np.asarray(coeffs).reshape((NODES_PER_DIM**dim,) + np.shape(coeffs)[dim:])
    out = np.tensordot(basis, flat, axes=([1], [0]))
    return out[0] if single else out


def _antiderivative_weights(a: float, b: float, extent: float) -> np.ndarray:
    # integral over local [a, b] of t^i, scaled to global units
    return extent * np.array([b - a, (b * b - a * a) / 2.0, (b**3 - a**3) / 3.0])


def integrate_poly(coeffs: np.ndarray, box: Box, sub: Box | None = None) -> np.ndarray | float:
    """Exact integral of the region polynomial over ``sub`` (default: the whole box)."""
    dim = box.dim
    if sub is None:
        sub = box
    elif not box.contains_box(sub):
        raise ValueError(f"{sub!r} is not contained in {box!r}")
    a = (sub.lo - box.lo) / box.extent
    b = (sub.hi - box.lo) / box.extent
    out = np.asarray(coeffs, dtype=float)
    if out.shape[:dim] != (NODES_PER_DIM,) * dim:
        out = out.reshape((NODES_PER_DIM,) * dim + out.shape[1:])
    # contract from the last spatial axis so earlier axis indices stay valid
    for d in reversed(range(dim)):
        out = _contract_vector(_antiderivative_weights(a[d], b[d], box.extent[d]), out, d)
    return out if np.ndim(out) else float(out)


def _rule_weights(num: np.ndarray, den: int, extent: float) -> np.ndarray:
    return num.astype(float) * (extent / den)


def nested_integrals(values: np.ndarray, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """Simpson tensor integral and the per-dimension mixed Simpson/Trapezoid integrals.

    Returns ``(high, low)`` where ``high`` has the channel shape of ``values``
    and ``low`` has shape ``(D,) + channel shape``; ``low[d]`` applies the
    Trapezoidal rule along ``d`` and Simpson along all other dimensions.
    Only the 3^D grid values are used.
    """
    dim = box.dim
    grid = _as_grid(values, dim)
    ext = box.extent
    simpson = [_rule_weights(SIMPSON_NUM, SIMPSON_DEN, e) for e in ext]
    trapezoid = [_rule_weights(TRAPEZOID_NUM, TRAPEZOID_DEN, e) for e in ext]

    def apply(rules):
        out = grid
        for d in reversed(range(dim)):
            out = _contract_vector(rules[d], out, d)
        return np.asarray(out)

    high = apply(simpson)
    low = np.stack([apply(simpson[:d] + [trapezoid[d]] + simpson[d + 1:]) for d in range(dim)])
    return high, low
