"""Adaptive construction of the piecewise-polynomial control variate.

The unit hypercube is refined by repeatedly halving the region whose
size-penalized nested-rule error is largest.  Each split reuses two planes
of the parent grid per child, so a build with ``M`` regions in ``D``
dimensions costs exactly ``3^D + (M - 1) * 2 * 3^(D-1)`` integrand
evaluations.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .polycore import (
    NODES_PER_DIM,
    Box,
    fit_polynomial,
    monomial_basis,
    nested_integrals,
    tensor_grid,
)

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5

Integrand = Callable[[np.ndarray], np.ndarray]


class NonFiniteValueError(ValueError):
    """The integrand returned NaN or infinity at one or more points."""

    def __init__(self, points: np.ndarray):
        self.points = np.atleast_2d(points)
        super().__init__(f"integrand is not finite at {self.points[:4].tolist()}")


def evaluate(g: Integrand, points: np.ndarray) -> np.ndarray:
    """Evaluate ``g`` on ``(n, D)`` points and return an ``(n, C)`` array."""
    values = np.asarray(g(points), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != points.shape[0]:
        raise ValueError(f"integrand returned {values.shape[0]} values for {points.shape[0]} points")
    bad = ~np.all(np.isfinite(values), axis=1)
    if np.any(bad):
        raise NonFiniteValueError(points[bad])
    return values


def evals_for_regions(dim: int, n_regions: int) -> int:
    """Integrand evaluations needed for a build ending with ``n_regions`` regions."""
    return NODES_PER_DIM**dim + (n_regions - 1) * 2 * NODES_PER_DIM ** (dim - 1)


def max_regions(dim: int, total_evals: int) -> int:
    """Largest region count whose build fits in ``total_evals`` (0 if not even the root fits)."""
    root = NODES_PER_DIM**dim
    if total_evals < root:
        return 0
    return 1 + (total_evals - root) // (2 * NODES_PER_DIM ** (dim - 1))


@dataclass
class Region:
    box: Box
    values: np.ndarray  # (3,)*D + (C,)
    coeffs: np.ndarray
    err_per_dim: np.ndarray
    integral: np.ndarray  # (C,)
    node: int  # leaf index in the kd tree

    @property
    def err_max(self) -> float:
        return float(self.err_per_dim.max())

    @property
    def split_dim(self) -> int:
        return int(np.argmax(self.err_per_dim))


def region_error(values: np.ndarray, box: Box, epsilon: float = DEFAULT_EPSILON) -> tuple[np.ndarray, int, np.ndarray]:
    """Per-dimension error ``|H_high - H_low_d| + extent_d * epsilon``.

    Channels share one decision: the channel-wise maximum of the rule
    difference is used.  Returns ``(err_per_dim, split_dim, H_high)``.
    """
    high, low = nested_integrals(values, box)
    diff = np.abs(high[None, ...] - low).reshape(box.dim, -1).max(axis=1)
    err = diff + box.extent * epsilon
    return err, int(np.argmax(err)), high


class PiecewiseCV:
    """Finished control variate: disjoint boxes covering ``[0, 1]^D``.

    Region data live in flat arrays (``lo``, ``hi``, ``coeffs``) so that
    evaluation and integration vectorize across regions.  Point lookup uses
    the binary split tree recorded during construction; a point on an
    internal split plane belongs to the upper side (boxes are half-open,
    ``[lo, hi)``, except at the global upper boundary).
    """

    def __init__(self, lo, hi, coeffs, tree, eval_count=0, scalar=True, leftover_evals=0, split_log=()):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)  # (M, 3^D, C)
        self.dim = self.lo.shape[1]
        self.n_channels = self.coeffs.shape[2]
        # tree columns: split dim (-1 for leaf), split value, left, right, region
        self.tree_dim, self.tree_split, self.tree_left, self.tree_right, self.tree_region = tree
        self.eval_count = int(eval_count)
        self.scalar = bool(scalar)
        self.leftover_evals = int(leftover_evals)
        self.split_log = list(split_log)
        self.volumes = np.prod(self.hi - self.lo, axis=1)
        self.region_integrals = self._region_integrals()
        self.integral = self.region_integrals.sum(axis=0)
        self._constant = not np.any(self.coeffs[:, 1:, :])
        for a in (self.lo, self.hi, self.coeffs, self.volumes, self.region_integrals, self.integral):
            a.flags.writeable = False

    @property
    def n_regions(self) -> int:
        return self.lo.shape[0]

    @property
    def total(self):
        """Analytic integral over the unit cube (float for scalar integrands)."""
        return float(self.integral[0]) if self.scalar else self.integral.copy()

    def box(self, r: int) -> Box:
        return Box(self.lo[r], self.hi[r])

    @classmethod
    def constant(cls, dim: int, value=0.0) -> PiecewiseCV:
        """Single-region CV equal to ``value`` everywhere, built without any evaluations.

        ``value = 0`` turns every estimator into plain Monte Carlo.
        """
        value = np.atleast_1d(np.asarray(value, dtype=float))
        coeffs = np.zeros((1, NODES_PER_DIM**dim, value.size))
        coeffs[0, 0, :] = value
        tree = (np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([0]))
        return cls(np.zeros((1, dim)), np.ones((1, dim)), coeffs, tree, eval_count=0, scalar=value.size == 1)

    # -- queries -----------------------------------------------------------

    def _region_integrals(self) -> np.ndarray:
        # integral of t^i over local [0, 1] is 1 / (i + 1)
        weights = _tensor_weights(np.broadcast_to([1.0, 0.5, 1.0 / 3.0], (self.dim, 3)))
        return np.einsum("k,mkc->mc", weights, self.coeffs) * self.volumes[:, None]

    def locate(self, u: np.ndarray) -> np.ndarray:
        """Region index for each row of ``u`` by descending the split tree."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {u.shape[1]}")
        if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
            raise ValueError("lookup point outside the unit cube")
        node = np.zeros(u.shape[0], dtype=np.int64)
        rows = np.arange(u.shape[0])
        active = self.tree_dim[node] >= 0
        while np.any(active):
            idx = rows[active]
            nd = node[idx]
            go_right = u[idx, self.tree_dim[nd]] >= self.tree_split[nd]
            node[idx] = np.where(go_right, self.tree_right[nd], self.tree_left[nd])
            active = self.tree_dim[node] >= 0
        return self.tree_region[node]

    def evaluate_in(self, u: np.ndarray, regions: np.ndarray) -> np.ndarray:
        """Polynomial values ``(n, C)`` at ``u`` given the owning region of each point."""
        if self._constant:
            return self.coeffs[regions, 0, :].copy()
        lo = self.lo[regions]
        t = (u - lo) / (self.hi[regions] - lo)
        basis = monomial_basis(t)
        return np.einsum("nk,nkc->nc", basis, self.coeffs[regions])

    def lookup(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(region_ids, h(u))`` for points ``u`` of shape (n, D)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        regions = self.locate(u)
        h = self.evaluate_in(u, regions)
        return regions, (h[:, 0] if self.scalar else h)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.lookup(u)[1]

    def bucket_integral(self, lo, hi):
        """Integral of the CV over the box ``[lo, hi]``.

        ``lo``/``hi`` may cover only the first ``B <= D`` dimensions; the
        remaining dimensions are integrated over ``[0, 1]``.
        """
        lo, hi = _extend_bucket(lo, hi, self.dim)
        a = np.maximum(self.lo, lo)
        b = np.minimum(self.hi, hi)
        hit = np.all(a < b, axis=1)
        total = np.zeros(self.n_channels)
        if np.any(hit):
            total = self.slice_integrals(np.flatnonzero(hit), a[hit], b[hit]).sum(axis=0)
        return float(total[0]) if self.scalar else total

    def slice_integrals(self, regions: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Exact integrals ``(S, C)`` of region polynomials over sub-boxes ``[a, b]``."""
        ext = self.hi[regions] - self.lo[regions]
        ta = (a - self.lo[regions]) / ext
        tb = (b - self.lo[regions]) / ext
        per_dim = np.stack([tb - ta, (tb**2 - ta**2) / 2.0, (tb**3 - ta**3) / 3.0], axis=-1)  # (S, D, 3)
        weights = per_dim[:, 0, :]
        for d in range(1, self.dim):
            weights = (weights[:, :, None] * per_dim[:, d, None, :]).reshape(weights.shape[0], -1)
        vol = np.prod(ext, axis=1)
        return np.einsum("sk,skc->sc", weights, self.coeffs[regions]) * vol[:, None]

    # -- serialization -----------------------------------------------------

    MAGIC = b"PPCV"
    VERSION = 1

    def save(self, path) -> None:
        """Write the CV in the little-endian binary cache layout.

        Header: magic ``PPCV``, then ``<IIIIQQ``: version, D, C, scalar flag,
        M, eval_count.  Then for each region: ``lo[D]``, ``hi[D]``,
        ``coeffs[3^D * C]`` as float64 (coefficients in lexicographic
        exponent order, channel fastest).
        """
        path = Path(path)
        header = self.MAGIC + struct.pack("<IIIIQQ", self.VERSION, self.dim, self.n_channels, int(self.scalar), self.n_regions, self.eval_count)
        body = np.concatenate([self.lo, self.hi, self.coeffs.reshape(self.n_regions, -1)], axis=1)
        try:
            with path.open("wb") as fh:
                fh.write(header)
                fh.write(body.astype("<f8").tobytes())
        except OSError as exc:
            raise OSError(f"cannot write control variate cache {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> PiecewiseCV:
        path = Path(path)
        data = path.read_bytes()
        if data[:4] != cls.MAGIC:
            raise ValueError(f"{path} is not a control variate cache file")
        version, dim, channels, scalar, m, evals = struct.unpack_from("<IIIIQQ", data, 4)
        if version != cls.VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        k = NODES_PER_DIM**dim
        body = np.frombuffer(data, dtype="<f8", offset=4 + struct.calcsize("<IIIIQQ"))
        body = body.reshape(m, 2 * dim + k * channels).astype(float)
        lo, hi = body[:, :dim], body[:, dim:2 * dim]
        coeffs = body[:, 2 * dim:].reshape(m, k, channels)
        return cls(lo, hi, coeffs, rebuild_tree(lo, hi), eval_count=evals, scalar=bool(scalar))


def _tensor_weights(per_dim: np.ndarray) -> np.ndarray:
    weights = per_dim[0]
    for d in range(1, per_dim.shape[0]):
        weights = np.outer(weights, per_dim[d]).reshape(-1)
    return weights


def _extend_bucket(lo, hi, dim):
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.size > dim or lo.shape != hi.shape:
        raise ValueError("bucket bounds must cover a prefix of the CV dimensions")
    if np.any(lo < 0) or np.any(hi > 1) or np.any(lo >= hi):
        raise ValueError("bucket must be a nondegenerate box inside the unit cube")
    lo = np.concatenate([lo, np.zeros(dim - lo.size)])
    hi = np.concatenate([hi, np.ones(dim - hi.size)])
    return lo, hi


def rebuild_tree(lo: np.ndarray, hi: np.ndarray):
    """Recover a binary midpoint split tree for a dyadic partition of the unit cube."""
    dims, splits, lefts, rights, leaves = [], [], [], [], []

    def build(members, blo, bhi):
        node = len(dims)
        dims.append(-1)
        splits.append(0.0)
        lefts.append(-1)
        rights.append(-1)
        leaves.append(-1)
        if len(members) == 1:
            leaves[node] = members[0]
            return node
        for d in range(lo.shape[1]):
            m = 0.5 * (blo[d] + bhi[d])
            left = [r for r in members if hi[r, d] <= m]
            right = [r for r in members if lo[r, d] >= m]
            if left and right and len(left) + len(right) == len(members):
                dims[node], splits[node] = d, m
                lhi = bhi.copy()
                lhi[d] = m
                rlo = blo.copy()
                rlo[d] = m
                lefts[node] = build(left, blo, lhi)
                rights[node] = build(right, rlo, bhi)
                return node
        raise ValueError("regions do not form a dyadic midpoint partition")

    build(list(range(lo.shape[0])), np.zeros(lo.shape[1]), np.ones(lo.shape[1]))
    return tuple(np.array(a) for a in (dims, splits, lefts, rights, leaves))


@dataclass
class CVBuilder:
    """Mutable state of an adaptive build.

    ``split_region`` performs one refinement step; ``build_cv`` drives it from
    the max-error heap.  The evaluation counter counts every integrand call.
    """

    g: Integrand
    dim: int
    epsilon: float = DEFAULT_EPSILON
    regions: dict = field(default_factory=dict)
    eval_count: int = 0
    split_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be at least 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self._ids = itertools.count()
        self._heap: list = []
        self._nodes: list = []  # [dim, split, left, right, region]
        self.scalar = True
        root = Box.unit(self.dim)
        values = self._evaluate(tensor_grid(root))
        self.scalar = values.shape[1] == 1
        grid = values.reshape((NODES_PER_DIM,) * self.dim + (values.shape[1],))
        self._add_region(root, grid, self._new_leaf())

    def _evaluate(self, points):
        values = evaluate(self.g, points)
        self.eval_count += points.shape[0]
        return values

    def _new_leaf(self):
        self._nodes.append([-1, 0.0, -1, -1, -1])
        return len(self._nodes) - 1

    def _add_region(self, box, grid, node):
        err, _, high = region_error(grid, box, self.epsilon)
        rid = next(self._ids)
        region = Region(box, grid, fit_polynomial(grid, self.dim), err, high, node)
        self.regions[rid] = region
        self._nodes[node][4] = rid
        heapq.heappush(self._heap, (-region.err_max, -box.volume, rid))
        return rid

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def split_cost(self) -> int:
        return 2 * NODES_PER_DIM ** (self.dim - 1)

    def peek(self) -> int:
        """Id of the region with the largest error (ties: larger volume, then older)."""
        return self._heap[0][2]

    def split_region(self, rid: int) -> tuple[int, int]:
        """Halve region ``rid`` along its highest-error dimension.

        Each child keeps two planes of the parent grid and evaluates one new
        midplane of ``3^(D-1)`` nodes.
        """
        region = self.regions.pop(rid)
        if self._heap[0][2] == rid:
            heapq.heappop(self._heap)
        else:
            self._heap = [e for e in self._heap if e[2] != rid]
            heapq.heapify(self._heap)
        d = region.split_dim
        box_a, box_b = region.box.split(d)
        parent = region.values

        new_a = tensor_grid(box_a).reshape((NODES_PER_DIM,) * self.dim + (self.dim,))
        new_b = tensor_grid(box_b).reshape((NODES_PER_DIM,) * self.dim + (self.dim,))
        plane_a = np.take(new_a, 1, axis=d).reshape(-1, self.dim)
        plane_b = np.take(new_b, 1, axis=d).reshape(-1, self.dim)
        values = self._evaluate(np.concatenate([plane_a, plane_b]))
        plane_shape = parent.shape[:d] + parent.shape[d + 1:]
        half = values.shape[0] // 2
        mid_a = values[:half].reshape(plane_shape)
        mid_b = values[half:].reshape(plane_shape)

        grid_a = np.stack([np.take(parent, 0, axis=d), mid_a, np.take(parent, 1, axis=d)], axis=d)
        grid_b = np.stack([np.take(parent, 1, axis=d), mid_b, np.take(parent, 2, axis=d)], axis=d)

        node = self._nodes[region.node]
        node[0], node[1] = d, float(region.box.mid[d])
        node[2], node[3] = self._new_leaf(), self._new_leaf()
        node[4] = -1
        self.split_log.append((rid, region.box, d))
        return self._add_region(box_a, grid_a, node[2]), self._add_region(box_b, grid_b, node[3])

    def finish(self, total_evals: int | None = None) -> PiecewiseCV:
        ids = sorted(self.regions)
        index = {rid: i for i, rid in enumerate(ids)}
        lo = np.array([self.regions[r].box.lo for r in ids])
        hi = np.array([self.regions[r].box.hi for r in ids])
        k = NODES_PER_DIM**self.dim
        coeffs = np.array([self.regions[r].coeffs.reshape(k, -1) for r in ids])
        nodes = np.array([n[:4] for n in self._nodes], dtype=float)
        tree_region = np.array([index[n[4]] if n[4] >= 0 else -1 for n in self._nodes], dtype=np.int64)
        tree = (nodes[:, 0].astype(np.int64), nodes[:, 1], nodes[:, 2].astype(np.int64), nodes[:, 3].astype(np.int64), tree_region)
        leftover = 0 if total_evals is None else total_evals - self.eval_count
        return PiecewiseCV(lo, hi, coeffs, tree, self.eval_count, self.scalar, leftover, self.split_log)


def init_cv(g: Integrand, dim: int, epsilon: float = DEFAULT_EPSILON) -> PiecewiseCV:
    """Single root region over the unit cube (``3^D`` evaluations)."""
    return CVBuilder(g, dim, epsilon).finish()


def build_cv(g: Integrand, dim: int, total_evals: int, epsilon: float = DEFAULT_EPSILON) -> PiecewiseCV:
    """Refine until the next split would exceed ``total_evals`` integrand evaluations."""
    root_cost = NODES_PER_DIM**dim
    if total_evals < root_cost:
        raise ValueError(f"budget {total_evals} is below the {root_cost} evaluations of the root region")
    builder = CVBuilder(g, dim, epsilon)
    while builder.eval_count + builder.split_cost <= total_evals:
        builder.split_region(builder.peek())
    cv = builder.finish(total_evals)
    log.debug("built CV: D=%d M=%d evals=%d leftover=%d", dim, cv.n_regions, cv.eval_count, cv.leftover_evals)
    return cv
