"""Unbiased residual Monte Carlo around a piecewise-polynomial control variate.

The estimator is

    <F>_N = alpha * H + 1/N * sum_i (g(u_i) - alpha * h(u_i)) / p_h(u_i)

with residual samples drawn by picking a region uniformly and a point
uniformly inside it, so ``p_h(u) = 1 / (M * |region(u)|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .builder import PiecewiseCV, evaluate

AlphaMode = Union[float, str]

ALPHA_VARIANCE_FLOOR = 1e-30


@dataclass
class ResidualSamples:
    """A batch of residual samples.  ``u`` covers the CV dimensions only."""

    u: np.ndarray  # (n, D)
    region: np.ndarray  # (n,)
    pdf: np.ndarray  # (n,)
    g: np.ndarray  # (n, C)
    h: np.ndarray  # (n, C)
    u_extra: np.ndarray | None = None  # (n, D_full - D) trailing dimensions, if any


@dataclass
class Estimate:
    value: float | np.ndarray
    n_samples: int
    alpha: float | np.ndarray
    empirical_variance: float | np.ndarray
    cv_integral: float | np.ndarray


def _check_alpha(alpha: AlphaMode):
    if isinstance(alpha, str):
        if alpha != "per_run":
            raise ValueError(f"alpha must be a number or 'per_run', got {alpha!r}")
        return None
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise ValueError("fixed alpha must be finite")
    return alpha


def draw_region_uniform(cv: PiecewiseCV, rng: np.random.Generator, n: int):
    """Region ``r ~ Uniform{0..M-1}``, then ``u ~ Uniform(box_r)``.  Returns ``(u, r, pdf)``."""
    regions = rng.integers(0, cv.n_regions, size=n)
    lo = cv.lo[regions]
    u = lo + (cv.hi[regions] - lo) * rng.random((n, cv.dim))
    pdf = 1.0 / (cv.n_regions * cv.volumes[regions])
    return u, regions, pdf


def sample_residual(cv: PiecewiseCV, g, rng: np.random.Generator, n: int = 1, extra_dims: int = 0) -> ResidualSamples:
    """Draw ``n`` residual samples and evaluate ``g`` and the CV at them.

    With ``extra_dims > 0`` the integrand is evaluated at the concatenation of
    the CV point and fresh uniform trailing coordinates.
    """
    u, regions, pdf = draw_region_uniform(cv, rng, n)
    u_extra = rng.random((n, extra_dims)) if extra_dims else None
    points = u if u_extra is None else np.concatenate([u, u_extra], axis=1)
    values = evaluate(g, points)
    if values.shape[1] != cv.n_channels:
        raise ValueError(f"integrand has {values.shape[1]} channels, control variate has {cv.n_channels}")
    return ResidualSamples(u, regions, pdf, values, cv.evaluate_in(u, regions), u_extra)


def alpha_from_samples(F: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``Cov(F, H) / Var(H)`` along axis ``-2`` (samples), per channel.

    Falls back to 1 where fewer than two samples exist or the sample variance
    of ``H`` is below 1e-30.
    """
    n = F.shape[-2]
    shape = F.shape[:-2] + F.shape[-1:]
    if n < 2:
        return np.ones(shape)
    dF = F - F.mean(axis=-2, keepdims=True)
    dH = H - H.mean(axis=-2, keepdims=True)
    var = (dH * dH).sum(axis=-2) / (n - 1)
    cov = (dF * dH).sum(axis=-2) / (n - 1)
    ok = var >= ALPHA_VARIANCE_FLOOR
    return np.where(ok, cov / np.where(ok, var, 1.0), 1.0)


def estimate_alpha(F, H) -> float | np.ndarray:
    """Optimal CV strength from paired samples ``F_i = g/p``, ``H_i = h/p``."""
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    scalar = F.ndim == 1
    if scalar:
        F, H = F[:, None], H[:, None]
    alpha = alpha_from_samples(F, H)
    return float(alpha[0]) if scalar else alpha


def _combine(F, Hs, total, alpha: AlphaMode):
    """Value, alpha and summand variance for sample arrays shaped (..., n, C)."""
    fixed = _check_alpha(alpha)
    n = F.shape[-2]
    if fixed is None:
        a = alpha_from_samples(F, Hs)
    else:
        a = np.full(F.shape[:-2] + F.shape[-1:], fixed)
    terms = F - a[..., None, :] * Hs
    value = a * total + terms.mean(axis=-2)
    var = terms.var(axis=-2, ddof=1) if n > 1 else np.zeros_like(value)
    return value, a, var


def _out(x, scalar):
    """Drop the channel axis for scalar integrands."""
    x = np.asarray(x)
    if not scalar:
        return x
    x = x[..., 0]
    return float(x) if x.ndim == 0 else x


def estimate_full(cv: PiecewiseCV, g, n_residual: int, rng: np.random.Generator, alpha: AlphaMode = "per_run", extra_dims: int = 0) -> Estimate:
    """Full-domain estimate of the integral of ``g`` over the unit cube."""
    if n_residual < 0:
        raise ValueError("n_residual must be nonnegative")
    _check_alpha(alpha)
    if n_residual == 0:
        one = np.ones(cv.n_channels)
        return Estimate(_out(cv.integral, cv.scalar), 0, _out(one, cv.scalar), _out(0 * one, cv.scalar), _out(cv.integral, cv.scalar))
    s = sample_residual(cv, g, rng, n_residual, extra_dims)
    inv = 1.0 / s.pdf[:, None]
    value, a, var = _combine(s.g * inv, s.h * inv, cv.integral, alpha)
    return Estimate(_out(value, cv.scalar), n_residual, _out(a, cv.scalar), _out(var, cv.scalar), _out(cv.integral, cv.scalar))


def estimate_full_runs(cv: PiecewiseCV, g, n_residual: int, runs: int, rng: np.random.Generator, alpha: AlphaMode = "per_run", extra_dims: int = 0, chunk: int = 1 << 18):
    """``runs`` independent full-domain estimates sharing one CV, vectorized.

    Returns ``(values, alphas)`` with a leading run axis.  Equivalent in
    distribution to calling :func:`estimate_full` ``runs`` times.  Runs are
    processed in batches of about ``chunk`` samples to bound memory.
    """
    if n_residual <= 0:
        values = np.broadcast_to(cv.integral, (runs, cv.n_channels)).copy()
        return _out(values, cv.scalar), _out(np.ones_like(values), cv.scalar)
    per_batch = max(1, chunk // n_residual)
    values, alphas = [], []
    for start in range(0, runs, per_batch):
        k = min(per_batch, runs - start)
        s = sample_residual(cv, g, rng, n_residual * k, extra_dims)
        inv = 1.0 / s.pdf[:, None]
        F = (s.g * inv).reshape(k, n_residual, -1)
        Hs = (s.h * inv).reshape(k, n_residual, -1)
        value, a, _ = _combine(F, Hs, cv.integral, alpha)
        values.append(value)
        alphas.append(a)
    return _out(np.concatenate(values), cv.scalar), _out(np.concatenate(alphas), cv.scalar)


@dataclass(frozen=True)
class BucketGrid:
    """Regular grid of buckets over the first ``len(resolution)`` primary dimensions."""

    resolution: tuple

    def __post_init__(self):
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if not res or any(r < 1 for r in res):
            raise ValueError(f"invalid bucket resolution {self.resolution}")
        object.__setattr__(self, "resolution", res)

    @property
    def dims(self) -> int:
        return len(self.resolution)

    @property
    def n_buckets(self) -> int:
        return int(np.prod(self.resolution))

    def index_grid(self) -> np.ndarray:
        """Multi-index of every bucket in row-major order, shape (n_buckets, B)."""
        mesh = np.meshgrid(*[np.arange(r) for r in self.resolution], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        res = np.array(self.resolution, dtype=float)
        idx = self.index_grid()
        return idx / res, (idx + 1) / res

    def volumes(self) -> np.ndarray:
        lo, hi = self.bounds()
        return np.prod(hi - lo, axis=1)


@dataclass
class BucketSlices:
    """Non-empty intersections of CV regions with buckets, sorted by bucket."""

    bucket: np.ndarray
    region: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    volume: np.ndarray
    integral: np.ndarray  # (S, C)
    start: np.ndarray  # first slice of each bucket
    count: np.ndarray  # slices per bucket


def bucket_slices(cv: PiecewiseCV, grid: BucketGrid) -> BucketSlices:
    if grid.dims > cv.dim:
        raise ValueError(f"bucket grid has {grid.dims} dims but the CV only {cv.dim}")
    res = np.array(grid.resolution)
    B = grid.dims
    first = np.clip(np.floor(cv.lo[:, :B] * res).astype(np.int64), 0, res - 1)
    last = np.clip(np.ceil(cv.hi[:, :B] * res).astype(np.int64) - 1, 0, res - 1)
    strides = np.concatenate([np.cumprod(res[::-1])[::-1][1:], [1]])
    buckets, regions = [], []
    for r in range(cv.n_regions):
        ranges = [np.arange(first[r, d], last[r, d] + 1) for d in range(B)]
        mesh = np.meshgrid(*ranges, indexing="ij")
        flat = sum(m.reshape(-1) * strides[d] for d, m in enumerate(mesh))
        buckets.append(flat)
        regions.append(np.full(flat.size, r))
    bucket = np.concatenate(buckets)
    region = np.concatenate(regions)
    idx = grid.index_grid()[bucket]
    blo = np.concatenate([idx / res, np.zeros((bucket.size, cv.dim - B))], axis=1)
    bhi = np.concatenate([(idx + 1) / res, np.ones((bucket.size, cv.dim - B))], axis=1)
    lo = np.maximum(cv.lo[region], blo)
    hi = np.minimum(cv.hi[region], bhi)
    keep = np.all(lo < hi, axis=1)
    bucket, region, lo, hi = bucket[keep], region[keep], lo[keep], hi[keep]
    order = np.lexsort((region, bucket))
    bucket, region, lo, hi = bucket[order], region[order], lo[order], hi[order]
    count = np.bincount(bucket, minlength=grid.n_buckets)
    if np.any(count == 0):
        raise RuntimeError("bucket with no intersecting region; the CV does not tile the unit cube")
    start = np.concatenate([[0], np.cumsum(count)[:-1]])
    return BucketSlices(bucket, region, lo, hi, np.prod(hi - lo, axis=1), cv.slice_integrals(region, lo, hi), start, count)


@dataclass
class BucketEstimates:
    """Per-bucket means (box-filtered), with row-major bucket order."""

    grid: BucketGrid
    value: np.ndarray  # (n_buckets,) or (n_buckets, C)
    alpha: np.ndarray
    empirical_variance: np.ndarray
    cv_integral: np.ndarray  # CV integral over each bucket
    n_samples: int

    @property
    def image(self) -> np.ndarray:
        return self.value.reshape(self.grid.resolution + self.value.shape[1:])


def bucket_cv_integrals(cv: PiecewiseCV, grid: BucketGrid, slices: BucketSlices | None = None) -> np.ndarray:
    """Exact CV integral over every bucket, shape (n_buckets, C)."""
    slices = bucket_slices(cv, grid) if slices is None else slices
    out = np.zeros((grid.n_buckets, cv.n_channels))
    np.add.at(out, slices.bucket, slices.integral)
    return out


def estimate_buckets(cv: PiecewiseCV, g, grid: BucketGrid, spp: int, rng: np.random.Generator, alpha: AlphaMode = "per_run", slices: BucketSlices | None = None) -> BucketEstimates:
    """Bucketed estimate: CV integral per bucket plus a stratified residual.

    Within a bucket the ``spp`` samples are spread over the region slices in
    proportion to slice volume by systematic sampling of the cumulative slice
    volume, and placed uniformly inside their slice.  Every sample is thus
    marginally uniform over its stratum, the strata have equal measure, and the
    residual sum is unbiased with per-sample weight ``|bucket| / spp``.
    ``alpha`` is chosen per bucket from that bucket's samples.
    """
    if spp < 0:
        raise ValueError("spp must be nonnegative")
    _check_alpha(alpha)
    slices = bucket_slices(cv, grid) if slices is None else slices
    nb = grid.n_buckets
    cv_int = bucket_cv_integrals(cv, grid, slices)
    bucket_vol = grid.volumes()
    if spp == 0:
        one = np.ones_like(cv_int)
        return BucketEstimates(grid, _out(cv_int / bucket_vol[:, None], cv.scalar), _out(one, cv.scalar), _out(0 * one, cv.scalar), _out(cv_int, cv.scalar), 0)

    # fraction of each bucket's slice volume preceding / ending at each slice
    vol_b = np.bincount(slices.bucket, weights=slices.volume, minlength=nb)
    cum = np.cumsum(slices.volume)
    before_bucket = cum[slices.start] - slices.volume[slices.start]
    frac_end = (cum - before_bucket[slices.bucket]) / vol_b[slices.bucket]
    key_end = slices.bucket + frac_end
    key_end[slices.start + slices.count - 1] = slices.bucket[slices.start + slices.count - 1] + 1.0

    offsets = rng.random(nb)
    c = (np.arange(spp)[None, :] + offsets[:, None]) / spp  # (nb, spp) in [0, 1)
    s = np.searchsorted(key_end, (np.arange(nb)[:, None] + c).reshape(-1), side="right")
    s = np.clip(s, np.repeat(slices.start, spp), np.repeat(slices.start + slices.count - 1, spp))
    frac_start = frac_end[s] - slices.volume[s] / vol_b[slices.bucket[s]]
    f = (c.reshape(-1) - frac_start) / (slices.volume[s] / vol_b[slices.bucket[s]])
    f = np.clip(f, 0.0, np.nextafter(1.0, 0.0))
    local = rng.random((nb * spp, cv.dim))
    local[:, 0] = f
    lo, hi = slices.lo[s], slices.hi[s]
    u = lo + (hi - lo) * local

    values = evaluate(g, u)
    h = cv.evaluate_in(u, slices.region[s])
    w = vol_b[:, None, None]
    F = values.reshape(nb, spp, -1) * w
    Hs = h.reshape(nb, spp, -1) * w
    value, a, var = _combine(F, Hs, cv_int, alpha)
    mean = value / bucket_vol[:, None]
    return BucketEstimates(grid, _out(mean, cv.scalar), _out(a, cv.scalar), _out(var, cv.scalar), _out(cv_int, cv.scalar), spp)


@dataclass
class RunStatistics:
    mean: float | np.ndarray
    rmse: float | np.ndarray | None
    variance: float | np.ndarray
    stderr: float | np.ndarray
    ci: tuple


def run_statistics(estimates, reference=None, z: float = 1.96) -> RunStatistics:
    """Mean, unbiased variance, standard error, normal CI and RMSE against ``reference``."""
    x = np.asarray(estimates, dtype=float)
    if x.shape[0] < 1:
        raise ValueError("need at least one run")
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    se = np.sqrt(var / n)
    rmse = None if reference is None else np.sqrt(np.mean((x - reference) ** 2, axis=0))
    conv = (lambda v: float(v)) if np.ndim(mean) == 0 else (lambda v: v)
    return RunStatistics(conv(mean), None if rmse is None else conv(rmse), conv(var), conv(se), (conv(mean - z * se), conv(mean + z * se)))
