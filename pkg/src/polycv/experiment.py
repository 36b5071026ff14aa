"""Experiment harness: typed INI configs, replicated runs, allocation sweeps.

A run builds its control variate from a share of the evaluation budget and
spends the rest on residual samples.  Convergence curves come from prefix
checkpoints of a single long residual stream.  Every run owns an independent
random stream spawned from the config seed, so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import configparser
import csv
import functools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .applications.benchmarks import get_benchmark
from .applications.scattering import PointLightScene, single_scattering_integrand, single_scattering_reference
from .applications.transmittance import (
    Medium,
    constant_control,
    get_medium,
    optical_depth_cv,
    tau_oracle,
    transmittance_delta_tracking,
    transmittance_ratio_tracking,
)
from .builder import DEFAULT_EPSILON, PiecewiseCV, build_cv
from .estimator import BucketGrid, _combine, bucket_slices, estimate_buckets, estimate_full_runs, sample_residual
from .highdim import ProjectionConfig, build_projected_cv
from .pfm import write_pfm
from .primaryspace import MappingSet, PrimaryIntegrand, make_primary_integrand

log = logging.getLogger(__name__)

MODES = ("full", "bucketed", "highdim", "transmittance")
TRANSMITTANCE_ESTIMATORS = ("delta", "constant", "adaptive")
SCATTERING = "single-scattering"
DEFAULT_CV_FRACTION = {"full": 1 / 3, "bucketed": 1 / 16, "highdim": 1 / 3, "transmittance": 0.0}

CSV_COLUMNS = (
    "run",
    "n_cv_evals",
    "n_residual_evals",
    "estimate",
    "reference",
    "abs_error",
    "rmse",
    "alpha",
    "wall_time_ms",
    "integrand_evals",
)


class ConfigError(ValueError):
    """Malformed experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "full"
    integrand: str = "gaussian-2d"
    mapping: str = "equiangular"  # single-scattering only: equiangular, uniform or mis
    total_evals: int = 4096
    cv_fraction: float | None = None  # None means the per-mode default
    runs: int = 8
    seed: int = 0
    alpha: float | str = "per_run"
    epsilon: float = DEFAULT_EPSILON
    checkpoints: tuple | None = None
    resolution: tuple = (16, 16)
    spp: int = 64
    cv_dims: int | None = None
    n_star: int = 4
    medium: str = "bump"
    estimator: str = "adaptive"
    cv_evals: int = 9
    scene: PointLightScene = field(default_factory=PointLightScene)
    csv: str | None = None
    image: str | None = None
    cv_cache: str | None = None
    cv_axis: tuple = (0, 27, 81, 243, 729)
    residual_axis: tuple = (0, 64, 256, 1024)

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.mode not in MODES:
            bad("mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.cv_fraction is not None and not 0.0 <= self.cv_fraction <= 1.0:
            bad("cv_fraction", f"must lie in [0, 1], got {self.cv_fraction}")
        if self.runs < 1:
            bad("runs", f"must be at least 1, got {self.runs}")
        if self.total_evals < 0:
            bad("total_evals", "must be nonnegative")
        if self.seed < 0:
            bad("seed", "must be nonnegative")
        if isinstance(self.alpha, str) and self.alpha != "per_run":
            bad("alpha", f"expected 'per_run' or a number, got {self.alpha!r}")
        if not self.epsilon >= 0:
            bad("epsilon", "must be nonnegative")
        if self.spp < 0:
            bad("spp", "must be nonnegative")
        if not self.resolution or any(r < 1 for r in self.resolution):
            bad("resolution", f"entries must be positive, got {self.resolution}")
        if self.n_star < 1:
            bad("n_star", "must be at least 1")
        if self.estimator not in TRANSMITTANCE_ESTIMATORS:
            bad("estimator", f"expected one of {TRANSMITTANCE_ESTIMATORS}, got {self.estimator!r}")
        if self.mapping not in ("equiangular", "uniform", "mis"):
            bad("mapping", f"expected equiangular, uniform or mis, got {self.mapping!r}")
        if self.checkpoints is not None and any(c < 0 for c in self.checkpoints):
            bad("checkpoints", "entries must be nonnegative")
        if not self.cv_axis or not self.residual_axis:
            bad("cv_axis" if not self.cv_axis else "residual_axis", "must be nonempty")

    @property
    def fraction(self) -> float:
        return DEFAULT_CV_FRACTION[self.mode] if self.cv_fraction is None else self.cv_fraction

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config: cannot read {path}")
        return cls.from_string(path.read_text(), source=str(path))

    @classmethod
    def from_string(cls, text: str, source: str = "<string>") -> ExperimentConfig:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"config: {exc}") from exc
        return cls(**_parse_sections(parser))


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _alpha(text: str):
    return "per_run" if text.strip() == "per_run" else float(text)


def _optional(conv):
    return lambda text: None if text.strip().lower() in ("", "none", "default") else conv(text)


# section -> key -> (field name, parser)
_SCHEMA = {
    "experiment": {
        "mode": ("mode", str),
        "integrand": ("integrand", str),
        "mapping": ("mapping", str),
        "total_evals": ("total_evals", int),
        "cv_fraction": ("cv_fraction", _optional(float)),
        "runs": ("runs", int),
        "seed": ("seed", int),
        "alpha": ("alpha", _alpha),
        "epsilon": ("epsilon", float),
        "checkpoints": ("checkpoints", _optional(_ints)),
    },
    "bucketed": {"resolution": ("resolution", _ints), "spp": ("spp", int)},
    "highdim": {"cv_dims": ("cv_dims", _optional(int)), "n_star": ("n_star", int)},
    "transmittance": {"medium": ("medium", str), "estimator": ("estimator", str), "cv_evals": ("cv_evals", int)},
    "scattering": {
        "light": ("light", _floats),
        "power": ("power", float),
        "sigma_t": ("sigma_t", float),
        "sigma_s": ("sigma_s", float),
        "length": ("length", float),
    },
    "sweep": {"cv_axis": ("cv_axis", _ints), "residual_axis": ("residual_axis", _ints)},
    "output": {"csv": ("csv", _optional(str)), "image": ("image", _optional(str)), "cv_cache": ("cv_cache", _optional(str))},
}


def _parse_sections(parser: configparser.ConfigParser) -> dict:
    kwargs: dict = {}
    scene: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"[{section}]: unknown section; expected one of {sorted(_SCHEMA)}")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown field")
            name, conv = _SCHEMA[section][key]
            try:
                value = conv(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None
            if section == "scattering":
                scene[name] = value
            else:
                kwargs[name] = value
    if scene:
        if "light" in scene and len(scene["light"]) != 3:
            raise ConfigError("[scattering] light: expected three coordinates")
        kwargs["scene"] = PointLightScene(**scene)
    return kwargs


# integrands


@dataclass
class Problem:
    """A primary-space integrand with its reference values."""

    name: str
    dim: int
    g: object  # callable on (n, dim) points
    reference: float | None
    bucket_reference: object = None  # callable(resolution) -> per-bucket means, or None
    cv_dims: int | None = None


@functools.lru_cache(maxsize=8)
def _scattering_reference(scene: PointLightScene) -> float:
    return single_scattering_reference(scene)


def resolve_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.integrand == SCATTERING:
        if cfg.mapping == "mis":
            f, eq = single_scattering_integrand(cfg.scene, "equiangular")
            _, un = single_scattering_integrand(cfg.scene, "uniform")
            mappings = MappingSet((eq, un))
        else:
            f, m = single_scattering_integrand(cfg.scene, cfg.mapping)
            mappings = MappingSet((m,))
        g = make_primary_integrand(f, mappings)
        return Problem(SCATTERING, 1, g._g, _scattering_reference(cfg.scene))
    try:
        bench = get_benchmark(cfg.integrand)
    except KeyError as exc:
        raise ConfigError(f"integrand: {exc.args[0]}") from None
    bucket_ref = bench.bucket_reference if bench.box_integral is not None else None
    return Problem(bench.name, bench.dim, bench.f, bench.reference, bucket_ref, bench.cv_dims)


# runs


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    image: np.ndarray | None = None
    error_image: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)


def run_streams(seed: int, runs: int) -> list:
    """One independent seed sequence per run, identical for any thread count."""
    return np.random.SeedSequence(seed).spawn(runs)


def default_checkpoints(n: int, first: int = 16) -> list:
    points = []
    k = first
    while k < n:
        points.append(k)
        k *= 2
    points.append(n)
    return points


def _checkpoints(cfg: ExperimentConfig, n: int) -> list:
    if cfg.checkpoints is None:
        return default_checkpoints(n)
    return sorted({c for c in cfg.checkpoints if c <= n} | {n})


def _row(run, n_cv, n_res, estimate, reference, alpha, wall_ms, evals) -> dict:
    return {
        "run": run,
        "n_cv_evals": int(n_cv),
        "n_residual_evals": int(n_res),
        "estimate": float(estimate),
        "reference": None if reference is None else float(reference),
        "abs_error": None if reference is None else abs(float(estimate) - float(reference)),
        "rmse": None,
        "alpha": float(alpha),
        "wall_time_ms": wall_ms,
        "integrand_evals": int(evals),
    }


def _scalar(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.reshape(-1)[0]) if x.size == 1 else float(x.mean())


def _prefix_estimates(cv: PiecewiseCV, g, checkpoints, rng, alpha, extra_dims: int = 0):
    """Yield ``(n, value, alpha)`` at each checkpoint of one residual stream."""
    F_parts, H_parts = [], []
    done = 0
    for n in checkpoints:
        if n > done:
            s = sample_residual(cv, g, rng, n - done, extra_dims)
            inv = 1.0 / s.pdf[:, None]
            F_parts.append(s.g * inv)
            H_parts.append(s.h * inv)
            done = n
        if n == 0:
            yield 0, _scalar(cv.integral), 1.0
            continue
        value, a, _ = _combine(np.concatenate(F_parts), np.concatenate(H_parts), cv.integral, alpha)
        yield n, _scalar(value), _scalar(a)


def _load_or_build(cfg: ExperimentConfig, builder, dim: int):
    """Return ``(cv, cached)``; ``builder()`` is only called on a cache miss."""
    if cfg.cv_cache:
        path = Path(cfg.cv_cache)
        if path.is_file():
            cv = PiecewiseCV.load(path)
            if cv.dim != dim:
                raise ConfigError(f"cv_cache: {path} holds a {cv.dim}D control variate, need {dim}D")
            return cv, True
        cv = builder()
        cv.save(path)
        return cv, False
    return builder(), False


def _run_full(cfg: ExperimentConfig, problem: Problem, run: int, ss: np.random.SeedSequence) -> list:
    t0 = time.perf_counter()
    rng = np.random.default_rng(ss)
    g = PrimaryIntegrand(problem.g, problem.dim)
    budget = int(math.floor(cfg.total_evals * cfg.fraction))
    cached = False
    if budget >= 3**problem.dim:
        cv, cached = _load_or_build(cfg, lambda: build_cv(g, problem.dim, budget, cfg.epsilon), problem.dim)
    else:
        cv = PiecewiseCV.constant(problem.dim, 0.0)
    n_cv = cv.eval_count
    offset = n_cv if cached else 0
    n_res = max(cfg.total_evals - n_cv, 0)
    rows = []
    for n, value, a in _prefix_estimates(cv, g, _checkpoints(cfg, n_res), rng, cfg.alpha):
        wall = (time.perf_counter() - t0) * 1e3
        rows.append(_row(run, n_cv, n, value, problem.reference, a, wall, g.evals + offset))
    return rows


def _run_highdim(cfg: ExperimentConfig, problem: Problem, run: int, ss: np.random.SeedSequence) -> list:
    t0 = time.perf_counter()
    L = cfg.cv_dims or problem.cv_dims
    if L is None:
        raise ConfigError(f"cv_dims: integrand {problem.name} has no default; set [highdim] cv_dims")
    proj_seed = int(ss.generate_state(1, np.uint64)[0])
    rng = np.random.default_rng(ss)
    pcfg = ProjectionConfig(L, problem.dim, cfg.n_star, proj_seed)
    g = PrimaryIntegrand(problem.g, problem.dim)
    nodes = int(math.floor(cfg.total_evals * cfg.fraction / cfg.n_star))
    if nodes >= 3**L:
        cv = build_projected_cv(g, pcfg, nodes, cfg.epsilon)
    else:
        cv = PiecewiseCV.constant(L, 0.0)
    n_cv = g.evals
    n_res = max(cfg.total_evals - n_cv, 0)
    rows = []
    for n, value, a in _prefix_estimates(cv, g, _checkpoints(cfg, n_res), rng, cfg.alpha, pcfg.extra_dims):
        wall = (time.perf_counter() - t0) * 1e3
        rows.append(_row(run, n_cv, n, value, problem.reference, a, wall, g.evals))
    return rows


def _run_bucketed(cfg: ExperimentConfig, problem: Problem, run: int, ss: np.random.SeedSequence):
    t0 = time.perf_counter()
    grid = BucketGrid(cfg.resolution)
    if grid.dims > problem.dim:
        raise ConfigError(f"resolution: {grid.dims} bucket axes exceed the integrand's {problem.dim} dimensions")
    rng = np.random.default_rng(ss)
    g = PrimaryIntegrand(problem.g, problem.dim)
    total = cfg.spp * grid.n_buckets
    budget = int(math.floor(total * cfg.fraction))
    cached = False
    if budget >= 3**problem.dim:
        cv, cached = _load_or_build(cfg, lambda: build_cv(g, problem.dim, budget, cfg.epsilon), problem.dim)
    else:
        cv = PiecewiseCV.constant(problem.dim, 0.0)
    n_cv = cv.eval_count
    spp = max(total - n_cv, 0) // grid.n_buckets
    est = estimate_buckets(cv, g, grid, spp, rng, cfg.alpha, bucket_slices(cv, grid))
    means = np.asarray(est.value, dtype=float)
    estimate = float(np.dot(means, grid.volumes()))
    wall = (time.perf_counter() - t0) * 1e3
    row = _row(run, n_cv, spp * grid.n_buckets, estimate, problem.reference, _scalar(est.alpha), wall, g.evals + (n_cv if cached else 0))
    ref_img = None if problem.bucket_reference is None else np.asarray(problem.bucket_reference(grid.resolution), dtype=float)
    if ref_img is not None:
        row["rmse"] = float(np.sqrt(np.mean((means - ref_img) ** 2)))
    return [row], means, ref_img


@functools.lru_cache(maxsize=8)
def _tau(name: str) -> float:
    return tau_oracle(get_medium(name))


class _CountingMedium:
    def __init__(self, medium: Medium):
        self.base = medium
        self.queries = 0

    def mu(self, s):
        s = np.asarray(s, dtype=float)
        self.queries += s.size
        return self.base.mu(s)

    def medium(self) -> Medium:
        return replace(self.base, mu=self.mu)


def _run_transmittance(cfg: ExperimentConfig, run: int, ss: np.random.SeedSequence) -> list:
    t0 = time.perf_counter()
    rng = np.random.default_rng(ss)
    base = get_medium(cfg.medium)
    counting = _CountingMedium(base)
    medium = counting.medium()
    reference = math.exp(-_tau(base.name))
    n_estimates = cfg.total_evals
    if cfg.estimator == "delta":
        values, queries = transmittance_delta_tracking(medium, rng, n_estimates)
    else:
        if cfg.estimator == "adaptive":
            control = optical_depth_cv(medium, cfg.cv_evals)
        else:
            # the oracle optical depth is a given parameter; only the probe is charged
            control = constant_control(base)
            counting.queries += control.probe_queries
        values, queries = transmittance_ratio_tracking(medium, control, rng, n_estimates)
    n_cv = counting.queries - int(queries.sum())
    cum_q = np.cumsum(queries)
    cum_v = np.cumsum(values)
    rows = []
    for n in _checkpoints(cfg, n_estimates):
        if n == 0:
            continue
        wall = (time.perf_counter() - t0) * 1e3
        res = int(cum_q[n - 1])
        rows.append(_row(run, n_cv, res, cum_v[n - 1] / n, reference, 1.0, wall, n_cv + res))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Execute ``cfg.runs`` replications and return the CSV rows (and images in bucketed mode)."""
    if threads < 1:
        raise ConfigError(f"threads: must be at least 1, got {threads}")
    streams = run_streams(cfg.seed, cfg.runs)
    problem = None if cfg.mode == "transmittance" else resolve_problem(cfg)

    def one(run):
        ss = streams[run]
        if cfg.mode == "full":
            return _run_full(cfg, problem, run, ss)
        if cfg.mode == "highdim":
            return _run_highdim(cfg, problem, run, ss)
        if cfg.mode == "bucketed":
            return _run_bucketed(cfg, problem, run, ss)
        return _run_transmittance(cfg, run, ss)

    if cfg.cv_cache and threads > 1:
        # the first run may write the cache; keep later runs from racing it
        first = [one(0)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = first + list(pool.map(one, range(1, cfg.runs)))
    elif threads == 1:
        outputs = [one(r) for r in range(cfg.runs)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(one, range(cfg.runs)))

    image = error_image = None
    if cfg.mode == "bucketed":
        rows = [out[0][0] for out in outputs]
        grid = BucketGrid(cfg.resolution)
        if grid.dims == 2:
            image = outputs[0][1].reshape(grid.resolution)
            ref = outputs[0][2]
            if ref is not None:
                error_image = np.abs(outputs[0][1] - ref).reshape(grid.resolution)
    else:
        rows = [r for out in outputs for r in out]
        _fill_rmse(rows)
    return ExperimentResult(cfg, rows, image, error_image)


def _fill_rmse(rows: list) -> None:
    """RMSE across runs at each residual checkpoint (matched by position in the run)."""
    by_run: dict = {}
    for r in rows:
        by_run.setdefault(r["run"], []).append(r)
    depth = min(len(v) for v in by_run.values())
    for k in range(depth):
        errs = [v[k]["abs_error"] for v in by_run.values()]
        if any(e is None for e in errs):
            continue
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        for v in by_run.values():
            v[k]["rmse"] = rmse


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(fh, rows: list, columns) -> None:
    writer = csv.writer(fh, lineterminator="\r\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r[c]) if c != "wall_time_ms" else f"{r[c]:.3f}" for c in columns])


def write_csv(rows: list, path, columns=CSV_COLUMNS) -> None:
    """RFC-4180 CSV to ``path``, or to an open text stream."""
    if hasattr(path, "write"):
        _write_rows(path, rows, columns)
        return
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            _write_rows(fh, rows, columns)
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc


def error_image_path(image_path) -> Path:
    p = Path(image_path)
    return p.with_name(p.stem + "_error" + (p.suffix or ".pfm"))


def write_outputs(result: ExperimentResult, csv_path=None, image_path=None) -> list:
    """Write the CSV and (bucketed mode) estimate/error PFMs.  Returns the written paths."""
    written = []
    csv_path = csv_path or result.config.csv
    image_path = image_path or result.config.image
    if csv_path:
        write_csv(result.rows, csv_path)
        written.append(Path(csv_path))
    if image_path and result.image is not None:
        write_pfm(result.image, image_path)
        written.append(Path(image_path))
        if result.error_image is not None:
            err = error_image_path(image_path)
            write_pfm(result.error_image, err)
            written.append(err)
    return written


# allocation sweep


@dataclass
class SweepResult:
    cv_axis: tuple
    residual_axis: tuple
    error: np.ndarray  # (len(residual_axis), len(cv_axis))
    cost: np.ndarray  # integrand evaluations
    wall_ms: np.ndarray
    efficiency: np.ndarray
    cv_evals: np.ndarray  # actual CV evaluations per column
    best: tuple  # (row, col)

    @property
    def best_ratio(self) -> float:
        i, j = self.best
        return float(self.cv_evals[j] / self.cost[i, j]) if self.cost[i, j] > 0 else float("nan")


def _sweep_cell_full(cv, g, problem, n_res, runs, rng, alpha):
    values, _ = estimate_full_runs(cv, g, n_res, runs, rng, alpha)
    values = np.asarray(values, dtype=float).reshape(runs)
    return float(np.sqrt(np.mean((values - problem.reference) ** 2)))


def _sweep_cell_bucketed(cv, g, grid, slices, ref_img, spp, runs, rng, alpha):
    sq = 0.0
    for _ in range(runs):
        est = estimate_buckets(cv, g, grid, spp, rng, alpha, slices)
        sq += float(np.mean((np.asarray(est.value, dtype=float) - ref_img) ** 2))
    return math.sqrt(sq / runs)


def sweep_allocation(cfg: ExperimentConfig, cv_axis=None, residual_axis=None) -> SweepResult:
    """Error, cost and efficiency over a grid of (CV budget, residual samples).

    Columns whose CV budget is below ``3^D`` are plain Monte Carlo; the
    ``n_res = 0`` row is pure nested quadrature (biased, reported as is).  In
    bucketed mode the residual axis counts samples per bucket.  The pure-MC
    cell with no residual samples has no estimate and is left NaN.
    """
    cv_axis = tuple(cfg.cv_axis if cv_axis is None else cv_axis)
    residual_axis = tuple(cfg.residual_axis if residual_axis is None else residual_axis)
    if not cv_axis or not residual_axis:
        raise ConfigError("sweep: axes must be nonempty")
    if cfg.mode not in ("full", "bucketed"):
        raise ConfigError(f"mode: sweeps support full and bucketed modes, got {cfg.mode!r}")
    problem = resolve_problem(cfg)
    if problem.reference is None:
        raise ConfigError(f"integrand: {problem.name} has no reference value to measure error against")
    shape = (len(residual_axis), len(cv_axis))
    error = np.full(shape, np.nan)
    cost = np.zeros(shape)
    wall = np.zeros(shape)
    cv_evals = np.zeros(len(cv_axis))
    grid = BucketGrid(cfg.resolution) if cfg.mode == "bucketed" else None
    ref_img = None
    if grid is not None:
        if problem.bucket_reference is None:
            raise ConfigError(f"integrand: {problem.name} has no per-bucket reference")
        ref_img = np.asarray(problem.bucket_reference(grid.resolution), dtype=float)
    streams = np.random.SeedSequence(cfg.seed).spawn(len(cv_axis) * len(residual_axis))

    for j, budget in enumerate(cv_axis):
        g = PrimaryIntegrand(problem.g, problem.dim)
        t0 = time.perf_counter()
        cv = build_cv(g, problem.dim, budget, cfg.epsilon) if budget >= 3**problem.dim else PiecewiseCV.constant(problem.dim, 0.0)
        build_ms = (time.perf_counter() - t0) * 1e3
        cv_evals[j] = cv.eval_count
        slices = bucket_slices(cv, grid) if grid is not None else None
        for i, n_res in enumerate(residual_axis):
            rng = np.random.default_rng(streams[i * len(cv_axis) + j])
            n_samples = n_res * (grid.n_buckets if grid is not None else 1)
            cost[i, j] = cv.eval_count + n_samples
            if cv.eval_count == 0 and n_res == 0:
                continue
            t1 = time.perf_counter()
            if grid is None:
                error[i, j] = _sweep_cell_full(cv, g, problem, n_res, cfg.runs, rng, cfg.alpha)
            else:
                error[i, j] = _sweep_cell_bucketed(cv, g, grid, slices, ref_img, n_res, cfg.runs, rng, cfg.alpha)
            wall[i, j] = build_ms + (time.perf_counter() - t1) * 1e3 / cfg.runs

    with np.errstate(divide="ignore", invalid="ignore"):
        efficiency = 1.0 / (error * cost)
    best = _best_cell(efficiency, cost, residual_axis)
    result = SweepResult(cv_axis, residual_axis, error, cost, wall, efficiency, cv_evals, best)
    log.info("sweep optimum at n_cv=%d, n_res=%d: CV fraction %.3f (reference allocation 1/3)", cv_evals[best[1]], residual_axis[best[0]], result.best_ratio)
    return result


def _best_cell(efficiency: np.ndarray, cost: np.ndarray, residual_axis) -> tuple:
    """Most efficient unbiased cell (one with residual samples); ties go to the cheapest.

    The biased pure-quadrature row only competes when it is the whole sweep.
    """
    eff = np.where(np.isnan(efficiency), -np.inf, efficiency)
    rows = [i for i, n in enumerate(residual_axis) if n > 0] or list(range(len(residual_axis)))
    sub = eff[rows]
    top = sub.max()
    candidates = [(rows[i], j) for i, j in np.argwhere(sub == top)]
    k = int(np.argmin([cost[i, j] for i, j in candidates]))
    return tuple(int(v) for v in candidates[k])


def write_sweep(result: SweepResult, prefix) -> list:
    """Write ``<prefix>_error.csv``, ``<prefix>_cost.csv`` and ``<prefix>_efficiency.csv``."""
    prefix = Path(prefix)
    if prefix.suffix == ".csv":
        prefix = prefix.with_suffix("")
    paths = []
    header = ["n_residual"] + [f"cv={c}" for c in result.cv_axis]
    for name, matrix in (("error", result.error), ("cost", result.cost), ("efficiency", result.efficiency)):
        path = prefix.with_name(f"{prefix.name}_{name}.csv")
        try:
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\r\n")
                writer.writerow(header)
                for n_res, row in zip(result.residual_axis, matrix):
                    writer.writerow([n_res] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        except OSError as exc:
            raise OSError(f"cannot write CSV {path}: {exc}") from exc
        paths.append(path)
    return paths


__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "Problem",
    "SweepResult",
    "default_checkpoints",
    "resolve_problem",
    "run_experiment",
    "run_streams",
    "sweep_allocation",
    "write_csv",
    "write_outputs",
    "write_sweep",
]
