"""Adaptive piecewise-polynomial control variates for Monte Carlo integration."""

from .builder import CVBuilder, NonFiniteValueError, PiecewiseCV, build_cv, init_cv
from .estimator import BucketGrid, Estimate, estimate_alpha, estimate_buckets, estimate_full, run_statistics, sample_residual
from .highdim import ProjectionConfig, build_projected_cv, estimate_highdim, project_integrand
from .pfm import read_pfm, write_pfm
from .polycore import Box, NestedRuleConfig, eval_poly, fit_polynomial, integrate_poly
from .primaryspace import Mapping, MappingSet, PrimaryIntegrand, make_primary_integrand, mis_weights

__all__ = [
    "Box",
    "BucketGrid",
    "CVBuilder",
    "Estimate",
    "Mapping",
    "MappingSet",
    "NestedRuleConfig",
    "NonFiniteValueError",
    "PiecewiseCV",
    "PrimaryIntegrand",
    "ProjectionConfig",
    "build_cv",
    "build_projected_cv",
    "estimate_alpha",
    "estimate_buckets",
    "estimate_full",
    "estimate_highdim",
    "eval_poly",
    "fit_polynomial",
    "init_cv",
    "integrate_poly",
    "make_primary_integrand",
    "mis_weights",
    "project_integrand",
    "read_pfm",
    "run_statistics",
    "sample_residual",
    "write_pfm",
]
