"""Single scattering from a point light in a homogeneous, isotropic medium."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..primaryspace import Mapping, equiangular_mapping, uniform_interval_mapping
from .transmittance import simpson

ISOTROPIC_PHASE = 1.0 / (4.0 * math.pi)


@dataclass(frozen=True)
class PointLightScene:
    light: tuple = (0.5, 0.15, 0.0)
    power: float = 10.0
    sigma_t: float = 0.8
    sigma_s: float = 0.5
    origin: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (1.0, 0.0, 0.0)
    length: float = 1.0


def single_scattering_integrand(scene: PointLightScene, mapping: str = "equiangular"):
    """Return ``(f, mapping)`` where ``f`` maps distances ``(n, 1)`` to in-scattered radiance.

    ``f(s) = exp(-sigma_t s) * sigma_s * power / r^2 * exp(-sigma_t r) * phase``
    with ``r`` the distance from the scattering point to the light.
    """
    light = np.asarray(scene.light, dtype=float)
    origin = np.asarray(scene.origin, dtype=float)
    direction = np.asarray(scene.direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    if mapping == "equiangular":
        warp = equiangular_mapping(light, origin, direction, scene.length)
    elif mapping == "uniform":
        to_light = light - origin
        if np.linalg.norm(to_light - np.dot(to_light, direction) * direction) <= 1e-12:
            raise ValueError("light lies on the ray")
        warp = uniform_interval_mapping(scene.length)
    else:
        raise ValueError(f"unknown mapping {mapping!r}")

    def f(x):
        s = np.atleast_2d(x)[:, 0]
        points = origin[None, :] + s[:, None] * direction[None, :]
        r2 = np.sum((points - light) ** 2, axis=1)
        r = np.sqrt(r2)
        return np.exp(-scene.sigma_t * s) * scene.sigma_s * scene.power / r2 * np.exp(-scene.sigma_t * r) * ISOTROPIC_PHASE

    return f, warp


def single_scattering_reference(scene: PointLightScene, n: int = 10_000_000) -> float:
    """Dense composite Simpson over ``[0, length]``."""
    f, _ = single_scattering_integrand(scene, "uniform")
    return simpson(lambda s: f(s[:, None]), 0.0, scene.length, n)


def primary_mapping_names() -> tuple:
    return ("equiangular", "uniform")


__all__ = ["PointLightScene", "single_scattering_integrand", "single_scattering_reference", "Mapping"]
