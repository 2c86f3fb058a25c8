"""Sampling clouds of any size, meshing through the icosphere, and both
interpolation modes (between shapes in latent space, and between prior
points inside one shape)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from hypercloud.geometry import PointCloud, TriMesh, icosphere, sample_ball, sample_sphere
from hypercloud.model import HyperModel, encode, hyper_decode, target_forward

log = logging.getLogger(__name__)

# Slack for rounding when checking that prior points lie in the closed unit ball.
_BALL_TOL = 1e-12


def sample_latent(latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(latent_dim)


def generate_cloud(
    model: HyperModel, z, n: int, rng: np.random.Generator, sphere_radius: float | None = None,
) -> PointCloud:
    """Push n prior samples through T_theta with theta = H(z).

    The prior is the unit ball, or the sphere of `sphere_radius` when given.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    theta = hyper_decode(model, z)
    prior = sample_ball(n, rng) if sphere_radius is None else sample_sphere(n, sphere_radius, rng)
    return target_forward(model.arch, theta, prior)


def generate_mesh(model: HyperModel, z, level: int, radius: float = 1.0) -> TriMesh:
    """Move the icosphere vertices through T_theta; connectivity is kept as is."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    sphere = icosphere(level)
    theta = hyper_decode(model, z)
    return TriMesh(target_forward(model.arch, theta, sphere.vertices * radius), sphere.triangles)


@dataclass
class InterpolationStep:
    t: float
    z: np.ndarray
    cloud: PointCloud
    mesh: TriMesh


def interpolate_latent(
    model: HyperModel, cloud_a: PointCloud, cloud_b: PointCloud, steps: int,
    n: int = 2048, level: int = 3, seed: int = 0, sphere_radius: float | None = None,
) -> list[InterpolationStep]:
    """z_t = (1 - t) mu_A + t mu_B on an even grid of t in [0, 1].

    With `sphere_radius`, clouds are sampled on that sphere and meshes use it
    as the icosphere radius.

    Every step samples its cloud from a fresh generator seeded with `seed`,
    so step t=0 equals `generate_cloud(model, mu_A, n, default_rng(seed))`.
    """
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    mu_a = encode(model, cloud_a).mu
    mu_b = encode(model, cloud_b).mu
    out = []
    for k in range(steps):
        t = k / (steps - 1)
        z = (1.0 - t) * mu_a + t * mu_b
        cloud = generate_cloud(model, z, n, np.random.default_rng(seed), sphere_radius=sphere_radius)
        mesh = generate_mesh(model, z, level, radius=1.0 if sphere_radius is None else sphere_radius)
        out.append(InterpolationStep(t, z, cloud, mesh))
    return out


def interpolate_surface(model: HyperModel, cloud: PointCloud, pA, pB, steps: int) -> np.ndarray:
    """T_theta((1 - t) pA + t pB) for the shape encoded from `cloud`.

    Returns a (steps, 3) array; the segment stays in the ball by convexity.
    """
    pA = np.asarray(pA, dtype=np.float64)
    pB = np.asarray(pB, dtype=np.float64)
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    for name, p in (("pA", pA), ("pB", pB)):
        if p.shape != (3,):
            raise ValueError(f"{name} must be a 3-vector, got shape {p.shape}")
        if np.linalg.norm(p) > 1.0 + _BALL_TOL:
            raise ValueError(f"{name} = {p.tolist()} lies outside the unit ball")

    t = np.linspace(0.0, 1.0, steps)[:, None]
    path = pA + t * (pB - pA)
    path[-1] = pB

    theta = hyper_decode(model, encode(model, cloud).mu)
    return target_forward(model.arch, theta, path)
