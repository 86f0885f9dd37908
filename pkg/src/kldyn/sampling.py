"""Deterministic sampling of balls and spheres.

Every sampler is driven by a Philox (counter-based) generator built from a
single integer seed, so sweeps are reproducible bit for bit.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

DEFAULT_SEED = 20240611


def make_rng(seed: int | None = None) -> np.random.Generator:
    """Counter-based generator for ``seed`` (``DEFAULT_SEED`` when None)."""
    return np.random.Generator(np.random.Philox(DEFAULT_SEED if seed is None else int(seed)))


def halton(n: int, dim: int, seed: int | None = None) -> np.ndarray:
    """``n`` scrambled Halton points in the unit cube ``[0, 1)^dim``."""
    if n <= 0:
        return np.empty((0, dim))
    engine = qmc.Halton(d=dim, scramble=True, seed=make_rng(seed))
    return engine.random(n)


def _cube_to_ball(x: np.ndarray, dim: int) -> np.ndarray:
    # first `dim` coordinates give a Gaussian direction, the last one the radius
    z = ndtri(np.clip(x[:, :dim], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radius = x[:, dim:dim + 1] ** (1.0 / dim)
    return z / norms * radius


def ball_points(n: int, dim: int, radius: float = 1.0, center=None,
                seed: int | None = None) -> np.ndarray:
    """Low-discrepancy points, uniformly spread in the closed ball."""
    pts = _cube_to_ball(halton(n, dim + 1, seed), dim) * radius
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def sphere_directions(n: int, dim: int, seed: int | None = None) -> np.ndarray:
    """Deterministic unit directions. In 1D these alternate between +1 and -1."""
    if dim == 1:
        return np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(n)])
    x = halton(n, dim, seed)
    z = ndtri(np.clip(x, 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    # seed the set with the coordinate axes so aligned minimisers are not missed
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    return np.vstack([axes, z])[:n]


def axis_extremes(dim: int, radius: float, center=None) -> np.ndarray:
    """Centre of the ball plus the 2*dim points ``center +/- radius * e_i``."""
    pts = np.vstack([np.zeros(dim), radius * np.eye(dim), -radius * np.eye(dim)])
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def radial_ladder(dim: int, radius: float, center=None, n_dirs: int = 8,
                  decades: int = 14, per_decade: int = 2,
                  seed: int | None = None) -> np.ndarray:
    """Points on rays approaching the centre geometrically.

    Used wherever the quantity of interest degenerates only in the limit
    ``u -> center``; plain space-filling samples never get close enough.
    """
    dirs = sphere_directions(n_dirs, dim, seed)
    scales = np.logspace(0, -decades, decades * per_decade + 1)
    pts = (scales[:, None, None] * radius * dirs[None, :, :]).reshape(-1, dim)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return pts


def phase_ball_points(n: int, dim: int, radius: float = 1.0, center=None,
                      seed: int | None = None):
    """Pairs ``(u, v)`` with ``u`` in ``B(center, radius)`` and ``v`` in ``B(0, radius)``."""
    x = halton(n, 2 * dim + 2, seed)
    u = _cube_to_ball(x[:, :dim + 1], dim) * radius
    v = _cube_to_ball(x[:, dim + 1:], dim) * radius
    if center is not None:
        u = u + np.asarray(center, dtype=float)
    return u, v
