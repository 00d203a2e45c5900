"""Particle containers and initial-distribution samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

VIRTUAL = "virtual"
REAL = "real"


@dataclass
class ParticleEnsemble:
    """An ordered set of ``m`` particles in ``R^d`` with per-particle role tags.

    ``data`` is an ``(m, d)`` float64 array.  ``roles`` defaults to all-real.
    """

    data: np.ndarray
    roles: tuple = None
    step_index: int = 0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"particle data must be a 2-d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("particle data contains non-finite entries")
        self.data = arr
        if self.roles is None:
            self.roles = (REAL,) * arr.shape[0]
        else:
            self.roles = tuple(self.roles)
        if len(self.roles) != arr.shape[0]:
            raise ValueError("one role tag is required per particle")
        bad = set(self.roles) - {VIRTUAL, REAL}
        if bad:
            raise ValueError(f"unknown role tags {sorted(bad)}")

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.m

    def real(self) -> np.ndarray:
        mask = np.array([r == REAL for r in self.roles], dtype=bool)
        return self.data[mask]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.data, self.roles, self.step_index)


def ball_radius(d: int, L: float) -> float:
    """Initialization radius ``sqrt(d / L)``."""
    if L <= 0:
        raise ValueError("smoothness constant L must be positive")
    return math.sqrt(d / L)


def sample_uniform_ball(d: int, L: float, n: int, rng) -> ParticleEnsemble:
    """Draw ``n`` i.i.d. points uniformly from the ball of radius ``sqrt(d / L)``.

    Directions are normalized Gaussians and radii are ``R * U ** (1 / d)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    R = ball_radius(d, L)
    z = rng.standard_normal((n, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; guard anyway
    norms[norms == 0] = 1.0
    radii = R * rng.random(n) ** (1.0 / d)
    return ParticleEnsemble(z / norms * radii[:, None])
