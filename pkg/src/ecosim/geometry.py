"""Axis-aligned space, boundary handling and sphere geometry."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Space:
    dims: int
    lo: np.ndarray
    hi: np.ndarray
    boundary_mode: str = "wall"
    size: np.ndarray = field(init=False, repr=False, compare=False)

    @classmethod
    def from_bounds(cls, bounds, boundary_mode: str = "wall") -> "Space":
        b = np.asarray(bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] not in (2, 3):
            raise ValueError(f"bounds must be 2 or 3 (min, max) pairs, got shape {b.shape}")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("every axis needs min < max")
        if boundary_mode not in ("wall", "torus"):
            raise ValueError(f"unknown boundary mode {boundary_mode!r}")
        return cls(b.shape[0], b[:, 0].copy(), b[:, 1].copy(), boundary_mode)

    def __post_init__(self):
        object.__setattr__(self, "size", self.hi - self.lo)

    @property
    def surface(self) -> float:
        """Height of the surface plane (top of the last axis)."""
        return float(self.hi[-1])

    def depth(self, pos) -> np.ndarray | float:
        return self.surface - np.asarray(pos)[..., -1]

    def displacement(self, origin, target) -> np.ndarray:
        """Vector from origin to target; minimum image under torus."""
        d = np.asarray(target) - np.asarray(origin)
        if self.boundary_mode == "torus":
            size = self.size
            d = d - size * np.round(d / size)
        return d

    def confine(self, pos) -> np.ndarray:
        pos = np.asarray(pos, dtype=float)
        if self.boundary_mode == "torus":
            return self.lo + np.mod(pos - self.lo, self.size)
        return np.clip(pos, self.lo, self.hi)

    def contains(self, pos, tol: float = 1e-9) -> bool:
        pos = np.asarray(pos)
        return bool(np.all(pos >= self.lo - tol) and np.all(pos <= self.hi + tol))

    def touches_boundary(self, pos, radius) -> np.ndarray | bool:
        if self.boundary_mode == "torus":
            return np.zeros(np.shape(pos)[:-1], dtype=bool) if np.ndim(pos) > 1 else False
        pos = np.asarray(pos)
        r = np.asarray(radius)[..., None] if np.ndim(pos) > 1 else radius
        near = (pos - self.lo <= r) | (self.hi - pos <= r)
        return near.any(axis=-1)


def rotate2(vec, angle):
    """Rotate 2-D vector(s) counter-clockwise; angle broadcasts against leading dims."""
    vec = np.asarray(vec, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    x, y = vec[..., 0], vec[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def ray_sphere(disp, direction, radius):
    """Entry distance of a ray into a sphere, or inf on a miss.

    ``disp`` is the vector from the ray origin to the sphere center. An
    origin inside the sphere reports distance 0. A tangent ray (discriminant
    exactly 0) counts as a hit.
    """
    disp = np.asarray(disp, dtype=float)
    direction = np.asarray(direction, dtype=float)
    b = np.sum(disp * direction, axis=-1)
    c = np.sum(disp * disp, axis=-1) - np.asarray(radius) ** 2
    disc = b * b - c
    inside = c <= 0.0
    hit = inside | ((disc >= 0.0) & (b >= 0.0))
    t = np.where(inside, 0.0, b - np.sqrt(np.maximum(disc, 0.0)))
    return np.where(hit, t, np.inf)


def random_unit(rng: np.random.Generator, dims: int) -> np.ndarray:
    if dims == 2:
        a = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([np.cos(a), np.sin(a)])
    v = rng.normal(size=dims)
    return v / np.linalg.norm(v)
