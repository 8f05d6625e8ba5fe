"""Sphere machinery for the antipodal collision argument.

The sphere ``S^{b-1}`` is covered by ``b + 1`` closed regions, one per vertex of
a regular simplex centred at the origin. A direction belongs to region ``r``
when its inner product with vertex ``v_r`` is largest; no region contains an
antipodal pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SimplexCover:
    b: int
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64)
        if vertices.shape != (self.b + 1, self.b):
            raise ValueError(f"SimplexCover for b={self.b} needs shape {(self.b + 1, self.b)}, got {vertices.shape}")
        vertices.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)

    @property
    def region_count(self) -> int:
        return self.b + 1

    def gram(self) -> np.ndarray:
        return self.vertices @ self.vertices.T


@dataclass(frozen=True, eq=False)
class SphereDirection:
    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64).reshape(-1)
        if coords.size == 0:
            raise ValueError("SphereDirection needs at least one coordinate.")
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"SphereDirection must have unit norm, got {norm!r}")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def b(self) -> int:
        return self.coords.size

    @classmethod
    def normalized(cls, vector) -> "SphereDirection":
        v = np.asarray(vector, dtype=np.float64).reshape(-1)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError("Cannot normalize the zero vector.")
        return cls(v / norm)

    def __neg__(self) -> "SphereDirection":
        return SphereDirection(-self.coords)


@dataclass(frozen=True)
class DeltaMap:
    """``u -> c + sign * epsilon * u`` into the tail block ``K^{n-k}``."""

    d: int
    n: int
    k: int
    epsilon: float = 0.25

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if not 1 <= self.k < self.n:
            raise ValueError(f"Need 1 <= k < n, got k={self.k}, n={self.n}")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")

    @property
    def tail_points(self) -> int:
        return self.n - self.k

    @property
    def sphere_dim(self) -> int:
        return self.d * (self.n - self.k)

    @property
    def center(self) -> np.ndarray:
        return np.full((self.tail_points, self.d), 0.5)


def regular_simplex(b: int) -> SimplexCover:
    """Vertices of the regular simplex inscribed in ``S^{b-1}``.

    Built one dimension at a time: vertex 1 is the last basis vector and the
    remaining ``b`` vertices are the reflected ``(b-1)``-simplex scaled by
    ``sqrt(1 - 1/b^2)`` and lowered to height ``-1/b``. For ``b = 2`` this puts
    the vertices at 90, 210 and 330 degrees.
    """
    if int(b) != b or b < 1:
        raise ValueError(f"b must be a positive integer, got {b}")
    b = int(b)

    vertices = np.array([[1.0], [-1.0]])
    for dim in range(2, b + 1):
        top = np.zeros((1, dim))
        top[0, -1] = 1.0
        lower = np.hstack([-np.sqrt(1.0 - 1.0 / dim**2) * vertices, np.full((dim, 1), -1.0 / dim)])
        vertices = np.vstack([top, lower])
    return SimplexCover(b, vertices)


def _coords(cover: SimplexCover, u) -> np.ndarray:
    coords = u.coords if isinstance(u, SphereDirection) else np.asarray(u, dtype=np.float64)
    if coords.shape[-1] != cover.b:
        raise ValueError(f"Direction has dimension {coords.shape[-1]}, cover lives in R^{cover.b}")
    return coords


def region_scores(cover: SimplexCover, u) -> np.ndarray:
    return _coords(cover, u) @ cover.vertices.T


def assign_region(cover: SimplexCover, u) -> int:
    """Smallest 1-based region index maximising ``<u, v_r>``."""
    return int(np.argmax(region_scores(cover, u))) + 1


def assign_regions(cover: SimplexCover, directions) -> np.ndarray:
    """Vectorised :func:`assign_region` over the rows of ``directions``."""
    return np.argmax(region_scores(cover, np.atleast_2d(directions)), axis=1) + 1


def region_members(cover: SimplexCover, u) -> set[int]:
    """Every region whose closed set contains ``u`` (ties included)."""
    scores = region_scores(cover, u)
    return {int(r) + 1 for r in np.flatnonzero(scores >= scores.max())}


def antipodal_free_violation(cover: SimplexCover, u) -> bool:
    """True iff ``u`` and ``-u`` lie in a common closed region."""
    return bool(region_members(cover, u) & region_members(cover, -_coords(cover, u)))


def antipodal_violations(cover: SimplexCover, directions) -> np.ndarray:
    """Vectorised :func:`antipodal_free_violation`; one boolean per row."""
    scores = region_scores(cover, np.atleast_2d(directions))
    in_plus = scores >= scores.max(axis=1, keepdims=True)
    in_minus = -scores >= (-scores).max(axis=1, keepdims=True)
    return np.any(in_plus & in_minus, axis=1)


def delta_embed(delta: DeltaMap, u, sign: int = 1) -> np.ndarray:
    """Tail block ``c + sign * epsilon * u`` as an ``(n - k, d)`` array."""
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    coords = u.coords if isinstance(u, SphereDirection) else np.asarray(u, dtype=np.float64).reshape(-1)
    if coords.size != delta.sphere_dim:
        raise ValueError(f"Direction has dimension {coords.size}, expected d(n-k) = {delta.sphere_dim}")
    return delta.center + (sign * delta.epsilon) * coords.reshape(delta.tail_points, delta.d)


def sample_sphere_array(b: int, count: int, seed) -> np.ndarray:
    if b < 1 or count < 1:
        raise ValueError(f"Need b >= 1 and count >= 1, got b={b}, count={count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gaussians = rng.standard_normal((count, b))
    norms = np.linalg.norm(gaussians, axis=1, keepdims=True)
    # A zero Gaussian draw has probability zero; redraw rather than divide by it.
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        gaussians[bad] = rng.standard_normal((int(bad.sum()), b))
        norms = np.linalg.norm(gaussians, axis=1, keepdims=True)
    return gaussians / norms


def sample_sphere(b: int, count: int, seed) -> list[SphereDirection]:
    return [SphereDirection(row) for row in sample_sphere_array(b, count, seed)]
