"""Combinatorial scaffolding behind the obstruction sets.

Points of ``K^n`` are ``(n, d)`` arrays. The first ``k`` rows form the base
block and the remaining ``n - k`` rows the tail block.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .bounds import axis_cardinality, grid_size
from .geometry import DeltaMap, SimplexCover, assign_regions, delta_embed, regular_simplex, sample_sphere_array


@dataclass(frozen=True, eq=False)
class BaseGrid:
    d: int
    n: int
    k: int
    size: int
    points: np.ndarray

    @property
    def label_count(self) -> int:
        return self.d * (self.n - self.k) + 1

    def block(self, index_tuple) -> np.ndarray:
        """Base block ``(k, d)`` for a tuple of grid-point indices."""
        return self.points[list(index_tuple)]

    def all_tuples(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.size), repeat=self.k))


@dataclass(frozen=True, eq=False)
class AxisSet:
    parent: BaseGrid
    tuples: tuple

    def __len__(self):
        return len(self.tuples)

    def blocks(self) -> list[np.ndarray]:
        return [self.parent.block(t) for t in self.tuples]


@dataclass(frozen=True, eq=False)
class LabelInjection:
    parent: BaseGrid
    table: tuple

    @property
    def domain_size(self) -> int:
        return len(self.table)

    def index_tuple(self, r: int) -> tuple[int, ...]:
        if not 1 <= r <= self.domain_size:
            raise ValueError(f"Region label {r} outside 1..{self.domain_size}")
        return self.table[r - 1]

    def __call__(self, r: int) -> np.ndarray:
        return self.parent.block(self.index_tuple(r))


@dataclass(frozen=True, eq=False)
class LabeledCubes:
    """Disjoint cubes ``C_j = offset_j + side * [0,1]^d`` with maps ``T_j``."""

    d: int
    n: int
    side: float
    offsets: np.ndarray

    def apply(self, j: int, t) -> np.ndarray:
        return self.offsets[j] + self.side * np.asarray(t, dtype=np.float64)

    def embed(self, config) -> np.ndarray:
        """``(t_1, ..., t_n) -> (T_1 t_1, ..., T_n t_n)`` for an ``(n, d)`` array."""
        t = np.asarray(config, dtype=np.float64)
        if t.shape != (self.n, self.d):
            raise ValueError(f"Labeled copy expects shape {(self.n, self.d)}, got {t.shape}")
        return self.offsets + self.side * t

    def min_separation(self) -> float:
        best = np.inf
        for i in range(self.n):
            for j in range(i + 1, self.n):
                low_i, low_j = self.offsets[i], self.offsets[j]
                gaps = np.maximum(low_j - (low_i + self.side), low_i - (low_j + self.side))
                best = min(best, float(np.max(gaps)))
        return best


def build_grid(d: int, n: int, k: int) -> BaseGrid:
    s = grid_size(d, n, k)
    if s == 1:
        points = np.zeros((1, d))
    else:
        points = np.outer(np.arange(s) / (s - 1), np.ones(d))
    points.setflags(write=False)
    return BaseGrid(d, n, k, s, points)


def build_axis_set(grid: BaseGrid) -> AxisSet:
    tuples = tuple(t for t in grid.all_tuples() if 0 in t)
    if len(tuples) != axis_cardinality(grid.size, grid.k):
        raise AssertionError(f"Axis enumeration found {len(tuples)} tuples, formula gives {axis_cardinality(grid.size, grid.k)}")
    return AxisSet(grid, tuples)


def build_injection(grid: BaseGrid) -> LabelInjection:
    """``chi(r)`` is the r-th grid tuple in lexicographic order of indices."""
    table = tuple(grid.all_tuples()[: grid.label_count])
    return LabelInjection(grid, table)


def build_labeled_cubes(d: int, n: int) -> LabeledCubes:
    if d < 1 or n < 2:
        raise ValueError(f"Need d >= 1 and n >= 2, got d={d}, n={n}")
    side = 1.0 / (2 * n)
    offsets = np.full((n, d), 1.0 / (4 * n))
    offsets[:, 0] = np.arange(n) / n + 1.0 / (4 * n)
    offsets.setflags(write=False)
    return LabeledCubes(d, n, side, offsets)


def min_cross_distance(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    best = np.inf
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        dist = np.sqrt(((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
        best = min(best, float(dist.min()))
    return best


@dataclass(frozen=True, eq=False)
class ObstructionInstance:
    d: int
    n: int
    k: int
    grid: BaseGrid
    axis: AxisSet
    chi: LabelInjection
    cover: SimplexCover
    delta: DeltaMap
    samples_per_region: int
    seed: int
    directions: np.ndarray
    regions: np.ndarray
    e_plus: np.ndarray
    e_minus: np.ndarray

    @property
    def epsilon(self) -> float:
        return self.delta.epsilon

    @property
    def sphere_dim(self) -> int:
        return self.delta.sphere_dim

    def point(self, r: int, u, sign: int = 1) -> np.ndarray:
        """``(chi(r), delta(sign * u))`` as an ``(n, d)`` array."""
        return np.vstack([self.chi(r), delta_embed(self.delta, u, sign)])

    def with_extra_points(self, plus=None, minus=None) -> "ObstructionInstance":
        """Copy whose sampled sets also contain the given members of ``E+``/``E-``."""
        e_plus = self.e_plus if plus is None else np.concatenate([self.e_plus, np.asarray(plus)[None]])
        e_minus = self.e_minus if minus is None else np.concatenate([self.e_minus, np.asarray(minus)[None]])
        return ObstructionInstance(
            self.d, self.n, self.k, self.grid, self.axis, self.chi, self.cover, self.delta,
            self.samples_per_region, self.seed, self.directions, self.regions, e_plus, e_minus,
        )

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "k": self.k,
            "epsilon": self.epsilon,
            "samples_per_region": self.samples_per_region,
            "seed": self.seed,
            "grid_points": self.grid.points.tolist(),
            "chi": [list(t) for t in self.chi.table],
            "directions": self.directions.tolist(),
            "regions": self.regions.tolist(),
            "e_plus": self.e_plus.tolist(),
            "e_minus": self.e_minus.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObstructionInstance":
        inst = assemble_obstruction(
            int(data["d"]), int(data["n"]), int(data["k"]), float(data["epsilon"]),
            int(data["samples_per_region"]), int(data["seed"]),
            np.asarray(data["directions"], dtype=np.float64),
        )
        if inst.regions.tolist() != list(data["regions"]):
            raise ValueError("Stored region labels do not match the stored directions.")
        if not np.array_equal(inst.grid.points, np.asarray(data["grid_points"], dtype=np.float64)):
            raise ValueError("Stored grid points do not match the grid construction.")
        for name, rebuilt in (("e_plus", inst.e_plus), ("e_minus", inst.e_minus)):
            stored = data.get(name)
            if stored is not None and not np.allclose(np.asarray(stored), rebuilt, rtol=0.0, atol=1e-12):
                raise ValueError(f"Stored {name} points do not match the stored directions.")
        return inst

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def assemble_obstruction(d, n, k, epsilon, samples_per_region, seed, directions) -> ObstructionInstance:
    grid = build_grid(d, n, k)
    axis = build_axis_set(grid)
    chi = build_injection(grid)
    delta = DeltaMap(d, n, k, epsilon)
    cover = regular_simplex(delta.sphere_dim)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, delta.sphere_dim)
    regions = assign_regions(cover, directions)

    e_plus = np.stack([np.vstack([chi(int(r)), delta_embed(delta, u, 1)]) for u, r in zip(directions, regions)])
    e_minus = np.stack([np.vstack([chi(int(r)), delta_embed(delta, u, -1)]) for u, r in zip(directions, regions)])

    separation = min_cross_distance(e_plus, e_minus)
    if not separation > 0.0:
        raise RuntimeError(f"Sampled E+ and E- are not disjoint (min distance {separation}).")

    for array in (directions, regions, e_plus, e_minus):
        array.setflags(write=False)
    return ObstructionInstance(
        d, n, k, grid, axis, chi, cover, delta, samples_per_region, seed, directions, regions, e_plus, e_minus
    )


def sample_obstruction(
    d: int,
    n: int,
    k: int,
    epsilon: float = 0.25,
    samples_per_region: int = 64,
    seed: int = 0,
    max_draws: int = 1_000_000,
) -> ObstructionInstance:
    """Rejection-sample ``samples_per_region`` sphere directions per region.

    Directions are drawn in batches from the uniform sphere distribution and
    kept while their region still needs samples.
    """
    if samples_per_region < 1:
        raise ValueError(f"samples_per_region must be positive, got {samples_per_region}")
    delta = DeltaMap(d, n, k, epsilon)
    cover = regular_simplex(delta.sphere_dim)
    rng = np.random.default_rng(seed)

    per_region = {r: [] for r in range(1, cover.region_count + 1)}
    drawn = 0
    batch = max(256, 2 * samples_per_region * cover.region_count)
    while any(len(v) < samples_per_region for v in per_region.values()):
        if drawn >= max_draws:
            short = sorted(r for r, v in per_region.items() if len(v) < samples_per_region)
            raise RuntimeError(f"Rejection sampling exhausted {max_draws} draws; regions still short: {short}")
        candidates = sample_sphere_array(cover.b, batch, rng)
        drawn += batch
        for u, r in zip(candidates, assign_regions(cover, candidates)):
            bucket = per_region[int(r)]
            if len(bucket) < samples_per_region:
                bucket.append(u)

    directions = np.vstack([np.asarray(per_region[r]) for r in sorted(per_region)])
    return assemble_obstruction(d, n, k, epsilon, samples_per_region, seed, directions)


def _set_distances(points: np.ndarray, reference: np.ndarray) -> np.ndarray:
    flat_points = points.reshape(points.shape[0], -1)
    flat_ref = reference.reshape(reference.shape[0], -1)
    out = np.empty(flat_points.shape[0])
    for start in range(0, flat_points.shape[0], 1024):
        block = flat_points[start : start + 1024]
        dist = np.sqrt(((block[:, None, :] - flat_ref[None, :, :]) ** 2).sum(axis=2))
        out[start : start + 1024] = dist.min(axis=1)
    return out


def target_g_batch(inst: ObstructionInstance, points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64).reshape(-1, inst.n, inst.d)
    to_plus = _set_distances(x, inst.e_plus)
    to_minus = _set_distances(x, inst.e_minus)
    return to_minus / (to_plus + to_minus)


def target_g(inst: ObstructionInstance, x) -> float:
    """``dist(x, E-) / (dist(x, E+) + dist(x, E-))`` against the sampled sets."""
    point = np.asarray(x, dtype=np.float64)
    if point.shape != (inst.n, inst.d):
        raise ValueError(f"target_g expects shape {(inst.n, inst.d)}, got {point.shape}")
    return float(target_g_batch(inst, point[None])[0])
