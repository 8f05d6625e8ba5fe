"""Numerical checks of finite-difference rigidity and axes-to-grid propagation.

Latent maps are either an :class:`EncoderSpec` (shared kinds are evaluated as
their indexed embedding, which gives identical values) or any callable taking
an ``(n, d)`` array and returning a latent vector.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .architectures import EncoderSpec, encode_batch
from .constructions import AxisSet, BaseGrid

LatentMap = Union[EncoderSpec, Callable[[np.ndarray], np.ndarray]]

K_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CubeIncrement:
    base: np.ndarray
    increments: np.ndarray

    def __post_init__(self):
        base = np.atleast_2d(np.array(self.base, dtype=np.float64))
        increments = np.atleast_2d(np.array(self.increments, dtype=np.float64))
        if base.shape != increments.shape:
            raise ValueError(f"Base points {base.shape} and increments {increments.shape} differ in shape.")
        top = base + increments
        if np.any(base < -K_TOL) or np.any(base > 1 + K_TOL) or np.any(top < -K_TOL) or np.any(top > 1 + K_TOL):
            raise ValueError("Cube vertex a_i + eta_i y_i leaves [0, 1]^d.")
        base.setflags(write=False)
        increments.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "increments", increments)

    @property
    def k(self) -> int:
        return self.base.shape[0]

    @property
    def d(self) -> int:
        return self.base.shape[1]

    def vertices(self) -> list[tuple[int, np.ndarray]]:
        """``((-1)^{k - |eta|}, a + eta * y)`` for every ``eta`` in ``{0,1}^k``; the top vertex carries ``+1``."""
        out = []
        for eta in itertools.product((0, 1), repeat=self.k):
            mask = np.array(eta, dtype=np.float64)[:, None]
            out.append(((-1) ** (self.k - sum(eta)), self.base + mask * self.increments))
        return out


@dataclass
class RigidityReport:
    d: int
    n: int
    k: int
    M: int
    max_deviation: float
    tail_count: int
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AxesToGridReport:
    k: int
    axis_deviation: float
    grid_deviation: float
    worst_grid_tuple: tuple
    tolerance: float
    amplification: int
    precondition_ok: bool
    passed: bool

    def to_dict(self) -> dict:
        data = asdict(self)
        data["worst_grid_tuple"] = list(self.worst_grid_tuple)
        return data


def _latents(latent_map: LatentMap, configs: np.ndarray) -> np.ndarray:
    if isinstance(latent_map, EncoderSpec):
        return encode_batch(latent_map, configs)
    return np.stack([np.atleast_1d(np.asarray(latent_map(c), dtype=np.float64)) for c in configs])


def alternating_difference(latent_map: LatentMap, inc: CubeIncrement, tail) -> np.ndarray:
    """Signed sum of the latent map over the ``2^k`` cube vertices with a fixed tail."""
    tail = np.atleast_2d(np.asarray(tail, dtype=np.float64))
    if tail.shape[1] != inc.d:
        raise ValueError(f"Tail has point dimension {tail.shape[1]}, increments have {inc.d}")
    if isinstance(latent_map, EncoderSpec) and (inc.k != latent_map.k or inc.k + tail.shape[0] != latent_map.n):
        raise ValueError(
            f"Encoder expects k={latent_map.k} base points and {latent_map.n - latent_map.k} tail points, "
            f"got {inc.k} and {tail.shape[0]}"
        )
    signs, blocks = zip(*inc.vertices())
    configs = np.stack([np.vstack([block, tail]) for block in blocks])
    values = _latents(latent_map, configs)
    return np.asarray(signs, dtype=np.float64) @ values


def _max_pairwise(values: np.ndarray) -> float:
    diffs = values[:, None, :] - values[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).max())


def check_rigidity(latent_map: LatentMap, inc: CubeIncrement, tails: Sequence, tolerance: float = 1e-9) -> RigidityReport:
    """Max over tail pairs of the spread of :func:`alternating_difference`."""
    if len(tails) < 2:
        raise ValueError(f"check_rigidity needs at least two tails, got {len(tails)}")
    values = np.stack([alternating_difference(latent_map, inc, t) for t in tails])
    deviation = _max_pairwise(values)
    tail_points = np.atleast_2d(np.asarray(tails[0])).shape[0]
    return RigidityReport(
        d=inc.d,
        n=inc.k + tail_points,
        k=inc.k,
        M=values.shape[1],
        max_deviation=deviation,
        tail_count=len(tails),
        tolerance=tolerance,
        passed=deviation <= tolerance,
    )


def check_axes_to_grid(enc: EncoderSpec, grid: BaseGrid, axis: AxisSet, tail_u, tail_v, tolerance: float) -> AxesToGridReport:
    """Agreement of two tails on the axis set, propagated to all of ``G^k``.

    A violated precondition is reported with ``precondition_ok=False`` and
    never counts as a pass.
    """
    tail_u = np.atleast_2d(np.asarray(tail_u, dtype=np.float64))
    tail_v = np.atleast_2d(np.asarray(tail_v, dtype=np.float64))
    amplification = 2**grid.k

    def deviations(tuples):
        blocks = [grid.block(t) for t in tuples]
        upper = encode_batch(enc, np.stack([np.vstack([b, tail_u]) for b in blocks]))
        lower = encode_batch(enc, np.stack([np.vstack([b, tail_v]) for b in blocks]))
        return np.linalg.norm(upper - lower, axis=1)

    axis_dev = deviations(axis.tuples)
    grid_tuples = grid.all_tuples()
    grid_dev = deviations(grid_tuples)
    worst = int(np.argmax(grid_dev))

    axis_deviation = float(axis_dev.max())
    grid_deviation = float(grid_dev[worst])
    precondition_ok = axis_deviation <= tolerance
    return AxesToGridReport(
        k=grid.k,
        axis_deviation=axis_deviation,
        grid_deviation=grid_deviation,
        worst_grid_tuple=grid_tuples[worst],
        tolerance=tolerance,
        amplification=amplification,
        precondition_ok=precondition_ok,
        passed=precondition_ok and grid_deviation <= amplification * tolerance,
    )


def product_map(x) -> np.ndarray:
    """``x -> prod(x)``; depends on every tail point, so it is not rigid."""
    return np.array([float(np.prod(np.asarray(x, dtype=np.float64)))])


def random_increment(d: int, k: int, rng: np.random.Generator, min_step: float = 0.2) -> CubeIncrement:
    """Base points in ``[0, 1/2]^d`` with increments in ``[min_step, 1/2]^d``."""
    if not 0.0 <= min_step <= 0.5:
        raise ValueError(f"min_step must lie in [0, 1/2], got {min_step}")
    base = rng.uniform(0.0, 0.5, size=(k, d))
    increments = rng.uniform(min_step, 0.5, size=(k, d))
    return CubeIncrement(base, increments)


def random_tails(d: int, n: int, k: int, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.uniform(0.0, 1.0, size=(n - k, d)) for _ in range(count)]
