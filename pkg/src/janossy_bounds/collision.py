"""Antipodal latent collisions and the certificates built from them.

The Borsuk-Ulam map sends a sphere direction ``u`` to the concatenated latent
codes ``(encode(x_b, delta(u)))_{x_b in A}``. Whenever ``M |A| < d(n-k)`` some
``u`` satisfies ``F(u) = F(-u)``; :func:`find_collision` looks for one by
projected gradient descent and :func:`linear_collision_oracle` solves for one
exactly when every member network is affine.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .architectures import (
    EncoderSpec,
    Model,
    as_indexed,
    encode,
    encode_batch,
    encoder_jacobian,
    model_eval,
    restrict_to_labeled_copy,
)
from .config import env_or_config, require_float, require_int, to_bool
from .constructions import LabeledCubes, ObstructionInstance, build_labeled_cubes, target_g
from .geometry import assign_region, delta_embed
from .numerics import Mlp, mlp_forward, mlp_input_jacobian, nullspace, require_finite
from .rigidity import check_axes_to_grid

ARMIJO = 1e-4
MAX_STEP_FACTOR = 1e4
REPLAY_TOL = 1e-12


@dataclass
class SearchConfig:
    restarts: int = 100
    max_iterations: int = 500
    step_size: float = 0.5
    tolerance: float = 1e-10
    min_step: float = 1e-14
    axis_floor: float = 1e-12
    step_growth: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError(f"restarts and max_iterations must be positive, got {self.restarts}, {self.max_iterations}")
        if not (self.step_size > 0 and self.tolerance > 0 and self.min_step > 0):
            raise ValueError("step_size, tolerance and min_step must be positive.")

    @classmethod
    def from_config(cls, **overrides) -> "SearchConfig":
        values = {
            "restarts": require_int(env_or_config("COLLISION_RESTARTS", "collision.restarts", 100, int), "collision.restarts"),
            "max_iterations": require_int(
                env_or_config("COLLISION_MAX_ITERATIONS", "collision.max_iterations", 500, int), "collision.max_iterations"
            ),
            "step_size": require_float(env_or_config("COLLISION_STEP_SIZE", "collision.step_size", 0.5, float), "collision.step_size"),
            "tolerance": require_float(env_or_config("COLLISION_TOLERANCE", "collision.tolerance", 1e-10, float), "collision.tolerance"),
            "min_step": require_float(env_or_config("COLLISION_MIN_STEP", "collision.min_step", 1e-14, float), "collision.min_step"),
            "axis_floor": require_float(env_or_config("COLLISION_AXIS_FLOOR", "collision.axis_floor", 1e-12, float), "collision.axis_floor"),
            "step_growth": to_bool(env_or_config("COLLISION_STEP_GROWTH", "collision.step_growth", True)),
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(eq=False)
class BorsukUlamMap:
    """``F(u) = (encode(x_b, delta(u)))_{x_b in A}`` in lexicographic order of ``A``."""

    encoder: EncoderSpec
    instance: ObstructionInstance
    source_fingerprint: str = ""
    axis_blocks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        enc, inst = self.encoder, self.instance
        if (enc.d, enc.n, enc.k) != (inst.d, inst.n, inst.k):
            raise ValueError(f"Encoder dims {(enc.d, enc.n, enc.k)} do not match instance {(inst.d, inst.n, inst.k)}")
        if not self.source_fingerprint:
            self.source_fingerprint = enc.fingerprint()
        self.encoder = as_indexed(enc)
        self.axis_blocks = np.stack(inst.axis.blocks())

    @property
    def sphere_dim(self) -> int:
        return self.instance.sphere_dim

    @property
    def output_dim(self) -> int:
        return self.encoder.latent_dim * len(self.instance.axis)

    @property
    def guaranteed(self) -> bool:
        return self.output_dim < self.sphere_dim

    def configs(self, v) -> np.ndarray:
        tail = delta_embed(self.instance.delta, v, 1)
        return np.stack([np.vstack([block, tail]) for block in self.axis_blocks])

    def evaluate(self, v) -> np.ndarray:
        return require_finite(encode_batch(self.encoder, self.configs(v)).reshape(-1), "Borsuk-Ulam map")

    def jacobian(self, v) -> np.ndarray:
        k, eps = self.instance.k, self.instance.epsilon
        rows = [encoder_jacobian(self.encoder, c)[:, k:, :].reshape(self.encoder.latent_dim, -1) for c in self.configs(v)]
        return eps * np.vstack(rows)


@dataclass(eq=False)
class FixedFeatureMap:
    """``u -> encode(phi_L, c + epsilon u)`` on the labeled copy, ``u`` in ``S^{nd-1}``."""

    shared: EncoderSpec
    cubes: LabeledCubes
    epsilon: float = 0.25
    restricted: EncoderSpec = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        self.restricted = restrict_to_labeled_copy(self.shared, self.cubes)

    @property
    def sphere_dim(self) -> int:
        return self.shared.n * self.shared.d

    @property
    def output_dim(self) -> int:
        return self.shared.latent_dim

    def ordered_point(self, v) -> np.ndarray:
        return 0.5 + self.epsilon * np.asarray(v, dtype=np.float64).reshape(self.shared.n, self.shared.d)

    def evaluate(self, v) -> np.ndarray:
        return require_finite(encode(self.restricted, self.ordered_point(v)), "fixed-feature map")

    def jacobian(self, v) -> np.ndarray:
        jac = encoder_jacobian(self.restricted, self.ordered_point(v))
        return self.epsilon * jac.reshape(self.shared.latent_dim, -1)


SphereProblem = Union[BorsukUlamMap, FixedFeatureMap]


def bu_map_eval(bu_map: BorsukUlamMap, u) -> np.ndarray:
    return bu_map.evaluate(_direction(bu_map, u))


def bu_map_jacobian(bu_map: BorsukUlamMap, u) -> np.ndarray:
    """``dF/du`` at ``u``, shape ``(M |A|, d(n-k))``."""
    return bu_map.jacobian(_direction(bu_map, u))


def _direction(problem: SphereProblem, u) -> np.ndarray:
    coords = getattr(u, "coords", u)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1)
    if coords.size != problem.sphere_dim:
        raise ValueError(f"Direction has dimension {coords.size}, expected {problem.sphere_dim}")
    return coords


def _difference(problem: SphereProblem, u: np.ndarray) -> np.ndarray:
    return problem.evaluate(u) - problem.evaluate(-u)


def antipodal_residual(problem: SphereProblem, u) -> float:
    """``||F(u) - F(-u)||^2``."""
    diff = _difference(problem, _direction(problem, u))
    return float(diff @ diff)


def _residual_gradient(problem: SphereProblem, u: np.ndarray) -> tuple[float, np.ndarray]:
    diff = _difference(problem, u)
    grad = 2.0 * (problem.jacobian(u) + problem.jacobian(-u)).T @ diff
    tangent = grad - (grad @ u) * u
    return float(diff @ diff), require_finite(tangent, "residual gradient")


def next_trial_step(cfg: SearchConfig, accepted: float) -> float:
    """First trial step of the next line search.

    Without ``step_growth`` every search restarts from ``cfg.step_size``. With it
    the accepted step doubles, capped at ``1e4 * cfg.step_size``.
    """
    if not cfg.step_growth:
        return cfg.step_size
    return min(2.0 * accepted, MAX_STEP_FACTOR * cfg.step_size)


def _descend(problem: SphereProblem, start: np.ndarray, cfg: SearchConfig) -> tuple[np.ndarray, float, int]:
    """Projected gradient descent on the sphere with Armijo backtracking.

    Each line search halves from ``next_trial_step``.
    """
    u = start / np.linalg.norm(start)
    residual, grad = _residual_gradient(problem, u)
    step = cfg.step_size
    iterations = 0
    while iterations < cfg.max_iterations and residual > cfg.tolerance:
        iterations += 1
        slope = float(grad @ grad)
        if slope == 0.0:
            break
        accepted = False
        while step >= cfg.min_step:
            candidate = u - step * grad
            candidate = candidate / np.linalg.norm(candidate)
            trial = antipodal_residual(problem, candidate)
            if trial <= residual - ARMIJO * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        u = candidate
        residual, grad = _residual_gradient(problem, u)
        step = next_trial_step(cfg, step)
    return u, residual, iterations


@dataclass
class SearchOutcome:
    direction: np.ndarray
    residual: float
    converged: bool
    restarts_used: int
    iterations: int


def _search(problem: SphereProblem, cfg: SearchConfig, log: Optional[Callable[[str], None]] = None) -> SearchOutcome:
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best_u, best_r = None, np.inf
    total_iterations = 0
    for restart, child in enumerate(children, start=1):
        rng = np.random.default_rng(child)
        start = rng.standard_normal(problem.sphere_dim)
        while not np.any(start):
            start = rng.standard_normal(problem.sphere_dim)
        u, residual, iterations = _descend(problem, start, cfg)
        total_iterations += iterations
        if residual < best_r:
            best_u, best_r = u, residual
        if residual <= cfg.tolerance:
            if log:
                log(f"[ok] Residual {residual:.3e} after restart {restart}/{cfg.restarts} ({total_iterations} iterations)")
            return SearchOutcome(u, residual, True, restart, total_iterations)
        if log and restart % 10 == 0:
            log(f"[progress] {restart}/{cfg.restarts} restarts, best residual {best_r:.3e}")
    return SearchOutcome(best_u, best_r, False, cfg.restarts, total_iterations)


@dataclass
class CollisionCertificate:
    direction: np.ndarray
    region: int
    x_plus: np.ndarray
    x_minus: np.ndarray
    residual: float
    axis_residual: float
    grid_residual: float
    propagation: dict
    encoder_fingerprint: str
    instance_fingerprint: str
    instance_seed: int
    method: str = "search"
    restarts_used: int = 0
    iterations: int = 0
    model_gap: Optional[float] = None

    def __post_init__(self):
        if self.axis_residual < 0 or self.grid_residual < 0 or self.residual < 0:
            raise ValueError("Certificate residuals must be non-negative.")

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("direction", "x_plus", "x_minus"):
            data[key] = np.asarray(getattr(self, key)).tolist()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "CollisionCertificate":
        values = dict(data)
        for key in ("direction", "x_plus", "x_minus"):
            values[key] = np.asarray(values[key], dtype=np.float64)
        return cls(**values)


@dataclass
class CollisionFailure:
    """No certified collision; ``best_residual`` is the smallest residual reached."""

    best_residual: float
    best_direction: Optional[np.ndarray]
    restarts_used: int
    iterations: int
    reason: str = "no-convergence"
    propagation: Optional[dict] = None

    def to_dict(self) -> dict:
        data = asdict(self)
        data["best_direction"] = None if self.best_direction is None else np.asarray(self.best_direction).tolist()
        return data


def _certify(
    bu_map: BorsukUlamMap, u: np.ndarray, residual: float, cfg: SearchConfig, method: str, restarts_used: int, iterations: int
) -> Union[CollisionCertificate, CollisionFailure]:
    inst = bu_map.instance
    region = assign_region(inst.cover, u)
    x_plus = inst.point(region, u, 1)
    x_minus = inst.point(region, u, -1)

    diff = _difference(bu_map, u).reshape(len(inst.axis), bu_map.encoder.latent_dim)
    axis_residual = float(np.linalg.norm(diff, axis=1).max())
    grid_residual = float(np.linalg.norm(encode(bu_map.encoder, x_plus) - encode(bu_map.encoder, x_minus)))

    report = check_axes_to_grid(
        bu_map.encoder,
        inst.grid,
        inst.axis,
        delta_embed(inst.delta, u, 1),
        delta_embed(inst.delta, u, -1),
        tolerance=max(axis_residual, cfg.axis_floor),
    )
    if not report.passed:
        return CollisionFailure(residual, u, restarts_used, iterations, "propagation-check-failed", report.to_dict())

    return CollisionCertificate(
        direction=u,
        region=region,
        x_plus=x_plus,
        x_minus=x_minus,
        residual=residual,
        axis_residual=axis_residual,
        grid_residual=grid_residual,
        propagation=report.to_dict(),
        encoder_fingerprint=bu_map.source_fingerprint,
        instance_fingerprint=inst.fingerprint(),
        instance_seed=inst.seed,
        method=method,
        restarts_used=restarts_used,
        iterations=iterations,
    )


def find_collision(
    bu_map: BorsukUlamMap, cfg: Optional[SearchConfig] = None, log: Optional[Callable[[str], None]] = None
) -> Union[CollisionCertificate, CollisionFailure]:
    """Multi-start search for ``F(u) = F(-u)``; non-convergence is returned, not raised."""
    cfg = cfg or SearchConfig()
    outcome = _search(bu_map, cfg, log)
    if not outcome.converged:
        if log:
            log(f"[warn] No collision below {cfg.tolerance:.1e}; best residual {outcome.residual:.3e}")
        return CollisionFailure(outcome.residual, outcome.direction, outcome.restarts_used, outcome.iterations)
    return _certify(bu_map, outcome.direction, outcome.residual, cfg, "search", outcome.restarts_used, outcome.iterations)


def linear_collision_oracle(
    bu_map: BorsukUlamMap, cfg: Optional[SearchConfig] = None
) -> Optional[Union[CollisionCertificate, CollisionFailure]]:
    """Exact collision for affine encoders from the nullspace of ``u -> (F(u) - F(-u))/2``."""
    if not bu_map.encoder.is_affine:
        raise ValueError("linear_collision_oracle needs every member network to be affine.")
    cfg = cfg or SearchConfig()
    basis = np.eye(bu_map.sphere_dim)
    linear_part = np.column_stack([_difference(bu_map, e) / 2.0 for e in basis])
    null = nullspace(linear_part)
    if null.shape[1] == 0:
        return None
    u = null[:, 0] / np.linalg.norm(null[:, 0])
    return _certify(bu_map, u, antipodal_residual(bu_map, u), cfg, "linear-oracle", 0, 0)


@dataclass
class GapReport:
    certificate: CollisionCertificate
    g_plus: float
    g_minus: float
    f_plus: float
    f_minus: float
    implied_bound: float
    sampled_g_plus: float
    sampled_g_minus: float
    sampled_implied_bound: float

    @property
    def g_gap(self) -> float:
        return abs(self.g_plus - self.g_minus)

    @property
    def f_gap(self) -> float:
        return abs(self.f_plus - self.f_minus)

    def to_dict(self) -> dict:
        data = {key: value for key, value in asdict(self).items() if key != "certificate"}
        data.update(g_gap=self.g_gap, f_gap=self.f_gap)
        return data


def gap_certificate(model: Model, inst: ObstructionInstance, cert: CollisionCertificate) -> GapReport:
    """Lower bound ``(|g(x+) - g(x-)| - |f(x+) - f(x-)|) / 2`` on the sup error of ``model``.

    ``g`` is evaluated against the sampled sets with ``x+`` added to ``E+`` and
    ``x-`` added to ``E-``; the values against the plain sampled sets are
    reported alongside. The returned report carries a copy of ``cert`` with
    ``model_gap`` filled in; ``cert`` itself is left untouched.
    """
    if cert.encoder_fingerprint != model.encoder.fingerprint():
        raise ValueError("Certificate was not produced against this model's encoder (fingerprint mismatch).")
    if cert.instance_fingerprint != inst.fingerprint():
        raise ValueError("Certificate was not produced against this obstruction instance (fingerprint mismatch).")
    x_plus = inst.point(cert.region, cert.direction, 1)
    x_minus = inst.point(cert.region, cert.direction, -1)
    if not (np.array_equal(x_plus, cert.x_plus) and np.array_equal(x_minus, cert.x_minus)):
        raise ValueError("Certificate points do not reconstruct from (region, direction).")
    if np.array_equal(x_plus, x_minus):
        raise ValueError("Degenerate certificate: x+ equals x-.")

    f_plus = model_eval(model, x_plus)
    f_minus = model_eval(model, x_minus)
    model_gap = abs(f_plus - f_minus)

    augmented = inst.with_extra_points(plus=x_plus, minus=x_minus)
    g_plus, g_minus = target_g(augmented, x_plus), target_g(augmented, x_minus)
    sampled_plus, sampled_minus = target_g(inst, x_plus), target_g(inst, x_minus)
    return GapReport(
        certificate=replace(cert, model_gap=model_gap),
        g_plus=g_plus,
        g_minus=g_minus,
        f_plus=f_plus,
        f_minus=f_minus,
        implied_bound=(abs(g_plus - g_minus) - model_gap) / 2.0,
        sampled_g_plus=sampled_plus,
        sampled_g_minus=sampled_minus,
        sampled_implied_bound=(abs(sampled_plus - sampled_minus) - model_gap) / 2.0,
    )


def certificate_document(cert: CollisionCertificate, encoder: EncoderSpec, inst: ObstructionInstance) -> dict:
    """Self-contained JSON payload: certificate, source encoder weights and instance."""
    return {"certificate": cert.to_dict(), "encoder": encoder.to_dict(), "instance": inst.to_dict()}


@dataclass
class VerificationReport:
    ok: bool
    recorded_residual: float
    recomputed_residual: float
    residual_drift: float
    fingerprints_match: bool
    points_match: bool
    region_match: bool

    def to_dict(self) -> dict:
        return asdict(self)


def verify_certificate(document: dict) -> VerificationReport:
    """Rebuild encoder and instance from ``document`` and recompute the residual."""
    cert = CollisionCertificate.from_dict(document["certificate"])
    encoder = EncoderSpec.from_dict(document["encoder"])
    inst = ObstructionInstance.from_dict(document["instance"])

    fingerprints_match = encoder.fingerprint() == cert.encoder_fingerprint and inst.fingerprint() == cert.instance_fingerprint
    bu_map = BorsukUlamMap(encoder, inst)
    u = cert.direction
    region_match = assign_region(inst.cover, u) == cert.region
    points_match = np.array_equal(inst.point(cert.region, u, 1), cert.x_plus) and np.array_equal(
        inst.point(cert.region, u, -1), cert.x_minus
    )
    recomputed = antipodal_residual(bu_map, u)
    drift = abs(recomputed - cert.residual)
    return VerificationReport(
        ok=fingerprints_match and region_match and points_match and drift <= REPLAY_TOL,
        recorded_residual=cert.residual,
        recomputed_residual=recomputed,
        residual_drift=drift,
        fingerprints_match=fingerprints_match,
        points_match=points_match,
        region_match=region_match,
    )


@dataclass
class FixedFeatureCollision:
    x: np.ndarray
    y: np.ndarray
    direction: np.ndarray
    residual: float
    latent_gap: float
    separation: float
    encoder_fingerprint: str

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("x", "y", "direction"):
            data[key] = np.asarray(getattr(self, key)).tolist()
        return data


def fixed_feature_collision(
    encoder: EncoderSpec,
    epsilon: float = 0.25,
    cfg: Optional[SearchConfig] = None,
    log: Optional[Callable[[str], None]] = None,
) -> Union[FixedFeatureCollision, CollisionFailure]:
    """Two point sets with equal latent codes under a fixed shared encoder.

    Both sets lie in the labeled copy (point ``j`` in cube ``C_j``), so no
    permutation relates them. A collision is guaranteed when ``M < nd``.
    """
    cfg = cfg or SearchConfig()
    cubes = build_labeled_cubes(encoder.d, encoder.n)
    problem = FixedFeatureMap(encoder, cubes, epsilon)
    outcome = _search(problem, cfg, log)
    if not outcome.converged:
        return CollisionFailure(outcome.residual, outcome.direction, outcome.restarts_used, outcome.iterations)

    u = outcome.direction
    x = cubes.embed(problem.ordered_point(u))
    y = cubes.embed(problem.ordered_point(-u))
    latent_gap = float(np.linalg.norm(encode(encoder, x) - encode(encoder, y)))
    separation = float(np.abs(x - y).max())
    return FixedFeatureCollision(x, y, u, outcome.residual, latent_gap, separation, encoder.fingerprint())


def estimate_decoder_lipschitz(decoder: Mlp, latents, pairs: int = 1000, seed: int = 0) -> float:
    """Sampled Lipschitz constant: max of pairwise slopes and gradient norms over ``latents``."""
    points = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if points.shape[1] != decoder.input_width:
        raise ValueError(f"Latents have width {points.shape[1]}, decoder expects {decoder.input_width}")
    rng = np.random.default_rng(seed)
    grads = mlp_input_jacobian(decoder, points)[:, 0, :]
    estimate = float(np.linalg.norm(grads, axis=1).max())
    if points.shape[0] >= 2:
        i = rng.integers(0, points.shape[0], size=pairs)
        j = rng.integers(0, points.shape[0], size=pairs)
        gaps = np.linalg.norm(points[i] - points[j], axis=1)
        keep = gaps > 0.0
        if np.any(keep):
            values = mlp_forward(decoder, points)[:, 0]
            slopes = np.abs(values[i[keep]] - values[j[keep]]) / gaps[keep]
            estimate = max(estimate, float(slopes.max()))
    return estimate
