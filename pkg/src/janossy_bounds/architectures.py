"""Sum-pooled encoders over ordered ``k``-tuples and their decoders.

Three kinds share one evaluation path: ``deep_sets`` (``k = 1``),
``shared_janossy`` (one network for every tuple) and ``indexed_janossy`` (one
network per ordered index tuple). Tuples are enumerated lexicographically over
``(i_1, ..., i_k)`` and summed in that order.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constructions import LabeledCubes
from .numerics import Mlp, init_mlp, mlp_forward, mlp_input_jacobian

ENCODER_KINDS = ("deep_sets", "shared_janossy", "indexed_janossy")
SHARED_KINDS = ("deep_sets", "shared_janossy")


@dataclass(frozen=True, eq=False)
class PointConfig:
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"PointConfig needs an (n, d) array, got shape {points.shape}")
        if np.any(points < 0.0) or np.any(points > 1.0):
            raise ValueError("PointConfig coordinates must lie in [0, 1].")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def permuted(self, order) -> "PointConfig":
        return PointConfig(self.points[list(order)])

    def canonical(self) -> "PointConfig":
        """Points sorted lexicographically by coordinates."""
        order = np.lexsort(self.points.T[::-1])
        return PointConfig(self.points[order])


def _points(x, n: int, d: int) -> np.ndarray:
    array = x.points if isinstance(x, PointConfig) else np.asarray(x, dtype=np.float64)
    if array.shape != (n, d):
        raise ValueError(f"Expected a configuration of shape {(n, d)}, got {array.shape}")
    return array


@dataclass(frozen=True, eq=False)
class EncoderMember:
    """One tuple network ``z -> net(input_offset + input_scale * z)``."""

    net: Mlp
    input_scale: Optional[np.ndarray] = None
    input_offset: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("input_scale", "input_offset"):
            value = getattr(self, name)
            if value is None:
                continue
            array = np.array(value, dtype=np.float64).reshape(-1)
            if array.size != self.net.input_width:
                raise ValueError(f"{name} has {array.size} entries, network expects {self.net.input_width}")
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def scale(self) -> np.ndarray:
        return np.ones(self.net.input_width) if self.input_scale is None else self.input_scale

    @property
    def offset(self) -> np.ndarray:
        return np.zeros(self.net.input_width) if self.input_offset is None else self.input_offset

    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "input_scale": None if self.input_scale is None else self.input_scale.tolist(),
            "input_offset": None if self.input_offset is None else self.input_offset.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderMember":
        return cls(Mlp.from_dict(data["net"]), data.get("input_scale"), data.get("input_offset"))


@dataclass(frozen=True, eq=False)
class EncoderSpec:
    kind: str
    d: int
    n: int
    k: int
    latent_dim: int
    members: tuple

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"Unknown encoder kind '{self.kind}'. Use one of {', '.join(ENCODER_KINDS)}.")
        if self.d < 1 or self.n < 1 or self.latent_dim < 1:
            raise ValueError(f"Need d, n, M >= 1, got d={self.d}, n={self.n}, M={self.latent_dim}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"Need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.kind == "deep_sets" and self.k != 1:
            raise ValueError(f"deep_sets encoders have k=1, got k={self.k}")

        members = tuple(m if isinstance(m, EncoderMember) else EncoderMember(m) for m in self.members)
        expected = 1 if self.kind in SHARED_KINDS else self.n**self.k
        if len(members) != expected:
            raise ValueError(f"{self.kind} encoder needs {expected} member networks, got {len(members)}")
        for index, member in enumerate(members):
            if member.net.input_width != self.d * self.k or member.net.output_width != self.latent_dim:
                raise ValueError(
                    f"Member {index} maps R^{member.net.input_width} -> R^{member.net.output_width}, "
                    f"expected R^{self.d * self.k} -> R^{self.latent_dim}"
                )
        object.__setattr__(self, "members", members)

    @property
    def M(self) -> int:
        return self.latent_dim

    @property
    def is_shared(self) -> bool:
        return self.kind in SHARED_KINDS

    @property
    def is_affine(self) -> bool:
        return all(member.net.is_affine for member in self.members)

    def tuples(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.n), repeat=self.k))

    def member_for(self, position: int) -> EncoderMember:
        return self.members[0] if self.is_shared else self.members[position]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "n": self.n,
            "k": self.k,
            "latent_dim": self.latent_dim,
            "members": [member.to_dict() for member in self.members],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderSpec":
        members = tuple(EncoderMember.from_dict(item) for item in data["members"])
        return cls(data["kind"], int(data["d"]), int(data["n"]), int(data["k"]), int(data["latent_dim"]), members)

    def fingerprint(self) -> str:
        return _fingerprint(self.to_dict())


@dataclass(frozen=True, eq=False)
class Model:
    encoder: EncoderSpec
    decoder: Mlp

    def __post_init__(self):
        if self.decoder.input_width != self.encoder.latent_dim:
            raise ValueError(f"Decoder input width {self.decoder.input_width} != latent dim {self.encoder.latent_dim}")
        if self.decoder.output_width != 1:
            raise ValueError(f"Decoder must be scalar-valued, got output width {self.decoder.output_width}")

    def to_dict(self) -> dict:
        return {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Model":
        return cls(EncoderSpec.from_dict(data["encoder"]), Mlp.from_dict(data["decoder"]))

    def fingerprint(self) -> str:
        return _fingerprint(self.to_dict())


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def tuple_inputs(enc: EncoderSpec, batch: np.ndarray) -> np.ndarray:
    """``(B, T, dk)`` member inputs after each member's affine precomposition."""
    index = np.array(enc.tuples(), dtype=np.intp)
    raw = batch[:, index, :].reshape(batch.shape[0], index.shape[0], enc.d * enc.k)
    if enc.is_shared:
        member = enc.members[0]
        return raw if member.input_scale is None and member.input_offset is None else member.offset + member.scale * raw
    scales = np.stack([m.scale for m in enc.members])
    offsets = np.stack([m.offset for m in enc.members])
    return offsets[None] + scales[None] * raw


def _groups(enc: EncoderSpec) -> list[tuple[Mlp, list[int]]]:
    """Tuple positions grouped by the network object that serves them."""
    count = len(enc.tuples())
    if enc.is_shared:
        return [(enc.members[0].net, list(range(count)))]
    groups: dict[int, tuple[Mlp, list[int]]] = {}
    for position, member in enumerate(enc.members):
        groups.setdefault(id(member.net), (member.net, []))[1].append(position)
    return list(groups.values())


def encode_batch(enc: EncoderSpec, configs) -> np.ndarray:
    """Latent codes for a batch of ``(B, n, d)`` configurations, shape ``(B, M)``."""
    batch = np.asarray(configs, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1:] != (enc.n, enc.d):
        raise ValueError(f"Expected configurations of shape (B, {enc.n}, {enc.d}), got {batch.shape}")
    inputs = tuple_inputs(enc, batch)
    per_tuple = np.empty((batch.shape[0], inputs.shape[1], enc.latent_dim))
    for net, positions in _groups(enc):
        flat = inputs[:, positions, :].reshape(-1, inputs.shape[2])
        per_tuple[:, positions, :] = mlp_forward(net, flat).reshape(batch.shape[0], len(positions), enc.latent_dim)
    return per_tuple.sum(axis=1)


def encode(enc: EncoderSpec, x) -> np.ndarray:
    """Sum of the member networks over all ``n^k`` ordered tuples of ``x``."""
    return encode_batch(enc, _points(x, enc.n, enc.d)[None])[0]


def encoder_jacobian(enc: EncoderSpec, x) -> np.ndarray:
    """Exact Jacobian of :func:`encode` with respect to ``x``, shape ``(M, n, d)``."""
    points = _points(x, enc.n, enc.d)
    inputs = tuple_inputs(enc, points[None])[0]
    tuple_jac = np.empty((inputs.shape[0], enc.latent_dim, inputs.shape[1]))
    for net, positions in _groups(enc):
        tuple_jac[positions] = mlp_input_jacobian(net, inputs[positions])
    scales = np.stack([enc.member_for(p).scale for p in range(inputs.shape[0])])
    tuple_jac = tuple_jac * scales[:, None, :]

    full = np.zeros((enc.latent_dim, enc.n, enc.d))
    for position, index_tuple in enumerate(enc.tuples()):
        for slot, i in enumerate(index_tuple):
            full[:, i, :] += tuple_jac[position, :, slot * enc.d : (slot + 1) * enc.d]
    return full


def model_eval_batch(m: Model, configs) -> np.ndarray:
    return mlp_forward(m.decoder, encode_batch(m.encoder, configs))[:, 0]


def model_eval(m: Model, x) -> float:
    return float(model_eval_batch(m, _points(x, m.encoder.n, m.encoder.d)[None])[0])


def as_indexed(enc: EncoderSpec) -> EncoderSpec:
    """Trivial indexed embedding ``phi_I = phi`` of a shared encoder."""
    if not enc.is_shared:
        return enc
    members = (enc.members[0],) * (enc.n**enc.k)
    return EncoderSpec("indexed_janossy", enc.d, enc.n, enc.k, enc.latent_dim, members)


def restrict_to_labeled_copy(shared: EncoderSpec, cubes: LabeledCubes) -> EncoderSpec:
    """Indexed encoder with ``phi_I(z_1..z_k) = phi(T_{i_1} z_1, ..., T_{i_k} z_k)``."""
    if not shared.is_shared:
        raise ValueError(f"restrict_to_labeled_copy needs a shared encoder, got kind '{shared.kind}'")
    if (cubes.d, cubes.n) != (shared.d, shared.n):
        raise ValueError(f"Cubes built for (d, n)={(cubes.d, cubes.n)}, encoder has {(shared.d, shared.n)}")

    base = shared.members[0]
    members = []
    for index_tuple in shared.tuples():
        cube_offset = np.concatenate([cubes.offsets[i] for i in index_tuple])
        members.append(
            EncoderMember(
                base.net,
                input_scale=base.scale * cubes.side,
                input_offset=base.offset + base.scale * cube_offset,
            )
        )
    return EncoderSpec("indexed_janossy", shared.d, shared.n, shared.k, shared.latent_dim, tuple(members))


def count_parameters(enc: EncoderSpec) -> int:
    return sum(member.net.parameter_count for member in enc.members)


def random_encoder(
    kind: str,
    d: int,
    n: int,
    k: int,
    latent_dim: int,
    seed: int,
    hidden_widths: Sequence[int] = (8,),
    activation: str = "tanh",
) -> EncoderSpec:
    """Seeded encoder; an empty ``hidden_widths`` gives affine member networks."""
    if kind == "deep_sets":
        k = 1
    widths = [d * k, *hidden_widths, latent_dim]
    if kind in SHARED_KINDS:
        members = (EncoderMember(init_mlp(widths, seed, activation)),)
    else:
        seeds = np.random.SeedSequence(seed).generate_state(n**k, dtype=np.uint64)
        members = tuple(EncoderMember(init_mlp(widths, int(s), activation)) for s in seeds)
    return EncoderSpec(kind, d, n, k, latent_dim, members)


def random_model(
    kind: str,
    d: int,
    n: int,
    k: int,
    latent_dim: int,
    seed: int,
    hidden_widths: Sequence[int] = (8,),
    decoder_widths: Sequence[int] = (8,),
    activation: str = "tanh",
) -> Model:
    encoder = random_encoder(kind, d, n, k, latent_dim, seed, hidden_widths, activation)
    decoder_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1, dtype=np.uint64)[0])
    decoder = init_mlp([latent_dim, *decoder_widths, 1], decoder_seed, activation)
    return Model(encoder, decoder)
