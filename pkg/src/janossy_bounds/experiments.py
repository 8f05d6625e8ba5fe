"""Training studies against the obstruction target and latent-dimension sweeps."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .architectures import SHARED_KINDS, EncoderMember, EncoderSpec, Model, encode_batch, random_model, tuple_inputs
from .collision import (
    BorsukUlamMap,
    CollisionCertificate,
    SearchConfig,
    find_collision,
    gap_certificate,
    linear_collision_oracle,
)
from .config import derive_seed, env_or_config, log as default_log, require_float, require_int
from .constructions import ObstructionInstance, target_g_batch
from .numerics import NonFiniteError, OptimizerState, mlp_backward, mlp_forward, optimizer_step

# Bump CSV_VERSION whenever CSV_COLUMNS changes.
CSV_VERSION = 1
CSV_COLUMNS = [
    "M",
    "status",
    "guaranteed",
    "final_loss",
    "train_max_error",
    "held_out_max_error",
    "best_residual",
    "axis_residual",
    "grid_residual",
    "implied_bound",
    "sampled_implied_bound",
    "restarts_used",
    "samples_per_region",
    "error",
]


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; ``loss_curve`` holds the epochs completed."""

    def __init__(self, message: str, loss_curve: Sequence[float]):
        super().__init__(message)
        self.loss_curve = list(loss_curve)


def _widths(value) -> tuple[int, ...]:
    if isinstance(value, str):
        return tuple(int(part) for part in value.split(",") if part.strip())
    return tuple(int(part) for part in value)


@dataclass
class TrainConfig:
    d: int = 1
    n: int = 3
    k: int = 1
    M: int = 1
    kind: str = "deep_sets"
    hidden_widths: tuple = (16,)
    decoder_widths: tuple = (16,)
    activation: str = "tanh"
    epochs: int = 400
    batch_size: int = 256
    step_size: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    plus_samples: int = 512
    minus_samples: int = 512
    background_samples: int = 256

    def __post_init__(self):
        self.hidden_widths = _widths(self.hidden_widths)
        self.decoder_widths = _widths(self.decoder_widths)
        if self.kind not in SHARED_KINDS:
            raise ValueError(f"Training supports shared encoders only, got kind '{self.kind}'")
        for name in ("epochs", "batch_size", "plus_samples", "minus_samples", "background_samples", "M"):
            if getattr(self, name) < 1:
                raise ValueError(f"TrainConfig.{name} must be positive, got {getattr(self, name)}")
        if not self.step_size > 0:
            raise ValueError(f"TrainConfig.step_size must be positive, got {self.step_size}")

    @classmethod
    def from_config(cls, **overrides) -> "TrainConfig":
        values = {
            "epochs": require_int(env_or_config("TRAIN_EPOCHS", "training.epochs", 400, int), "training.epochs"),
            "batch_size": require_int(env_or_config("TRAIN_BATCH_SIZE", "training.batch_size", 256, int), "training.batch_size"),
            "step_size": require_float(env_or_config("TRAIN_STEP_SIZE", "training.step_size", 0.01, float), "training.step_size"),
            "optimizer": env_or_config("TRAIN_OPTIMIZER", "training.optimizer", "adam"),
            "hidden_widths": env_or_config("TRAIN_HIDDEN_WIDTHS", "training.hidden_widths", [16], _widths),
            "decoder_widths": env_or_config("TRAIN_DECODER_WIDTHS", "training.decoder_widths", [16], _widths),
            "activation": env_or_config("ACTIVATION", "numerics.activation", "tanh"),
            "plus_samples": require_int(env_or_config("TRAIN_PLUS_SAMPLES", "training.plus_samples", 512, int), "training.plus_samples"),
            "minus_samples": require_int(
                env_or_config("TRAIN_MINUS_SAMPLES", "training.minus_samples", 512, int), "training.minus_samples"
            ),
            "background_samples": require_int(
                env_or_config("TRAIN_BACKGROUND_SAMPLES", "training.background_samples", 256, int), "training.background_samples"
            ),
            "seed": require_int(env_or_config("JANOSSY_SEED", "runtime.seed", 0, int), "runtime.seed"),
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["hidden_widths"] = list(self.hidden_widths)
        data["decoder_widths"] = list(self.decoder_widths)
        return data


@dataclass(eq=False)
class Dataset:
    points: np.ndarray
    labels: np.ndarray
    held_out_points: np.ndarray
    held_out_labels: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def _pick(rng: np.random.Generator, available: int, wanted: int) -> np.ndarray:
    if wanted <= available:
        return rng.permutation(available)[:wanted]
    return rng.integers(0, available, size=wanted)


def make_dataset(inst: ObstructionInstance, cfg: TrainConfig) -> Dataset:
    """``E+`` and ``E-`` samples plus uniform background, all labelled by ``target_g``.

    Sampled obstruction points not drawn for training form the held-out set; it
    falls back to the full sampled sets when every point was used.
    """
    rng = np.random.default_rng(derive_seed(cfg.seed, "dataset"))
    plus_idx = _pick(rng, inst.e_plus.shape[0], cfg.plus_samples)
    minus_idx = _pick(rng, inst.e_minus.shape[0], cfg.minus_samples)
    background = rng.uniform(0.0, 1.0, size=(cfg.background_samples, inst.n, inst.d))

    points = np.concatenate([inst.e_plus[plus_idx], inst.e_minus[minus_idx], background])
    labels = target_g_batch(inst, points)

    spare_plus = np.setdiff1d(np.arange(inst.e_plus.shape[0]), plus_idx)
    spare_minus = np.setdiff1d(np.arange(inst.e_minus.shape[0]), minus_idx)
    if spare_plus.size + spare_minus.size == 0:
        held_out = np.concatenate([inst.e_plus, inst.e_minus])
    else:
        held_out = np.concatenate([inst.e_plus[spare_plus], inst.e_minus[spare_minus]])
    return Dataset(points, labels, held_out, target_g_batch(inst, held_out))


def _loss_and_grads(model: Model, points: np.ndarray, labels: np.ndarray) -> tuple[float, list, list]:
    enc = model.encoder
    net = enc.members[0].net
    inputs = tuple_inputs(enc, points)
    flat = inputs.reshape(-1, inputs.shape[2])
    latents = mlp_forward(net, flat).reshape(points.shape[0], inputs.shape[1], enc.latent_dim).sum(axis=1)
    preds = mlp_forward(model.decoder, latents)[:, 0]
    residual = preds - labels
    loss = float(np.mean(residual**2))

    decoder_grads, latent_grad = mlp_backward(model.decoder, latents, (2.0 / points.shape[0]) * residual[:, None])
    cotangent = np.repeat(latent_grad[:, None, :], inputs.shape[1], axis=1).reshape(-1, enc.latent_dim)
    encoder_grads, _ = mlp_backward(net, flat, cotangent)
    return loss, encoder_grads, decoder_grads


def _rebuild(model: Model, params: list, split: int) -> Model:
    enc = model.encoder
    member = enc.members[0]
    net = member.net.with_parameters(params[:split])
    encoder = EncoderSpec(
        enc.kind, enc.d, enc.n, enc.k, enc.latent_dim, (EncoderMember(net, member.input_scale, member.input_offset),)
    )
    return Model(encoder, model.decoder.with_parameters(params[split:]))


def train(model: Model, dataset: Dataset, cfg: TrainConfig) -> tuple[Model, list[float]]:
    """Minibatch mean-squared-error training; the loss curve holds one mean loss per epoch."""
    if not model.encoder.is_shared:
        raise ValueError(f"train supports shared encoders only, got kind '{model.encoder.kind}'")
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    state = OptimizerState(method=cfg.optimizer, step_size=cfg.step_size)
    split = 2 * len(model.encoder.members[0].net.weights)
    curve: list[float] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            try:
                loss, enc_grads, dec_grads = _loss_and_grads(model, dataset.points[batch], dataset.labels[batch])
                if not np.isfinite(loss):
                    raise NonFiniteError(f"loss {loss}")
                params = model.encoder.members[0].net.parameters() + model.decoder.parameters()
                model = _rebuild(model, optimizer_step(state, params, enc_grads + dec_grads), split)
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"Training diverged in epoch {epoch}: {exc}", curve) from exc
            batch_losses.append(loss * len(batch))
        curve.append(float(sum(batch_losses) / len(order)))
    return model, curve


def max_error(model: Model, points: np.ndarray, labels: np.ndarray) -> float:
    if points.shape[0] == 0:
        return 0.0
    preds = mlp_forward(model.decoder, encode_batch(model.encoder, points))[:, 0]
    return float(np.abs(preds - labels).max())


@dataclass
class SweepRecord:
    M: int
    status: str
    guaranteed: bool
    final_loss: Optional[float] = None
    train_max_error: Optional[float] = None
    held_out_max_error: Optional[float] = None
    best_residual: Optional[float] = None
    axis_residual: Optional[float] = None
    grid_residual: Optional[float] = None
    implied_bound: Optional[float] = None
    sampled_implied_bound: Optional[float] = None
    restarts_used: Optional[int] = None
    samples_per_region: Optional[int] = None
    error: str = ""
    loss_curve: list = field(default_factory=list, repr=False)
    certificate: Optional[dict] = field(default=None, repr=False)
    gap: Optional[dict] = field(default=None, repr=False)
    model: Optional[dict] = field(default=None, repr=False)

    def to_row(self) -> dict:
        data = asdict(self)
        return {column: data[column] for column in CSV_COLUMNS}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepResult:
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda record: record.M)

    def rows(self) -> list[dict]:
        return [record.to_row() for record in self.records]

    def to_dict(self) -> dict:
        return {"records": [record.to_dict() for record in self.records]}


class LatentSweepRunner:
    """Train and attack one model per latent dimension, ``max_workers`` at a time."""

    def __init__(
        self,
        base_cfg: TrainConfig,
        inst: ObstructionInstance,
        search_cfg: Optional[SearchConfig] = None,
        max_workers: int = 1,
        log: Callable[[str], None] = default_log,
    ):
        if (base_cfg.d, base_cfg.n, base_cfg.k) != (inst.d, inst.n, inst.k):
            raise ValueError(f"TrainConfig dims {(base_cfg.d, base_cfg.n, base_cfg.k)} do not match instance {(inst.d, inst.n, inst.k)}")
        self.base_cfg = base_cfg
        self.inst = inst
        self.search_cfg = search_cfg or SearchConfig()
        self.max_workers = max(1, int(max_workers))
        self.log = log
        self.dataset = make_dataset(inst, base_cfg)

        self.progress = {"done": 0, "total": 0, "start": time.time()}
        self.progress_lock = threading.Lock()
        self.stats_lock = threading.Lock()
        self.stats = {
            "certified": 0,
            "no_certificate": 0,
            "diverged": 0,
            "crashed": 0,
            "guaranteed": 0,
        }

    def increment_stat(self, key, amount=1):
        with self.stats_lock:
            self.stats[key] = self.stats.get(key, 0) + amount

    def stats_snapshot(self):
        with self.stats_lock:
            return dict(self.stats)

    def advance_progress(self):
        with self.progress_lock:
            self.progress["done"] += 1
            done, total, start = self.progress["done"], self.progress["total"], self.progress["start"]
        rate = done / max(time.time() - start, 1e-9)
        self.log(f"[progress] {done}/{total} latent dims ({rate:.2f}/s)")

    def print_summary(self):
        stats = self.stats_snapshot()
        elapsed = time.time() - self.progress["start"]
        self.log(
            "[summary] "
            f"certified={stats['certified']} no_certificate={stats['no_certificate']} "
            f"diverged={stats['diverged']} crashed={stats['crashed']} guaranteed={stats['guaranteed']}"
        )
        self.log(f"[summary] duration={(elapsed / 60):.1f} min")

    def run_one(self, M: int) -> SweepRecord:
        cfg = replace(self.base_cfg, M=M)
        guaranteed = M * len(self.inst.axis) < self.inst.sphere_dim
        record = SweepRecord(M=M, status="pending", guaranteed=guaranteed, samples_per_region=self.inst.samples_per_region)
        if guaranteed:
            self.increment_stat("guaranteed")

        model = random_model(
            cfg.kind, cfg.d, cfg.n, cfg.k, M, derive_seed(cfg.seed, f"model:{M}"),
            cfg.hidden_widths, cfg.decoder_widths, cfg.activation,
        )
        try:
            model, curve = train(model, self.dataset, cfg)
        except TrainingDivergedError as exc:
            self.increment_stat("diverged")
            record.status, record.error, record.loss_curve = "diverged", str(exc), exc.loss_curve
            return record

        record.loss_curve = curve
        record.final_loss = curve[-1]
        record.model = model.to_dict()
        record.train_max_error = max_error(model, np.concatenate([self.inst.e_plus, self.inst.e_minus]), np.concatenate(
            [np.ones(self.inst.e_plus.shape[0]), np.zeros(self.inst.e_minus.shape[0])]
        ))
        record.held_out_max_error = max_error(model, self.dataset.held_out_points, self.dataset.held_out_labels)

        bu_map = BorsukUlamMap(model.encoder, self.inst)
        search_cfg = replace(self.search_cfg, seed=derive_seed(cfg.seed, f"search:{M}"))
        outcome = find_collision(bu_map, search_cfg)
        if not isinstance(outcome, CollisionCertificate) and bu_map.encoder.is_affine:
            outcome = linear_collision_oracle(bu_map, search_cfg) or outcome

        if isinstance(outcome, CollisionCertificate):
            gap = gap_certificate(model, self.inst, outcome)
            record.status = "certified"
            record.best_residual = outcome.residual
            record.axis_residual = outcome.axis_residual
            record.grid_residual = outcome.grid_residual
            record.implied_bound = gap.implied_bound
            record.sampled_implied_bound = gap.sampled_implied_bound
            record.restarts_used = outcome.restarts_used
            record.certificate = gap.certificate.to_dict()
            record.gap = gap.to_dict()
            self.increment_stat("certified")
        else:
            record.status = "no-certificate"
            record.best_residual = outcome.best_residual
            record.restarts_used = outcome.restarts_used
            self.increment_stat("no_certificate")
        return record

    def run(self, m_values: Sequence[int]) -> SweepResult:
        m_values = [int(m) for m in m_values]
        if m_values != sorted(m_values):
            raise ValueError(f"M values must be sorted, got {m_values}")
        with self.progress_lock:
            self.progress.update(total=len(m_values), done=0, start=time.time())
        self.log(f"[start] Latent sweep d={self.inst.d} n={self.inst.n} k={self.inst.k} M={m_values}")
        self.log(f"[start] |A|={len(self.inst.axis)} sphere dim={self.inst.sphere_dim} workers={self.max_workers}")
        if not m_values:
            self.log("[done] Nothing to sweep.")
            return SweepResult([])

        records = []
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(self.run_one, M): M for M in m_values}
            for future in as_completed(futures):
                M = futures[future]
                try:
                    records.append(future.result())
                except Exception as exc:
                    self.log(f"[error] Record M={M} crashed: {exc}")
                    self.increment_stat("crashed")
                    records.append(
                        SweepRecord(M=M, status="error", guaranteed=M * len(self.inst.axis) < self.inst.sphere_dim, error=str(exc))
                    )
                self.advance_progress()
        self.log("[done] Latent sweep complete.")
        self.print_summary()
        return SweepResult(records)


def sweep_latent_dim(
    base_cfg: TrainConfig,
    m_values: Sequence[int],
    inst: ObstructionInstance,
    search_cfg: Optional[SearchConfig] = None,
    max_workers: int = 1,
    log: Callable[[str], None] = default_log,
) -> SweepResult:
    return LatentSweepRunner(base_cfg, inst, search_cfg, max_workers, log).run(m_values)
