"""Alternating optimization of the discriminator and the shared encoder.

Each epoch runs a fixed number of discriminator steps against the current
(held constant) embeddings, then one encoder step against the current
(held constant) discriminator. The two players never update inside the
same backward pass, so neither can leak gradient into the other's weights.

All randomness flows from one seed through a fixed fan-out of named
streams; two runs with equal configuration are bitwise identical.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import model
from .compute import GradTape, backward
from .errors import NonFiniteLoss, NonFiniteValue, ShapeMismatch
from .graph import GraphPair, NegativeSampler, PropagationMatrix, build_propagation
from .model import DiscriminatorParams, EncoderParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run. Defaults fit a few-hundred-node graph;
    only the seed has no default because silent seed reuse is the classic
    way to fake reproducibility."""

    seed: int
    embedding_dim: int = 128
    hidden_dim: int | None = None  # None: same as embedding_dim
    num_layers: int = 2
    negative_samples: int = 5
    adv_weight: float = 1.0
    disc_steps: int = 1
    epochs: int = 200
    encoder_lr: float = 1e-3
    disc_lr: float = 1e-3
    optimizer: str = "adam"
    edge_batch_size: int | None = None  # None: all edges every step
    disc_hidden_layers: int = 2
    disc_hidden_dim: int | None = None
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.embedding_dim < 1 or self.num_layers < 1:
            raise ValueError("embedding_dim and num_layers must be positive")
        if self.negative_samples < 1:
            raise ValueError("negative_samples must be at least 1")
        if self.adv_weight < 0:
            raise ValueError("adv_weight must be non-negative")
        if self.disc_steps < 1:
            raise ValueError("disc_steps must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.encoder_lr <= 0 or self.disc_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.edge_batch_size is not None and self.edge_batch_size < 1:
            raise ValueError("edge_batch_size must be positive when set")
        if self.disc_hidden_layers < 0:
            raise ValueError("disc_hidden_layers must be non-negative")

    def encoder_dims(self, feature_dim: int) -> list[int]:
        hidden = self.embedding_dim if self.hidden_dim is None else self.hidden_dim
        return [feature_dim] + [hidden] * (self.num_layers - 1) + [self.embedding_dim]


@dataclass(frozen=True)
class RunSeeds:
    """Named child seeds fanned out from the run seed. The fan-out order is
    part of the on-disk reproducibility contract: adding a stream means
    appending, never reordering."""

    encoder_init: int
    disc_init: int
    sampler_src: int
    sampler_tgt: int
    batching: int
    classifier: int
    synthesis: int
    subsample: int


def derive_seeds(seed: int) -> RunSeeds:
    children = np.random.SeedSequence(seed).spawn(8)
    return RunSeeds(*(int(c.generate_state(1)[0]) for c in children))


class AdamState:
    """First and second moment estimates for one parameter list."""

    __slots__ = ("m", "v", "step")

    def __init__(self, arrays: list[np.ndarray]):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.step = 0


def apply_update(
    arrays: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState | None,
    rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list[np.ndarray]:
    """One optimizer step. ``state`` None means plain SGD; an
    :class:`AdamState` is advanced in place. Inputs are never mutated;
    fresh arrays come back."""
    if len(arrays) != len(grads):
        raise ShapeMismatch("parameter and gradient counts differ")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ShapeMismatch(f"update: parameter {a.shape} vs gradient {g.shape}")
    if state is None:
        return [a - rate * g for a, g in zip(arrays, grads)]
    state.step += 1
    t = state.step
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        out.append(a - rate * m_hat / (np.sqrt(v_hat) + eps))
    return out


@dataclass
class EpochRecord:
    epoch: int
    l_gcn: float
    l_d: float
    l_adv: float
    l_total: float
    mean_score_src: float
    mean_score_tgt: float
    seconds: float  # wall-clock diagnostic; never serialized, so logs of
    # identical runs stay byte-identical


class TrainLog:
    """Per-epoch loss history with a fixed CSV schema."""

    COLUMNS = (
        "epoch",
        "l_gcn",
        "l_d",
        "l_adv",
        "l_total",
        "mean_score_src",
        "mean_score_tgt",
    )

    def __init__(self):
        self.records: list[EpochRecord] = []

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.records:
                fh.write(
                    f"{r.epoch},{r.l_gcn!r},{r.l_d!r},{r.l_adv!r},{r.l_total!r},"
                    f"{r.mean_score_src!r},{r.mean_score_tgt!r}\n"
                )


class TrainState:
    """Everything train_step needs besides the parameters themselves."""

    def __init__(self, pair: GraphPair, cfg: TrainConfig):
        seeds = derive_seeds(cfg.seed)
        self.seeds = seeds
        self.prop_src = build_propagation(pair.source)
        self.prop_tgt = build_propagation(pair.target)
        self.sampler_src = NegativeSampler(pair.source.degrees, seeds.sampler_src)
        self.sampler_tgt = NegativeSampler(pair.target.degrees, seeds.sampler_tgt)
        self.batch_rng = np.random.default_rng(seeds.batching)
        kind = cfg.optimizer
        self.enc_state = None
        self.disc_state = None
        self._adam = kind == "adam"

    def ensure_optimizer(self, enc: EncoderParams, disc: DiscriminatorParams) -> None:
        if self._adam and self.enc_state is None:
            self.enc_state = AdamState(enc.arrays())
            self.disc_state = AdamState(disc.arrays())


def init_models(
    pair: GraphPair, cfg: TrainConfig, seeds: RunSeeds | None = None
) -> tuple[EncoderParams, DiscriminatorParams]:
    seeds = derive_seeds(cfg.seed) if seeds is None else seeds
    enc = EncoderParams.init(cfg.encoder_dims(pair.source.feature_dim), seeds.encoder_init)
    disc = DiscriminatorParams.init(
        cfg.embedding_dim,
        hidden_dim=cfg.disc_hidden_dim,
        hidden_layers=cfg.disc_hidden_layers,
        seed=seeds.disc_init,
    )
    return enc, disc


def _encode_pair(enc, pair, state, cfg):
    v_src = model.encode(enc, state.prop_src, pair.source.features, cfg.hidden_activation)
    v_tgt = model.encode(enc, state.prop_tgt, pair.target.features, cfg.hidden_activation)
    return v_src, v_tgt


def discriminator_round(
    v_src: np.ndarray,
    v_tgt: np.ndarray,
    disc: DiscriminatorParams,
    cfg: TrainConfig,
    state: TrainState,
) -> float:
    """One discriminator update against fixed embeddings. Takes plain
    arrays, not the encoder: there is structurally nothing here a gradient
    could flow back into. Returns the pre-update loss."""
    tape = GradTape()
    nodes = disc.as_nodes(tape)
    s_src = model.discriminator_forward(nodes, v_src)
    s_tgt = model.discriminator_forward(nodes, v_tgt)
    l_d = model.discriminator_loss(s_src, s_tgt)
    grads = backward(tape, l_d)
    disc.set_arrays(
        apply_update(
            disc.arrays(), [grads[n] for n in nodes], state.disc_state, cfg.disc_lr
        )
    )
    return l_d.item()


def encoder_round(
    pair: GraphPair,
    enc: EncoderParams,
    disc: DiscriminatorParams,
    cfg: TrainConfig,
    state: TrainState,
    batch_src: model.EdgeBatch,
    batch_tgt: model.EdgeBatch,
) -> float:
    """One encoder update. The discriminator participates as a constant:
    its weights stay off the tape, so they receive no update and the
    adversarial gradient lands entirely on the shared encoder weights.
    Returns the pre-update total loss."""
    tape = GradTape()
    nodes = enc.as_nodes(tape)
    v_src = model.encode(nodes, state.prop_src, pair.source.features, cfg.hidden_activation)
    v_tgt = model.encode(nodes, state.prop_tgt, pair.target.features, cfg.hidden_activation)
    l_gcn = model.gcn_loss(v_src, v_tgt, batch_src, batch_tgt)
    s_src = model.discriminator_forward(disc, v_src)
    s_tgt = model.discriminator_forward(disc, v_tgt)
    l_adv = model.adversarial_loss(s_src, s_tgt)
    loss = model.total_loss(l_gcn, l_adv, cfg.adv_weight)
    grads = backward(tape, loss)
    enc.set_arrays(
        apply_update(
            enc.arrays(), [grads[n] for n in nodes], state.enc_state, cfg.encoder_lr
        )
    )
    return loss.item()


def train_step(
    pair: GraphPair,
    enc: EncoderParams,
    disc: DiscriminatorParams,
    cfg: TrainConfig,
    state: TrainState,
    src_edges: np.ndarray | None = None,
    tgt_edges: np.ndarray | None = None,
) -> EpochRecord:
    """One adversarial round: ``cfg.disc_steps`` discriminator updates
    against the current embeddings, then one encoder update with freshly
    sampled negatives, then a loss evaluation of the updated parameters.
    ``enc`` and ``disc`` are updated in place (their arrays replaced).
    """
    started = time.perf_counter()
    state.ensure_optimizer(enc, disc)
    src_edges = pair.source.edges if src_edges is None else src_edges
    tgt_edges = pair.target.edges if tgt_edges is None else tgt_edges

    v_src_const, v_tgt_const = _encode_pair(enc, pair, state, cfg)
    for _ in range(cfg.disc_steps):
        discriminator_round(v_src_const.data, v_tgt_const.data, disc, cfg, state)

    batch_src = model.sample_edge_batch(src_edges, state.sampler_src, cfg.negative_samples)
    batch_tgt = model.sample_edge_batch(tgt_edges, state.sampler_tgt, cfg.negative_samples)
    encoder_round(pair, enc, disc, cfg, state, batch_src, batch_tgt)

    # report losses of the parameters as they now stand, on this step's batches
    record = evaluate_losses(pair, enc, disc, cfg, state, batch_src, batch_tgt)
    record.seconds = time.perf_counter() - started
    return record


def evaluate_losses(
    pair: GraphPair,
    enc: EncoderParams,
    disc: DiscriminatorParams,
    cfg: TrainConfig,
    state: TrainState,
    batch_src: model.EdgeBatch,
    batch_tgt: model.EdgeBatch,
    epoch: int = -1,
) -> EpochRecord:
    """Loss snapshot with no tape and no side effects on parameters."""
    v_src, v_tgt = _encode_pair(enc, pair, state, cfg)
    l_gcn = model.gcn_loss(v_src, v_tgt, batch_src, batch_tgt).item()
    s_src = model.discriminator_forward(disc, v_src)
    s_tgt = model.discriminator_forward(disc, v_tgt)
    l_d = model.discriminator_loss(s_src, s_tgt).item()
    l_adv = model.adversarial_loss(s_src, s_tgt).item()
    return EpochRecord(
        epoch=epoch,
        l_gcn=l_gcn,
        l_d=l_d,
        l_adv=l_adv,
        l_total=l_gcn + cfg.adv_weight * l_adv,
        mean_score_src=float(s_src.data.mean()),
        mean_score_tgt=float(s_tgt.data.mean()),
        seconds=0.0,
    )


@dataclass
class FitResult:
    encoder: EncoderParams
    discriminator: DiscriminatorParams
    embeddings_src: np.ndarray
    embeddings_tgt: np.ndarray
    log: TrainLog
    best_encoder: EncoderParams
    best_discriminator: DiscriminatorParams
    best_epoch: int
    best_total: float


def _edge_slices(edges: np.ndarray, batch_size: int | None, rng) -> list[np.ndarray]:
    if batch_size is None or edges.shape[0] <= batch_size:
        return [edges]
    order = rng.permutation(edges.shape[0])
    shuffled = edges[order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def fit(
    pair: GraphPair,
    cfg: TrainConfig,
    epoch_hook=None,
    diagnostics_path=None,
) -> FitResult:
    """Train on a graph pair from scratch.

    ``epoch_hook(epoch, record, enc, v_src, v_tgt)``, when given, observes
    each finished epoch; arrays passed to it are the live ones, so hooks
    must copy anything they keep. On a NaN/Inf loss the last finite-loss
    parameters are dumped to ``diagnostics_path`` (if given) and
    :class:`NonFiniteLoss` is raised with the failing epoch.
    """
    seeds = derive_seeds(cfg.seed)
    state = TrainState(pair, cfg)
    enc, disc = init_models(pair, cfg, seeds)
    log = TrainLog()
    best_total = math.inf
    best_epoch = -1
    best_enc, best_disc = enc.copy(), disc.copy()
    last_good = (enc.copy(), disc.copy(), -1)

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        try:
            if cfg.edge_batch_size is None:
                record = train_step(pair, enc, disc, cfg, state)
            else:
                src_parts = _edge_slices(pair.source.edges, cfg.edge_batch_size, state.batch_rng)
                tgt_parts = _edge_slices(pair.target.edges, cfg.edge_batch_size, state.batch_rng)
                steps = max(len(src_parts), len(tgt_parts))
                for i in range(steps):
                    train_step(
                        pair, enc, disc, cfg, state,
                        src_edges=src_parts[i % len(src_parts)],
                        tgt_edges=tgt_parts[i % len(tgt_parts)],
                    )
                # epoch-level snapshot over the full edge sets
                full_src = model.sample_edge_batch(
                    pair.source.edges, state.sampler_src, cfg.negative_samples
                )
                full_tgt = model.sample_edge_batch(
                    pair.target.edges, state.sampler_tgt, cfg.negative_samples
                )
                record = evaluate_losses(pair, enc, disc, cfg, state, full_src, full_tgt)
            if not all(
                math.isfinite(x)
                for x in (record.l_gcn, record.l_d, record.l_adv, record.l_total)
            ):
                raise NonFiniteValue("non-finite epoch losses")
        except NonFiniteValue as exc:
            if diagnostics_path is not None:
                good_enc, good_disc, good_epoch = last_good
                model.save_checkpoint(
                    diagnostics_path, good_enc, good_disc,
                    adv_weight=cfg.adv_weight, seed=cfg.seed,
                    extra={"last_finite_epoch": good_epoch, "failed_epoch": epoch},
                )
                logger.error("diverged at epoch %d; dumped %s", epoch, diagnostics_path)
            raise NonFiniteLoss(epoch, f"{exc} (epoch {epoch})") from exc

        record.epoch = epoch
        record.seconds = time.perf_counter() - started
        log.append(record)
        last_good = (enc.copy(), disc.copy(), epoch)
        if record.l_total < best_total:
            best_total = record.l_total
            best_epoch = epoch
            best_enc, best_disc = enc.copy(), disc.copy()
        if epoch_hook is not None:
            v_src, v_tgt = _encode_pair(enc, pair, state, cfg)
            epoch_hook(epoch, record, enc, v_src.data, v_tgt.data)
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            logger.info(
                "epoch %d: l_total=%.4f l_gcn=%.4f l_adv=%.4f", epoch,
                record.l_total, record.l_gcn, record.l_adv,
            )

    v_src, v_tgt = _encode_pair(enc, pair, state, cfg)
    return FitResult(
        encoder=enc,
        discriminator=disc,
        embeddings_src=v_src.data,
        embeddings_tgt=v_tgt.data,
        log=log,
        best_encoder=best_enc,
        best_discriminator=best_disc,
        best_epoch=best_epoch,
        best_total=best_total,
    )


def encode_pair(
    enc: EncoderParams, pair: GraphPair, hidden_activation: str = "relu"
) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings for both graphs from stored parameters, no training state."""
    v_src = model.encode(enc, build_propagation(pair.source), pair.source.features, hidden_activation)
    v_tgt = model.encode(enc, build_propagation(pair.target), pair.target.features, hidden_activation)
    return v_src.data, v_tgt.data


def with_adv_weight(cfg: TrainConfig, weight: float) -> TrainConfig:
    """Same run, different adversarial weight; seeds untouched so ablations
    differ in exactly one knob."""
    return replace(cfg, adv_weight=weight)
