"""Shared-weight graph encoder, discriminator, and training losses.

One stack of convolution weights encodes both graphs, which is what makes
their embedding spaces comparable at all. The structural loss keeps linked
nodes close (scored against degree-biased negatives); the least-squares
adversarial pair of losses then pushes the two embedding clouds toward a
common distribution: the discriminator learns to score source near 0 and
target near 1, the encoder is rewarded for making it score both wrong.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from . import compute
from .compute import GradTape, Tensor2
from .errors import EmptyInput, IndexOutOfRange, ShapeMismatch
from .graph import Graph, NegativeSampler, PropagationMatrix


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class EncoderParams:
    """Weight matrices of the convolution stack. No biases: the propagation
    step already mixes a self term into every row."""

    __slots__ = ("weights",)

    def __init__(self, weights: list[np.ndarray]):
        if not weights:
            raise ValueError("encoder needs at least one layer")
        for a, b in zip(weights, weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ShapeMismatch(
                    f"consecutive layers disagree: {a.shape} then {b.shape}"
                )
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]

    @classmethod
    def init(cls, layer_dims: list[int], seed: int) -> "EncoderParams":
        """Glorot-uniform weights for the given [input, hidden..., output] widths."""
        if len(layer_dims) < 2:
            raise ValueError("layer_dims needs an input and an output width")
        rng = np.random.default_rng(seed)
        return cls([_glorot(rng, a, b) for a, b in zip(layer_dims, layer_dims[1:])])

    @property
    def layer_dims(self) -> list[int]:
        return [w.shape[0] for w in self.weights] + [self.weights[-1].shape[1]]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights])

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights)

    def set_arrays(self, arrays: list[np.ndarray]) -> None:
        self.weights = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]

    def as_nodes(self, tape: GradTape) -> list[Tensor2]:
        return [tape.parameter(w) for w in self.weights]


class DiscriminatorParams:
    """An MLP scoring each embedding row with one real number.

    Hidden layers use relu; the last layer stays affine so scores can sit
    anywhere near the 0/1 targets of the least-squares objective.
    """

    __slots__ = ("weights", "biases")

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("one bias row per weight matrix")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(
        cls,
        input_dim: int,
        hidden_dim: int | None = None,
        hidden_layers: int = 2,
        seed: int = 0,
    ) -> "DiscriminatorParams":
        if hidden_layers < 0:
            raise ValueError("hidden_layers must be non-negative")
        hidden_dim = input_dim if hidden_dim is None else hidden_dim
        dims = [input_dim] + [hidden_dim] * hidden_layers + [1]
        rng = np.random.default_rng(seed)
        weights = [_glorot(rng, a, b) for a, b in zip(dims, dims[1:])]
        biases = [np.zeros((1, b)) for b in dims[1:]]
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [w.shape[0] for w in self.weights] + [1]

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, weights interleaved with their biases."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_arrays(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != 2 * len(self.weights):
            raise ValueError("array count does not match layer count")
        self.weights = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays[0::2]]
        self.biases = [np.ascontiguousarray(a, dtype=np.float64) for a in arrays[1::2]]

    def as_nodes(self, tape: GradTape) -> list[Tensor2]:
        return [tape.parameter(a) for a in self.arrays()]


_ACTIVATIONS = {
    "relu": compute.relu,
    "sigmoid": compute.sigmoid,
    "linear": lambda t: t,
}


def encode(
    params,
    prop: PropagationMatrix,
    features,
    hidden_activation: str = "relu",
) -> Tensor2:
    """Run the convolution stack over one graph.

    ``params`` is either :class:`EncoderParams` or the list of tape nodes
    from ``as_nodes`` when gradients are wanted. Hidden layers apply the
    activation; the final layer is linear so the output space is not boxed
    into one orthant.
    """
    weights = params.weights if isinstance(params, EncoderParams) else list(params)
    try:
        act = _ACTIVATIONS[hidden_activation]
    except KeyError:
        raise ValueError(f"unknown activation {hidden_activation!r}")
    h = features if isinstance(features, Tensor2) else Tensor2(features)
    last = len(weights) - 1
    for i, w in enumerate(weights):
        h = compute.matmul(compute.spmm(prop, h), w)
        if i < last:
            h = act(h)
    return h


class EdgeBatch:
    """Positive pairs plus per-pair negatives.

    ``pairs`` is (E, 2); column 0 is the anchor whose dot products are
    scored, against its linked partner and against ``negatives`` (E, Q)
    sampled nodes. Q may be zero.
    """

    __slots__ = ("pairs", "negatives")

    def __init__(self, pairs, negatives):
        pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)
        negatives = np.ascontiguousarray(negatives, dtype=np.int64)
        if negatives.ndim != 2 or negatives.shape[0] != pairs.shape[0]:
            raise ShapeMismatch(
                f"negatives {negatives.shape} do not align with pairs {pairs.shape}"
            )
        self.pairs = pairs
        self.negatives = negatives

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    @property
    def num_negatives(self) -> int:
        return self.negatives.shape[1]


def sample_edge_batch(
    edges: np.ndarray, sampler: NegativeSampler, num_negatives: int
) -> EdgeBatch:
    """Pair every edge with ``num_negatives`` freshly sampled nodes."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_negatives < 0:
        raise ValueError("num_negatives must be non-negative")
    draws = sampler.sample(edges.shape[0] * num_negatives)
    return EdgeBatch(edges, draws.reshape(edges.shape[0], num_negatives))


def edge_loss(v: Tensor2, batch: EdgeBatch) -> Tensor2:
    """Negative log likelihood of observed edges against sampled negatives.

    Sum over pairs of -log sigmoid(v_i . v_j), plus for each negative k of
    pair anchor i, -log sigmoid(-v_i . v_k). Sum reduction: every edge
    contributes the same weight regardless of batch size.
    """
    if batch.size == 0:
        return Tensor2(np.zeros((1, 1)))
    n = v.rows
    if batch.pairs.max() >= n or (
        batch.negatives.size and batch.negatives.max() >= n
    ):
        raise IndexOutOfRange(
            f"edge batch references rows outside [0, {n})"
        )
    anchors = compute.gather_rows(v, batch.pairs[:, 0])
    partners = compute.gather_rows(v, batch.pairs[:, 1])
    positive = compute.sum_all(compute.log_sigmoid(compute.row_dot(anchors, partners)))
    loss = compute.scale(positive, -1.0)
    if batch.num_negatives > 0:
        q = batch.num_negatives
        # anchor row repeated once per negative, flattened in row order
        anchor_idx = np.repeat(batch.pairs[:, 0], q)
        neg_rows = compute.gather_rows(v, batch.negatives.reshape(-1))
        anchor_rows = compute.gather_rows(v, anchor_idx)
        scores = compute.row_dot(anchor_rows, neg_rows)
        negative = compute.sum_all(compute.log_sigmoid(compute.scale(scores, -1.0)))
        loss = compute.add(loss, compute.scale(negative, -1.0))
    return loss


def gcn_loss(
    v_src: Tensor2, v_tgt: Tensor2, batch_src: EdgeBatch, batch_tgt: EdgeBatch
) -> Tensor2:
    """Structural loss summed over both graphs."""
    return compute.add(edge_loss(v_src, batch_src), edge_loss(v_tgt, batch_tgt))


def discriminator_forward(params, v) -> Tensor2:
    """Score each row of ``v``; returns (n, 1). ``params`` is either
    :class:`DiscriminatorParams` or its ``as_nodes`` list."""
    if isinstance(params, DiscriminatorParams):
        layers = list(zip(params.weights, params.biases))
    else:
        layers = list(zip(params[0::2], params[1::2]))
    h = v if isinstance(v, Tensor2) else Tensor2(v)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = compute.add_bias(compute.matmul(h, w), b)
        if i < last:
            h = compute.relu(h)
    return h


def _mean_square_to(scores: Tensor2, target: float) -> Tensor2:
    return compute.mean_all(compute.square(compute.add_scalar(scores, -target)))


def discriminator_loss(scores_src: Tensor2, scores_tgt: Tensor2) -> Tensor2:
    """Least squares toward the true domain labels: source 0, target 1."""
    if scores_src.rows == 0 or scores_tgt.rows == 0:
        raise EmptyInput("discriminator loss needs scores from both graphs")
    return compute.add(
        _mean_square_to(scores_src, 0.0), _mean_square_to(scores_tgt, 1.0)
    )


def adversarial_loss(scores_src: Tensor2, scores_tgt: Tensor2) -> Tensor2:
    """Least squares toward the flipped labels, rewarding embeddings the
    discriminator mistakes for the other graph."""
    if scores_src.rows == 0 or scores_tgt.rows == 0:
        raise EmptyInput("adversarial loss needs scores from both graphs")
    return compute.add(
        _mean_square_to(scores_src, 1.0), _mean_square_to(scores_tgt, 0.0)
    )


def total_loss(l_gcn: Tensor2, l_adv: Tensor2, weight: float) -> Tensor2:
    """Structural plus ``weight`` times adversarial. With weight 0 the
    adversarial branch contributes exactly zero gradient, not merely a
    small one."""
    return compute.add(l_gcn, compute.scale(l_adv, weight))


# --- checkpoints ---------------------------------------------------------------


CHECKPOINT_VERSION = 1


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path,
    encoder: EncoderParams,
    discriminator: DiscriminatorParams,
    *,
    adv_weight: float,
    seed: int,
    extra: dict | None = None,
) -> None:
    """Write everything needed to re-encode and resume: weights, the
    adversarial weight, and the run seed. Atomic so a crash never leaves a
    half-written file at the target path."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "adv_weight": float(adv_weight),
        "seed": int(seed),
        "encoder": {
            "layer_dims": encoder.layer_dims,
            "weights": [w.tolist() for w in encoder.weights],
        },
        "discriminator": {
            "layer_dims": discriminator.layer_dims,
            "weights": [w.tolist() for w in discriminator.weights],
            "biases": [b.tolist() for b in discriminator.biases],
        },
        "extra": extra or {},
    }
    _atomic_write_text(path, json.dumps(doc, sort_keys=True))


class Checkpoint:
    __slots__ = ("encoder", "discriminator", "adv_weight", "seed", "extra")

    def __init__(self, encoder, discriminator, adv_weight, seed, extra):
        self.encoder = encoder
        self.discriminator = discriminator
        self.adv_weight = adv_weight
        self.seed = seed
        self.extra = extra


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    encoder = EncoderParams([np.array(w, dtype=np.float64) for w in doc["encoder"]["weights"]])
    disc = DiscriminatorParams(
        [np.array(w, dtype=np.float64) for w in doc["discriminator"]["weights"]],
        [np.array(b, dtype=np.float64).reshape(1, -1) for b in doc["discriminator"]["biases"]],
    )
    if encoder.layer_dims != doc["encoder"]["layer_dims"]:
        raise ValueError("checkpoint encoder dims do not match stored weights")
    return Checkpoint(
        encoder, disc, float(doc["adv_weight"]), int(doc["seed"]), doc.get("extra", {})
    )
