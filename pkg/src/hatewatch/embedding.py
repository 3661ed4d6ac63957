"""Unsupervised 32-d channel embeddings and the hater/neutral classifier head.

The encoder is a two-layer directed neighborhood-aggregation network: each
layer mean-aggregates in-neighbors and out-neighbors separately, combines
them with the node's own representation through three weight matrices, and
applies a nonlinearity. Embeddings are trained contrastively: corrupted
graphs are generated by permuting the node-feature rows while keeping the
edges, a summary vector is the sigmoid of the mean true embedding, and a
bilinear discriminator learns to score true embeddings above corrupted ones
(binary cross-entropy). Optimization is adaptive-moment gradient descent
implemented here; everything is seeded and reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import HATER, NEUTRAL
from .graph import ChannelGraph
from .metrics import CLASSES, ConfusionMatrix, macro_f1, prf1

EMBED_DIM = 32

HEAD_CLASSES = (NEUTRAL, HATER)


# ---------------------------------------------------------------------------
# activations


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _softplus(z):
    return np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# encoder


@dataclass(frozen=True)
class LayerParams:
    w_self: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class EncoderParams:
    layers: tuple[LayerParams, ...]
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.layers[0].w_self.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w_self.shape[1]


def init_encoder(
    in_dim: int,
    rng: np.random.Generator,
    hidden_dim: int = EMBED_DIM,
    out_dim: int = EMBED_DIM,
    activation: str = "relu",
) -> EncoderParams:
    """Glorot-scaled random initialization of the two-layer encoder."""
    layers = []
    for d_in, d_out in ((in_dim, hidden_dim), (hidden_dim, out_dim)):
        scale = math.sqrt(2.0 / (d_in + d_out))
        layers.append(
            LayerParams(
                w_self=rng.normal(0.0, scale, (d_in, d_out)),
                w_in=rng.normal(0.0, scale, (d_in, d_out)),
                w_out=rng.normal(0.0, scale, (d_in, d_out)),
                bias=np.zeros(d_out),
            )
        )
    return EncoderParams(layers=tuple(layers), activation=activation)


def _aggregation_matrices(
    graph: ChannelGraph,
    order: Sequence[str],
    sample_size: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized mean aggregation over in- and out-neighbors.

    Rows of nodes without neighbors stay zero (empty-neighborhood aggregate
    is the zero vector). With a sample size, up to that many neighbors are
    drawn without replacement per node and direction.
    """
    index = {n: i for i, n in enumerate(order)}
    n = len(order)
    a_in = np.zeros((n, n))
    a_out = np.zeros((n, n))
    out_adj, in_adj = graph.adjacency_lists()
    for node in order:
        i = index[node]
        for mat, neighbors in ((a_in, in_adj[node]), (a_out, out_adj[node])):
            chosen = neighbors
            if sample_size is not None and len(neighbors) > sample_size:
                if rng is None:
                    raise ValueError("sampling requires an RNG")
                picks = rng.choice(len(neighbors), size=sample_size, replace=False)
                chosen = [neighbors[j] for j in sorted(picks)]
            if chosen:
                for m in chosen:
                    mat[i, index[m]] = 1.0 / len(chosen)
    return a_in, a_out


def _forward(
    params: EncoderParams,
    features: np.ndarray,
    a_in: np.ndarray,
    a_out: np.ndarray,
):
    """All-node forward pass; returns embeddings and per-layer caches."""
    h = features
    caches = []
    for layer in params.layers:
        h_in = a_in @ h
        h_out = a_out @ h
        z = h @ layer.w_self + h_in @ layer.w_in + h_out @ layer.w_out + layer.bias
        caches.append((h, h_in, h_out, z))
        h = _act(params.activation, z)
    return h, caches


def _backward(
    params: EncoderParams,
    caches,
    a_in: np.ndarray,
    a_out: np.ndarray,
    d_h: np.ndarray,
) -> list[LayerParams]:
    """Gradients of a scalar loss w.r.t. encoder parameters, given dL/dH."""
    grads: list[LayerParams] = [None] * len(params.layers)
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        h_prev, h_in, h_out, z = caches[idx]
        d_z = d_h * _act_grad(params.activation, z)
        grads[idx] = LayerParams(
            w_self=h_prev.T @ d_z,
            w_in=h_in.T @ d_z,
            w_out=h_out.T @ d_z,
            bias=d_z.sum(axis=0),
        )
        d_h = (
            d_z @ layer.w_self.T
            + a_in.T @ (d_z @ layer.w_in.T)
            + a_out.T @ (d_z @ layer.w_out.T)
        )
    return grads


def encode_all(
    graph: ChannelGraph,
    node_features: dict[str, Sequence[float]],
    params: EncoderParams,
    sample_size: Optional[int] = None,
    seed: Optional[int] = None,
) -> dict[str, np.ndarray]:
    """Embed every node; full-batch (all neighbors) unless a sample size is set."""
    order = sorted(graph.nodes)
    missing = [n for n in order if n not in node_features]
    if missing:
        raise ValueError(f"nodes without features: {missing[:5]}")
    x = np.array([node_features[n] for n in order], dtype=float)
    rng = np.random.default_rng(seed) if sample_size is not None else None
    a_in, a_out = _aggregation_matrices(graph, order, sample_size, rng)
    h, _ = _forward(params, x, a_in, a_out)
    return {n: h[i] for i, n in enumerate(order)}


def encode(
    graph: ChannelGraph,
    node_features: dict[str, Sequence[float]],
    params: EncoderParams,
    node: str,
    sample_size: Optional[int] = None,
    seed: Optional[int] = None,
) -> np.ndarray:
    if node not in graph.nodes:
        raise ValueError(f"unknown node {node!r}")
    return encode_all(graph, node_features, params, sample_size, seed)[node]


# ---------------------------------------------------------------------------
# adaptive-moment optimizer


class Adam:
    """Adaptive-moment gradient descent over a list of arrays."""

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g**2
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def _encoder_to_flat(params: EncoderParams) -> list[np.ndarray]:
    out = []
    for layer in params.layers:
        out.extend([layer.w_self, layer.w_in, layer.w_out, layer.bias])
    return out


def _encoder_from_flat(template: EncoderParams, arrays: list[np.ndarray]) -> EncoderParams:
    layers = []
    for i in range(len(template.layers)):
        w_self, w_in, w_out, bias = arrays[4 * i : 4 * i + 4]
        layers.append(LayerParams(w_self, w_in, w_out, bias))
    return EncoderParams(layers=tuple(layers), activation=template.activation)


# ---------------------------------------------------------------------------
# contrastive (corrupted-sample) training


@dataclass(frozen=True)
class DGIConfig:
    epochs_max: int = 500
    patience: int = 20
    learning_rate: float = 1e-3
    sample_size: Optional[int] = 10  # neighbors per direction per layer; None = all
    hidden_dim: int = EMBED_DIM
    out_dim: int = EMBED_DIM
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.sample_size is not None and self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


@dataclass
class DGIResult:
    params: EncoderParams
    discriminator: np.ndarray
    loss_history: list[float]
    stopped_epoch: int


def dgi_loss_and_grads(
    params: EncoderParams,
    discriminator: np.ndarray,
    features: np.ndarray,
    corrupt_features: np.ndarray,
    a_in: np.ndarray,
    a_out: np.ndarray,
):
    """Contrastive loss and analytic gradients.

    True embeddings H and corrupted embeddings H~ share encoder weights; the
    summary s = sigmoid(mean(H)); scores are the bilinear form h^T M s.
    Loss is mean binary cross-entropy with true graphs labeled 1 and
    corrupted graphs labeled 0.
    """
    n = features.shape[0]
    h, caches = _forward(params, features, a_in, a_out)
    h_c, caches_c = _forward(params, corrupt_features, a_in, a_out)
    mean_h = h.mean(axis=0)
    s = _sigmoid(mean_h)
    v = discriminator @ s
    pos = h @ v
    neg = h_c @ v
    loss = float((_softplus(-pos).sum() + _softplus(neg).sum()) / (2 * n))

    d_pos = -_sigmoid(-pos) / (2 * n)
    d_neg = _sigmoid(neg) / (2 * n)
    d_v = h.T @ d_pos + h_c.T @ d_neg
    d_m = np.outer(d_v, s)
    d_s = discriminator.T @ d_v
    d_mean = d_s * s * (1 - s)
    d_h = d_pos[:, None] * v + d_mean[None, :] / n
    d_hc = d_neg[:, None] * v
    grads = _backward(params, caches, a_in, a_out, d_h)
    grads_c = _backward(params, caches_c, a_in, a_out, d_hc)
    merged = [
        LayerParams(
            g.w_self + gc.w_self,
            g.w_in + gc.w_in,
            g.w_out + gc.w_out,
            g.bias + gc.bias,
        )
        for g, gc in zip(grads, grads_c)
    ]
    return loss, merged, d_m


def dgi_train(
    graph: ChannelGraph,
    node_features: dict[str, Sequence[float]],
    cfg: DGIConfig,
) -> DGIResult:
    """Train the encoder on true-vs-corrupted discrimination.

    Corruption permutes the feature rows each epoch while keeping edges.
    Early stopping monitors the training objective (the task is
    unsupervised): training stops after `patience` epochs without
    improvement and the best-loss parameters are returned.
    """
    if not graph.nodes:
        raise ValueError("empty graph")
    order = sorted(graph.nodes)
    x = np.array([node_features[n] for n in order], dtype=float)
    rng = np.random.default_rng(cfg.seed)
    params = init_encoder(
        x.shape[1], rng, cfg.hidden_dim, cfg.out_dim, cfg.activation
    )
    discriminator = rng.normal(
        0.0, 1.0 / math.sqrt(cfg.out_dim), (cfg.out_dim, cfg.out_dim)
    )
    opt = Adam(
        [a.shape for a in _encoder_to_flat(params)] + [discriminator.shape],
        lr=cfg.learning_rate,
    )
    best_loss = math.inf
    best_params, best_disc = params, discriminator
    since_improvement = 0
    history = []
    stopped = cfg.epochs_max
    for epoch in range(cfg.epochs_max):
        a_in, a_out = _aggregation_matrices(graph, order, cfg.sample_size, rng)
        perm = rng.permutation(x.shape[0])
        loss, grads, d_disc = dgi_loss_and_grads(
            params, discriminator, x, x[perm], a_in, a_out
        )
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"training diverged at epoch {epoch} (loss={loss})"
            )
        history.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_params, best_disc = params, discriminator
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.patience:
                stopped = epoch + 1
                break
        flat = _encoder_to_flat(params) + [discriminator]
        flat_grads = [
            g for layer in grads for g in (layer.w_self, layer.w_in, layer.w_out, layer.bias)
        ] + [d_disc]
        updated = opt.step(flat, flat_grads)
        params = _encoder_from_flat(params, updated[:-1])
        discriminator = updated[-1]
    return DGIResult(best_params, best_disc, history, stopped)


# ---------------------------------------------------------------------------
# dense classifier head


@dataclass(frozen=True)
class HeadParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def to_dict(self) -> dict:
        return {
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadParams":
        return cls(
            np.array(d["w1"]), np.array(d["b1"]),
            np.array(d["w2"]), np.array(d["b2"]),
        )


@dataclass(frozen=True)
class HeadConfig:
    epochs_max: int = 150
    patience: int = 60
    min_delta: float = 0.05  # on validation accuracy
    learning_rate: float = 1e-2
    hidden_dim: int = 16
    train_frac: float = 0.70
    val_frac: float = 0.15
    seed: int = 0


@dataclass
class TrainReport:
    train_idx: list[int]
    val_idx: list[int]
    test_idx: list[int]
    epoch_losses: list[float]
    stopped_epoch: int
    test_confusion: ConfusionMatrix
    f1_neutral: float
    f1_hater: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "train_idx": self.train_idx,
            "val_idx": self.val_idx,
            "test_idx": self.test_idx,
            "epoch_losses": self.epoch_losses,
            "stopped_epoch": self.stopped_epoch,
            "test_confusion": [list(r) for r in self.test_confusion.counts],
            "f1_neutral": self.f1_neutral,
            "f1_hater": self.f1_hater,
            "macro_f1": self.macro_f1,
        }


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def head_forward(head: HeadParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities (columns ordered neutral, hater)."""
    z1 = x @ head.w1 + head.b1
    a1 = np.maximum(z1, 0.0)
    return _softmax(a1 @ head.w2 + head.b2)


def head_loss_and_grads(head: HeadParams, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and analytic gradients; y holds class indices."""
    n = x.shape[0]
    z1 = x @ head.w1 + head.b1
    a1 = np.maximum(z1, 0.0)
    probs = _softmax(a1 @ head.w2 + head.b2)
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    g_w2 = a1.T @ d_logits
    g_b2 = d_logits.sum(axis=0)
    d_a1 = d_logits @ head.w2.T
    d_z1 = d_a1 * (z1 > 0)
    g_w1 = x.T @ d_z1
    g_b1 = d_z1.sum(axis=0)
    return loss, HeadParams(g_w1, g_b1, g_w2, g_b2)


def stratified_split(
    labels: Sequence[int],
    train_frac: float,
    val_frac: float,
    rng: np.random.Generator,
    max_redraws: int = 100,
) -> tuple[list[int], list[int], list[int]]:
    """70/15/15-style stratified split with both classes in every part."""
    labels = np.asarray(labels)
    n = len(labels)
    for _ in range(max_redraws):
        train, val, test = [], [], []
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(len(idx))]
            n_train = int(round(train_frac * len(idx)))
            n_val = int(round(val_frac * len(idx)))
            train.extend(idx[:n_train])
            val.extend(idx[n_train : n_train + n_val])
            test.extend(idx[n_train + n_val :])
        parts = (train, val, test)
        if all(len({labels[i] for i in part}) == 2 for part in parts):
            return sorted(train), sorted(val), sorted(test)
    raise ValueError("could not draw a split containing both classes everywhere")


def train_head(
    embeddings: np.ndarray,
    labels: Sequence[str],
    cfg: HeadConfig = HeadConfig(),
) -> tuple[HeadParams, TrainReport]:
    """Train the two-layer classifier on node embeddings.

    Cross-entropy loss with adaptive-moment updates; early stopping watches
    validation accuracy with the configured min_delta and patience; the
    parameters with the best validation accuracy are returned.
    """
    x = np.asarray(embeddings, dtype=float)
    y = np.array([HEAD_CLASSES.index(lbl) for lbl in labels])
    if x.shape[0] != len(y):
        raise ValueError("embeddings / labels length mismatch")
    if x.shape[0] < 10:
        raise ValueError("need at least 10 labeled nodes")
    if len(np.unique(y)) < 2:
        raise ValueError("labels contain a single class")
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx, test_idx = stratified_split(
        y, cfg.train_frac, cfg.val_frac, rng
    )
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    d = x.shape[1]
    scale1 = math.sqrt(2.0 / (d + cfg.hidden_dim))
    scale2 = math.sqrt(2.0 / (cfg.hidden_dim + 2))
    head = HeadParams(
        w1=rng.normal(0.0, scale1, (d, cfg.hidden_dim)),
        b1=np.zeros(cfg.hidden_dim),
        w2=rng.normal(0.0, scale2, (cfg.hidden_dim, 2)),
        b2=np.zeros(2),
    )
    opt = Adam(
        [head.w1.shape, head.b1.shape, head.w2.shape, head.b2.shape],
        lr=cfg.learning_rate,
    )
    best_acc = -math.inf  # best accuracy; best_head tracks its parameters
    marker = -math.inf  # accuracy level a new epoch must clear by min_delta
    best_head = head
    since_improvement = 0
    losses = []
    stopped = cfg.epochs_max
    for epoch in range(cfg.epochs_max):
        loss, grads = head_loss_and_grads(head, x_train, y_train)
        losses.append(loss)
        w1, b1, w2, b2 = opt.step(
            [head.w1, head.b1, head.w2, head.b2],
            [grads.w1, grads.b1, grads.w2, grads.b2],
        )
        head = HeadParams(w1, b1, w2, b2)
        val_pred = head_forward(head, x_val).argmax(axis=1)
        val_acc = float(np.mean(val_pred == y_val))
        if val_acc >= best_acc:
            best_acc = val_acc
            best_head = head
        if marker == -math.inf or val_acc >= marker + cfg.min_delta:
            marker = val_acc
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.patience:
                stopped = epoch + 1
                break

    test_pred = head_forward(best_head, x[test_idx]).argmax(axis=1)
    y_test = y[test_idx]
    cm = ConfusionMatrix(
        (
            (
                int(np.sum((y_test == 0) & (test_pred == 0))),
                int(np.sum((y_test == 0) & (test_pred == 1))),
            ),
            (
                int(np.sum((y_test == 1) & (test_pred == 0))),
                int(np.sum((y_test == 1) & (test_pred == 1))),
            ),
        )
    )
    report = TrainReport(
        train_idx=list(map(int, train_idx)),
        val_idx=list(map(int, val_idx)),
        test_idx=list(map(int, test_idx)),
        epoch_losses=losses,
        stopped_epoch=stopped,
        test_confusion=cm,
        f1_neutral=prf1(cm, CLASSES[0])[2],
        f1_hater=prf1(cm, CLASSES[1])[2],
        macro_f1=macro_f1(cm),
    )
    return best_head, report


def predict_channel(
    embedding: Sequence[float], head: HeadParams
) -> tuple[str, tuple[float, float]]:
    """Label and class probabilities for one embedding; ties go to neutral."""
    x = np.asarray(embedding, dtype=float)
    if x.shape != (head.w1.shape[0],):
        raise ValueError(
            f"embedding dim {x.shape} != expected ({head.w1.shape[0]},)"
        )
    probs = head_forward(head, x[None, :])[0]
    label = HEAD_CLASSES[int(probs[1] > probs[0])]
    return label, (float(probs[0]), float(probs[1]))
