"""Two-layer graph attention network with dot-product link scoring.

Layer 1 runs two attention heads over implicit identity features (so its
per-head weight matrix doubles as a learnable node embedding table) and
concatenates the head outputs; an ELU sits between the layers; layer 2 runs
a single head and emits the final embeddings.  A pair (u, v) is scored as
sigmoid(h_u . h_v).

Attention per head for destination i over its in-neighborhood N(i), which
always includes i itself via an added self-loop:

    e_ij   = leaky_relu(a . [W h_i || W h_j])        (slope 0.2)
    alpha  = softmax over j in N(i), one term per edge instance

The softmax subtracts the per-destination max before exponentiating, which
changes nothing mathematically and keeps large scores finite.  Gradients
come from the reverse-mode tape in `autodiff`, so they are exact.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, LossError, ModelError, TrainingError
from .graph import WindowedGraph, build_graph, unique_edge_set
from .preprocess import TimeWindow
from .sampling import DEFAULT_RETRY_FACTOR, SamplingStrategy, draw_negatives
from .seeding import derive_rng

LEAKY_SLOPE = 0.2
ELU_ALPHA = 1.0
PROB_EPS = 1e-7
DEFAULT_SNAPSHOT_EPOCHS = (0, 49, 99, 149, 199)
CHECKPOINT_FORMAT = "tracelink-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GatDims:
    n_nodes: int
    hidden: int
    heads: int


@dataclass
class LayerParams:
    """One attention layer: per-head weight matrix plus attention vector."""

    weights: list[np.ndarray]  # each (fan_in, out_dim)
    att: list[np.ndarray]  # each (2 * out_dim,)

    @property
    def n_heads(self) -> int:
        return len(self.weights)


@dataclass
class AttentionRecord:
    """Layer-1 attention for one forward pass.

    Edges are the graph's edge instances followed by one self-loop per node;
    `coeffs[e, k]` is head k's coefficient for edge e.  For every destination
    the coefficients over its incoming entries sum to 1 per head.
    """

    edge_src: np.ndarray
    edge_dst: np.ndarray
    coeffs: np.ndarray  # (n_edges + n_nodes, n_heads)
    n_nodes: int


@dataclass
class GatParams:
    """All learnable parameters plus the most recent attention record."""

    layer1: LayerParams
    layer2: LayerParams
    dims: GatDims
    last_attention: AttentionRecord | None = None


@dataclass(frozen=True, slots=True)
class LossEntry:
    epoch: int
    window_index: int
    loss: float


@dataclass
class TrainArtifacts:
    loss_history: list[LossEntry]
    attention_snapshots: dict[int, AttentionRecord]
    params: GatParams


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(n_nodes: int, hidden: int, heads: int, rng: np.random.Generator) -> GatParams:
    """Glorot-uniform initialization; draw order is fixed for determinism."""
    if n_nodes < 1 or hidden < 1 or heads < 1:
        raise ModelError(
            f"dimensions must be positive, got n_nodes={n_nodes}, hidden={hidden}, heads={heads}"
        )
    w1 = [_glorot(rng, n_nodes, hidden, (n_nodes, hidden)) for _ in range(heads)]
    a1 = [_glorot(rng, 2 * hidden, 1, (2 * hidden,)) for _ in range(heads)]
    w2 = [_glorot(rng, heads * hidden, hidden, (heads * hidden, hidden))]
    a2 = [_glorot(rng, 2 * hidden, 1, (2 * hidden,))]
    return GatParams(LayerParams(w1, a1), LayerParams(w2, a2), GatDims(n_nodes, hidden, heads))


# ---------------------------------------------------------------------------
# forward pass

def _loop_edges(graph: WindowedGraph) -> tuple[np.ndarray, np.ndarray]:
    """Edge arrays with one self-loop per node appended."""
    loops = np.arange(graph.n_nodes, dtype=np.int64)
    src = np.concatenate([graph.edge_src, loops])
    dst = np.concatenate([graph.edge_dst, loops])
    return src, dst

def _head_attention(wh: Tensor, att: Tensor, src: np.ndarray, dst: np.ndarray, n: int) -> Tensor:
    """Per-edge softmax coefficients for one head (edges include self-loops)."""
    out_dim = wh.shape[1]
    s_dst = wh @ ad.narrow(att, 0, out_dim)
    s_src = wh @ ad.narrow(att, out_dim, 2 * out_dim)
    scores = ad.leaky_relu(ad.gather(s_dst, dst) + ad.gather(s_src, src), LEAKY_SLOPE)
    shift = ad.segment_max(scores.data, dst, n)
    weights = ad.exp(scores - Tensor(shift[dst]))
    denom = ad.scatter_add(weights, dst, n)
    return weights / ad.gather(denom, dst)


def _head_aggregate(wh: Tensor, alpha: Tensor, src: np.ndarray, dst: np.ndarray, n: int) -> Tensor:
    messages = ad.gather(wh, src) * ad.reshape(alpha, (-1, 1))
    return ad.scatter_add(messages, dst, n)


def _layer_forward(
    whs: Sequence[Tensor],
    atts: Sequence[Tensor],
    src: np.ndarray,
    dst: np.ndarray,
    n: int,
    concat_heads: bool,
) -> tuple[Tensor, list[Tensor]]:
    alphas = [_head_attention(wh, a, src, dst, n) for wh, a in zip(whs, atts)]
    heads = [_head_aggregate(wh, al, src, dst, n) for wh, al in zip(whs, alphas)]
    if len(heads) == 1:
        return heads[0], alphas
    if not concat_heads:
        raise ModelError("multi-head layers must either concat or be single-head")
    return ad.concat(heads, axis=1), alphas


@dataclass
class _TensorParams:
    w1: list[Tensor]
    a1: list[Tensor]
    w2: Tensor
    a2: Tensor


def _wrap(params: GatParams, requires_grad: bool) -> _TensorParams:
    return _TensorParams(
        [Tensor(w, requires_grad) for w in params.layer1.weights],
        [Tensor(a, requires_grad) for a in params.layer1.att],
        Tensor(params.layer2.weights[0], requires_grad),
        Tensor(params.layer2.att[0], requires_grad),
    )


def _forward(pt: _TensorParams, graph: WindowedGraph) -> tuple[Tensor, AttentionRecord]:
    """Identity features -> layer 1 (concat heads) -> ELU -> layer 2."""
    n = graph.n_nodes
    src, dst = _loop_edges(graph)
    # With identity input features, layer 1's transformed features are the
    # weight matrices themselves: row j of W is W @ x_j for one-hot x_j.
    h1, alphas = _layer_forward(pt.w1, pt.a1, src, dst, n, concat_heads=True)
    x2 = ad.elu(h1, ELU_ALPHA)
    wh2 = x2 @ pt.w2
    h2, _ = _layer_forward([wh2], [pt.a2], src, dst, n, concat_heads=False)
    record = AttentionRecord(src, dst, np.stack([a.data for a in alphas], axis=1), n)
    return h2, record


def _check_graph(params: GatParams, graph: WindowedGraph) -> None:
    if graph.n_nodes != params.dims.n_nodes:
        raise ModelError(
            f"graph has {graph.n_nodes} nodes but the model was built for {params.dims.n_nodes}"
        )


def model_forward(params: GatParams, graph: WindowedGraph) -> tuple[np.ndarray, AttentionRecord]:
    """Embeddings for every node, plus the layer-1 attention record.

    The record is also stored on `params.last_attention`.
    """
    _check_graph(params, graph)
    emb, record = _forward(_wrap(params, requires_grad=False), graph)
    params.last_attention = record
    return emb.data, record


def attention_coefficients(
    layer: LayerParams, features: np.ndarray, graph: WindowedGraph
) -> AttentionRecord:
    """Attention for one layer over explicit features (testing/inspection)."""
    n = graph.n_nodes
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise ModelError(f"features must be ({n}, fan_in), got {features.shape}")
    src, dst = _loop_edges(graph)
    alphas = []
    for w, a in zip(layer.weights, layer.att):
        if features.shape[1] != w.shape[0]:
            raise ModelError(
                f"feature dim {features.shape[1]} does not match weight fan-in {w.shape[0]}"
            )
        wh = Tensor(features @ w)
        alphas.append(_head_attention(wh, Tensor(a), src, dst, n).data)
    return AttentionRecord(src, dst, np.stack(alphas, axis=1), n)


def gat_layer_forward(
    layer: LayerParams, features: np.ndarray, graph: WindowedGraph, concat_heads: bool = True
) -> np.ndarray:
    """One attention layer over explicit features; no output activation."""
    n = graph.n_nodes
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise ModelError(f"features must be ({n}, fan_in), got {features.shape}")
    for w in layer.weights:
        if features.shape[1] != w.shape[0]:
            raise ModelError(
                f"feature dim {features.shape[1]} does not match weight fan-in {w.shape[0]}"
            )
    src, dst = _loop_edges(graph)
    whs = [Tensor(features @ w) for w in layer.weights]
    atts = [Tensor(a) for a in layer.att]
    out, _ = _layer_forward(whs, atts, src, dst, n, concat_heads)
    return out.data


# ---------------------------------------------------------------------------
# link scoring and loss

def link_probability(embeddings: np.ndarray, src, dst):
    """sigmoid(h_src . h_dst); src/dst may be ints or index arrays."""
    scalar = np.ndim(src) == 0 and np.ndim(dst) == 0
    scores = np.atleast_1d(np.sum(embeddings[src] * embeddings[dst], axis=-1)).astype(np.float64)
    out = np.empty_like(scores)
    pos = scores >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-scores[pos]))
    ex = np.exp(scores[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out[0]) if scalar else out


def bce_loss(pos_probs: np.ndarray, neg_probs: np.ndarray) -> float:
    """Mean binary cross-entropy over positives (label 1) and negatives
    (label 0), with probabilities clamped to [eps, 1-eps]."""
    pos_probs = np.atleast_1d(np.asarray(pos_probs, dtype=np.float64))
    neg_probs = np.atleast_1d(np.asarray(neg_probs, dtype=np.float64))
    total = pos_probs.size + neg_probs.size
    if total == 0:
        raise LossError("loss is undefined with no scored pairs at all")
    pos = np.clip(pos_probs, PROB_EPS, 1.0 - PROB_EPS)
    neg = np.clip(neg_probs, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(np.log(pos).sum() + np.log1p(-neg).sum()) / total)


def classify_links(probs: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Predicted labels: 1 where probability strictly exceeds tau."""
    return (np.asarray(probs) > tau).astype(np.int64)


def _pair_scores(emb: Tensor, pairs: np.ndarray) -> Tensor:
    return ad.tsum(ad.gather(emb, pairs[:, 0]) * ad.gather(emb, pairs[:, 1]), axis=1)


def _pair_probs(emb: Tensor, pairs: np.ndarray) -> Tensor:
    return ad.sigmoid(_pair_scores(emb, pairs))


def compute_gradients(
    params: GatParams,
    graph: WindowedGraph,
    pos_edges: np.ndarray,
    neg_edges: np.ndarray,
) -> tuple[GatParams, float]:
    """Exact loss gradients for one training step.

    Returns (grads, loss) where grads mirrors the GatParams array structure.
    Parameters that cannot influence any scored pair get exact zeros.
    """
    _check_graph(params, graph)
    pos_edges = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    neg_edges = np.asarray(neg_edges, dtype=np.int64).reshape(-1, 2)
    total = len(pos_edges) + len(neg_edges)
    if total == 0:
        raise LossError("cannot take a step with no positive and no negative pairs")
    pt = _wrap(params, requires_grad=True)
    emb, record = _forward(pt, graph)
    # BCE in logit form: -log sigmoid(z) = softplus(-z) and
    # -log(1 - sigmoid(z)) = softplus(z). Working on the raw pair scores keeps
    # the per-pair gradient at exactly sigmoid(z) - label, which stays finite
    # and corrective even for pairs scored with extreme confidence.
    terms = []
    if len(pos_edges):
        terms.append(ad.tsum(ad.softplus(ad.neg(_pair_scores(emb, pos_edges)))))
    if len(neg_edges):
        terms.append(ad.tsum(ad.softplus(_pair_scores(emb, neg_edges))))
    total_nll = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    loss = total_nll / float(total)
    loss.backward()

    def grad_of(t: Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    grads = GatParams(
        LayerParams([grad_of(t) for t in pt.w1], [grad_of(t) for t in pt.a1]),
        LayerParams([grad_of(pt.w2)], [grad_of(pt.a2)]),
        params.dims,
    )
    params.last_attention = record
    return grads, float(loss.data)


# ---------------------------------------------------------------------------
# optimizer

def _param_arrays(params: GatParams) -> list[np.ndarray]:
    """Canonical flat view: layer1 weights, layer1 att, layer2 weight, att."""
    return [*params.layer1.weights, *params.layer1.att, *params.layer2.weights, *params.layer2.att]


@dataclass
class AdamState:
    """First/second moment estimates, laid out like `_param_arrays`."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam_state(params: GatParams) -> AdamState:
    arrays = _param_arrays(params)
    return AdamState([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def optimizer_step(params: GatParams, grads: GatParams, state: AdamState, lr: float = 0.01) -> None:
    """One Adam update, in place, with the standard bias correction."""
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for arr, g, m, v in zip(_param_arrays(params), _param_arrays(grads), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# training loop

def train(
    params: GatParams,
    train_windows: Sequence[TimeWindow],
    sampling: SamplingStrategy,
    *,
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    snapshot_epochs: Iterable[int] = DEFAULT_SNAPSHOT_EPOCHS,
    retry_factor: int = DEFAULT_RETRY_FACTOR,
) -> TrainArtifacts:
    """Epochs over the non-empty train windows, one Adam step per window.

    Each step scores the window's edge instances as positives, draws fresh
    negatives by the configured strategy (independently seeded per epoch and
    window), and minimizes binary cross-entropy.  Gradients never carry over
    between steps.  At each snapshot epoch the attention record of the
    epoch's final forward pass is kept.
    """
    if epochs < 1:
        raise TrainingError(f"epochs must be positive, got {epochs}")
    prepared = []
    for window in train_windows:
        if not window.events:
            continue
        g = build_graph(window, params.dims.n_nodes)
        pos = np.stack([g.edge_src, g.edge_dst], axis=1)
        prepared.append((window.index, g, unique_edge_set(g), pos))
    if not prepared:
        raise TrainingError("every training window is empty; nothing to learn from")

    snapshots_at = set(int(e) for e in snapshot_epochs)
    state = init_adam_state(params)
    history: list[LossEntry] = []
    snapshots: dict[int, AttentionRecord] = {}
    for epoch in range(epochs):
        for window_index, g, existing, pos in prepared:
            rng = derive_rng(seed, "train-sampling", epoch, window_index)
            neg = draw_negatives(sampling, g, existing, rng, retry_factor)
            grads, loss = compute_gradients(params, g, pos, neg)
            optimizer_step(params, grads, state, lr)
            history.append(LossEntry(epoch, window_index, loss))
        if epoch in snapshots_at and params.last_attention is not None:
            snapshots[epoch] = params.last_attention
    return TrainArtifacts(history, snapshots, params)


# ---------------------------------------------------------------------------
# checkpoint io

def _array_entries(params: GatParams) -> list[tuple[str, np.ndarray]]:
    entries = [(f"layer1.w.{k}", w) for k, w in enumerate(params.layer1.weights)]
    entries += [(f"layer1.a.{k}", a) for k, a in enumerate(params.layer1.att)]
    entries.append(("layer2.w", params.layer2.weights[0]))
    entries.append(("layer2.a", params.layer2.att[0]))
    return entries


def save_checkpoint(params: GatParams, path: str | Path, mapping_sha256: str = "") -> None:
    """Versioned container: one JSON header line, then raw little-endian
    float64 array bytes in the header's order."""
    entries = _array_entries(params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "n_nodes": params.dims.n_nodes,
        "hidden": params.dims.hidden,
        "heads": params.dims.heads,
        "mapping_sha256": mapping_sha256,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in entries],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        handle.write(b"\n")
        for _, a in entries:
            handle.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[GatParams, str]:
    """Inverse of save_checkpoint; returns (params, mapping_sha256)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        header_line = handle.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable checkpoint header in {path}") from exc
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = handle.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"checkpoint {path} is truncated")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    dims = GatDims(int(header["n_nodes"]), int(header["hidden"]), int(header["heads"]))
    try:
        w1 = [arrays[f"layer1.w.{k}"] for k in range(dims.heads)]
        a1 = [arrays[f"layer1.a.{k}"] for k in range(dims.heads)]
        layer2 = LayerParams([arrays["layer2.w"]], [arrays["layer2.a"]])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing array {exc}") from exc
    params = GatParams(LayerParams(w1, a1), layer2, dims)
    expect = [
        ((dims.n_nodes, dims.hidden), w1),
        ((2 * dims.hidden,), a1),
    ]
    for shape, group in expect:
        for a in group:
            if a.shape != shape:
                raise CheckpointError(f"checkpoint array has shape {a.shape}, expected {shape}")
    if layer2.weights[0].shape != (dims.heads * dims.hidden, dims.hidden):
        raise CheckpointError("layer-2 weight shape does not match the stored dimensions")
    if layer2.att[0].shape != (2 * dims.hidden,):
        raise CheckpointError("layer-2 attention shape does not match the stored dimensions")
    return params, str(header.get("mapping_sha256", ""))
