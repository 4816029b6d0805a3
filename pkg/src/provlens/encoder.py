"""Message-passing node encoder trained with an identity-contrastive objective.

Each layer computes h_i' = act(W @ agg({h_j : j in N(i) or j == i})) where the
neighborhood is the undirected 1-hop set. Embeddings of nodes that share an
identity label are pulled together (and others pushed apart) by a temperature-
scaled softmax over cosine similarities. Forward and backward passes are
written out explicitly so gradients can be audited against finite differences.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .config import EncoderConfig
from .errors import ArtifactError, ConfigError, TrainingError
from .ingest import ProvenanceGraph

log = logging.getLogger(__name__)

EVAL_BATCH_CAP = 512


@dataclass
class EncoderParams:
    dims: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (dims[l+1], dims[l])
    activation: str = "relu"
    aggregation: str = "mean"
    seed: int = 0

    @property
    def num_layers(self) -> int:
        return len(self.weights)


@dataclass
class ContrastiveBatch:
    anchors: list[str]
    positives: list[str]
    negatives: list[tuple[str, ...]]
    temperature: float
    members: list[str] = field(default_factory=list)  # sampled batch nodes

    def __len__(self) -> int:
        return len(self.anchors)


@dataclass
class TrainResult:
    params: EncoderParams
    loss_trace: list[float] = field(default_factory=list)


def init_params(dims: list[int], activation: str = "relu",
                aggregation: str = "mean", seed: int = 0) -> EncoderParams:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    if len(dims) < 2:
        raise ConfigError("dims must contain at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights = []
    for l in range(len(dims) - 1):
        bound = 1.0 / math.sqrt(dims[l])
        weights.append(rng.uniform(-bound, bound, size=(dims[l + 1], dims[l])))
    return EncoderParams(dims=list(dims), weights=weights, activation=activation,
                         aggregation=aggregation, seed=seed)


def propagation_matrix(graph: ProvenanceGraph, uuids: list[str],
                       aggregation: str) -> sparse.csr_matrix:
    """Neighborhood operator: row i averages (or sums) the undirected 1-hop
    neighbor set of node i plus the node itself. Parallel edges count once."""
    pos = {u: i for i, u in enumerate(uuids)}
    neighbor_sets: list[set[int]] = [{i} for i in range(len(uuids))]
    for edge in graph.edges:
        i, j = pos.get(edge.src), pos.get(edge.dst)
        if i is None or j is None:
            continue
        neighbor_sets[i].add(j)
        neighbor_sets[j].add(i)
    rows, cols, vals = [], [], []
    for i, nbrs in enumerate(neighbor_sets):
        ordered = sorted(nbrs)
        value = 1.0 / len(ordered) if aggregation == "mean" else 1.0
        for j in ordered:
            rows.append(i)
            cols.append(j)
            vals.append(value)
    n = len(uuids)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _activate(s: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(s, 0.0)
    if kind == "tanh":
        return np.tanh(s)
    if kind == "identity":
        return s
    raise ConfigError(f"unknown activation {kind!r}")


def _activate_prime(s: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (s > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - np.tanh(s) ** 2
    if kind == "identity":
        return np.ones_like(s)
    raise ConfigError(f"unknown activation {kind!r}")


def forward_pass(prop: sparse.csr_matrix, h0: np.ndarray,
                 params: EncoderParams):
    """Run all layers, returning final embeddings and the per-layer cache
    (aggregated inputs and pre-activations) needed for backpropagation."""
    if h0.shape[1] != params.dims[0]:
        raise ConfigError(
            f"feature dimension {h0.shape[1]} does not match encoder input "
            f"dimension {params.dims[0]}")
    h = h0
    agg_cache, pre_cache = [], []
    for w in params.weights:
        aggregated = prop @ h
        pre = aggregated @ w.T
        agg_cache.append(aggregated)
        pre_cache.append(pre)
        h = _activate(pre, params.activation)
    return h, (agg_cache, pre_cache)


def backward_pass(prop: sparse.csr_matrix, params: EncoderParams, cache,
                  d_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. every layer weight matrix, given the
    loss gradient w.r.t. the final embeddings."""
    agg_cache, pre_cache = cache
    grads: list[np.ndarray] = [np.zeros_like(w) for w in params.weights]
    g = d_out
    for l in reversed(range(params.num_layers)):
        d_pre = g * _activate_prime(pre_cache[l], params.activation)
        grads[l] = d_pre.T @ agg_cache[l]
        if l > 0:
            g = prop.T @ (d_pre @ params.weights[l])
    return grads


def forward(graph: ProvenanceGraph, h0: dict[str, np.ndarray],
            params: EncoderParams) -> dict[str, np.ndarray]:
    """Embed every node of the graph; deterministic and read-only."""
    uuids = sorted(h0)
    if not uuids:
        return {}
    matrix = np.stack([np.asarray(h0[u], dtype=np.float64) for u in uuids])
    prop = propagation_matrix(graph, uuids, params.aggregation)
    z, _ = forward_pass(prop, matrix, params)
    return {u: z[i] for i, u in enumerate(uuids)}


# --- contrastive objective -------------------------------------------------

def _cosine_and_grads(a: np.ndarray, b: np.ndarray):
    """Cosine similarity plus its gradients w.r.t. both arguments. A zero-norm
    vector yields similarity 0 with zero gradient."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    cos = float(a @ b) / (na * nb)
    da = b / (na * nb) - cos * a / (na * na)
    db = a / (na * nb) - cos * b / (nb * nb)
    return cos, da, db


def infonce_loss_grad(z: np.ndarray, pairs, temperature: float):
    """Loss and dLoss/dZ for index-space pairs [(anchor, positive, negatives)].

    The loss is the sum over pairs of -log softmax(anchor-positive) against the
    anchor's negatives, with temperature-scaled cosine logits.
    """
    loss = 0.0
    dz = np.zeros_like(z)
    for anchor, positive, negatives in pairs:
        others = [positive] + list(negatives)
        logits = np.empty(len(others))
        grads_a = []
        grads_o = []
        for col, other in enumerate(others):
            cos, da, do = _cosine_and_grads(z[anchor], z[other])
            logits[col] = cos / temperature
            grads_a.append(da)
            grads_o.append(do)
        shift = logits - logits.max()
        softmax = np.exp(shift)
        softmax /= softmax.sum()
        loss -= shift[0] - math.log(np.exp(shift).sum())
        for col, other in enumerate(others):
            g = (softmax[col] - (1.0 if col == 0 else 0.0)) / temperature
            dz[anchor] += g * grads_a[col]
            dz[other] += g * grads_o[col]
    return loss, dz


def batch_indices(batch: ContrastiveBatch, uuids: list[str]):
    pos = {u: i for i, u in enumerate(uuids)}
    return [(pos[a], pos[p], tuple(pos[n] for n in negs))
            for a, p, negs in zip(batch.anchors, batch.positives, batch.negatives)]


def batch_loss_grad(z: np.ndarray, anchor_idx: np.ndarray, pos_idx: np.ndarray,
                    member_idx: np.ndarray, temperature: float):
    """Vectorized loss + dLoss/dZ for member-structured batches, where every
    anchor's negative set is the batch membership minus itself and its
    positive. Agrees with infonce_loss_grad to float precision; used by the
    training loop because the pairwise reference path is Python-loop bound.
    """
    if anchor_idx.size == 0:
        return 0.0, np.zeros_like(z)
    norms = np.linalg.norm(z, axis=1)
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    z_hat = z * inv[:, None]
    anchors = z_hat[anchor_idx]                      # (m, d)
    members = z_hat[member_idx]                      # (B, d)
    positives = z_hat[pos_idx]                       # (m, d)
    cos_members = anchors @ members.T                # (m, B)
    cos_pos = np.einsum("md,md->m", anchors, positives)

    valid = (member_idx[None, :] != anchor_idx[:, None]) \
        & (member_idx[None, :] != pos_idx[:, None])
    logit_pos = cos_pos / temperature
    logit_mem = cos_members / temperature
    shift = np.maximum(logit_pos,
                       np.max(np.where(valid, logit_mem, -np.inf), axis=1,
                              initial=-np.inf))
    exp_pos = np.exp(logit_pos - shift)
    exp_mem = np.where(valid, np.exp(logit_mem - shift[:, None]), 0.0)
    denom = exp_pos + exp_mem.sum(axis=1)
    loss = float(-np.sum(np.log(exp_pos / denom)))

    g_mem = exp_mem / denom[:, None] / temperature          # (m, B)
    g_pos = (exp_pos / denom - 1.0) / temperature           # (m,)

    row_dot = (g_mem * cos_members).sum(axis=1) + g_pos * cos_pos
    d_anchor = (g_mem @ members + g_pos[:, None] * positives
                - row_dot[:, None] * anchors)
    d_member = g_mem.T @ anchors \
        - (g_mem * cos_members).sum(axis=0)[:, None] * members
    d_positive = g_pos[:, None] * anchors - (g_pos * cos_pos)[:, None] * positives

    dz = np.zeros_like(z)
    np.add.at(dz, anchor_idx, d_anchor * inv[anchor_idx][:, None])
    np.add.at(dz, member_idx, d_member * inv[member_idx][:, None])
    np.add.at(dz, pos_idx, d_positive * inv[pos_idx][:, None])
    return loss, dz


def batch_index_arrays(batch: ContrastiveBatch, uuids: list[str]):
    pos = {u: i for i, u in enumerate(uuids)}
    return (np.array([pos[a] for a in batch.anchors], dtype=np.intp),
            np.array([pos[p] for p in batch.positives], dtype=np.intp),
            np.array([pos[m] for m in batch.members], dtype=np.intp))


def infonce_loss(embeddings: dict[str, np.ndarray],
                 batch: ContrastiveBatch) -> float:
    """Contrastive loss over uuid-space embeddings; always >= 0."""
    if batch.temperature <= 0:
        raise ConfigError("temperature must be positive")
    uuids = sorted(embeddings)
    z = np.stack([np.asarray(embeddings[u], dtype=np.float64) for u in uuids])
    loss, _ = infonce_loss_grad(z, batch_indices(batch, uuids),
                                batch.temperature)
    return loss


def sample_contrastive_batch(nodes: list[str], identities: dict[str, str],
                             batch_size: int, rng: np.random.Generator,
                             temperature: float = 0.1) -> ContrastiveBatch:
    """Draw a training batch.

    Batch members are a uniform sample of nodes. Each member whose identity has
    at least two members in the graph anchors one pair (its positive is drawn
    from all same-identity peers and both are consumed); every other batch
    member acts as that anchor's negative. Singleton identities can only ever
    appear as negatives.
    """
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    ordered = sorted(nodes)
    groups: dict[str, list[str]] = {}
    for node in ordered:
        groups.setdefault(identities[node], []).append(node)

    members = [ordered[i] for i in rng.permutation(len(ordered))[:batch_size]]
    anchors, positives, negatives = [], [], []
    consumed: set[str] = set()
    for member in members:
        if member in consumed:
            continue
        peers = [p for p in groups[identities[member]] if p != member]
        if not peers:
            continue
        positive = peers[int(rng.integers(len(peers)))]
        consumed.add(member)
        consumed.add(positive)
        anchors.append(member)
        positives.append(positive)
        negatives.append(tuple(m for m in members
                               if m != member and m != positive))
    if not anchors:
        log.warning("no identity with >= 2 members in batch sample; step skipped")
    return ContrastiveBatch(anchors=anchors, positives=positives,
                            negatives=negatives, temperature=temperature,
                            members=members)


def canonical_eval_batch(nodes: list[str], identities: dict[str, str],
                         temperature: float,
                         cap: int = EVAL_BATCH_CAP) -> ContrastiveBatch:
    """Deterministic batch used to trace training progress: the first ``cap``
    nodes in uuid order, each eligible one anchored with its first peer."""
    members = sorted(nodes)[:cap]
    groups: dict[str, list[str]] = {}
    for node in sorted(nodes):
        groups.setdefault(identities[node], []).append(node)
    anchors, positives, negatives = [], [], []
    for member in members:
        peers = [p for p in groups[identities[member]] if p != member]
        if not peers:
            continue
        positive = peers[0]
        anchors.append(member)
        positives.append(positive)
        negatives.append(tuple(m for m in members
                               if m != member and m != positive))
    return ContrastiveBatch(anchors=anchors, positives=positives,
                            negatives=negatives, temperature=temperature,
                            members=members)


def train(graph: ProvenanceGraph, h0: dict[str, np.ndarray],
          config: EncoderConfig, seed: int) -> TrainResult:
    """SGD over sampled contrastive batches; full-graph forward per step.

    The loss trace holds one entry per epoch, evaluated on a fixed canonical
    batch so the trace is comparable across epochs. Weights are rounded to
    float32-representable values at the end so that serialization round-trips
    exactly.
    """
    uuids = sorted(h0)
    if not uuids:
        raise ConfigError("cannot train an encoder on an empty graph")
    matrix = np.stack([np.asarray(h0[u], dtype=np.float64) for u in uuids])
    dims = [matrix.shape[1]] + [config.embedding_dim] * config.num_layers
    params = init_params(dims, activation=config.activation,
                         aggregation=config.aggregation, seed=seed)
    prop = propagation_matrix(graph, uuids, config.aggregation)
    identities = {u: graph.nodes[u].identity for u in uuids}
    rng = np.random.default_rng(seed)
    eval_arrays = batch_index_arrays(
        canonical_eval_batch(uuids, identities, config.temperature), uuids)

    batches_per_epoch = max(1, math.ceil(len(uuids) / config.batch_size))
    trace: list[float] = []
    for epoch in range(config.epochs):
        for step in range(batches_per_epoch):
            batch = sample_contrastive_batch(uuids, identities,
                                             config.batch_size, rng,
                                             config.temperature)
            if not batch.anchors:
                continue
            z, cache = forward_pass(prop, matrix, params)
            anchor_idx, pos_idx, member_idx = batch_index_arrays(batch, uuids)
            loss, dz = batch_loss_grad(z, anchor_idx, pos_idx, member_idx,
                                       config.temperature)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch} step {step}")
            grads = backward_pass(prop, params, cache, dz)
            for w, dw in zip(params.weights, grads):
                w -= config.learning_rate * dw
        z, _ = forward_pass(prop, matrix, params)
        epoch_loss, _ = batch_loss_grad(z, *eval_arrays, config.temperature)
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"non-finite evaluation loss after epoch {epoch}")
        trace.append(epoch_loss)

    params.weights = [w.astype("<f4").astype(np.float64) for w in params.weights]
    return TrainResult(params=params, loss_trace=trace)


# --- serialization ---------------------------------------------------------

def encoder_paths(directory: str | Path) -> dict[str, Path]:
    base = Path(directory)
    return {"header": base / "encoder.json",
            "weights": base / "encoder.weights.bin"}


def save_params(params: EncoderParams, directory: str | Path) -> None:
    paths = encoder_paths(directory)
    os.makedirs(directory, exist_ok=True)
    header = {
        "dims": params.dims,
        "activation": params.activation,
        "aggregation": params.aggregation,
        "seed": params.seed,
        "dtype": "<f4",
    }
    paths["header"].write_text(json.dumps(header, sort_keys=True) + "\n",
                               encoding="utf-8")
    blob = b"".join(w.astype("<f4").tobytes() for w in params.weights)
    paths["weights"].write_bytes(blob)


def load_params(directory: str | Path) -> EncoderParams:
    paths = encoder_paths(directory)
    for path in paths.values():
        if not path.exists():
            raise ArtifactError(f"missing encoder artifact {path}", path=str(path))
    header = json.loads(paths["header"].read_text(encoding="utf-8"))
    dims = header["dims"]
    raw = np.frombuffer(paths["weights"].read_bytes(), dtype="<f4")
    weights = []
    offset = 0
    for l in range(len(dims) - 1):
        size = dims[l + 1] * dims[l]
        weights.append(raw[offset:offset + size]
                       .reshape(dims[l + 1], dims[l]).astype(np.float64))
        offset += size
    if offset != raw.size:
        raise ArtifactError(f"encoder weight blob size mismatch in {paths['weights']}",
                            path=str(paths["weights"]))
    return EncoderParams(dims=dims, weights=weights,
                         activation=header["activation"],
                         aggregation=header["aggregation"], seed=header["seed"])
