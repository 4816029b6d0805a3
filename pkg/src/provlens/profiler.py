"""Benign identity profiles and the retrieval-augmented knowledge base.

Each identity observed in benign graphs gets a hypersphere profile: the
centroid of its member embeddings and the smallest radius that still encloses
at least a (1 - epsilon) fraction of them. The knowledge base additionally
indexes every member embedding and its provenance metadata so detection and
the investigation agents can retrieve benign reference behavior.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, forward
from .errors import ArtifactError, ConfigError
from .features import SemanticVocab, feature_matrix
from .ingest import ProvenanceGraph, incident_edges

log = logging.getLogger(__name__)

DIGEST_EDGE_LIMIT = 20


@dataclass
class IdentityProfile:
    label: str
    centroid: np.ndarray
    radius: float
    count: int


@dataclass
class BenignKnowledgeBase:
    epsilon: float
    profiles: dict[str, IdentityProfile]
    member_embeddings: dict[str, list[tuple[str, np.ndarray]]]
    metadata: dict[str, dict] = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        profile = next(iter(self.profiles.values()))
        return profile.centroid.shape[0]

    def size(self) -> int:
        return sum(len(v) for v in self.member_embeddings.values())


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Single shared distance routine. Profiling and detection must agree
    bitwise on member distances, so neither may use a matrix-axis reduction
    (its summation order differs from the 1-D one in the last ulp)."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64)
                                - np.asarray(b, dtype=np.float64)))


def compute_centroid(members) -> np.ndarray:
    members = [np.asarray(m, dtype=np.float64) for m in members]
    if not members:
        raise ValueError("cannot compute the centroid of zero members")
    return np.mean(np.stack(members), axis=0)


def compute_radius(members, centroid: np.ndarray, epsilon: float) -> float:
    """Smallest radius enclosing at least a (1 - epsilon) fraction of members:
    the ceil((1 - epsilon) * N)-th smallest distance to the centroid."""
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError("epsilon must lie in [0, 1)")
    if not members:
        raise ValueError("cannot compute a radius over zero members")
    distances = sorted(euclidean_distance(m, centroid) for m in members)
    m = math.ceil((1.0 - epsilon) * len(members))
    return distances[m - 1]


def edge_digest(graph: ProvenanceGraph, uuid: str,
                limit: int = DIGEST_EDGE_LIMIT) -> list[str]:
    """Readable one-line summaries of a node's incident edges, temporal order."""
    lines = []
    for edge in incident_edges(graph, uuid)[:limit]:
        if edge.src == uuid:
            other, arrow = edge.dst, "->"
        else:
            other, arrow = edge.src, "<-"
        other_id = graph.nodes[other].identity if other in graph.nodes else other
        lines.append(f"{arrow} {edge.operation} {other_id} "
                     f"w={edge.weight} t=[{edge.first_ts}..{edge.last_ts}]")
    return lines


def build_knowledge_base(graphs, params: EncoderParams, vocab: SemanticVocab,
                         epsilon: float, op_vocab) -> BenignKnowledgeBase:
    """Embed every node of the benign graphs and profile each identity."""
    graphs = list(graphs)
    if not graphs:
        raise ConfigError("knowledge base needs at least one benign graph")
    member_embeddings: dict[str, list[tuple[str, np.ndarray]]] = {}
    metadata: dict[str, dict] = {}
    for graph in graphs:
        uuids, h0 = feature_matrix(graph, vocab, op_vocab)
        embeddings = forward(graph, dict(zip(uuids, h0)), params)
        for uuid in uuids:
            node = graph.nodes[uuid]
            if uuid in metadata:
                log.warning("duplicate node uuid %s across benign graphs", uuid)
            member_embeddings.setdefault(node.identity, []).append(
                (uuid, embeddings[uuid]))
            metadata[uuid] = {
                "identity": node.identity,
                "kind": node.kind,
                "attrs": node.attrs,
                "graph": graph.name,
                "edges": edge_digest(graph, uuid),
            }
    profiles: dict[str, IdentityProfile] = {}
    for label in sorted(member_embeddings):
        members = sorted(member_embeddings[label], key=lambda m: m[0])
        member_embeddings[label] = members
        vectors = [vec for _, vec in members]
        centroid = compute_centroid(vectors)
        radius = compute_radius(vectors, centroid, epsilon)
        profiles[label] = IdentityProfile(label=label, centroid=centroid,
                                          radius=radius, count=len(vectors))
    return BenignKnowledgeBase(epsilon=epsilon, profiles=profiles,
                               member_embeddings=member_embeddings,
                               metadata=metadata)


def knn_query(kb: BenignKnowledgeBase, query: np.ndarray,
              k: int) -> list[tuple[str, str, float]]:
    """Exact k nearest benign members by Euclidean distance, ties broken by
    uuid. Linear scan; fine at the scale a single host produces."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    scored = []
    for label, members in kb.member_embeddings.items():
        for uuid, vec in members:
            scored.append((euclidean_distance(vec, query), uuid, label))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(uuid, label, dist) for dist, uuid, label in scored[:k]]


def attribute_query(kb: BenignKnowledgeBase, pattern: str) -> list[str]:
    """Members matching ``pattern``: exact identity matches first, then
    case-insensitive substring matches over identity and attribute values."""
    exact = sorted(uuid for uuid, meta in kb.metadata.items()
                   if meta["identity"] == pattern)
    exact_set = set(exact)
    needle = pattern.lower()

    def matches(meta: dict) -> bool:
        if needle in meta["identity"].lower():
            return True
        return any(needle in str(v).lower() for v in meta["attrs"].values())

    partial = sorted(uuid for uuid, meta in kb.metadata.items()
                     if uuid not in exact_set and matches(meta))
    return exact + partial


def export_embeddings(kb: BenignKnowledgeBase, path: str | Path) -> None:
    """CSV dump (uuid, identity, z components) for external visualization."""
    rows = []
    for label in sorted(kb.member_embeddings):
        for uuid, vec in kb.member_embeddings[label]:
            rows.append((uuid, label, vec))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = kb.embedding_dim if kb.profiles else 0
        writer.writerow(["uuid", "identity"] + [f"z{i}" for i in range(dim)])
        for uuid, label, vec in rows:
            writer.writerow([uuid, label] + [repr(float(x)) for x in vec])


# --- serialization ---------------------------------------------------------

def kb_paths(directory: str | Path) -> dict[str, Path]:
    base = Path(directory)
    return {
        "profiles": base / "kb.profiles.json",
        "embeddings": base / "kb.embeddings.bin",
        "manifest": base / "kb.manifest.json",
        "metadata": base / "kb.metadata.jsonl",
    }


def save_kb(kb: BenignKnowledgeBase, directory: str | Path) -> None:
    paths = kb_paths(directory)
    os.makedirs(directory, exist_ok=True)
    profiles = {
        label: {"centroid": [float(x) for x in profile.centroid],
                "radius": profile.radius, "count": profile.count}
        for label, profile in kb.profiles.items()
    }
    paths["profiles"].write_text(
        json.dumps({"epsilon": kb.epsilon, "profiles": profiles},
                   sort_keys=True) + "\n", encoding="utf-8")
    manifest = []
    blocks = []
    for label in sorted(kb.member_embeddings):
        for uuid, vec in kb.member_embeddings[label]:
            manifest.append([uuid, label])
            blocks.append(np.asarray(vec, dtype="<f8").tobytes())
    paths["manifest"].write_text(json.dumps(manifest) + "\n", encoding="utf-8")
    paths["embeddings"].write_bytes(b"".join(blocks))
    with open(paths["metadata"], "w", encoding="utf-8") as fh:
        for uuid in sorted(kb.metadata):
            fh.write(json.dumps({"uuid": uuid, **kb.metadata[uuid]},
                                sort_keys=True) + "\n")


def load_kb(directory: str | Path) -> BenignKnowledgeBase:
    paths = kb_paths(directory)
    for path in paths.values():
        if not path.exists():
            raise ArtifactError(f"missing knowledge-base artifact {path}",
                                path=str(path))
    header = json.loads(paths["profiles"].read_text(encoding="utf-8"))
    profiles = {
        label: IdentityProfile(label=label,
                               centroid=np.array(rec["centroid"]),
                               radius=rec["radius"], count=rec["count"])
        for label, rec in header["profiles"].items()
    }
    manifest = json.loads(paths["manifest"].read_text(encoding="utf-8"))
    raw = np.frombuffer(paths["embeddings"].read_bytes(), dtype="<f8")
    dim = raw.size // len(manifest) if manifest else 0
    member_embeddings: dict[str, list[tuple[str, np.ndarray]]] = {}
    for i, (uuid, label) in enumerate(manifest):
        member_embeddings.setdefault(label, []).append(
            (uuid, raw[i * dim:(i + 1) * dim].copy()))
    metadata: dict[str, dict] = {}
    with open(paths["metadata"], encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            metadata[rec.pop("uuid")] = rec
    return BenignKnowledgeBase(epsilon=header["epsilon"], profiles=profiles,
                               member_embeddings=member_embeddings,
                               metadata=metadata)
