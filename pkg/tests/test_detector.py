import math
from collections import Counter

import numpy as np
import pytest

from provlens.config import DEFAULT_OP_VOCAB
from provlens.detector import (
    Alert,
    detect_graph,
    detect_node,
    format_alert_table,
    load_alerts,
    nearest_prototype,
    save_alerts,
)
from provlens.encoder import init_params, train
from provlens.config import EncoderConfig
from provlens.errors import ConfigError
from provlens.features import build_node_summary, feature_dim, train_semantic_vocab
from provlens.ingest import build_graph
from provlens.profiler import (
    IdentityProfile,
    build_knowledge_base,
    euclidean_distance,
)

from conftest import graph_from_events, make_event


def profiles_ab():
    return {
        "A": IdentityProfile("A", np.array([0.0, 0.0]), 1.0, 3),
        "B": IdentityProfile("B", np.array([10.0, 0.0]), 1.0, 3),
    }


# --- nearest prototype ----------------------------------------------------------

def test_nearest_prototype_basic():
    label, dist = nearest_prototype(np.array([1.0, 0.0]), profiles_ab())
    assert label == "A" and dist == 1.0


def test_nearest_prototype_tie_prefers_smallest_label():
    label, _ = nearest_prototype(np.array([5.0, 0.0]), profiles_ab())
    assert label == "A"


def test_nearest_prototype_matches_exhaustive_oracle():
    rng = np.random.default_rng(5)
    profiles = {f"P{i}": IdentityProfile(f"P{i}", rng.normal(size=4), 1.0, 1)
                for i in range(10)}
    for _ in range(50):
        z = rng.normal(size=4)
        label, dist = nearest_prototype(z, profiles)
        oracle = min((euclidean_distance(z, p.centroid), name)
                     for name, p in sorted(profiles.items()))
        assert (oracle[1], oracle[0]) == (label, dist)


def test_nearest_prototype_requires_profiles():
    with pytest.raises(ConfigError):
        nearest_prototype(np.zeros(2), {})


# --- per-node rule ----------------------------------------------------------------

def test_detect_node_benign_inside_and_matched():
    assert detect_node(np.array([0.5, 0.0]), "A", profiles_ab()) is None


def test_detect_node_deviation_only():
    alert = detect_node(np.array([3.0, 0.0]), "A", profiles_ab())
    assert alert.violation == "deviation"
    assert alert.matched == "A"
    assert alert.deviation == 3.0
    assert alert.score == pytest.approx((3.0 - 1.0) / (1.0 + 1e-9))


def test_detect_node_mismatch_only():
    profiles = {
        "A": IdentityProfile("A", np.array([0.0, 0.0]), 2.0, 3),
        "B": IdentityProfile("B", np.array([2.0, 0.0]), 2.0, 3),
    }
    alert = detect_node(np.array([1.5, 0.0]), "A", profiles)
    assert alert.violation == "mismatch"
    assert alert.matched == "B"
    assert alert.score == pytest.approx(1.0)


def test_detect_node_both_criteria():
    alert = detect_node(np.array([8.0, 0.0]), "A", profiles_ab())
    assert alert.violation == "both"
    assert alert.matched == "B"
    assert alert.score == pytest.approx(1.0 + 7.0 / (1.0 + 1e-9))


def test_detect_node_unknown_identity_always_alerts():
    alert = detect_node(np.array([0.0, 0.0]), "C", profiles_ab())
    assert alert.violation == "unknown_identity"
    assert alert.radius is None
    assert alert.matched == "A"
    assert alert.score == pytest.approx(1.0)
    assert "no benign profile" in alert.explanation


# --- graph-level detection --------------------------------------------------------

def synthetic_two_identity_setup(swap_one=False):
    """Readers read config; writers write the log and modify the state file.
    Optionally one claimed reader gets a writer's exact behavior."""
    events = []

    def writer_events(subject, name, offset):
        out = []
        for j in range(3):
            out.append(make_event(
                event_id=f"{subject}-w{j}", subject_uuid=subject,
                object_uuid="log", operation="WRITE",
                timestamp=j * 40 + offset, subject_attrs={"name": name},
                object_attrs={"path": "/var/log/app.log"}))
            out.append(make_event(
                event_id=f"{subject}-m{j}", subject_uuid=subject,
                object_uuid="state", operation="MODIFY",
                timestamp=j * 40 + offset + 7, subject_attrs={"name": name},
                object_attrs={"path": "/var/lib/app.state"}))
        return out

    for i in range(6):
        for j in range(3):
            events.append(make_event(
                event_id=f"r{i}-{j}", subject_uuid=f"r{i}", object_uuid="cfg",
                operation="READ", timestamp=j * 100 + i,
                subject_attrs={"name": "reader"},
                object_attrs={"path": "/etc/app.conf"}))
        events.extend(writer_events(f"w{i}", "writer", i))
    test_events = list(events)
    if swap_one:
        test_events.extend(writer_events("impostor", "reader", 3))
    train_graph = graph_from_events(events, window_ns=10, name="train")
    test_graph = graph_from_events(test_events, window_ns=10, name="test")
    summaries = [build_node_summary(train_graph.nodes[u], train_graph)
                 for u in sorted(train_graph.nodes)]
    vocab = train_semantic_vocab(summaries, dim=8, epochs=2, seed=6)
    uuids_h0 = None
    from provlens.features import feature_matrix
    uuids, h0 = feature_matrix(train_graph, vocab, DEFAULT_OP_VOCAB)
    config = EncoderConfig(embedding_dim=6, num_layers=2, epochs=5,
                           batch_size=8)
    result = train(train_graph, dict(zip(uuids, h0)), config, seed=6)
    kb = build_knowledge_base([train_graph], result.params, vocab, 0.02,
                              DEFAULT_OP_VOCAB)
    return train_graph, test_graph, result.params, vocab, kb


def test_detect_graph_training_set_criterion1_within_epsilon():
    train_graph, _, params, vocab, kb = synthetic_two_identity_setup()
    alerts = detect_graph(train_graph, params, vocab, kb, DEFAULT_OP_VOCAB)
    flagged = Counter(a.claimed for a in alerts
                      if a.violation in ("deviation", "both"))
    for label, count in flagged.items():
        assert count <= math.floor(0.02 * kb.profiles[label].count)


def test_detect_graph_flags_identity_swapped_node():
    _, test_graph, params, vocab, kb = synthetic_two_identity_setup(swap_one=True)
    alerts = detect_graph(test_graph, params, vocab, kb, DEFAULT_OP_VOCAB)
    impostor = [a for a in alerts if a.node_uuid == "impostor"]
    assert impostor, "identity-swapped node must alert"
    assert impostor[0].violation in ("mismatch", "both")
    assert impostor[0].claimed == "subject::reader"
    # behaves like something from the writer side of the graph, not a reader
    assert impostor[0].matched != "subject::reader"
    assert impostor[0].matched in ("subject::writer", "file::app.log",
                                   "file::app.state")


def test_detect_graph_empty_graph():
    _, _, params, vocab, kb = synthetic_two_identity_setup()
    empty = build_graph([], window_ns=10, name="empty")
    assert detect_graph(empty, params, vocab, kb, DEFAULT_OP_VOCAB) == []


def test_detect_graph_deterministic_and_sorted():
    _, test_graph, params, vocab, kb = synthetic_two_identity_setup(swap_one=True)
    one = detect_graph(test_graph, params, vocab, kb, DEFAULT_OP_VOCAB)
    two = detect_graph(test_graph, params, vocab, kb, DEFAULT_OP_VOCAB)
    assert [a.to_json() for a in one] == [a.to_json() for a in two]
    keys = [(-a.score, a.node_uuid) for a in one]
    assert keys == sorted(keys)


def test_detect_graph_names_mismatching_dimension():
    train_graph, _, params, vocab, kb = synthetic_two_identity_setup()
    bad = init_params([7, 6], seed=0)
    with pytest.raises(ConfigError) as err:
        detect_graph(train_graph, bad, vocab, kb, DEFAULT_OP_VOCAB)
    expected = feature_dim(vocab.dim, DEFAULT_OP_VOCAB)
    assert str(expected) in str(err.value) and "7" in str(err.value)


def test_epsilon_monotonicity_on_training_set():
    train_graph, _, params, vocab, _ = synthetic_two_identity_setup()

    def deviation_count(eps):
        kb = build_knowledge_base([train_graph], params, vocab, eps,
                                  DEFAULT_OP_VOCAB)
        alerts = detect_graph(train_graph, params, vocab, kb, DEFAULT_OP_VOCAB)
        return sum(1 for a in alerts if a.violation in ("deviation", "both"))

    counts = [deviation_count(eps) for eps in (0.0, 0.1, 0.3)]
    assert counts[0] <= counts[1] or counts[0] == 0
    assert sorted(counts, reverse=True) == counts or counts == sorted(counts)
    # larger epsilon shrinks radii, so deviation flags can only grow
    assert counts == sorted(counts)


# --- serialization -----------------------------------------------------------------

def test_alert_save_load_round_trip(tmp_path):
    alerts = [
        Alert(node_uuid="n1", graph_name="g", claimed="A", matched="B",
              deviation=2.5, radius=1.0, violation="both",
              explanation="declared A behaves like B, d=2.5, R=1", score=2.5),
        Alert(node_uuid="n2", graph_name="g", claimed="C", matched="A",
              deviation=0.7, radius=None, violation="unknown_identity",
              explanation="declared C has no benign profile", score=1.7),
    ]
    path = tmp_path / "alerts.jsonl"
    save_alerts(alerts, path)
    loaded = load_alerts(path)
    assert [a.to_json() for a in loaded] == [a.to_json() for a in alerts]


def test_alert_table_renders():
    table = format_alert_table([
        Alert(node_uuid="n1", graph_name="g", claimed="A", matched="B",
              deviation=2.0, radius=1.0, violation="mismatch",
              explanation="", score=1.0)])
    assert "n1" in table and "mismatch" in table
    assert format_alert_table([]) == \
        "no identity-consistency violations detected"
