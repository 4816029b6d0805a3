"""Synthetic audit-log scenarios with ground-truth labels.

A scenario names identity templates (operation mix, object pool, temporal
rhythm) and a set of identity-swapped violations: nodes that claim one
template's identity while behaving like another. The generator emits a benign
event file, an attack file (benign background plus the injected nodes) and a
label file listing the anomalous node uuids. Everything is driven by one
seeded generator, so a fixed seed reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .config import DEFAULT_OP_VOCAB
from .errors import ConfigError

DEFAULT_TEMPLATES = [
    {
        "name": "webserv",
        "gap_scale": 1.0,
        "objects": [
            {"kind": "netflow", "port": 443, "shared": True, "weight": 5,
             "ops": {"CONNECT": 2, "RECV": 3, "SEND": 3}},
            {"kind": "file", "path": "/etc/webserv/webserv.conf", "shared": True,
             "weight": 1, "ops": {"READ": 1, "OPEN": 1}},
            {"kind": "file", "path": "/var/log/webserv/access.log",
             "shared": False, "weight": 2, "ops": {"WRITE": 1}},
        ],
    },
    {
        "name": "backupd",
        "gap_scale": 6.0,
        "objects": [
            {"kind": "file", "path": "/etc/backupd/backupd.conf", "shared": True,
             "weight": 1, "ops": {"READ": 1}},
            {"kind": "file", "path": "/data/state/db.snap", "shared": False,
             "weight": 3, "ops": {"READ": 3, "OPEN": 1}},
            {"kind": "file", "path": "/backup/daily.tar", "shared": False,
             "weight": 3, "ops": {"WRITE": 3, "CLOSE": 1}},
        ],
    },
    {
        "name": "shellmgr",
        "gap_scale": 0.5,
        "objects": [
            {"kind": "file", "path": "/usr/bin/runner", "shared": True,
             "weight": 2, "ops": {"EXECUTE": 1}},
            {"kind": "subject", "name": "worker", "shared": False, "weight": 3,
             "ops": {"FORK": 3, "CLONE": 1}},
        ],
    },
    {
        "name": "logrotated",
        "gap_scale": 12.0,
        "objects": [
            {"kind": "file", "path": "/var/log/syslog", "shared": True,
             "weight": 2, "ops": {"MODIFY": 2, "OPEN": 1}},
            {"kind": "file", "path": "/var/log/app/rotated.log", "shared": False,
             "weight": 3, "ops": {"WRITE": 3}},
        ],
    },
    {
        "name": "updater",
        "gap_scale": 3.0,
        "objects": [
            {"kind": "netflow", "port": 8080, "shared": True, "weight": 3,
             "ops": {"CONNECT": 1, "RECV": 4}},
            {"kind": "file", "path": "/var/cache/pkg/index.db", "shared": False,
             "weight": 2, "ops": {"WRITE": 2, "MODIFY": 1}},
        ],
    },
]

DEFAULT_START_TS = 1_700_000_000_000_000_000
DEFAULT_BASE_GAP_NS = 1_000_000_000  # 1 s


def default_scenario(num_identities: int = 5, nodes_per_identity: int = 50,
                     num_anomalies: int = 5, seed: int = 7,
                     events_per_node: tuple[int, int] = (20, 40)) -> dict:
    """Scenario dict using the built-in templates and cyclic identity swaps."""
    if not 1 <= num_identities <= len(DEFAULT_TEMPLATES):
        raise ConfigError(
            f"num_identities must be in [1, {len(DEFAULT_TEMPLATES)}]")
    templates = [json.loads(json.dumps(t))
                 for t in DEFAULT_TEMPLATES[:num_identities]]
    anomalies = []
    for i in range(num_anomalies):
        claimed = templates[i % num_identities]["name"]
        behavior = templates[(i + 1) % num_identities]["name"]
        if behavior == claimed:  # single-template scenario: no swap possible
            raise ConfigError("identity swaps need at least two templates")
        anomalies.append({"claimed": claimed, "behavior": behavior})
    return {
        "seed": seed,
        "nodes_per_identity": nodes_per_identity,
        "events_per_node": list(events_per_node),
        "start_ts": DEFAULT_START_TS,
        "base_gap_ns": DEFAULT_BASE_GAP_NS,
        "identities": templates,
        "anomalies": anomalies,
    }


def _validate_scenario(spec: dict) -> dict:
    if not isinstance(spec, dict):
        raise ConfigError("scenario spec must be a JSON object")
    identities = spec.get("identities")
    if not identities:
        raise ConfigError("scenario spec needs a non-empty 'identities' list")
    names = [t.get("name") for t in identities]
    if len(set(names)) != len(names) or not all(names):
        raise ConfigError("identity template names must be unique and non-empty")
    for template in identities:
        if not template.get("objects"):
            raise ConfigError(f"template {template['name']!r} has no objects")
        for obj in template["objects"]:
            ops = obj.get("ops")
            if not ops:
                raise ConfigError(f"template {template['name']!r} has an "
                                  "object without operations")
            unknown = set(ops) - set(DEFAULT_OP_VOCAB)
            if unknown:
                raise ConfigError(
                    f"template {template['name']!r} uses operations outside "
                    f"the vocabulary: {sorted(unknown)}")
    anomalies = spec.get("anomalies", [])
    for anomaly in anomalies:
        if anomaly.get("claimed") not in names or anomaly.get("behavior") not in names:
            raise ConfigError("anomaly 'claimed'/'behavior' must name templates")
        if anomaly["claimed"] == anomaly["behavior"]:
            raise ConfigError("anomaly must swap two different identities")
    spec.setdefault("seed", 7)
    spec.setdefault("nodes_per_identity", 50)
    spec.setdefault("events_per_node", [20, 40])
    spec.setdefault("start_ts", DEFAULT_START_TS)
    spec.setdefault("base_gap_ns", DEFAULT_BASE_GAP_NS)
    lo, hi = spec["events_per_node"]
    if lo < 1 or hi < lo:
        raise ConfigError("events_per_node must be an increasing positive pair")
    return spec


def _object_ref(template: dict, obj_index: int, obj: dict,
                owner: str) -> tuple[str, dict, str]:
    """(uuid, attrs, kind) for an object spec; per-owner unless shared."""
    name = template["name"]
    if obj.get("shared", False):
        uuid = f"o-{name}-{obj_index}"
    else:
        uuid = f"o-{owner}-{obj_index}"
    kind = obj["kind"]
    if kind == "file":
        attrs = {"path": obj["path"]}
    elif kind == "netflow":
        attrs = {"port": obj["port"], "ip": obj.get("ip", "10.0.0.1")}
    elif kind == "subject":
        attrs = {"name": obj["name"]}
    else:
        raise ConfigError(f"unknown object kind {kind!r}")
    return uuid, attrs, kind


def _emit_node_events(rng: np.random.Generator, spec: dict, template: dict,
                      subject_uuid: str, claimed_name: str,
                      id_prefix: str) -> list[dict]:
    lo, hi = spec["events_per_node"]
    count = int(rng.integers(lo, hi + 1))
    objects = template["objects"]
    obj_weights = np.array([obj.get("weight", 1.0) for obj in objects],
                           dtype=np.float64)
    obj_weights /= obj_weights.sum()
    op_tables = []
    for obj in objects:
        ops = sorted(obj["ops"])
        weights = np.array([obj["ops"][op] for op in ops], dtype=np.float64)
        op_tables.append((ops, weights / weights.sum()))
    gap = spec["base_gap_ns"] * template.get("gap_scale", 1.0)
    ts = spec["start_ts"] + int(rng.integers(0, spec["base_gap_ns"]))
    events = []
    for i in range(count):
        obj_index = int(rng.choice(len(objects), p=obj_weights))
        ops, weights = op_tables[obj_index]
        op = ops[int(rng.choice(len(ops), p=weights))]
        obj_uuid, obj_attrs, obj_kind = _object_ref(
            template, obj_index, objects[obj_index], subject_uuid)
        events.append({
            "event_id": f"{id_prefix}-{i:05d}",
            "subject_uuid": subject_uuid,
            "object_uuid": obj_uuid,
            "operation": op,
            "timestamp": ts,
            "subject_attrs": {"name": claimed_name},
            "object_attrs": obj_attrs,
            "object_kind": obj_kind,
        })
        ts += int(gap * (0.5 + rng.random()))
    return events


def generate_scenario(spec: dict) -> tuple[list[dict], list[dict], dict]:
    """Build (benign events, attack events, labels) from a scenario spec.

    The attack event list is the benign background plus the events of the
    injected identity-swapped nodes.
    """
    spec = _validate_scenario(dict(spec))
    rng = np.random.default_rng(spec["seed"])
    templates = {t["name"]: t for t in spec["identities"]}

    benign: list[dict] = []
    benign_subjects: list[str] = []
    for template in spec["identities"]:
        for i in range(spec["nodes_per_identity"]):
            uuid = f"b-{template['name']}-{i:04d}"
            benign_subjects.append(uuid)
            benign.extend(_emit_node_events(rng, spec, template, uuid,
                                            template["name"], uuid))

    injected: list[dict] = []
    anomalous: list[str] = []
    for idx, anomaly in enumerate(spec.get("anomalies", [])):
        uuid = f"a-{idx:03d}-{anomaly['claimed']}"
        anomalous.append(uuid)
        behavior = templates[anomaly["behavior"]]
        injected.extend(_emit_node_events(rng, spec, behavior, uuid,
                                          anomaly["claimed"], uuid))

    labels = {
        "anomalous": anomalous,
        "benign_subjects": benign_subjects,
        "total_labeled": len(benign_subjects) + len(anomalous),
    }
    return benign, benign + injected, labels


def write_scenario(spec: dict, directory: str | Path) -> dict[str, Path]:
    """Generate and write benign.jsonl, attack.jsonl and labels.json."""
    benign, attack, labels = generate_scenario(spec)
    base = Path(directory)
    os.makedirs(base, exist_ok=True)
    paths = {
        "benign": base / "benign.jsonl",
        "attack": base / "attack.jsonl",
        "labels": base / "labels.json",
    }
    with open(paths["benign"], "w", encoding="utf-8") as fh:
        for event in benign:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    with open(paths["attack"], "w", encoding="utf-8") as fh:
        for event in attack:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    paths["labels"].write_text(json.dumps(labels, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    return paths
