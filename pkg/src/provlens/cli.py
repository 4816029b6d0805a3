"""Command-line front end: ingest -> train -> profile -> detect -> investigate
-> report, plus a synthetic-scenario generator.

Exit codes: 0 ok, 1 runtime failure, 2 missing artifact, 3 bad configuration.
Errors print a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import detector, encoder, features, ingest, profiler, synth
from .config import PipelineConfig, load_config
from .errors import ArtifactError, ConfigError, ProvlensError
from .investigation import (
    GraphStore,
    InvestigationBudget,
    InvestigationRepository,
    run_investigation,
)
from .investigation.llm import HttpChatLLM, heuristic_mock
from .investigation.agents import reporter_compose

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_CONFIG = 3


def _graphs_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.artifacts_dir) / "graphs"


def _model_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.artifacts_dir) / "model"


def _kb_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.artifacts_dir) / "kb"


def _alerts_path(cfg: PipelineConfig, graph_name: str) -> Path:
    return Path(cfg.artifacts_dir) / "alerts" / f"{graph_name}.alerts.jsonl"


def _investigation_dir(cfg: PipelineConfig, graph_name: str) -> Path:
    return Path(cfg.artifacts_dir) / "investigation" / graph_name


def _resolve_graph_names(cfg: PipelineConfig, spec: str | None) -> list[str]:
    if spec:
        return [name.strip() for name in spec.split(",") if name.strip()]
    names = list(ingest.iter_graph_names(_graphs_dir(cfg)))
    if not names:
        raise ArtifactError(f"no ingested graphs under {_graphs_dir(cfg)}",
                            path=str(_graphs_dir(cfg)))
    return names


def _load_graphs(cfg: PipelineConfig, names: list[str]) -> list[ingest.ProvenanceGraph]:
    return [ingest.load_graph(_graphs_dir(cfg), name) for name in names]


def _union_graph(graphs: list[ingest.ProvenanceGraph]) -> ingest.ProvenanceGraph:
    """Disjoint union used to train one encoder over several benign windows."""
    if len(graphs) == 1:
        return graphs[0]
    nodes: dict[str, ingest.Entity] = {}
    edges: list[ingest.ProvEdge] = []
    for graph in graphs:
        nodes.update(graph.nodes)
        edges.extend(graph.edges)
    return ingest.ProvenanceGraph(
        name="+".join(g.name for g in graphs), nodes=nodes, edges=edges,
        window_start=min(g.window_start for g in graphs),
        window_end=max(g.window_end for g in graphs))


def _build_backend(cfg: PipelineConfig):
    if cfg.llm.backend == "mock":
        return heuristic_mock()
    api_key = os.environ.get(cfg.llm.api_key_env, "")
    return HttpChatLLM(endpoint=cfg.llm.endpoint, model=cfg.llm.model,
                       api_key=api_key, timeout_s=cfg.llm.timeout_s)


# --- subcommands -------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig, args) -> int:
    result = ingest.parse_events(args.input, cfg.features.op_vocab)
    graph = ingest.build_graph(result.events, cfg.features.window_ns,
                               name=args.name)
    ingest.save_graph(graph, _graphs_dir(cfg))
    print(f"ingested graph={graph.name} events={len(result.events)} "
          f"skipped={result.skipped} nodes={len(graph.nodes)} "
          f"edges={len(graph.edges)}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, args) -> int:
    names = _resolve_graph_names(cfg, args.graphs)
    graphs = _load_graphs(cfg, names)
    union = _union_graph(graphs)

    summaries = [features.build_node_summary(union.nodes[u], union)
                 for u in sorted(union.nodes)]
    vocab = features.train_semantic_vocab(
        summaries, cfg.features.semantic_dim, window=cfg.features.w2v_window,
        negatives=cfg.features.w2v_negatives, epochs=cfg.features.w2v_epochs,
        seed=cfg.seed)
    features.save_vocab(vocab, _model_dir(cfg))

    uuids, h0 = features.feature_matrix(union, vocab, cfg.features.op_vocab)
    if args.export_features:
        features.export_features(union, vocab, cfg.features.op_vocab,
                                 args.export_features)
    if args.epochs is not None:
        cfg.encoder.epochs = args.epochs
    result = encoder.train(union, dict(zip(uuids, h0)), cfg.encoder, cfg.seed)
    encoder.save_params(result.params, _model_dir(cfg))
    trace_path = _model_dir(cfg) / "loss_trace.csv"
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(result.loss_trace, start=1):
            fh.write(f"{epoch},{loss!r}\n")
    final = result.loss_trace[-1] if result.loss_trace else float("nan")
    print(f"trained graphs={','.join(names)} nodes={len(uuids)} "
          f"epochs={cfg.encoder.epochs} final_loss={final:.6g}")
    return EXIT_OK


def cmd_profile(cfg: PipelineConfig, args) -> int:
    names = _resolve_graph_names(cfg, args.graphs)
    graphs = _load_graphs(cfg, names)
    vocab = features.load_vocab(_model_dir(cfg))
    params = encoder.load_params(_model_dir(cfg))
    kb = profiler.build_knowledge_base(graphs, params, vocab, cfg.epsilon,
                                       cfg.features.op_vocab)
    profiler.save_kb(kb, _kb_dir(cfg))
    if args.export_embeddings:
        profiler.export_embeddings(kb, args.export_embeddings)
    print(f"profiled graphs={','.join(names)} identities={len(kb.profiles)} "
          f"members={kb.size()} epsilon={cfg.epsilon}")
    return EXIT_OK


def cmd_detect(cfg: PipelineConfig, args) -> int:
    graph = ingest.load_graph(_graphs_dir(cfg), args.graph)
    vocab = features.load_vocab(_model_dir(cfg))
    params = encoder.load_params(_model_dir(cfg))
    kb = profiler.load_kb(_kb_dir(cfg))
    alerts = detector.detect_graph(graph, params, vocab, kb,
                                   cfg.features.op_vocab)
    path = _alerts_path(cfg, args.graph)
    os.makedirs(path.parent, exist_ok=True)
    detector.save_alerts(alerts, path)
    print(detector.format_alert_table(alerts))
    print(f"detected graph={args.graph} alerts={len(alerts)} -> {path}")
    return EXIT_OK


def cmd_investigate(cfg: PipelineConfig, args) -> int:
    graph = ingest.load_graph(_graphs_dir(cfg), args.graph)
    vocab = features.load_vocab(_model_dir(cfg))
    params = encoder.load_params(_model_dir(cfg))
    kb = profiler.load_kb(_kb_dir(cfg))
    alerts_path = Path(args.alerts) if args.alerts else _alerts_path(cfg, args.graph)
    alerts = detector.load_alerts(alerts_path)

    store = GraphStore.build([graph], params, vocab, cfg.features.op_vocab)
    backend = _build_backend(cfg)
    budget = InvestigationBudget.from_config(cfg.budget)
    out_dir = _investigation_dir(cfg, args.graph)
    repo = None
    if args.resume:
        repo = InvestigationRepository.load(out_dir)
    repo = run_investigation(alerts, store, kb, backend, budget,
                             knn_k=cfg.llm.knn_k, repo=repo)
    repo.save(out_dir)
    if repo.status == "complete":
        (out_dir / "report.md").write_text(repo.report_markdown, encoding="utf-8")
        (out_dir / "attack_graph.dot").write_text(repo.attack_graph_dot,
                                                  encoding="utf-8")
    print(f"investigated graph={args.graph} status={repo.status} "
          f"validated={len(repo.validated_iocs())} "
          f"refuted={len(repo.refuted_iocs())} "
          f"llm_calls={repo.llm_calls_used}")
    return EXIT_OK if repo.status == "complete" else EXIT_RUNTIME


def cmd_report(cfg: PipelineConfig, args) -> int:
    out_dir = _investigation_dir(cfg, args.graph)
    repo = InvestigationRepository.load(out_dir)
    if not repo.report_markdown:
        markdown, dot = reporter_compose(repo, None)
        repo.report_markdown, repo.attack_graph_dot = markdown, dot
    (out_dir / "report.md").write_text(repo.report_markdown, encoding="utf-8")
    (out_dir / "attack_graph.dot").write_text(repo.attack_graph_dot,
                                              encoding="utf-8")
    print(f"report graph={args.graph} -> {out_dir / 'report.md'}")
    return EXIT_OK


def cmd_synth(cfg: PipelineConfig, args) -> int:
    if args.spec:
        try:
            spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ArtifactError(f"cannot read scenario spec {args.spec}: {exc}",
                                path=args.spec) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario spec is not valid JSON: {exc}") from exc
        spec.setdefault("seed", cfg.seed)
    else:
        spec = synth.default_scenario(
            num_identities=args.identities,
            nodes_per_identity=args.nodes_per_identity,
            num_anomalies=args.anomalies, seed=cfg.seed)
    paths = synth.write_scenario(spec, args.out)
    labels = json.loads(paths["labels"].read_text(encoding="utf-8"))
    print(f"synthesized out={args.out} labeled={labels['total_labeled']} "
          f"anomalies={len(labels['anomalous'])}")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON config file")
    common.add_argument("--artifacts", help="artifact directory override")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--epsilon", type=float,
                        help="benign fraction allowed outside each profile")
    common.add_argument("--llm", choices=("http", "mock"),
                        help="LLM backend selection")
    common.add_argument("--budget-max-iterations", type=int)
    common.add_argument("--budget-max-leads-per-ioc", type=int)
    common.add_argument("--budget-max-hypotheses", type=int)
    common.add_argument("--budget-max-llm-calls", type=int)

    parser = argparse.ArgumentParser(
        prog="provlens",
        description="identity-behavior anomaly detection over provenance "
                    "graphs, with an agent-driven investigation loop")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="parse events and build a graph")
    p.add_argument("--input", required=True, help="JSONL event file")
    p.add_argument("--name", required=True, help="graph name")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common],
                       help="train the semantic vocabulary and encoder")
    p.add_argument("--graphs", help="comma-separated graph names (default: all)")
    p.add_argument("--epochs", type=int, help="encoder training epochs")
    p.add_argument("--export-features", help="debug JSONL dump of node features")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", parents=[common],
                       help="build the benign knowledge base")
    p.add_argument("--graphs", help="comma-separated graph names (default: all)")
    p.add_argument("--export-embeddings", help="also write an embeddings CSV")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("detect", parents=[common],
                       help="detect identity-consistency violations")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("investigate", parents=[common],
                       help="run the agent investigation loop")
    p.add_argument("--graph", required=True)
    p.add_argument("--alerts", help="alerts file (default: detect output)")
    p.add_argument("--resume", action="store_true",
                   help="resume a paused investigation")
    p.set_defaults(func=cmd_investigate)

    p = sub.add_parser("report", parents=[common],
                       help="render the report for an investigation")
    p.add_argument("--graph", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a labeled synthetic scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="scenario spec JSON file")
    p.add_argument("--identities", type=int, default=5)
    p.add_argument("--nodes-per-identity", type=int, default=50)
    p.add_argument("--anomalies", type=int, default=5)
    p.set_defaults(func=cmd_synth)

    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides: dict = {}
    if args.artifacts is not None:
        overrides["artifacts_dir"] = args.artifacts
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.llm is not None:
        overrides.setdefault("llm", {})["backend"] = args.llm
    budget = {}
    for flag in ("max_iterations", "max_leads_per_ioc", "max_hypotheses",
                 "max_llm_calls"):
        value = getattr(args, f"budget_{flag}")
        if value is not None:
            budget[flag] = value
    if budget:
        overrides["budget"] = budget
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"error code=config detail={exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"error code=missing_artifact detail={exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except ProvlensError as exc:
        print(f"error code=runtime detail={exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is still a one-line runtime error
        print(f"error code=runtime detail={type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
