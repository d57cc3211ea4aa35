# cli.py
# Command-line surface: index, ask, eval, report, synth.
# stdout carries command output only; logs go to stderr.
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from agentic_rag.agent_graph import AgentAnswer, run_query, run_single_shot
from agentic_rag.corpus_store import CorpusManifest, ingest_directory
from agentic_rag.errors import AgenticRagError, ConfigError
from agentic_rag.evaluation import aggregate, load_query_set, read_outcomes, run_batch, write_reports
from agentic_rag.model_clients import ModelClient, OpenAIChatClient, ScriptedClient
from agentic_rag.policy_client import HeuristicPolicyClient
from agentic_rag.search_index import IndexedCorpus, build_index
from agentic_rag.settings import RunConfig, configure_logging, load_run_config
from agentic_rag.synthetic import write_benchmark
from agentic_rag.tokens import get_token_counter
from agentic_rag.tools import ReferenceRegistry

logger = logging.getLogger(__name__)

_FULL_COMPONENTS: Dict[str, bool] = {
    "summarize_enabled": True, "semantic_find_enabled": True, "multi_query_enabled": True,
}

# each variant drops exactly one component from the full configuration
ABLATION_VARIANTS: Dict[str, Dict[str, bool]] = {
    "full": dict(_FULL_COMPONENTS),
    "no-summarize": {**_FULL_COMPONENTS, "summarize_enabled": False},
    "no-semantic-find": {**_FULL_COMPONENTS, "semantic_find_enabled": False},
    "no-multi-query": {**_FULL_COMPONENTS, "multi_query_enabled": False},
}


# ─────────────────────────────────────────────────────────────────────────────
# Parser
# ─────────────────────────────────────────────────────────────────────────────
def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--label", help="run label")
    p.add_argument("--client", choices=["http", "scripted", "policy"])
    p.add_argument("--script", help="scripted client JSON")
    p.add_argument("--max-calls", type=int)
    p.add_argument("--token-threshold", type=int)
    p.add_argument("--token-counter", choices=["chars4", "tiktoken"])
    p.add_argument("--no-multi-query", action="store_true")
    p.add_argument("--no-summarize", action="store_true")
    p.add_argument("--no-semantic-find", action="store_true")
    p.add_argument("--semantic-find", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="agentic-rag", description="Agentic retrieval over a local corpus.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", parents=[common], help="ingest a corpus and write its manifest")
    p_index.add_argument("--manifest", help="manifest path (default <out>/manifest.json)")

    p_ask = sub.add_parser("ask", parents=[common], help="answer one question")
    p_ask.add_argument("query")
    p_ask.add_argument("--single-shot", action="store_true")
    p_ask.add_argument("--transcript", help="transcript path (default <out>/<label>/ask.jsonl)")

    p_eval = sub.add_parser("eval", parents=[common], help="run a query set and write reports")
    p_eval.add_argument("--queries", help="query set JSONL")
    p_eval.add_argument("--baseline-label")
    mode = p_eval.add_mutually_exclusive_group()
    mode.add_argument("--single-shot", action="store_true")
    mode.add_argument("--oracle", action="store_true")
    p_eval.add_argument("--ablation", action="store_true", help="run the four component variants")
    p_eval.add_argument("--jobs", type=int)
    p_eval.add_argument("--recall-mode", choices=["set", "hit"])
    p_eval.add_argument("--progress", action="store_true")

    p_report = sub.add_parser("report", parents=[common], help="re-aggregate a stored run")
    p_report.add_argument("--baseline-label")

    sub.add_parser("synth", parents=[common], help="write the synthetic benchmark to --out")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    agent: Dict[str, Any] = {
        "max_calls": args.max_calls,
        "token_threshold": args.token_threshold,
        "token_counter": args.token_counter,
    }
    if args.no_multi_query:
        agent["multi_query_enabled"] = False
    if args.no_summarize:
        agent["summarize_enabled"] = False
    if args.semantic_find:
        agent["semantic_find_enabled"] = True
    if args.no_semantic_find:
        agent["semantic_find_enabled"] = False
    overrides = {
        "agent": agent,
        "corpus_dir": args.corpus,
        "output_dir": args.out,
        "label": args.label,
        "client": args.client,
        "script_file": args.script,
        "query_set": getattr(args, "queries", None),
        "jobs": getattr(args, "jobs", None),
        "recall_mode": getattr(args, "recall_mode", None),
    }
    return load_run_config(args.config, overrides)


# ─────────────────────────────────────────────────────────────────────────────
# Shared plumbing
# ─────────────────────────────────────────────────────────────────────────────
def load_corpus(cfg: RunConfig) -> CorpusManifest:
    if not cfg.corpus_dir:
        raise ConfigError("no corpus directory given (--corpus or corpus_dir)")
    return ingest_directory(cfg.corpus_dir, cfg.extensions, get_token_counter(cfg.agent.token_counter))


def load_backend(cfg: RunConfig, manifest: CorpusManifest) -> IndexedCorpus:
    a = cfg.agent
    return build_index(manifest, k1=a.bm25_k1, b=a.bm25_b, snippet_chars=a.snippet_chars)


def client_factory(cfg: RunConfig) -> Callable[[Optional[str]], ModelClient]:
    if cfg.client == "scripted":
        if not cfg.script_file:
            raise ConfigError("the scripted client needs a script file (--script or script_file)")
        return lambda query_id=None: ScriptedClient.from_file(cfg.script_file, query_id)
    if cfg.client == "policy":
        return lambda query_id=None: HeuristicPolicyClient()
    return lambda query_id=None: OpenAIChatClient(cfg.http)


def format_citations(answer: AgentAnswer, registry: ReferenceRegistry) -> List[str]:
    lines = []
    for c in answer.citations:
        entry = registry.resolve(c.ref_id)
        lines.append(f"  {c.ref_id}  {c.relevancy_score:.2f}  {entry.doc_id if entry else '?'}")
    return lines


# ─────────────────────────────────────────────────────────────────────────────
# Commands
# ─────────────────────────────────────────────────────────────────────────────
def cmd_index(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    manifest = load_corpus(cfg)
    index = load_backend(cfg, manifest)
    path = args.manifest or str(Path(cfg.output_dir) / "manifest.json")
    manifest.write(path)
    stats = manifest.corpus_stats
    print(json.dumps({
        "manifest": path,
        "doc_count": stats.doc_count,
        "total_tokens": stats.total_tokens,
        "avg_doc_tokens": stats.avg_doc_tokens,
        "vocabulary": len(index.postings),
        "warnings": list(manifest.warnings),
    }, indent=2, sort_keys=True))
    return 0


def cmd_ask(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    manifest = load_corpus(cfg)
    index = load_backend(cfg, manifest)
    client = client_factory(cfg)(None)
    runner = run_single_shot if args.single_shot else run_query
    result = runner(cfg.agent, manifest, index, client, args.query)

    transcript = args.transcript or str(Path(cfg.output_dir) / cfg.label / "ask.jsonl")
    result.session.conversation.export_jsonl(transcript)

    answer = result.answer
    print(answer.text)
    print("")
    print("Citations:")
    print("\n".join(format_citations(answer, result.session.registry)) or "  (none)")
    print("Stats:")
    print(json.dumps(answer.stats.to_dict(), indent=2, sort_keys=True))
    print(f"Transcript: {transcript}")
    if answer.stats.aborted:
        print(f"error: {answer.stats.error}", file=sys.stderr)
        return 1
    return 0


def _mode(args: argparse.Namespace) -> str:
    if args.single_shot:
        return "single_shot"
    if args.oracle:
        return "oracle"
    return "agentic"


def _summary_line(report) -> str:
    agg = report.aggregates
    parts = [report.label]
    parts += [f"{k}={v['mean']:.3f}" for k, v in agg.items() if k.startswith("recall@")]
    parts.append(f"tools={agg['tools']['mean']:.2f}±{agg['tools']['stderr']:.2f}")
    parts.append(f"total_tokens={agg['total_tokens']['mean']:.1f}")
    if agg.get("cost_ratio") is not None:
        parts.append(f"cost_ratio={agg['cost_ratio']:.3f}")
    if agg["aborted"]:
        parts.append(f"aborted={agg['aborted']}")
    return "  ".join(parts)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    if not cfg.query_set:
        raise ConfigError("no query set given (--queries or query_set)")
    manifest = load_corpus(cfg)
    index = load_backend(cfg, manifest)
    records = load_query_set(cfg.query_set, manifest)
    factory = client_factory(cfg)
    baseline = read_outcomes(str(Path(cfg.output_dir) / args.baseline_label)) if args.baseline_label else None

    variants = ABLATION_VARIANTS if args.ablation else {"": {}}
    failed = False
    for variant, flags in variants.items():
        agent = cfg.agent.model_copy(update=flags)
        label = f"{cfg.label}-{variant}" if variant else cfg.label
        report = run_batch(
            agent, manifest, index, records,
            lambda record: factory(record.query_id),
            str(Path(cfg.output_dir) / label),
            mode=_mode(args),
            jobs=cfg.jobs,
            recall_mode=cfg.recall_mode,
            label=label,
            baseline=baseline,
            baseline_label=args.baseline_label,
            progress=args.progress,
        )
        print(_summary_line(report))
        failed = failed or report.aggregates["aborted"] > 0
    return 1 if failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    run_dir = Path(cfg.output_dir) / cfg.label
    outcomes = read_outcomes(str(run_dir))
    baseline = read_outcomes(str(Path(cfg.output_dir) / args.baseline_label)) if args.baseline_label else None
    ks = sorted({k for o in outcomes for k in o.recall})
    report = aggregate(outcomes, baseline, label=cfg.label, baseline_label=args.baseline_label, ks=ks)
    paths = write_reports(report, str(run_dir), ks)
    print(_summary_line(report))
    print(f"Reports: {paths['per_query']} {paths['aggregate']}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    paths = write_benchmark(args.out or "synthetic")
    print(f"Corpus: {paths['corpus']}")
    print(f"Queries: {paths['queries']}")
    return 0


COMMANDS = {"index": cmd_index, "ask": cmd_ask, "eval": cmd_eval, "report": cmd_report, "synth": cmd_synth}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except AgenticRagError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
