"""Query sets, recall@k, token-cost aggregates and run reports."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from agentic_rag.agent_graph import AgentAnswer, RunResult, run_oracle, run_query, run_single_shot
from agentic_rag.corpus_store import CorpusManifest
from agentic_rag.errors import BaselineMismatchError, QuerySetError
from agentic_rag.model_clients import ModelClient
from agentic_rag.search_index import SearchBackend
from agentic_rag.settings import AgentConfig
from agentic_rag.tools import TOOL_NAMES, ReferenceRegistry

logger = logging.getLogger(__name__)

OUTCOMES_FILE = "outcomes.jsonl"
PER_QUERY_FILE = "per_query.csv"
AGGREGATE_FILE = "aggregate.json"
JUDGE_FILE = "judge.jsonl"
TRANSCRIPTS_DIR = "transcripts"

MODES = ("agentic", "single_shot", "oracle")


# ─────────────────────────────────────────────────────────────────────────────
# Query sets
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    query: str
    gold_doc_ids: frozenset
    split: Optional[str] = None
    gold_answer: Optional[str] = None


def load_query_set(path: str, manifest: Optional[CorpusManifest] = None) -> List[QueryRecord]:
    """Read ``{query_id, query, gold_doc_ids[, split, gold_answer]}`` JSONL.

    Every problem is collected first, then raised together as a QuerySetError.
    """
    p = Path(path)
    if not p.is_file():
        raise QuerySetError(f"query set not found: {path}")

    records: List[QueryRecord] = []
    offenders: List[str] = []
    seen = set()
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError:
            offenders.append(f"line {lineno}: not valid JSON")
            continue
        qid = row.get("query_id") if isinstance(row, dict) else None
        if not qid or not isinstance(row.get("query"), str) or not row["query"].strip():
            offenders.append(f"line {lineno}: query_id and a non-empty query are required")
            continue
        gold = row.get("gold_doc_ids")
        if not isinstance(gold, list) or not gold:
            offenders.append(f"{qid}: gold_doc_ids must be a non-empty list")
            continue
        if qid in seen:
            offenders.append(f"{qid}: duplicate query_id")
            continue
        seen.add(qid)
        if manifest is not None:
            unknown = sorted(g for g in gold if g not in manifest)
            if unknown:
                offenders.append(f"{qid}: unknown gold doc ids {', '.join(unknown)}")
                continue
        records.append(QueryRecord(str(qid), row["query"], frozenset(gold),
                                   row.get("split"), row.get("gold_answer")))

    if offenders:
        raise QuerySetError(f"invalid query set {path}", offenders)
    if not records:
        raise QuerySetError(f"query set is empty: {path}")
    return records


# ─────────────────────────────────────────────────────────────────────────────
# Metrics
# ─────────────────────────────────────────────────────────────────────────────
def rank_documents(answer: AgentAnswer, registry: ReferenceRegistry) -> List[str]:
    """Cited documents best first; a document cited twice keeps its best rank."""
    cited = sorted(answer.citations, key=lambda c: (-c.relevancy_score, registry.order_key(c.ref_id)))
    ranking: List[str] = []
    for c in cited:
        entry = registry.resolve(c.ref_id)
        if entry is not None and entry.doc_id not in ranking:
            ranking.append(entry.doc_id)
    return ranking


def recall_at_k(ranking: Sequence[str], gold: Iterable[str], k: int) -> float:
    gold = set(gold)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold:
        raise ValueError("gold set must not be empty")
    return len(set(ranking[:k]) & gold) / len(gold)


def hit_at_k(ranking: Sequence[str], gold: Iterable[str], k: int) -> float:
    """Strict alternative: 1.0 if any gold document is in the top k."""
    gold = set(gold)
    if k < 1:
        raise ValueError("k must be >= 1")
    return 1.0 if set(ranking[:k]) & gold else 0.0


def mean_stderr(values: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": 0.0, "stderr": 0.0}
    stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": stderr}


# ─────────────────────────────────────────────────────────────────────────────
# Outcomes and reports
# ─────────────────────────────────────────────────────────────────────────────
@dataclass
class QueryOutcome:
    query_id: str
    recall: Dict[int, float]
    total_tokens: int
    tool_counts: Dict[str, int] = field(default_factory=dict)
    iterations: int = 0
    model_calls: int = 0
    prompt_tokens_sent: int = 0
    forced_completion: bool = False
    aborted: bool = False
    error: Optional[str] = None
    split: Optional[str] = None
    ranking: List[str] = field(default_factory=list)

    @property
    def tools_total(self) -> int:
        return sum(self.tool_counts.values())

    def to_json(self) -> Dict[str, Any]:
        return {
            "query_id": self.query_id,
            "split": self.split,
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "total_tokens": self.total_tokens,
            "prompt_tokens_sent": self.prompt_tokens_sent,
            "tool_counts": dict(sorted(self.tool_counts.items())),
            "iterations": self.iterations,
            "model_calls": self.model_calls,
            "forced_completion": self.forced_completion,
            "aborted": self.aborted,
            "error": self.error,
            "ranking": list(self.ranking),
        }

    @classmethod
    def from_json(cls, row: Dict[str, Any]) -> "QueryOutcome":
        return cls(
            query_id=row["query_id"],
            recall={int(k): float(v) for k, v in row["recall"].items()},
            total_tokens=int(row["total_tokens"]),
            tool_counts={k: int(v) for k, v in row.get("tool_counts", {}).items()},
            iterations=int(row.get("iterations", 0)),
            model_calls=int(row.get("model_calls", 0)),
            prompt_tokens_sent=int(row.get("prompt_tokens_sent", 0)),
            forced_completion=bool(row.get("forced_completion", False)),
            aborted=bool(row.get("aborted", False)),
            error=row.get("error"),
            split=row.get("split"),
            ranking=list(row.get("ranking", [])),
        )


def score_outcome(record: QueryRecord, result: RunResult, ks: Sequence[int] = (1, 3),
                  recall_mode: str = "set") -> QueryOutcome:
    answer = result.answer
    ranking = rank_documents(answer, result.session.registry)
    metric = hit_at_k if recall_mode == "hit" else recall_at_k
    s = answer.stats
    return QueryOutcome(
        query_id=record.query_id,
        recall={k: metric(ranking, record.gold_doc_ids, k) for k in ks},
        total_tokens=s.total_tokens,
        tool_counts=dict(s.tool_counts),
        iterations=s.iterations_used,
        model_calls=s.model_calls,
        prompt_tokens_sent=s.prompt_tokens_sent,
        forced_completion=s.forced_completion,
        aborted=s.aborted,
        error=s.error,
        split=record.split,
        ranking=ranking,
    )


@dataclass
class EvalReport:
    label: str
    per_query: List[QueryOutcome]
    aggregates: Dict[str, Any]
    by_split: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    baseline_label: Optional[str] = None
    baseline_totals: Dict[str, int] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "baseline_label": self.baseline_label,
            "query_count": len(self.per_query),
            "aggregates": self.aggregates,
            "by_split": self.by_split,
        }


def _aggregate_block(outcomes: Sequence[QueryOutcome], ks: Sequence[int],
                     baseline_totals: Optional[Dict[str, int]]) -> Dict[str, Any]:
    block: Dict[str, Any] = {}
    for k in ks:
        block[f"recall@{k}"] = mean_stderr([o.recall.get(k, 0.0) for o in outcomes])
    block["tools"] = mean_stderr([o.tools_total for o in outcomes])
    for name in TOOL_NAMES:
        block[name] = mean_stderr([o.tool_counts.get(name, 0) for o in outcomes])
    block["total_tokens"] = mean_stderr([o.total_tokens for o in outcomes])
    block["prompt_tokens_sent"] = mean_stderr([o.prompt_tokens_sent for o in outcomes])
    block["iterations"] = mean_stderr([o.iterations for o in outcomes])
    block["forced_completion_rate"] = float(np.mean([o.forced_completion for o in outcomes]))
    block["aborted"] = int(sum(o.aborted for o in outcomes))
    if baseline_totals is not None:
        base = float(np.mean([baseline_totals[o.query_id] for o in outcomes]))
        block["baseline_total_tokens"] = base
        block["cost_ratio"] = block["total_tokens"]["mean"] / base if base > 0 else None
    return block


def aggregate(
    outcomes: Sequence[QueryOutcome],
    baseline: Optional[Sequence[QueryOutcome]] = None,
    *,
    label: str = "default",
    baseline_label: Optional[str] = None,
    ks: Sequence[int] = (1, 3),
) -> EvalReport:
    """Means and standard errors over ``outcomes``; cost ratio against ``baseline``.

    The baseline must cover every query id of ``outcomes``.
    """
    if not outcomes:
        raise ValueError("nothing to aggregate")
    baseline_totals = None
    if baseline is not None:
        baseline_totals = {o.query_id: o.total_tokens for o in baseline}
        missing = sorted(o.query_id for o in outcomes if o.query_id not in baseline_totals)
        if missing:
            raise BaselineMismatchError(missing)

    by_split: Dict[str, Dict[str, Any]] = {}
    splits = sorted({o.split for o in outcomes if o.split})
    for split in splits:
        by_split[split] = _aggregate_block([o for o in outcomes if o.split == split], ks, baseline_totals)

    return EvalReport(
        label=label,
        per_query=list(outcomes),
        aggregates=_aggregate_block(outcomes, ks, baseline_totals),
        by_split=by_split,
        baseline_label=baseline_label,
        baseline_totals=baseline_totals or {},
    )


def report_frame(report: EvalReport, ks: Sequence[int] = (1, 3)) -> pd.DataFrame:
    rows = []
    for o in report.per_query:
        row: Dict[str, Any] = {"query_id": o.query_id, "split": o.split or ""}
        for k in ks:
            row[f"recall@{k}"] = o.recall.get(k, 0.0)
        row["tools"] = o.tools_total
        for name in TOOL_NAMES:
            row[name] = o.tool_counts.get(name, 0)
        row["total_tokens"] = o.total_tokens
        row["prompt_tokens_sent"] = o.prompt_tokens_sent
        row["iterations"] = o.iterations
        row["model_calls"] = o.model_calls
        row["forced_completion"] = int(o.forced_completion)
        row["aborted"] = int(o.aborted)
        if report.baseline_label is not None:
            base = report.baseline_totals[o.query_id]
            row["baseline_total_tokens"] = base
            row["cost_ratio"] = o.total_tokens / base if base else float("nan")
        rows.append(row)

    df = pd.DataFrame(rows)
    numeric = df.drop(columns=["query_id", "split"]).astype(float)
    n = len(df)
    means = numeric.mean()
    stderrs = numeric.std(ddof=1) / np.sqrt(n) if n > 1 else numeric.iloc[0] * 0.0
    if report.baseline_label is not None:
        # the footer carries the ratio of means, not the mean of per-query ratios
        means["cost_ratio"] = report.aggregates.get("cost_ratio") or float("nan")
        stderrs["cost_ratio"] = float("nan")
    footer = pd.DataFrame([
        {"query_id": "MEAN", "split": "", **means.to_dict()},
        {"query_id": "STDERR", "split": "", **stderrs.to_dict()},
    ])
    return pd.concat([df.astype({c: float for c in numeric.columns}), footer], ignore_index=True)


def write_reports(report: EvalReport, run_dir: str, ks: Sequence[int] = (1, 3)) -> Dict[str, str]:
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / PER_QUERY_FILE
    report_frame(report, ks).to_csv(csv_path, index=False, float_format="%.6f", lineterminator="\n")
    agg_path = out / AGGREGATE_FILE
    agg_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"per_query": str(csv_path), "aggregate": str(agg_path)}


def write_outcomes(outcomes: Sequence[QueryOutcome], run_dir: str) -> str:
    path = Path(run_dir) / OUTCOMES_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(o.to_json(), sort_keys=True) + "\n" for o in outcomes), encoding="utf-8")
    return str(path)


def read_outcomes(run_dir: str) -> List[QueryOutcome]:
    path = Path(run_dir) / OUTCOMES_FILE
    if not path.is_file():
        raise QuerySetError(f"no stored outcomes under {run_dir}")
    return [QueryOutcome.from_json(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def export_judge_file(records: Sequence[QueryRecord], answers: Dict[str, str], path: str) -> str:
    """JSONL of (query, answer, gold_answer) for an external correctness judge."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for r in records:
        lines.append(json.dumps({
            "query_id": r.query_id,
            "query": r.query,
            "answer": answers.get(r.query_id, ""),
            "gold_answer": r.gold_answer,
        }, sort_keys=True, ensure_ascii=False))
    p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return str(p)


# ─────────────────────────────────────────────────────────────────────────────
# Batch runs
# ─────────────────────────────────────────────────────────────────────────────
ClientFactory = Callable[[QueryRecord], ModelClient]


def run_batch(
    config: AgentConfig,
    manifest: CorpusManifest,
    index: SearchBackend,
    records: Sequence[QueryRecord],
    make_client: ClientFactory,
    run_dir: str,
    *,
    mode: str = "agentic",
    jobs: int = 1,
    recall_mode: str = "set",
    label: str = "default",
    baseline: Optional[Sequence[QueryOutcome]] = None,
    baseline_label: Optional[str] = None,
    progress: bool = False,
) -> EvalReport:
    """Run every query, write transcripts, outcomes and reports under ``run_dir``.

    Sessions share only the immutable manifest and index; results are
    assembled in query-set order whatever ``jobs`` is.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    ks = config.recall_ks
    transcripts = Path(run_dir) / TRANSCRIPTS_DIR
    transcripts.mkdir(parents=True, exist_ok=True)

    def run_one(record: QueryRecord):
        client = make_client(record)
        if mode == "single_shot":
            result = run_single_shot(config, manifest, index, client, record.query)
        elif mode == "oracle":
            result = run_oracle(config, manifest, index, client, record.query, sorted(record.gold_doc_ids))
        else:
            result = run_query(config, manifest, index, client, record.query)
        result.session.conversation.export_jsonl(str(transcripts / f"{record.query_id}.jsonl"))
        return score_outcome(record, result, ks, recall_mode), result.answer.text

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(tqdm(pool.map(run_one, records), total=len(records), desc=label,
                            disable=not progress, leave=False))

    outcomes = [o for o, _ in results]
    answers = {o.query_id: text for o, text in results}
    write_outcomes(outcomes, run_dir)
    export_judge_file(records, answers, str(Path(run_dir) / JUDGE_FILE))
    report = aggregate(outcomes, baseline, label=label, baseline_label=baseline_label, ks=ks)
    write_reports(report, run_dir, ks)
    logger.info("%s: %d queries, recall@%d=%.3f", label, len(outcomes), ks[0],
                report.aggregates[f"recall@{ks[0]}"]["mean"])
    return report
