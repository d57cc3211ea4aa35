"""Bounded tool-use loop as a LangGraph ``StateGraph``.

    START -> manage_context -> call_model -> execute_tools -> manage_context ...
                   |               |
                   v               v
              force_answer -> format_answer -> END

``manage_context`` runs at the top of every iteration: it hands over to
``force_answer`` once ``max_calls`` model calls are used, forces a summarize
call when the budget is exhausted and injects the budget notice at the warning
level. One ``run_query`` makes at most ``max_calls + 1`` model calls.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, TypedDict

from langgraph.graph import END, START, StateGraph
from pydantic import BaseModel, ConfigDict, ValidationError
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt, wait_fixed

from agentic_rag import prompt_templates as pt
from agentic_rag.conversation import BudgetSignal, ContextBudget, Conversation
from agentic_rag.corpus_store import CorpusManifest
from agentic_rag.errors import ModelCallError, ModelTransportError
from agentic_rag.model_clients import ModelClient, ModelResponse, ToolChoice, auto, forbid_tools, require_tool
from agentic_rag.search_index import SearchBackend, multi_query
from agentic_rag.settings import AgentConfig
from agentic_rag.tokens import TokenCounter, get_token_counter
from agentic_rag.tools import (
    FIND, OPEN, SEARCH, SUMMARIZE, ReferenceRegistry, ToolResult, ToolSchema, build_tool_schemas,
    error_result, tool_find, tool_open, tool_search, tool_summarize,
)

logger = logging.getLogger(__name__)

CITATION_RE = re.compile(r"\[ref:\s*(turn\d+search\d+)\s*(?:\|\s*([0-9]+\.?[0-9]*|\.[0-9]+))?\s*\]")
DEFAULT_CITATION_SCORE = 1.0
SINGLE_SHOT_CALL_ID = "single_shot_search"


# ─────────────────────────────────────────────────────────────────────────────
# Answers
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Citation:
    ref_id: str
    relevancy_score: float


@dataclass
class AgentStats:
    iterations_used: int = 0
    model_calls: int = 0
    tool_counts: Dict[str, int] = field(default_factory=dict)
    total_tokens: int = 0
    prompt_tokens_sent: int = 0
    forced_completion: bool = False
    aborted: bool = False
    error: Optional[str] = None
    dropped_citations: List[str] = field(default_factory=list)

    @property
    def total_tool_calls(self) -> int:
        return sum(self.tool_counts.values())

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["tool_counts"] = dict(sorted(self.tool_counts.items()))
        return d


@dataclass
class AgentAnswer:
    text: str
    citations: List[Citation] = field(default_factory=list)
    stats: AgentStats = field(default_factory=AgentStats)


def format_answer(text: str, registry: ReferenceRegistry) -> AgentAnswer:
    """Parse ``[ref: turnXsearchY | score]`` citations out of ``text``.

    Unknown ids are dropped and listed in ``stats.dropped_citations``; repeated
    ids keep their highest score; a missing score counts as 1.0.
    """
    best: Dict[str, float] = {}
    dropped: List[str] = []
    for m in CITATION_RE.finditer(text or ""):
        ref_id, raw = m.group(1), m.group(2)
        if ref_id not in registry:
            if ref_id not in dropped:
                dropped.append(ref_id)
            continue
        score = DEFAULT_CITATION_SCORE if raw is None else min(1.0, max(0.0, float(raw)))
        if score > best.get(ref_id, -1.0):
            best[ref_id] = score
    citations = [
        Citation(r, s)
        for r, s in sorted(best.items(), key=lambda item: (-item[1], registry.order_key(item[0]), item[0]))
    ]
    return AgentAnswer(text=text or "", citations=citations, stats=AgentStats(dropped_citations=dropped))


# ─────────────────────────────────────────────────────────────────────────────
# Session
# ─────────────────────────────────────────────────────────────────────────────
@dataclass
class AgentSession:
    """One conversation over one corpus; spans any number of user turns."""

    config: AgentConfig
    manifest: CorpusManifest
    backend: SearchBackend
    conversation: Conversation
    counter: TokenCounter
    schemas: List[ToolSchema]
    system_prompt: str
    turns_started: int = 0
    episode_start: int = 0
    model_calls: int = 0
    prompt_tokens_sent: int = 0

    @classmethod
    def create(cls, config: AgentConfig, manifest: CorpusManifest, backend: SearchBackend,
               system_prompt: Optional[str] = None) -> "AgentSession":
        counter = get_token_counter(config.token_counter)
        budget = ContextBudget(threshold=config.token_threshold, warn_fraction=config.warn_fraction)
        schemas = build_tool_schemas(
            multi_query_enabled=config.multi_query_enabled,
            multi_query_cap=config.multi_query_cap,
            per_query_results=config.per_query_results,
            open_window_lines=config.open_window_lines,
            semantic_find_enabled=config.semantic_find_enabled,
            summarize_enabled=config.summarize_enabled,
        )
        if system_prompt is None:
            system_prompt = pt.build_agent_system(
                multi_query_enabled=config.multi_query_enabled,
                multi_query_cap=config.multi_query_cap,
                window=config.open_window_lines,
                summarize_enabled=config.summarize_enabled,
            )
        conv = Conversation(budget=budget, registry=ReferenceRegistry(), counter=counter)
        return cls(config, manifest, backend, conv, counter, schemas, system_prompt)

    @property
    def registry(self) -> ReferenceRegistry:
        return self.conversation.registry

    def start_turn(self, user_query: str) -> None:
        if self.turns_started == 0:
            self.conversation.add_system(self.system_prompt)
        else:
            self.registry.advance_turn()
        self.turns_started += 1
        self.conversation.budget.reset_episode()
        self.episode_start = len(self.conversation)
        self.conversation.add_user(user_query)
        self.model_calls = 0
        self.prompt_tokens_sent = 0

    def episode_tool_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for m in self.conversation.messages[self.episode_start:]:
            if m.tool_result is not None:
                counts[m.tool_result.tool_name] = counts.get(m.tool_result.tool_name, 0) + 1
        return counts


@dataclass
class RunResult:
    answer: AgentAnswer
    session: AgentSession

    @property
    def transcript(self) -> List[Dict[str, Any]]:
        return self.session.conversation.to_records()


# ─────────────────────────────────────────────────────────────────────────────
# Tool dispatch
# ─────────────────────────────────────────────────────────────────────────────
class _Args(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SearchArgs(_Args):
    queries: Optional[List[str]] = None
    query: Optional[str] = None


class FindArgs(_Args):
    ref_id: str
    patterns: List[str]
    semantic: bool = False


class OpenArgs(_Args):
    ref_id: str
    line_number: Optional[int] = None


class SummarizeArgs(_Args):
    summary: str
    preserve_refs: List[str] = []


_ARG_MODELS = {SEARCH: SearchArgs, FIND: FindArgs, OPEN: OpenArgs, SUMMARIZE: SummarizeArgs}
_PARAM_LABELS = {"ref_id": "reference id"}


def _validation_message(tool: str, err: ValidationError) -> str:
    first = err.errors()[0]
    param = ".".join(str(p) for p in first.get("loc", ())) or "arguments"
    if first.get("type") == "missing":
        return f"missing required parameter: {_PARAM_LABELS.get(param, param)}"
    if first.get("type") == "extra_forbidden":
        return f"unexpected parameter for {tool}: {param}"
    return f"invalid value for {tool} parameter {param}: {first.get('msg', 'invalid')}"


def execute_tool(tool_call: Dict[str, Any], session: AgentSession) -> ToolResult:
    """Run one tool call; every failure comes back as an error ToolResult."""
    name = tool_call.get("name") or ""
    cfg, counter = session.config, session.counter
    if name not in _ARG_MODELS:
        return error_result(name or "unknown", f"unknown tool: {name}", counter)
    if name not in {s.name for s in session.schemas}:
        return error_result(name, f"tool not available in this configuration: {name}", counter)

    raw = tool_call.get("args")
    if not isinstance(raw, dict):
        return error_result(name, f"arguments for {name} must be an object", counter)
    try:
        args = _ARG_MODELS[name].model_validate(raw)
    except ValidationError as e:
        return error_result(name, _validation_message(name, e), counter)

    try:
        if name == SEARCH:
            return _dispatch_search(args, session)
        if name == FIND:
            return tool_find(
                session.registry, session.manifest, args.ref_id, args.patterns, args.semantic,
                backend=session.backend,
                semantic_enabled=cfg.semantic_find_enabled,
                passages_per_pattern=cfg.find_passages_per_pattern,
                token_cap=cfg.find_token_cap,
                counter=counter,
            )
        if name == OPEN:
            return tool_open(session.registry, session.manifest, args.ref_id, args.line_number,
                             window=cfg.open_window_lines, counter=counter)
        return tool_summarize(args.summary, args.preserve_refs, session.registry, counter=counter)
    except Exception as e:  # noqa: BLE001 - tool failures stay in-band
        logger.exception("tool %s failed", name)
        return error_result(name, f"{type(e).__name__}: {e}", counter)


def _dispatch_search(args: SearchArgs, session: AgentSession) -> ToolResult:
    cfg = session.config
    if args.queries is None and args.query is None:
        param = "queries" if cfg.multi_query_enabled else "query"
        return error_result(SEARCH, f"missing required parameter: {param}", session.counter)
    queries = list(args.queries or []) + ([args.query] if args.query is not None else [])
    if not cfg.multi_query_enabled and len(queries) > 1:
        return error_result(
            SEARCH,
            f"search runs in single-query mode and accepts exactly one query (got {len(queries)})",
            session.counter,
        )
    cap = cfg.multi_query_cap if cfg.multi_query_enabled else 1
    return tool_search(session.registry, session.backend, queries, cap=cap,
                       per_query_k=cfg.per_query_results, counter=session.counter)


# ─────────────────────────────────────────────────────────────────────────────
# Graph
# ─────────────────────────────────────────────────────────────────────────────
class AgentState(TypedDict, total=False):
    session: AgentSession
    client: ModelClient
    iteration: int
    directive: ToolChoice
    next: str
    response: Optional[ModelResponse]
    answer_text: str
    forced: bool
    aborted: bool
    error: Optional[str]
    prune_failed: bool
    answer: AgentAnswer


def complete_with_retry(session: AgentSession, client: ModelClient, directive: ToolChoice,
                        schemas: Optional[Sequence[ToolSchema]] = None) -> ModelResponse:
    cfg = session.config
    retryer = Retrying(
        stop=stop_after_attempt(cfg.max_retries + 1),
        wait=wait_fixed(cfg.retry_backoff_s),
        retry=retry_if_exception_type(ModelTransportError),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )
    conv = session.conversation
    response = retryer(client.complete, conv.lc_messages(), session.schemas if schemas is None else schemas,
                       directive)
    session.model_calls += 1
    session.prompt_tokens_sent += conv.total_tokens
    return response


def manage_context(state: AgentState) -> Dict[str, Any]:
    session = state["session"]
    cfg = session.config
    conv = session.conversation
    if state.get("iteration", 0) >= cfg.max_calls:
        return {"next": "force_answer"}

    signal = conv.check_budget()
    if signal is BudgetSignal.FORCE:
        if not cfg.summarize_enabled or state.get("prune_failed"):
            logger.info("context budget exhausted (%d tokens); forcing the final answer", conv.total_tokens)
            return {"next": "force_answer"}
        logger.info("context budget exhausted (%d tokens); requiring summarize", conv.total_tokens)
        return {"next": "call_model", "directive": require_tool(SUMMARIZE)}
    if signal is BudgetSignal.WARN:
        conv.inject_warning(cfg.summarize_enabled)
    return {"next": "call_model", "directive": auto()}


def call_model(state: AgentState) -> Dict[str, Any]:
    session = state["session"]
    iteration = state.get("iteration", 0) + 1
    try:
        response = complete_with_retry(session, state["client"], state.get("directive") or auto())
    except ModelCallError as e:
        logger.error("model call failed: %s", e)
        return {"iteration": iteration, "aborted": True, "error": str(e), "next": "format_answer",
                "answer_text": pt.aborted_answer.format(error=e)}

    conv = session.conversation
    if response.is_text:
        conv.add_assistant(response.text)
        return {"iteration": iteration, "response": response, "answer_text": response.text,
                "next": "format_answer"}
    conv.add_assistant("", response.tool_calls)
    return {"iteration": iteration, "response": response, "next": "execute_tools"}


def execute_tools(state: AgentState) -> Dict[str, Any]:
    session = state["session"]
    conv = session.conversation
    prune_failed = state.get("prune_failed", False)
    for call in state["response"].tool_calls:
        result = execute_tool(call, session)
        logger.debug("tool %s -> %d tokens%s", call.get("name"), result.token_count,
                     " (error)" if result.is_error else "")
        conv.add_tool_result(call["id"], result)
        if result.tool_name == SUMMARIZE and not result.is_error and result.preserve_refs is not None:
            report = conv.prune_after_summarize(result.preserve_refs)
            prune_failed = report.tokens_after >= session.config.token_threshold
    return {"prune_failed": prune_failed, "response": None}


def force_answer(state: AgentState) -> Dict[str, Any]:
    session = state["session"]
    conv = session.conversation
    logger.info("forced completion after %d iterations", state.get("iteration", 0))
    conv.add_system(pt.forced_completion, note="forced_completion")
    try:
        response = complete_with_retry(session, state["client"], forbid_tools())
    except ModelCallError as e:
        logger.error("model call failed during forced completion: %s", e)
        return {"forced": True, "aborted": True, "error": str(e),
                "answer_text": pt.aborted_answer.format(error=e)}
    if response.is_text:
        conv.add_assistant(response.text, note="forced_completion")
        return {"forced": True, "answer_text": response.text}
    # tools are forbidden here: the calls are recorded nowhere and never run
    conv.add_assistant("", note="forced_completion_tool_calls_ignored")
    return {"forced": True, "answer_text": ""}


def finish(state: AgentState) -> Dict[str, Any]:
    session = state["session"]
    text = state.get("answer_text") or ""
    if state.get("aborted"):
        answer = AgentAnswer(text=text)
    else:
        answer = format_answer(text, session.registry)
    s = answer.stats
    s.iterations_used = state.get("iteration", 0)
    s.model_calls = session.model_calls
    s.tool_counts = session.episode_tool_counts()
    s.total_tokens = session.conversation.total_tokens
    s.prompt_tokens_sent = session.prompt_tokens_sent
    s.forced_completion = bool(state.get("forced"))
    s.aborted = bool(state.get("aborted"))
    s.error = state.get("error")
    if s.dropped_citations:
        logger.info("dropped unknown citations: %s", ", ".join(s.dropped_citations))
    return {"answer": answer}


def _route(state: AgentState) -> str:
    return state["next"]


def build_graph():
    sg = StateGraph(AgentState)

    sg.add_node("manage_context", manage_context)
    sg.add_node("call_model", call_model)
    sg.add_node("execute_tools", execute_tools)
    sg.add_node("force_answer", force_answer)
    sg.add_node("format_answer", finish)

    sg.add_edge(START, "manage_context")
    sg.add_conditional_edges(
        "manage_context",
        _route,
        {"call_model": "call_model", "force_answer": "force_answer"},
    )
    sg.add_conditional_edges(
        "call_model",
        _route,
        {"execute_tools": "execute_tools", "format_answer": "format_answer"},
    )
    sg.add_edge("execute_tools", "manage_context")
    sg.add_edge("force_answer", "format_answer")
    sg.add_edge("format_answer", END)

    return sg.compile()


app = build_graph()


# ─────────────────────────────────────────────────────────────────────────────
# Entry points
# ─────────────────────────────────────────────────────────────────────────────
def run_query(
    config: AgentConfig,
    manifest: CorpusManifest,
    index: SearchBackend,
    client: ModelClient,
    user_query: str,
    *,
    session: Optional[AgentSession] = None,
) -> RunResult:
    """Answer ``user_query`` with the agentic loop.

    Pass an existing ``session`` to continue a multi-turn conversation: ids
    keep counting from where the previous turn stopped.
    """
    if not user_query or not user_query.strip():
        raise ValueError("query must not be empty")
    session = session or AgentSession.create(config, manifest, index)
    session.start_turn(user_query)
    final = app.invoke(
        {"session": session, "client": client, "iteration": 0, "forced": False, "aborted": False,
         "prune_failed": False},
        config={"recursion_limit": session.config.max_calls * 4 + 10},
    )
    return RunResult(final["answer"], session)


def _one_shot_answer(session: AgentSession, client: ModelClient, fallback: Dict[str, float]) -> AgentAnswer:
    conv = session.conversation
    aborted, error = False, None
    try:
        response = complete_with_retry(session, client, forbid_tools())
        text = response.text if response.is_text else ""
        conv.add_assistant(text)
    except ModelCallError as e:
        logger.error("model call failed: %s", e)
        aborted, error, text = True, str(e), pt.aborted_answer.format(error=e)

    answer = AgentAnswer(text=text) if aborted else format_answer(text, session.registry)
    if not aborted and not answer.citations and fallback:
        answer.citations = [
            Citation(r, s)
            for r, s in sorted(fallback.items(), key=lambda i: (-i[1], session.registry.order_key(i[0])))
        ]
    s = answer.stats
    s.iterations_used = 1
    s.model_calls = session.model_calls
    s.tool_counts = session.episode_tool_counts()
    s.total_tokens = conv.total_tokens
    s.prompt_tokens_sent = session.prompt_tokens_sent
    s.aborted, s.error = aborted, error
    return answer


def run_single_shot(
    config: AgentConfig,
    manifest: CorpusManifest,
    index: SearchBackend,
    client: ModelClient,
    user_query: str,
) -> RunResult:
    """Baseline: one search with the query verbatim, then one tool-free answer."""
    if not user_query or not user_query.strip():
        raise ValueError("query must not be empty")
    session = AgentSession.create(config, manifest, index, system_prompt=pt.single_shot_system)
    session.schemas = [s for s in session.schemas if s.name == SEARCH]
    session.start_turn(user_query)
    conv = session.conversation
    args = {"queries": [user_query]} if config.multi_query_enabled else {"query": user_query}
    conv.add_assistant("", [{"name": SEARCH, "args": args, "id": SINGLE_SHOT_CALL_ID}])
    result = tool_search(session.registry, index, [user_query], cap=1,
                         per_query_k=config.per_query_results, counter=session.counter)
    conv.add_tool_result(SINGLE_SHOT_CALL_ID, result)

    # same ranking tool_search rendered; refs were allocated in hit order
    hits = multi_query(index, [user_query], per_query_k=config.per_query_results, cap=1) if not result.is_error else []
    refs = session.registry.sort_refs(result.ref_ids_mentioned)
    top = max((h.score for h in hits), default=0.0)
    fallback = {r: (h.score / top if top > 0 else 0.0) for r, h in zip(refs, hits)}
    return RunResult(_one_shot_answer(session, client, fallback), session)


def run_oracle(
    config: AgentConfig,
    manifest: CorpusManifest,
    index: SearchBackend,
    client: ModelClient,
    user_query: str,
    gold_doc_ids: Sequence[str],
) -> RunResult:
    """Upper bound: the gold documents are opened for the model up front."""
    session = AgentSession.create(config, manifest, index, system_prompt=pt.oracle_system)
    session.schemas = [s for s in session.schemas if s.name == OPEN]
    session.start_turn(user_query)
    conv = session.conversation
    refs = [session.registry.allocate(doc_id, "oracle") for doc_id in sorted(set(gold_doc_ids))]
    calls = [{"name": OPEN, "args": {"ref_id": r}, "id": f"oracle_open_{i}"} for i, r in enumerate(refs, start=1)]
    if calls:
        conv.add_assistant("", calls)
    for call, ref in zip(calls, refs):
        conv.add_tool_result(call["id"], tool_open(session.registry, manifest, ref,
                                                   window=config.open_window_lines, counter=session.counter))
    return RunResult(_one_shot_answer(session, client, {r: 1.0 for r in refs}), session)
