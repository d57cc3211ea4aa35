# tools.py
# The four retrieval tools exposed to the model: search, find, open, summarize.
# Rendered texts below are what the model sees; tests pin them exactly.
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from agentic_rag import prompt_templates as pt
from agentic_rag.corpus_store import CorpusManifest, Document
from agentic_rag.errors import TooManyQueriesError
from agentic_rag.search_index import SearchBackend, SearchHit, multi_query
from agentic_rag.tokens import TokenCounter, count_tokens

logger = logging.getLogger(__name__)

SEARCH, FIND, OPEN, SUMMARIZE = "search", "find", "open", "summarize"
TOOL_NAMES = (SEARCH, FIND, OPEN, SUMMARIZE)

REF_ID_RE = re.compile(r"^turn([1-9][0-9]*)search([1-9][0-9]*)$")
FIND_CONTEXT_LINES = 3


# ─────────────────────────────────────────────────────────────────────────────
# Reference registry
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class RefEntry:
    ref_id: str
    doc_id: str
    turn_index: int
    originating_query: str
    seq: int


class ReferenceRegistry:
    """Session-scoped map ref_id -> document, ids ``turn{m}search{n}``.

    ``n`` comes from a counter that starts at 1 and never resets within a
    session; ``m`` is the current user turn.
    """

    def __init__(self) -> None:
        self.entries: Dict[str, RefEntry] = {}
        self.global_counter = 0
        self.current_turn = 1

    def advance_turn(self) -> int:
        self.current_turn += 1
        return self.current_turn

    def allocate(self, doc_id: str, originating_query: str = "") -> str:
        self.global_counter += 1
        ref_id = f"turn{self.current_turn}search{self.global_counter}"
        self.entries[ref_id] = RefEntry(ref_id, doc_id, self.current_turn, originating_query, self.global_counter)
        return ref_id

    def resolve(self, ref_id: str) -> Optional[RefEntry]:
        return self.entries.get(ref_id)

    def __contains__(self, ref_id: object) -> bool:
        return ref_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def order_key(self, ref_id: str) -> int:
        entry = self.entries.get(ref_id)
        return entry.seq if entry else self.global_counter + 1

    def sort_refs(self, ref_ids: Iterable[str]) -> List[str]:
        return sorted(set(ref_ids), key=lambda r: (self.order_key(r), r))


def parse_ref_id(ref_id: str) -> Optional[Tuple[int, int]]:
    m = REF_ID_RE.match(ref_id or "")
    return (int(m.group(1)), int(m.group(2))) if m else None


# ─────────────────────────────────────────────────────────────────────────────
# Tool results and schemas
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class ToolResult:
    tool_name: str
    rendered_text: str
    token_count: int
    ref_ids_mentioned: FrozenSet[str] = frozenset()
    prunable: bool = True
    is_error: bool = False
    # set only by summarize: the validated references to keep when pruning
    preserve_refs: Optional[FrozenSet[str]] = None


def make_result(tool_name: str, text: str, refs: Iterable[str] = (), *,
                prunable: bool = True, counter: TokenCounter = count_tokens,
                preserve_refs: Optional[Iterable[str]] = None) -> ToolResult:
    return ToolResult(
        tool_name=tool_name,
        rendered_text=text,
        token_count=counter(text),
        ref_ids_mentioned=frozenset(refs),
        prunable=prunable,
        preserve_refs=frozenset(preserve_refs) if preserve_refs is not None else None,
    )


def error_result(tool_name: str, message: str, counter: TokenCounter = count_tokens) -> ToolResult:
    text = f"Error: {message}"
    return ToolResult(tool_name=tool_name, rendered_text=text, token_count=counter(text),
                      prunable=False, is_error=True)


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: Dict[str, Any] = field(default_factory=dict)

    def to_wire(self) -> Dict[str, Any]:
        """Chat-completions function-calling format."""
        return {
            "type": "function",
            "function": {"name": self.name, "description": self.description, "parameters": self.parameters},
        }


def build_tool_schemas(
    *,
    multi_query_enabled: bool = True,
    multi_query_cap: int = 5,
    per_query_results: int = 10,
    open_window_lines: int = 1800,
    semantic_find_enabled: bool = False,
    summarize_enabled: bool = True,
) -> List[ToolSchema]:
    if multi_query_enabled:
        search_params = {
            "type": "object",
            "properties": {
                "queries": {
                    "type": "array",
                    "items": {"type": "string"},
                    "minItems": 1,
                    "maxItems": multi_query_cap,
                    "description": pt.search_queries_param.format(cap=multi_query_cap),
                },
            },
            "required": ["queries"],
        }
        search_desc = pt.search_tool_multi.format(cap=multi_query_cap, k=per_query_results)
    else:
        search_params = {
            "type": "object",
            "properties": {"query": {"type": "string", "description": pt.search_query_param}},
            "required": ["query"],
        }
        search_desc = pt.search_tool_single.format(k=per_query_results)

    find_props: Dict[str, Any] = {
        "ref_id": {"type": "string", "description": pt.ref_id_param},
        "patterns": {"type": "array", "items": {"type": "string"}, "minItems": 1,
                     "description": pt.find_patterns_param},
    }
    if semantic_find_enabled:
        find_props["semantic"] = {"type": "boolean", "description": pt.find_semantic_param}

    schemas = [
        ToolSchema(SEARCH, search_desc, search_params),
        ToolSchema(FIND, pt.find_tool, {"type": "object", "properties": find_props,
                                        "required": ["ref_id", "patterns"]}),
        ToolSchema(OPEN, pt.open_tool.format(window=open_window_lines), {
            "type": "object",
            "properties": {
                "ref_id": {"type": "string", "description": pt.ref_id_param},
                "line_number": {"type": "integer", "minimum": 0, "description": pt.open_line_param},
            },
            "required": ["ref_id"],
        }),
    ]
    if summarize_enabled:
        schemas.append(ToolSchema(SUMMARIZE, pt.summarize_tool, {
            "type": "object",
            "properties": {
                "summary": {"type": "string", "description": pt.summarize_summary_param},
                "preserve_refs": {"type": "array", "items": {"type": "string"},
                                  "description": pt.summarize_preserve_param},
            },
            "required": ["summary"],
        }))
    return schemas


# ─────────────────────────────────────────────────────────────────────────────
# search
# ─────────────────────────────────────────────────────────────────────────────
def _render_hit(ref_id: str, hit: SearchHit) -> str:
    return (
        f"[{ref_id}] {hit.title}\n"
        f"  filename: {hit.filename} | file type: {hit.file_type}\n"
        f"  snippet: {hit.snippet}"
    )


def tool_search(
    registry: ReferenceRegistry,
    backend: SearchBackend,
    queries: Sequence[str],
    *,
    cap: int = 5,
    per_query_k: int = 10,
    counter: TokenCounter = count_tokens,
) -> ToolResult:
    queries = [q.strip() for q in queries if isinstance(q, str)]
    if not queries:
        return error_result(SEARCH, "at least one query is required", counter)
    if len(queries) > cap:
        return error_result(SEARCH, str(TooManyQueriesError(len(queries), cap)), counter)
    if any(not q for q in queries):
        return error_result(SEARCH, "queries must not be empty", counter)

    hits = multi_query(backend, queries, per_query_k=per_query_k, cap=cap)

    origin = " | ".join(queries)
    lines = ["Search results for: " + " | ".join(f'"{q}"' for q in queries)]
    refs = []
    for hit in hits:
        ref_id = registry.allocate(hit.doc_id, origin)
        refs.append(ref_id)
        lines.append(_render_hit(ref_id, hit))
    if not hits:
        lines.append("No documents matched.")
    lines.append(f"{len(hits)} result" + ("" if len(hits) == 1 else "s"))
    logger.debug("search %s -> %d hits", queries, len(hits))
    return make_result(SEARCH, "\n".join(lines), refs, counter=counter)


# ─────────────────────────────────────────────────────────────────────────────
# find
# ─────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Passage:
    start: int
    end: int  # exclusive
    match_line: int
    body: str

    @property
    def key(self) -> str:
        return " ".join(self.body.split())


def _passage(doc: Document, line_no: int, radius: int = FIND_CONTEXT_LINES) -> Passage:
    start = max(0, line_no - radius)
    end = min(doc.total_lines, line_no + radius + 1)
    body = "\n".join(f"{i}: {doc.lines[i]}" for i in range(start, end))
    return Passage(start, end, line_no, body)


def lexical_matches(doc: Document, pattern: str, limit: int, radius: int = FIND_CONTEXT_LINES) -> List[int]:
    """First ``limit`` matching lines, skipping matches inside an already chosen passage."""
    needle = pattern.casefold()
    chosen: List[int] = []
    for i, line in enumerate(doc.lines):
        if needle not in line.casefold():
            continue
        if any(abs(i - c) <= radius for c in chosen):
            continue
        chosen.append(i)
        if len(chosen) >= limit:
            break
    return chosen


def count_matching_lines(doc: Document, pattern: str) -> int:
    needle = pattern.casefold()
    return sum(1 for line in doc.lines if needle in line.casefold())


def tool_find(
    registry: ReferenceRegistry,
    manifest: CorpusManifest,
    ref_id: str,
    patterns: Sequence[str],
    semantic: bool = False,
    *,
    backend: Optional[SearchBackend] = None,
    semantic_enabled: bool = False,
    passages_per_pattern: int = 2,
    token_cap: int = 11_000,
    counter: TokenCounter = count_tokens,
) -> ToolResult:
    entry = registry.resolve(ref_id)
    if entry is None:
        return error_result(FIND, f"unknown reference id: {ref_id}", counter)
    doc = manifest.get(entry.doc_id)
    if doc is None:
        return error_result(FIND, f"document for {ref_id} is no longer available", counter)
    patterns = [p for p in (p.strip() for p in patterns if isinstance(p, str)) if p]
    if not patterns:
        return error_result(FIND, "at least one non-empty pattern is required", counter)

    notices: List[str] = []
    use_semantic = False
    if semantic:
        if not semantic_enabled:
            notices.append(pt.find_semantic_disabled)
        elif backend is None or not backend.supports_semantic_find:
            notices.append(pt.find_semantic_unavailable)
        else:
            use_semantic = True

    # (pattern line, [passages]) in pattern order
    sections: List[Tuple[str, List[Tuple[Passage, bool]]]] = []
    seen: Dict[str, Passage] = {}
    any_match = False
    total_passages = 0
    for pattern in patterns:
        if use_semantic:
            lines = list(backend.semantic_passages(doc, pattern, passages_per_pattern))[:passages_per_pattern]
            n_matching = len(lines)
        else:
            lines = lexical_matches(doc, pattern, passages_per_pattern)
            n_matching = count_matching_lines(doc, pattern) if lines else 0
        if not lines:
            sections.append((f'Pattern "{pattern}": no matches', []))
            continue
        any_match = True
        plural = "" if n_matching == 1 else "s"
        passages = []
        for line_no in lines:
            p = _passage(doc, line_no)
            dup = p.key in seen
            if not dup:
                seen[p.key] = p
                total_passages += 1
            passages.append((p, dup))
        sections.append((f'Pattern "{pattern}": {n_matching} matching line{plural}', passages))

    if not any_match:
        text = "\n".join(notices + [pt.find_no_matches.format(patterns=", ".join(patterns))])
        return make_result(FIND, text, [ref_id], counter=counter)

    header = [f"Find in {ref_id} ({doc.filename}, {doc.total_lines} lines)"] + notices
    pieces: List[Tuple[str, bool]] = []  # (text, is_passage)
    for pattern_line, passages in sections:
        pieces.append((pattern_line, False))
        for p, dup in passages:
            if dup:
                pieces.append((f"--- lines {p.start}-{p.end - 1}: same passage as above ---", False))
            else:
                pieces.append((f"--- lines {p.start}-{p.end - 1} ---\n{p.body}", True))

    text = _fit_to_cap(header, pieces, total_passages, token_cap, counter)
    return make_result(FIND, text, [ref_id], counter=counter)


def _fit_to_cap(header: List[str], pieces: List[Tuple[str, bool]], total_passages: int,
                cap: int, counter: TokenCounter) -> str:
    """Join pieces while the whole text stays within ``cap`` tokens.

    Truncation happens only between pieces, never inside a passage; once a piece
    does not fit, everything after it is dropped and a notice is appended.
    """
    reserve = pt.find_truncated.format(omitted=total_passages, cap=cap)
    text = "\n".join(header)
    shown = 0
    for i, (piece, is_passage) in enumerate(pieces):
        candidate = text + "\n" + piece
        if counter(candidate + "\n" + reserve) > cap:
            omitted = total_passages - shown
            notice = pt.find_truncated.format(omitted=omitted, cap=cap)
            final = text + "\n" + notice
            if counter(final) > cap:
                # even the header does not fit; keep what the budget allows
                final = _hard_trim(final, cap, counter)
            return final
        text = candidate
        if is_passage:
            shown += 1
    return text


def _hard_trim(text: str, cap: int, counter: TokenCounter) -> str:
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter(text[:mid]) <= cap:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo]


# ─────────────────────────────────────────────────────────────────────────────
# open
# ─────────────────────────────────────────────────────────────────────────────
def open_header(start: int, end_inclusive: int, total: int) -> str:
    return f"Viewing lines [{start}-{end_inclusive}] of {total} lines"


def tool_open(
    registry: ReferenceRegistry,
    manifest: CorpusManifest,
    ref_id: str,
    line_number: Optional[int] = None,
    *,
    window: int = 1800,
    counter: TokenCounter = count_tokens,
) -> ToolResult:
    entry = registry.resolve(ref_id)
    if entry is None:
        return error_result(OPEN, f"unknown reference id: {ref_id}", counter)
    doc = manifest.get(entry.doc_id)
    if doc is None:
        return error_result(OPEN, f"document for {ref_id} is no longer available", counter)

    start = 0 if line_number is None else line_number
    if start < 0:
        return error_result(OPEN, f"line number must be >= 0 (got {start})", counter)
    total = doc.total_lines
    if start >= total:
        return error_result(OPEN, f"line number {start} beyond document end ({total} lines)", counter)

    end = min(start + window, total)
    body = "\n".join(f"{i}: {doc.lines[i]}" for i in range(start, end))
    text = open_header(start, end - 1, total) + "\n" + body
    return make_result(OPEN, text, [ref_id], counter=counter)


# ─────────────────────────────────────────────────────────────────────────────
# summarize
# ─────────────────────────────────────────────────────────────────────────────
def tool_summarize(
    summary: str,
    preserve_refs: Sequence[str],
    registry: ReferenceRegistry,
    *,
    counter: TokenCounter = count_tokens,
) -> ToolResult:
    """Record the model's summary; unknown ids are dropped with a notice."""
    requested = list(dict.fromkeys(r.strip() for r in preserve_refs if isinstance(r, str) and r.strip()))
    kept = [r for r in requested if r in registry]
    dropped = [r for r in requested if r not in registry]
    kept = registry.sort_refs(kept)

    lines = ["Summary recorded.", summary.strip() or "(empty summary)"]
    lines.append("Preserved references: " + (", ".join(kept) if kept else "(none)"))
    if dropped:
        lines.append("Dropped unknown reference ids: " + ", ".join(dropped))
    return make_result(SUMMARIZE, "\n".join(lines), kept, prunable=False,
                       counter=counter, preserve_refs=kept)
