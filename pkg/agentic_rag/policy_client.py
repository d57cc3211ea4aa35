# policy_client.py
# Deterministic offline agent: search -> find keywords in every hit -> answer.
# Reads only the message history, so it plays the same role as a chat model.
import re
from typing import Dict, List, Optional, Sequence, Tuple

from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, ToolMessage

from agentic_rag.model_clients import FORBID_TOOLS, REQUIRE_TOOL, ModelClient, ModelResponse, ToolChoice
from agentic_rag.search_index import tokenize
from agentic_rag.tools import FIND, SEARCH, SUMMARIZE, ToolSchema

STOPWORDS = frozenset(
    "a an and are as at be by can did do does for from has have how in is it its of on or that the "
    "their there these this to was what when where which who why will with you your".split()
)

_HIT_RE = re.compile(r"^\[(turn\d+search\d+)\] ", re.MULTILINE)
_PATTERN_RE = re.compile(r'^Pattern "(.*)": (\d+) matching line', re.MULTILINE)


def query_keywords(query: str) -> List[str]:
    words = [w for w in tokenize(query) if len(w) >= 3 and w not in STOPWORDS]
    return list(dict.fromkeys(words)) or list(dict.fromkeys(tokenize(query)))[:3]


class HeuristicPolicyClient(ModelClient):
    def __init__(self) -> None:
        self._next_id = 0

    def _call(self, name: str, args: Dict) -> Dict:
        self._next_id += 1
        return {"name": name, "args": args, "id": f"policy_{self._next_id}"}

    @staticmethod
    def _episode(messages: Sequence[BaseMessage]) -> Tuple[str, List[BaseMessage]]:
        for i in range(len(messages) - 1, -1, -1):
            if isinstance(messages[i], HumanMessage):
                return str(messages[i].content), list(messages[i + 1:])
        return "", list(messages)

    def complete(self, messages, tool_schemas, directive: ToolChoice) -> ModelResponse:
        query, episode = self._episode(messages)
        call_args: Dict[str, Dict] = {}
        for m in episode:
            if isinstance(m, AIMessage):
                for c in m.tool_calls:
                    call_args[c["id"]] = c.get("args") or {}

        search_refs: List[str] = []
        find_scores: Dict[str, float] = {}
        for m in episode:
            if not isinstance(m, ToolMessage):
                continue
            content = m.content if isinstance(m.content, str) else ""
            if m.name == SEARCH:
                for ref in _HIT_RE.findall(content):
                    if ref not in search_refs:
                        search_refs.append(ref)
            elif m.name == FIND:
                args = call_args.get(m.tool_call_id, {})
                ref = args.get("ref_id")
                patterns = args.get("patterns") or []
                if not ref or not patterns or content.startswith("[content removed") or content.startswith("Error:"):
                    continue
                matched = sum(1 for _, n in _PATTERN_RE.findall(content) if int(n) > 0)
                find_scores[ref] = matched / len(patterns)

        if directive.kind == REQUIRE_TOOL and directive.tool == SUMMARIZE:
            keep = [r for r in search_refs if find_scores.get(r, 0.0) > 0.0] or search_refs[:1]
            summary = f"Searched for '{query}'; {len(find_scores)} reference(s) inspected with find."
            return ModelResponse(tool_calls=[self._call(SUMMARIZE, {"summary": summary, "preserve_refs": keep})])

        tools_allowed = directive.kind != FORBID_TOOLS
        if tools_allowed and not search_refs and not self._searched(episode):
            return ModelResponse(tool_calls=[self._call(SEARCH, self._search_args(query, tool_schemas))])
        if tools_allowed and search_refs and not find_scores and self._offers(tool_schemas, FIND):
            patterns = query_keywords(query)
            return ModelResponse(tool_calls=[
                self._call(FIND, {"ref_id": ref, "patterns": patterns}) for ref in search_refs
            ])
        return ModelResponse(text=self._answer(search_refs, find_scores))

    @staticmethod
    def _searched(episode: Sequence[BaseMessage]) -> bool:
        return any(isinstance(m, ToolMessage) and m.name == SEARCH for m in episode)

    @staticmethod
    def _offers(tool_schemas: Sequence[ToolSchema], name: str) -> bool:
        return any(s.name == name for s in tool_schemas)

    @staticmethod
    def _search_args(query: str, tool_schemas: Sequence[ToolSchema]) -> Dict:
        schema: Optional[ToolSchema] = next((s for s in tool_schemas if s.name == SEARCH), None)
        if schema is not None and "query" in schema.parameters.get("properties", {}):
            return {"query": query}
        return {"queries": [query]}

    @staticmethod
    def _answer(search_refs: List[str], find_scores: Dict[str, float]) -> str:
        if not search_refs:
            return "No relevant documents were found."
        if not find_scores:
            return "The search results do not show enough detail to answer with confidence."
        ranked = sorted(
            (r for r in search_refs if find_scores.get(r, 0.0) > 0.0),
            key=lambda r: (-find_scores[r], search_refs.index(r)),
        )
        if not ranked:
            return "None of the inspected documents mention the requested details."
        cites = " ".join(f"[ref: {r} | {find_scores[r]:.2f}]" for r in ranked)
        return f"The requested details appear in the cited documents. {cites}"
