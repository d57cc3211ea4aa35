"""Conversation state: message log, token accounting, budget checks, pruning.

Messages are LangChain message objects so the log can be handed to any chat
model as-is; each one is wrapped with its token count and, for tool messages,
the ToolResult it carries.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set

from langchain_core.messages import AIMessage, BaseMessage, HumanMessage, SystemMessage, ToolMessage

from agentic_rag import prompt_templates as pt
from agentic_rag.tokens import TokenCounter, count_tokens
from agentic_rag.tools import ReferenceRegistry, ToolResult

logger = logging.getLogger(__name__)

_ROLES = {"system": "system", "human": "user", "ai": "assistant", "tool": "tool"}


class BudgetSignal(str, Enum):
    OK = "ok"
    WARN = "warn"
    FORCE = "force"


class BudgetState(str, Enum):
    OK = "ok"
    WARNED = "warned"
    FORCING = "forcing"


@dataclass
class ContextBudget:
    threshold: int = 128_000
    warn_fraction: float = 0.9
    state: BudgetState = BudgetState.OK
    warning_issued: bool = False
    notice_injected: bool = False

    @property
    def warn_at(self) -> float:
        return self.warn_fraction * self.threshold

    def reset_episode(self) -> None:
        self.warning_issued = False
        self.notice_injected = False
        if self.state is BudgetState.WARNED:
            self.state = BudgetState.OK


def message_token_count(msg: BaseMessage, counter: TokenCounter = count_tokens) -> int:
    content = msg.content if isinstance(msg.content, str) else json.dumps(msg.content, sort_keys=True)
    total = counter(content)
    for call in getattr(msg, "tool_calls", None) or []:
        total += counter(json.dumps(call.get("args", {}), sort_keys=True, ensure_ascii=False))
    return total


@dataclass
class Message:
    message: BaseMessage
    token_count: int
    tool_result: Optional[ToolResult] = None
    note: Optional[str] = None
    pruned_refs: Optional[List[str]] = None

    @property
    def role(self) -> str:
        return _ROLES.get(self.message.type, self.message.type)

    @property
    def content(self) -> str:
        return self.message.content if isinstance(self.message.content, str) else str(self.message.content)

    @property
    def pruned(self) -> bool:
        return self.pruned_refs is not None

    def to_record(self, index: int) -> Dict[str, Any]:
        rec: Dict[str, Any] = {
            "index": index,
            "role": self.role,
            "content": self.content,
            "token_count": self.token_count,
        }
        if isinstance(self.message, AIMessage) and self.message.tool_calls:
            rec["tool_calls"] = [
                {"id": c.get("id"), "name": c["name"], "args": c.get("args", {})}
                for c in self.message.tool_calls
            ]
        if isinstance(self.message, ToolMessage):
            rec["tool_call_id"] = self.message.tool_call_id
        if self.tool_result is not None:
            r = self.tool_result
            rec["tool_name"] = r.tool_name
            rec["ref_ids"] = sorted(r.ref_ids_mentioned)
            rec["prunable"] = r.prunable
            rec["is_error"] = r.is_error
        if self.pruned_refs is not None:
            rec["pruned"] = True
            rec["pruned_refs"] = list(self.pruned_refs)
        if self.note:
            rec["note"] = self.note
        return rec


@dataclass(frozen=True)
class PruneReport:
    tokens_before: int
    tokens_after: int
    messages_pruned: int


class Conversation:
    """Ordered message log with a cached token total and a context budget."""

    def __init__(self, budget: Optional[ContextBudget] = None, registry: Optional[ReferenceRegistry] = None,
                 counter: TokenCounter = count_tokens):
        self.messages: List[Message] = []
        self.budget = budget or ContextBudget()
        self.registry = registry if registry is not None else ReferenceRegistry()
        self.counter = counter
        self._total = 0

    # ── accounting ──────────────────────────────────────────────────────────
    @property
    def total_tokens(self) -> int:
        return self._total

    def recompute_total(self) -> int:
        return sum(message_token_count(m.message, self.counter) for m in self.messages)

    def __len__(self) -> int:
        return len(self.messages)

    def append_message(self, msg: BaseMessage, tool_result: Optional[ToolResult] = None,
                       note: Optional[str] = None) -> Message:
        record = Message(msg, message_token_count(msg, self.counter), tool_result, note)
        self.messages.append(record)
        self._total += record.token_count
        return record

    def add_system(self, text: str, note: Optional[str] = None) -> Message:
        return self.append_message(SystemMessage(content=text), note=note)

    def add_user(self, text: str) -> Message:
        return self.append_message(HumanMessage(content=text))

    def add_assistant(self, text: str = "", tool_calls: Optional[Sequence[Dict[str, Any]]] = None,
                      note: Optional[str] = None) -> Message:
        calls = [{"name": c["name"], "args": c.get("args", {}), "id": c["id"]} for c in tool_calls or []]
        return self.append_message(AIMessage(content=text, tool_calls=calls), note=note)

    def add_tool_result(self, call_id: str, result: ToolResult) -> Message:
        msg = ToolMessage(content=result.rendered_text, tool_call_id=call_id, name=result.tool_name)
        return self.append_message(msg, tool_result=result)

    def lc_messages(self) -> List[BaseMessage]:
        return [m.message for m in self.messages]

    # ── budget ──────────────────────────────────────────────────────────────
    def check_budget(self) -> BudgetSignal:
        total = self._total
        if total >= self.budget.threshold:
            self.budget.state = BudgetState.FORCING
            return BudgetSignal.FORCE
        if total >= self.budget.warn_at and not self.budget.warning_issued:
            self.budget.warning_issued = True
            self.budget.state = BudgetState.WARNED
            return BudgetSignal.WARN
        self.budget.state = BudgetState.WARNED if self.budget.warning_issued else BudgetState.OK
        return BudgetSignal.OK

    def inject_warning(self, summarize_enabled: bool = True) -> bool:
        """Append the budget notice; a no-op after the first call in an episode."""
        if self.budget.notice_injected:
            return False
        template = pt.budget_warning if summarize_enabled else pt.budget_warning_no_summarize
        self.add_system(template.format(total=self._total, threshold=self.budget.threshold), note="budget_warning")
        self.budget.notice_injected = True
        self.budget.warning_issued = True
        logger.info("context budget warning at %d/%d tokens", self._total, self.budget.threshold)
        return True

    # ── pruning ─────────────────────────────────────────────────────────────
    def prune_after_summarize(self, preserve_refs: Set[str] | frozenset) -> PruneReport:
        """Replace prunable tool output that mentions none of ``preserve_refs``.

        Replacement keeps message order and count; the placeholder lists the
        reference ids whose content was removed. Output already no larger than
        its placeholder stays as is, so the total never grows.
        """
        before = self._total
        preserve = set(preserve_refs)
        pruned = 0
        for m in self.messages:
            r = m.tool_result
            if r is None or not r.prunable or m.pruned:
                continue
            if r.ref_ids_mentioned & preserve:
                continue
            ids = self.registry.sort_refs(r.ref_ids_mentioned)
            placeholder = pt.prune_placeholder.format(ids=", ".join(ids) if ids else "none")
            replacement = ToolMessage(content=placeholder, tool_call_id=m.message.tool_call_id, name=r.tool_name)
            new_count = message_token_count(replacement, self.counter)
            if new_count >= m.token_count:
                continue  # already no larger than its placeholder
            m.message = replacement
            self._total += new_count - m.token_count
            m.token_count = new_count
            m.pruned_refs = ids
            pruned += 1

        if self._total >= self.budget.threshold:
            self.budget.state = BudgetState.FORCING
        report = PruneReport(tokens_before=before, tokens_after=self._total, messages_pruned=pruned)
        logger.info("pruned %d tool messages: %d -> %d tokens", pruned, before, self._total)
        return report

    # ── export ──────────────────────────────────────────────────────────────
    def to_records(self, start: int = 0) -> List[Dict[str, Any]]:
        return [m.to_record(i) for i, m in enumerate(self.messages) if i >= start]

    def to_jsonl(self, start: int = 0) -> str:
        return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in self.to_records(start))

    def export_jsonl(self, path: str, start: int = 0) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_jsonl(start), encoding="utf-8")

    def snapshot(self) -> "Conversation":
        return copy.deepcopy(self)
