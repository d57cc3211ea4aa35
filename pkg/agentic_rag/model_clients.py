"""Chat model clients behind one ``complete()`` contract.

``OpenAIChatClient`` talks to a chat-completions endpoint through LangChain;
``ScriptedClient`` replays canned responses from a JSON script so whole runs
are reproducible offline.
"""

from __future__ import annotations

import json
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from langchain_core.messages import BaseMessage, ToolMessage

from agentic_rag.errors import ConfigError, ModelRequestError, ModelTransportError, ScriptExhaustedError
from agentic_rag.settings import HttpClientConfig
from agentic_rag.tools import ToolSchema

logger = logging.getLogger(__name__)

AUTO = "auto"
FORBID_TOOLS = "forbid_tools"
REQUIRE_TOOL = "require_tool"


@dataclass(frozen=True)
class ToolChoice:
    kind: str = AUTO
    tool: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.kind}({self.tool})" if self.tool else self.kind


def auto() -> ToolChoice:
    return ToolChoice(AUTO)


def forbid_tools() -> ToolChoice:
    return ToolChoice(FORBID_TOOLS)


def require_tool(name: str) -> ToolChoice:
    return ToolChoice(REQUIRE_TOOL, name)


@dataclass
class ModelResponse:
    """Exactly one of ``tool_calls`` (non-empty) or ``text``."""

    tool_calls: List[Dict[str, Any]] = field(default_factory=list)
    text: Optional[str] = None

    def __post_init__(self) -> None:
        if bool(self.tool_calls) == (self.text is not None):
            raise ValueError("a model response carries either tool calls or text, not both or neither")

    @property
    def is_text(self) -> bool:
        return self.text is not None


class ModelClient(ABC):
    @abstractmethod
    def complete(self, messages: Sequence[BaseMessage], tool_schemas: Sequence[ToolSchema],
                 directive: ToolChoice) -> ModelResponse:
        ...


# ─────────────────────────────────────────────────────────────────────────────
# HTTP
# ─────────────────────────────────────────────────────────────────────────────
class OpenAIChatClient(ModelClient):
    def __init__(self, config: HttpClientConfig):
        from langchain_openai import ChatOpenAI

        api_key = os.getenv(config.api_key_env)
        if not api_key:
            raise ConfigError(f"environment variable {config.api_key_env} is not set")
        self.config = config
        self._llm = ChatOpenAI(
            model=config.model,
            temperature=config.temperature,
            base_url=config.base_url,
            api_key=api_key,
            timeout=config.timeout_s,
            max_retries=0,  # retries belong to the agent loop
        )

    @staticmethod
    def _tool_choice(directive: ToolChoice) -> str:
        if directive.kind == FORBID_TOOLS:
            return "none"
        if directive.kind == REQUIRE_TOOL:
            return directive.tool
        return "auto"

    def complete(self, messages, tool_schemas, directive):
        import openai

        llm = self._llm
        if tool_schemas:
            llm = llm.bind_tools([s.to_wire() for s in tool_schemas], tool_choice=self._tool_choice(directive))
        try:
            msg = llm.invoke(list(messages))
        except (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError,
                openai.InternalServerError) as e:
            raise ModelTransportError(f"{type(e).__name__}: {e}") from e
        except openai.APIError as e:
            raise ModelRequestError(f"{type(e).__name__}: {e}") from e

        if msg.tool_calls:
            return ModelResponse(tool_calls=[
                {"name": c["name"], "args": c.get("args") or {}, "id": c.get("id") or f"call_{i}"}
                for i, c in enumerate(msg.tool_calls, start=1)
            ])
        content = msg.content if isinstance(msg.content, str) else ""
        return ModelResponse(text=content)


# ─────────────────────────────────────────────────────────────────────────────
# Scripted
# ─────────────────────────────────────────────────────────────────────────────
def _last_tool_text(messages: Sequence[BaseMessage]) -> Optional[str]:
    for msg in reversed(messages):
        if isinstance(msg, ToolMessage):
            return msg.content if isinstance(msg.content, str) else str(msg.content)
    return None


class ScriptedClient(ModelClient):
    """Replays a list of canned responses.

    Entry forms::

        {"tool_calls": [{"name": "search", "args": {...}, "id": "optional"}]}
        {"text": "final answer"}
        {"raise": "transport"}    # or "request" for a rejected, non-retried call

    optionally with ``"when": {"last_result_contains": str, "directive": str}``
    and ``"repeat": true``. The first remaining entry whose guard holds is
    used and, unless it repeats, consumed.
    """

    def __init__(self, entries: Sequence[Dict[str, Any]]):
        self.entries: List[Dict[str, Any]] = [dict(e) for e in entries]
        self.calls: List[Dict[str, Any]] = []
        self._next_id = 0
        for i, e in enumerate(self.entries):
            if sum(k in e for k in ("tool_calls", "text", "raise")) != 1:
                raise ConfigError(f"script entry {i} needs exactly one of tool_calls, text, raise")

    @classmethod
    def from_file(cls, path: str, query_id: Optional[str] = None) -> "ScriptedClient":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"script file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"script file is not valid JSON: {path}: {e}") from e
        if isinstance(data, list):
            return cls(data)
        if isinstance(data, dict):
            queries = data.get("queries") or {}
            if query_id is not None and query_id in queries:
                return cls(queries[query_id])
            return cls(data.get("default") or [])
        raise ConfigError(f"script file must hold a list or an object: {path}")

    def _guard_holds(self, entry: Dict[str, Any], last_result: Optional[str], directive: ToolChoice) -> bool:
        when = entry.get("when") or {}
        needle = when.get("last_result_contains")
        if needle is not None and (last_result is None or needle not in last_result):
            return False
        wanted = when.get("directive")
        if wanted is not None and wanted != directive.kind:
            return False
        return True

    def complete(self, messages, tool_schemas, directive):
        self.calls.append({
            "directive": str(directive),
            "message_count": len(messages),
            "tools": [s.name for s in tool_schemas],
        })
        last_result = _last_tool_text(messages)
        for i, entry in enumerate(self.entries):
            if not self._guard_holds(entry, last_result, directive):
                continue
            if not entry.get("repeat"):
                del self.entries[i]
            return self._respond(entry)
        raise ScriptExhaustedError(
            f"script exhausted at call {len(self.calls)} (directive {directive})"
        )

    def _respond(self, entry: Dict[str, Any]) -> ModelResponse:
        if "raise" in entry:
            if entry["raise"] == "request":
                raise ModelRequestError("scripted request failure")
            raise ModelTransportError(f"scripted {entry['raise']} failure")
        if "text" in entry:
            return ModelResponse(text=str(entry["text"]))
        calls = []
        for c in entry["tool_calls"]:
            self._next_id += 1
            calls.append({"name": c["name"], "args": dict(c.get("args") or {}),
                          "id": c.get("id") or f"call_{self._next_id}"})
        return ModelResponse(tool_calls=calls)
