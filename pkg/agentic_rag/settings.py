# settings.py
# Run configuration: built-in defaults < JSON config file < command-line flags.
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from agentic_rag.errors import ConfigError

load_dotenv()

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    level = (level or os.getenv("AGENTIC_RAG_LOG_LEVEL") or "WARNING").upper()
    root = logging.getLogger("agentic_rag")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler()  # stderr; stdout is reserved for command output
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        root.addHandler(handler)
    root.propagate = False


class AgentConfig(BaseModel):
    """Every tunable of the agentic loop and its tools."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    max_calls: int = Field(default=15, ge=1, description="Loop iterations before forced completion")
    token_threshold: int = Field(default=128_000, ge=1)
    warn_fraction: float = Field(default=0.9, gt=0.0, le=1.0)
    multi_query_enabled: bool = True
    multi_query_cap: int = Field(default=5, ge=1)
    per_query_results: int = Field(default=10, ge=1)
    open_window_lines: int = Field(default=1800, ge=1)
    find_passages_per_pattern: int = Field(default=2, ge=1)
    find_token_cap: int = Field(default=11_000, ge=1)
    semantic_find_enabled: bool = False
    summarize_enabled: bool = True

    snippet_chars: int = Field(default=300, ge=1)
    max_retries: int = Field(default=2, ge=0)
    retry_backoff_s: float = Field(default=1.0, ge=0.0)
    token_counter: Literal["chars4", "tiktoken"] = "chars4"
    bm25_k1: float = Field(default=1.2, gt=0.0)
    bm25_b: float = Field(default=0.75, ge=0.0, le=1.0)
    recall_ks: List[int] = Field(default_factory=lambda: [1, 3])

    @field_validator("recall_ks")
    @classmethod
    def _positive_ks(cls, ks: List[int]) -> List[int]:
        if not ks or any(k < 1 for k in ks):
            raise ValueError("recall_ks must be a non-empty list of counts >= 1")
        return sorted(set(ks))


class HttpClientConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    base_url: Optional[str] = None
    model: str = Field(default_factory=lambda: os.getenv("AGENTIC_RAG_MODEL", "gpt-4o-mini"))
    # name of the environment variable holding the key; the key itself never lives in config
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout_s: float = Field(default=60.0, gt=0.0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    agent: AgentConfig = Field(default_factory=AgentConfig)
    backend: Literal["bm25"] = "bm25"
    client: Literal["http", "scripted", "policy"] = "scripted"
    http: HttpClientConfig = Field(default_factory=HttpClientConfig)
    corpus_dir: Optional[str] = None
    extensions: List[str] = Field(default_factory=lambda: ["md", "txt"])
    query_set: Optional[str] = None
    script_file: Optional[str] = None
    output_dir: str = "runs"
    label: str = "default"
    jobs: int = Field(default=1, ge=1)
    recall_mode: Literal["set", "hit"] = "set"


def _deep_merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Merge the JSON config file (if any) and flag overrides over the defaults.

    ``overrides`` uses the same nesting as the file (``{"agent": {"max_calls": 3}}``);
    ``None`` values are ignored so unset flags never mask the file.
    """
    data: Dict[str, Any] = {}
    if path:
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file must hold a JSON object: {path}")

    if overrides:
        data = _deep_merge(data, _drop_none(overrides))

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _drop_none(d: Mapping[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for k, v in d.items():
        if isinstance(v, Mapping):
            nested = _drop_none(v)
            if nested:
                out[k] = nested
        elif v is not None:
            out[k] = v
    return out
