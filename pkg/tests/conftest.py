"""Shared fixtures: small corpora, indexes, configs and script files."""

import json

import pytest

from agentic_rag.corpus_store import CorpusManifest, make_document
from agentic_rag.search_index import build_index
from agentic_rag.settings import AgentConfig

SMALL_CORPUS = {
    "alpha.md": "# Alpha guide\nalpha setup steps\nthe alpha valve opens at dawn\n",
    "beta.md": "# Beta guide\nbeta notes\nbeta and alpha differ\n",
    "gamma.txt": "Gamma log\nnothing relevant here\n",
}


def search_call(*queries, id=None):
    call = {"name": "search", "args": {"queries": list(queries)}}
    if id:
        call["id"] = id
    return {"tool_calls": [call]}


def tool_entry(name, **args):
    return {"tool_calls": [{"name": name, "args": args}]}


@pytest.fixture
def build_manifest():
    def _build(files):
        return CorpusManifest.from_documents(make_document(doc_id, text) for doc_id, text in files.items())

    return _build


@pytest.fixture
def small_manifest(build_manifest):
    return build_manifest(SMALL_CORPUS)


@pytest.fixture
def small_index(small_manifest):
    return build_index(small_manifest)


@pytest.fixture
def agent_config():
    def _factory(**overrides):
        overrides.setdefault("retry_backoff_s", 0.0)
        return AgentConfig(**overrides)

    return _factory


@pytest.fixture
def write_corpus(tmp_path):
    def _write(files, name="corpus"):
        root = tmp_path / name
        root.mkdir(parents=True, exist_ok=True)
        for rel, text in files.items():
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            if isinstance(text, bytes):
                path.write_bytes(text)
            else:
                path.write_text(text, encoding="utf-8")
        return root

    return _write


@pytest.fixture
def write_json(tmp_path):
    def _write(name, payload, lines=False):
        path = tmp_path / name
        if lines:
            path.write_text("".join(json.dumps(row) + "\n" for row in payload), encoding="utf-8")
        else:
            path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write
