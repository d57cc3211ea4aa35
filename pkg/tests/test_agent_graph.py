import re

import pytest

from conftest import search_call, tool_entry

from agentic_rag.agent_graph import (
    AgentSession, execute_tool, format_answer, run_query, run_single_shot,
)
from agentic_rag.corpus_store import CorpusManifest, make_document
from agentic_rag.errors import ScriptExhaustedError
from agentic_rag.model_clients import ScriptedClient
from agentic_rag.policy_client import HeuristicPolicyClient
from agentic_rag.search_index import build_index
from agentic_rag.tools import ReferenceRegistry, tool_open

FORCED_TEXT = {"text": "forced answer", "when": {"directive": "forbid_tools"}}


def tool_messages(result, name=None):
    return [m for m in result.session.conversation.messages
            if m.tool_result is not None and (name is None or m.tool_result.tool_name == name)]


# ── loop traces ─────────────────────────────────────────────────────────────
def test_search_open_answer_trace(agent_config, small_manifest, small_index):
    client = ScriptedClient([
        search_call("alpha"),
        tool_entry("open", ref_id="turn1search1"),
        {"text": "Alpha opens at dawn [ref: turn1search1 | 0.9]"},
    ])
    result = run_query(agent_config(), small_manifest, small_index, client, "when does alpha open?")
    stats = result.answer.stats
    assert len(client.calls) == 3
    assert stats.model_calls == 3
    assert stats.iterations_used == 3
    assert stats.tool_counts == {"search": 1, "open": 1}
    assert stats.forced_completion is False
    assert [(c.ref_id, c.relevancy_score) for c in result.answer.citations] == [("turn1search1", 0.9)]


def test_never_answering_client_gets_forced_completion(agent_config, small_manifest, small_index):
    client = ScriptedClient([FORCED_TEXT, {**search_call("alpha"), "repeat": True}])
    result = run_query(agent_config(), small_manifest, small_index, client, "loop forever")
    stats = result.answer.stats
    assert len(client.calls) == 16
    assert stats.iterations_used == 15
    assert stats.tool_counts == {"search": 15}
    assert stats.forced_completion is True
    assert result.answer.text == "forced answer"
    assert client.calls[-1]["directive"] == "forbid_tools"
    notes = [m.note for m in result.session.conversation.messages if m.note]
    assert "forced_completion" in notes


@pytest.mark.parametrize("max_calls", [1, 2, 5])
def test_call_bound(agent_config, small_manifest, small_index, max_calls):
    client = ScriptedClient([{**search_call("alpha"), "repeat": True}])
    result = run_query(agent_config(max_calls=max_calls), small_manifest, small_index, client, "q")
    assert len(client.calls) == max_calls + 1
    # tool calls returned under forbid_tools are not executed
    assert result.answer.stats.tool_counts == {"search": max_calls}
    assert result.answer.text == ""


def test_tool_counts_match_transcript(agent_config, small_manifest, small_index):
    client = ScriptedClient([
        {"tool_calls": [{"name": "search", "args": {"queries": ["alpha", "beta"]}},
                        {"name": "find", "args": {"ref_id": "turn1search1", "patterns": ["valve"]}},
                        {"name": "open", "args": {}}]},
        {"text": "done"},
    ])
    result = run_query(agent_config(), small_manifest, small_index, client, "q")
    counted = {}
    for row in result.transcript:
        if row["role"] == "tool":
            counted[row["tool_name"]] = counted.get(row["tool_name"], 0) + 1
    assert counted == result.answer.stats.tool_counts == {"search": 1, "find": 1, "open": 1}


def test_exhausted_script_fails_loudly(agent_config, small_manifest, small_index):
    with pytest.raises(ScriptExhaustedError):
        run_query(agent_config(), small_manifest, small_index, ScriptedClient([search_call("alpha")]), "q")


def test_transport_errors_are_retried(agent_config, small_manifest, small_index):
    client = ScriptedClient([{"raise": "transport"}, {"raise": "transport"}, {"text": "recovered"}])
    result = run_query(agent_config(max_retries=2), small_manifest, small_index, client, "q")
    assert result.answer.text == "recovered"
    assert not result.answer.stats.aborted


def test_transport_failure_aborts_with_stats(agent_config, small_manifest, small_index):
    client = ScriptedClient([{"raise": "transport", "repeat": True}])
    result = run_query(agent_config(max_retries=2), small_manifest, small_index, client, "q")
    assert len(client.calls) == 3
    assert result.answer.stats.aborted is True
    assert result.answer.text.startswith("[aborted:")
    assert result.answer.citations == []


def test_rejected_request_aborts_without_retry(agent_config, small_manifest, small_index):
    client = ScriptedClient([{"raise": "request", "repeat": True}])
    result = run_query(agent_config(max_retries=2), small_manifest, small_index, client, "q")
    assert len(client.calls) == 1
    assert result.answer.stats.aborted is True
    assert result.answer.text.startswith("[aborted:")


def test_empty_query_is_rejected(agent_config, small_manifest, small_index):
    with pytest.raises(ValueError):
        run_query(agent_config(), small_manifest, small_index, ScriptedClient([]), "   ")


def test_runs_are_deterministic(agent_config, small_manifest, small_index):
    script = [search_call("alpha", "beta"), tool_entry("find", ref_id="turn1search2", patterns=["alpha"]),
              {"text": "[ref: turn1search2 | 0.7] [ref: turn1search1]"}]
    first = run_query(agent_config(), small_manifest, small_index, ScriptedClient(script), "q")
    second = run_query(agent_config(), small_manifest, small_index, ScriptedClient(script), "q")
    assert first.session.conversation.to_jsonl() == second.session.conversation.to_jsonl()
    assert [c.ref_id for c in first.answer.citations] == ["turn1search1", "turn1search2"]


# ── multi-turn ──────────────────────────────────────────────────────────────
def test_reference_ids_across_three_turns(agent_config, small_manifest, small_index):
    config = agent_config()
    session = AgentSession.create(config, small_manifest, small_index)
    client = ScriptedClient([
        search_call("alpha"), {"text": "one"},
        search_call("beta"), search_call("gamma nothing"), {"text": "two [ref: turn1search1 | 0.5]"},
        search_call("alpha beta"), {"text": "three"},
    ])
    issued = []
    for turn, q in enumerate(["first", "second", "third"], start=1):
        before = len(session.registry)
        run_query(config, small_manifest, small_index, client, q, session=session)
        new = [r for r in session.registry.entries if session.registry.entries[r].seq > before]
        assert all(re.fullmatch(rf"turn{turn}search\d+", r) for r in new)
        issued.extend(new)

    seqs = [int(r.split("search")[1]) for r in issued]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    assert seqs[0] == 1
    for ref in issued:
        assert session.registry.resolve(ref).doc_id in small_manifest
    roles = [m.role for m in session.conversation.messages]
    assert roles.count("system") == 1 and roles.count("user") == 3


# ── context management ──────────────────────────────────────────────────────
def budget_corpus():
    docs = []
    for i in range(1, 5):
        head = f"zephyr manual d{i}".ljust(80, ".")
        docs.append(make_document(f"d{i}.md", "\n".join([head] + ["a" * 80] * 1999)))
    return CorpusManifest.from_documents(docs)


def test_warn_force_summarize_prune_cycle(agent_config):
    manifest = budget_corpus()
    index = build_index(manifest)
    client = ScriptedClient([
        search_call("zephyr"),
        tool_entry("open", ref_id="turn1search1"),
        tool_entry("open", ref_id="turn1search2"),
        tool_entry("open", ref_id="turn1search3"),
        tool_entry("open", ref_id="turn1search4"),
        {**tool_entry("summarize", summary="d1 has it", preserve_refs=["turn1search1"]),
         "when": {"directive": "require_tool"}},
        {"text": "It is in d1 [ref: turn1search1 | 0.8]"},
    ])
    result = run_query(agent_config(), manifest, index, client, "where is zephyr?")
    conv = result.session.conversation
    messages = conv.messages

    # the warning lands before the fourth open, once
    notes = [i for i, m in enumerate(messages) if m.note == "budget_warning"]
    assert len(notes) == 1
    assert sum(m.token_count for m in messages[:notes[0]]) >= 115_200
    assert [c["directive"] for c in client.calls] == ["auto"] * 5 + ["require_tool(summarize)", "auto"]

    opens = tool_messages(result, "open")
    expected = tool_open(result.session.registry, manifest, "turn1search1").rendered_text
    assert opens[0].content == expected
    for m, ref in zip(opens[1:], ["turn1search2", "turn1search3", "turn1search4"]):
        assert m.content == f"[content removed after summarization; refs: {ref}]"
    search = tool_messages(result, "search")[0]
    assert not search.pruned

    stats = result.answer.stats
    assert stats.total_tokens < 128_000
    assert stats.total_tokens == conv.recompute_total()
    assert stats.tool_counts == {"search": 1, "open": 4, "summarize": 1}
    assert not stats.forced_completion
    assert [c.ref_id for c in result.answer.citations] == ["turn1search1"]


def test_budget_without_summarize_forces_the_answer(agent_config):
    manifest = budget_corpus()
    index = build_index(manifest)
    client = ScriptedClient([FORCED_TEXT, search_call("zephyr"),
                             {**tool_entry("open", ref_id="turn1search1"), "repeat": True}])
    config = agent_config(summarize_enabled=False, token_threshold=30_000)
    result = run_query(config, manifest, index, client, "q")
    assert result.answer.stats.forced_completion
    assert result.answer.text == "forced answer"
    assert len(client.calls) == 3
    assert all("summarize" not in c["tools"] for c in client.calls)
    assert not tool_messages(result, "summarize")


# ── execute_tool ────────────────────────────────────────────────────────────
@pytest.fixture
def session(agent_config, small_manifest, small_index):
    def _make(**overrides):
        s = AgentSession.create(agent_config(**overrides), small_manifest, small_index)
        s.start_turn("q")
        return s

    return _make


def test_open_without_ref_id(session):
    result = execute_tool({"name": "open", "args": {}, "id": "c"}, session())
    assert result.is_error
    assert result.rendered_text == "Error: missing required parameter: reference id"


def test_find_on_valid_ref_delegates(session):
    s = session()
    execute_tool({"name": "search", "args": {"queries": ["alpha"]}, "id": "c1"}, s)
    result = execute_tool({"name": "find", "args": {"ref_id": "turn1search1", "patterns": ["valve"]}, "id": "c2"}, s)
    assert not result.is_error
    assert "2: the alpha valve opens at dawn" in result.rendered_text


def test_multiple_queries_in_single_query_mode(session):
    s = session(multi_query_enabled=False)
    result = execute_tool({"name": "search", "args": {"queries": ["a", "b", "c"]}, "id": "c"}, s)
    assert result.is_error and "single-query mode" in result.rendered_text
    ok = execute_tool({"name": "search", "args": {"query": "alpha"}, "id": "c"}, s)
    assert not ok.is_error


def test_disabled_unknown_and_malformed_calls(session):
    s = session(summarize_enabled=False)
    assert "not available" in execute_tool({"name": "summarize", "args": {"summary": "x"}}, s).rendered_text
    assert execute_tool({"name": "browse", "args": {}}, s).rendered_text == "Error: unknown tool: browse"
    assert execute_tool({"name": "open", "args": "turn1search1"}, s).is_error
    bad_line = execute_tool({"name": "open", "args": {"ref_id": "turn1search1", "line_number": "x"}}, s)
    assert bad_line.is_error and "line_number" in bad_line.rendered_text


# ── format_answer ───────────────────────────────────────────────────────────
@pytest.fixture
def registry():
    r = ReferenceRegistry()
    r.allocate("a.md")
    r.allocate("b.md")
    r.allocate("c.md")
    return r


def test_format_answer_parses_citations(registry):
    answer = format_answer("evidence [ref: turn1search2 | 0.9] and [ref: turn1search1 | 0.6]", registry)
    assert [(c.ref_id, c.relevancy_score) for c in answer.citations] == [("turn1search2", 0.9), ("turn1search1", 0.6)]


def test_format_answer_dedups_defaults_and_drops(registry):
    text = "[ref: turn1search1 | 0.5] [ref: turn1search1|0.8] [ref: turn1search3] [ref: turn4search9 | 0.9]"
    answer = format_answer(text, registry)
    assert [(c.ref_id, c.relevancy_score) for c in answer.citations] == [("turn1search3", 1.0), ("turn1search1", 0.8)]
    assert answer.stats.dropped_citations == ["turn4search9"]


def test_format_answer_ties_follow_allocation_order(registry):
    answer = format_answer("[ref: turn1search3 | 0.5] [ref: turn1search2 | 0.5]", registry)
    assert [c.ref_id for c in answer.citations] == ["turn1search2", "turn1search3"]
    assert format_answer("no citations here", registry).citations == []


def test_format_answer_accepts_trailing_point_scores(registry):
    answer = format_answer("[ref: turn1search1 | 1.] [ref: turn1search2 | .5] [ref: turn4search9 | 1.]", registry)
    assert [(c.ref_id, c.relevancy_score) for c in answer.citations] == [("turn1search1", 1.0), ("turn1search2", 0.5)]
    assert answer.stats.dropped_citations == ["turn4search9"]


# ── single shot ─────────────────────────────────────────────────────────────
def test_single_shot_uses_one_search(agent_config, small_manifest, small_index):
    result = run_single_shot(agent_config(), small_manifest, small_index, HeuristicPolicyClient(), "alpha valve")
    stats = result.answer.stats
    assert stats.tool_counts == {"search": 1}
    assert stats.iterations_used == 1 and stats.model_calls == 1
    assert [c.ref_id for c in result.answer.citations][0] == "turn1search1"
    assert result.answer.citations[0].relevancy_score == 1.0


def test_single_shot_without_hits(agent_config, small_manifest, small_index):
    result = run_single_shot(agent_config(), small_manifest, small_index, HeuristicPolicyClient(), "zzz")
    assert result.answer.citations == []
