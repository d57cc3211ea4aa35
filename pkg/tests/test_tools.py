import random
import re

import pytest

from agentic_rag.corpus_store import CorpusManifest, Document, make_document
from agentic_rag.search_index import build_index
from agentic_rag.tokens import count_tokens
from agentic_rag.tools import (
    REF_ID_RE, ReferenceRegistry, build_tool_schemas, open_header, parse_ref_id, tool_find, tool_open,
    tool_search, tool_summarize,
)

MASTER_LINES = tuple(f"line {i}" for i in range(10_000))


def single_doc(total_lines, doc_id="doc.md"):
    lines = MASTER_LINES[:total_lines]
    doc = Document(doc_id, "Doc", doc_id, "md", lines, count_tokens("\n".join(lines)))
    return CorpusManifest.from_documents([doc])


def registered(manifest, doc_id="doc.md"):
    registry = ReferenceRegistry()
    return registry, registry.allocate(doc_id, "test")


# ── open ────────────────────────────────────────────────────────────────────
def test_open_window_contract_on_random_documents():
    rng = random.Random(1234)
    for _ in range(1000):
        total = rng.randint(1, 10_000)
        start = rng.randrange(total)
        manifest = single_doc(total)
        registry, ref = registered(manifest)
        text = tool_open(registry, manifest, ref, start).rendered_text
        header, *body = text.split("\n")
        shown = min(1800, total - start)
        assert len(body) == shown
        assert header == f"Viewing lines [{start}-{start + shown - 1}] of {total} lines"
        assert body[0] == f"{start}: line {start}"


def test_open_header_of_long_document():
    manifest = single_doc(3000)
    registry, ref = registered(manifest)
    result = tool_open(registry, manifest, ref)
    assert result.rendered_text.split("\n")[0] == "Viewing lines [0-1799] of 3000 lines"
    assert open_header(0, 1799, 3000) == "Viewing lines [0-1799] of 3000 lines"
    assert result.ref_ids_mentioned == {ref}
    assert result.prunable and not result.is_error


def test_open_errors():
    manifest = single_doc(10)
    registry, ref = registered(manifest)
    unknown = tool_open(registry, manifest, "turn1search99")
    assert unknown.is_error and "unknown reference id" in unknown.rendered_text
    negative = tool_open(registry, manifest, ref, -1)
    assert negative.rendered_text == "Error: line number must be >= 0 (got -1)"
    beyond = tool_open(registry, manifest, ref, 10)
    assert beyond.rendered_text == "Error: line number 10 beyond document end (10 lines)"
    assert not beyond.prunable


# ── find ────────────────────────────────────────────────────────────────────
def test_find_pattern_on_every_line_of_huge_document():
    lines = tuple("match here" for _ in range(50_000))
    doc = Document("big.md", "Big", "big.md", "md", lines, count_tokens("\n".join(lines)))
    manifest = CorpusManifest.from_documents([doc])
    registry, ref = registered(manifest, "big.md")
    result = tool_find(registry, manifest, ref, ["MATCH"])
    assert result.token_count <= 11_000
    assert 'Pattern "MATCH": 50000 matching lines' in result.rendered_text
    assert result.rendered_text.count("--- lines ") == 2


def test_find_output_is_capped():
    lines = tuple(f"k{i % 40:03d}x " + "y" * 200 for i in range(400))
    doc = Document("wide.md", "Wide", "wide.md", "md", lines, count_tokens("\n".join(lines)))
    manifest = CorpusManifest.from_documents([doc])
    registry, ref = registered(manifest, "wide.md")
    patterns = [f"k{j:03d}x" for j in range(40)]
    result = tool_find(registry, manifest, ref, patterns)
    assert count_tokens(result.rendered_text) <= 11_000
    assert "[truncated at 11000 tokens:" in result.rendered_text
    uncapped = tool_find(registry, manifest, ref, patterns, token_cap=10**9)
    for p in patterns:
        section = uncapped.rendered_text.split(f'Pattern "{p}"')[1].split("Pattern ")[0]
        assert section.count("--- lines ") <= 2


def test_find_renders_passages_with_line_numbers(small_manifest):
    registry = ReferenceRegistry()
    ref = registry.allocate("alpha.md")
    text = tool_find(registry, small_manifest, ref, ["valve"]).rendered_text
    assert text.splitlines() == [
        f"Find in {ref} (alpha.md, 3 lines)",
        'Pattern "valve": 1 matching line',
        "--- lines 0-2 ---",
        "0: # Alpha guide",
        "1: alpha setup steps",
        "2: the alpha valve opens at dawn",
    ]


def test_find_repeated_passage_is_referenced(small_manifest):
    registry = ReferenceRegistry()
    ref = registry.allocate("alpha.md")
    text = tool_find(registry, small_manifest, ref, ["valve", "dawn"]).rendered_text
    assert "--- lines 0-2: same passage as above ---" in text
    assert text.count("2: the alpha valve opens at dawn") == 1


def test_find_no_matches_is_not_an_error(small_manifest):
    registry = ReferenceRegistry()
    ref = registry.allocate("gamma.txt")
    result = tool_find(registry, small_manifest, ref, ["zebra", "yak"])
    assert result.rendered_text == "no matches for: zebra, yak"
    assert not result.is_error and result.ref_ids_mentioned == {ref}


def test_find_semantic_request_falls_back_with_notice(small_manifest):
    registry = ReferenceRegistry()
    ref = registry.allocate("alpha.md")
    off = tool_find(registry, small_manifest, ref, ["valve"], semantic=True)
    assert "semantic find is disabled" in off.rendered_text
    on = tool_find(registry, small_manifest, ref, ["valve"], semantic=True,
                   backend=build_index(small_manifest), semantic_enabled=True)
    assert "not supported by the search backend" in on.rendered_text
    assert "2: the alpha valve opens at dawn" in on.rendered_text


def test_find_errors(small_manifest):
    registry = ReferenceRegistry()
    assert tool_find(registry, small_manifest, "turn1search1", ["x"]).is_error
    ref = registry.allocate("alpha.md")
    assert tool_find(registry, small_manifest, ref, ["  "]).is_error


# ── search ──────────────────────────────────────────────────────────────────
def test_search_renders_hits_and_allocates_refs(small_index):
    registry = ReferenceRegistry()
    result = tool_search(registry, small_index, ["alpha"])
    lines = result.rendered_text.splitlines()
    assert lines[0] == 'Search results for: "alpha"'
    assert lines[1] == "[turn1search1] Alpha guide"
    assert lines[2] == "  filename: alpha.md | file type: md"
    assert lines[3].startswith("  snippet: ")
    assert lines[4] == "[turn1search2] Beta guide"
    assert lines[-1] == "2 results"
    assert result.ref_ids_mentioned == {"turn1search1", "turn1search2"}
    assert registry.resolve("turn1search1").doc_id == "alpha.md"


def test_search_caps(build_manifest):
    manifest = build_manifest({f"d{i:02d}.md": f"shared token{i}" for i in range(30)})
    index = build_index(manifest)
    registry = ReferenceRegistry()
    too_many = tool_search(registry, index, [f"q{i}" for i in range(6)])
    assert too_many.is_error and "too many queries (max 5)" in too_many.rendered_text
    assert len(registry) == 0
    one = tool_search(registry, index, ["shared"])
    assert len(one.ref_ids_mentioned) == 10
    several = tool_search(registry, index, ["token1", "token2", "token3", "token4", "token5"])
    assert len(several.ref_ids_mentioned) == 5


def test_search_without_hits(small_index):
    registry = ReferenceRegistry()
    result = tool_search(registry, small_index, ["unrelated"])
    assert result.rendered_text.splitlines()[1:] == ["No documents matched.", "0 results"]
    assert tool_search(registry, small_index, []).is_error


# ── summarize / registry / schemas ──────────────────────────────────────────
def test_summarize_keeps_known_refs_only():
    registry = ReferenceRegistry()
    r1, r2 = registry.allocate("a.md"), registry.allocate("b.md")
    result = tool_summarize("found it", [r2, "turn9search9", r1], registry)
    assert result.preserve_refs == {r1, r2}
    assert not result.prunable
    assert result.rendered_text.splitlines() == [
        "Summary recorded.",
        "found it",
        "Preserved references: turn1search1, turn1search2",
        "Dropped unknown reference ids: turn9search9",
    ]


def test_ref_ids_follow_turn_and_global_counter():
    registry = ReferenceRegistry()
    assert registry.allocate("a.md") == "turn1search1"
    registry.advance_turn()
    assert registry.allocate("b.md") == "turn2search2"
    assert parse_ref_id("turn2search2") == (2, 2)
    assert parse_ref_id("turn0search") is None
    assert REF_ID_RE.match("turn12search340")


def test_schemas_follow_flags():
    full = {s.name: s for s in build_tool_schemas()}
    assert list(full) == ["search", "find", "open", "summarize"]
    assert full["search"].parameters["properties"]["queries"]["maxItems"] == 5
    assert "semantic" not in full["find"].parameters["properties"]
    reduced = {s.name: s for s in build_tool_schemas(multi_query_enabled=False, summarize_enabled=False,
                                                     semantic_find_enabled=True)}
    assert "summarize" not in reduced
    assert list(reduced["search"].parameters["properties"]) == ["query"]
    assert "semantic" in reduced["find"].parameters["properties"]
    assert reduced["open"].to_wire()["function"]["name"] == "open"
