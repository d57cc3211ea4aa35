import json

import pandas as pd
import pytest

from conftest import SMALL_CORPUS, search_call

from agentic_rag.agent_graph import AgentSession
from agentic_rag.cli import ABLATION_VARIANTS, build_parser, config_from_args, main
from agentic_rag.corpus_store import ingest_directory
from agentic_rag.search_index import build_index

QUERIES = [
    {"query_id": "q1", "query": "where does the alpha valve open", "gold_doc_ids": ["alpha.md"]},
    {"query_id": "q2", "query": "beta notes", "gold_doc_ids": ["beta.md"]},
    {"query_id": "q3", "query": "gamma log", "gold_doc_ids": ["gamma.txt"]},
]


@pytest.fixture
def corpus(write_corpus):
    return str(write_corpus(SMALL_CORPUS))


@pytest.fixture
def queries(write_json):
    return str(write_json("queries.jsonl", QUERIES, lines=True))


def test_index_writes_a_stable_manifest(tmp_path, corpus, capsys):
    out = tmp_path / "out"
    assert main(["index", "--corpus", corpus, "--out", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["doc_count"] == 3
    first = (out / "manifest.json").read_text()
    assert main(["index", "--corpus", corpus, "--out", str(out)]) == 0
    assert (out / "manifest.json").read_text() == first


def test_index_of_an_empty_directory_fails(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["index", "--corpus", str(tmp_path / "empty"), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_ask_with_a_scripted_client(tmp_path, corpus, write_json, capsys):
    script = write_json("script.json", [search_call("alpha"), {"text": "At dawn [ref: turn1search1 | 0.9]"}])
    code = main(["ask", "when does alpha open?", "--corpus", corpus, "--out", str(tmp_path / "out"),
                 "--client", "scripted", "--script", str(script)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("At dawn")
    assert "turn1search1  0.90  alpha.md" in out
    transcript = tmp_path / "out" / "default" / "ask.jsonl"
    rows = [json.loads(line) for line in transcript.read_text().splitlines()]
    assert [r["role"] for r in rows] == ["system", "user", "assistant", "tool", "assistant"]


def test_ask_needs_a_script_for_the_scripted_client(tmp_path, corpus, capsys):
    assert main(["ask", "q", "--corpus", corpus, "--out", str(tmp_path), "--client", "scripted"]) == 1
    assert "script" in capsys.readouterr().err


def test_no_multi_query_flag_switches_the_search_schema(corpus):
    args = build_parser().parse_args(["ask", "q", "--corpus", corpus, "--no-multi-query"])
    cfg = config_from_args(args)
    assert cfg.agent.multi_query_enabled is False
    manifest = ingest_directory(corpus)
    session = AgentSession.create(cfg.agent, manifest, build_index(manifest))
    search = next(s for s in session.schemas if s.name == "search")
    assert list(search.parameters["properties"]) == ["query"]


def test_config_precedence(tmp_path, corpus):
    parser = build_parser()
    assert config_from_args(parser.parse_args(["index", "--corpus", corpus])).agent.max_calls == 15
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"agent": {"max_calls": 7}, "label": "from-file"}))
    from_file = config_from_args(parser.parse_args(["index", "--config", str(cfg_file)]))
    assert from_file.agent.max_calls == 7 and from_file.label == "from-file"
    flagged = config_from_args(parser.parse_args(["index", "--config", str(cfg_file), "--max-calls", "3"]))
    assert flagged.agent.max_calls == 3 and flagged.label == "from-file"


def test_invalid_config_exits_with_error(tmp_path, corpus, capsys):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"agent": {"max_calls": 0}}))
    assert main(["index", "--corpus", corpus, "--config", str(cfg_file)]) == 1
    assert "invalid configuration" in capsys.readouterr().err


def test_eval_writes_per_query_csv(tmp_path, corpus, queries, capsys):
    out = tmp_path / "runs"
    code = main(["eval", "--corpus", corpus, "--queries", queries, "--out", str(out),
                 "--client", "policy", "--label", "ag"])
    assert code == 0
    df = pd.read_csv(out / "ag" / "per_query.csv")
    assert list(df["query_id"]) == ["q1", "q2", "q3", "MEAN", "STDERR"]
    assert capsys.readouterr().out.startswith("ag ")


def test_eval_against_a_baseline_and_report(tmp_path, corpus, queries, capsys):
    out = str(tmp_path / "runs")
    common = ["--corpus", corpus, "--queries", queries, "--out", out, "--client", "policy"]
    assert main(["eval", *common, "--label", "single", "--single-shot"]) == 0
    assert main(["eval", *common, "--label", "ag", "--baseline-label", "single"]) == 0
    df = pd.read_csv(tmp_path / "runs" / "ag" / "per_query.csv")
    assert "cost_ratio" in df.columns
    assert (df.loc[df.query_id.isin(["q1", "q2", "q3"]), "cost_ratio"] > 1.0).all()

    capsys.readouterr()
    assert main(["report", "--out", out, "--label", "ag", "--baseline-label", "single"]) == 0
    assert "cost_ratio=" in capsys.readouterr().out


def test_eval_ablation_writes_one_run_per_variant(tmp_path, corpus, queries):
    out = tmp_path / "runs"
    assert main(["eval", "--corpus", corpus, "--queries", queries, "--out", str(out),
                 "--client", "policy", "--label", "abl", "--ablation"]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "abl-full", "abl-no-multi-query", "abl-no-semantic-find", "abl-no-summarize",
    ]
    for variant in out.iterdir():
        df = pd.read_csv(variant / "per_query.csv")
        assert {"recall@1", "recall@3", "tools", "search", "open", "find", "summarize"} <= set(df.columns)
    for transcript in (out / "abl-no-summarize" / "transcripts").iterdir():
        assert '"summarize"' not in transcript.read_text()


def test_ablation_variants_each_drop_one_component(corpus):
    full = ABLATION_VARIANTS["full"]
    cfg = config_from_args(build_parser().parse_args(["eval", "--corpus", corpus]))
    manifest = ingest_directory(corpus)
    index = build_index(manifest)
    for name, flags in ABLATION_VARIANTS.items():
        changed = {k for k in full if flags[k] != full[k]}
        assert len(changed) == (0 if name == "full" else 1)
        session = AgentSession.create(cfg.agent.model_copy(update=flags), manifest, index)
        find = next(s for s in session.schemas if s.name == "find")
        assert ("semantic" in find.parameters["properties"]) == (name != "no-semantic-find")


def test_eval_is_deterministic(tmp_path, corpus, queries):
    for label in ("a", "b"):
        main(["eval", "--corpus", corpus, "--queries", queries, "--out", str(tmp_path),
              "--client", "policy", "--label", label, "--jobs", "2"])
    for name in ("outcomes.jsonl", "per_query.csv"):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    first = sorted((tmp_path / "a" / "transcripts").iterdir())
    assert [p.name for p in first] == ["q1.jsonl", "q2.jsonl", "q3.jsonl"]
    for path in first:
        assert path.read_text() == (tmp_path / "b" / "transcripts" / path.name).read_text()


def test_eval_rejects_unknown_gold_documents(tmp_path, corpus, write_json, capsys):
    bad = write_json("bad.jsonl", [{"query_id": "x", "query": "q", "gold_doc_ids": ["nope.md"]}], lines=True)
    assert main(["eval", "--corpus", corpus, "--queries", str(bad), "--out", str(tmp_path),
                 "--client", "policy"]) == 1
    assert "nope.md" in capsys.readouterr().err


def test_synth_writes_the_benchmark(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "queries.jsonl").is_file()
    assert len(list((tmp_path / "corpus").rglob("*.md"))) == 30
