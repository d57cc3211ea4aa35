"""Reference lexical search backend (BM25 over an inverted index).

Anything that can answer ``query(text, k)`` with ranked :class:`SearchHit` lists
can stand in for it through :class:`SearchBackend`, e.g. a remote enterprise
search API.
"""

from __future__ import annotations

import bisect
import heapq
import logging
import math
import re
from abc import ABC, abstractmethod
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from agentic_rag.corpus_store import CorpusManifest, Document
from agentic_rag.errors import IndexBuildError, TooManyQueriesError

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_SNIPPET_CHARS = 300
DEFAULT_MULTI_QUERY_CAP = 5

_WORD_RE = re.compile(r"[a-z0-9]+")
_MATCH_RE = re.compile(r"[A-Za-z0-9]+")


def tokenize(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


def query_terms(text: str) -> List[str]:
    """Distinct query terms in first-occurrence order."""
    return list(dict.fromkeys(tokenize(text)))


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    snippet: str
    title: str
    filename: str
    file_type: str


class SearchBackend(ABC):
    """Contract the search tool delegates to."""

    supports_semantic_find: bool = False

    @abstractmethod
    def query(self, text: str, k: int) -> List[SearchHit]:
        """At most ``k`` hits, scores non-increasing."""

    def semantic_passages(self, doc: Document, pattern: str, limit: int) -> List[int]:
        """Line numbers best matching ``pattern`` by meaning. Optional capability."""
        raise NotImplementedError("this backend has no semantic passage scorer")


@dataclass
class IndexedCorpus(SearchBackend):
    manifest: CorpusManifest
    postings: Dict[str, List[Tuple[str, int]]]
    doc_lengths: Dict[str, int]
    avg_doc_length: float
    doc_count: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    snippet_chars: int = DEFAULT_SNIPPET_CHARS
    _idf: Dict[str, float] = field(default_factory=dict, repr=False)

    def idf(self, term: str) -> float:
        cached = self._idf.get(term)
        if cached is None:
            df = len(self.postings.get(term, ()))
            cached = math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))
            self._idf[term] = cached
        return cached

    def query(self, text: str, k: int) -> List[SearchHit]:
        return query(self, text, k)


def build_index(
    manifest: CorpusManifest,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    snippet_chars: int = DEFAULT_SNIPPET_CHARS,
) -> IndexedCorpus:
    if len(manifest) == 0:
        raise IndexBuildError("cannot build an index over an empty manifest")

    postings: Dict[str, List[Tuple[str, int]]] = defaultdict(list)
    doc_lengths: Dict[str, int] = {}
    # manifest documents are already sorted by doc_id, so posting lists are too
    for doc in manifest.documents:
        tokens = tokenize(doc.text)
        doc_lengths[doc.doc_id] = len(tokens)
        for term, tf in Counter(tokens).items():
            postings[term].append((doc.doc_id, tf))

    avg = sum(doc_lengths.values()) / len(doc_lengths)
    if avg <= 0:
        raise IndexBuildError("corpus has no indexable terms")

    index = IndexedCorpus(
        manifest=manifest,
        postings=dict(postings),
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
        snippet_chars=snippet_chars,
    )
    logger.info("built BM25 index: %d docs, %d terms, avgdl=%.1f", index.doc_count, len(index.postings), avg)
    return index


def score_documents(index: IndexedCorpus, text: str) -> Dict[str, float]:
    scores: Dict[str, float] = defaultdict(float)
    for term in query_terms(text):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths[doc_id] / index.avg_doc_length)
            scores[doc_id] += idf * tf * (index.k1 + 1.0) / (tf + norm)
    return scores


def query(index: IndexedCorpus, text: str, k: int) -> List[SearchHit]:
    """Top-``k`` BM25 hits; ties broken by ascending doc_id; zero scores dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = score_documents(index, text)
    ranked = heapq.nsmallest(
        k,
        ((doc_id, s) for doc_id, s in scores.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )
    terms = query_terms(text)
    hits = []
    for doc_id, s in ranked:
        doc = index.manifest.get(doc_id)
        hits.append(SearchHit(
            doc_id=doc_id,
            score=s,
            snippet=extract_snippet(doc, terms, index.snippet_chars),
            title=doc.title,
            filename=doc.filename,
            file_type=doc.file_type,
        ))
    return hits


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _cut_at_word(text: str, start: int, budget: int) -> str:
    end = start + budget
    if end >= len(text):
        return text[start:]
    cut = text.rfind(" ", start, end + 1)
    if cut <= start:
        return text[start:end]
    return text[start:cut]


def extract_snippet(doc: Document, query_terms: Sequence[str], budget: int = DEFAULT_SNIPPET_CHARS) -> str:
    """Highest term-density window of at most ``budget`` characters.

    Works on whitespace-normalized text; the window starts at a word and is cut
    back to a word boundary. Without any term occurrence the document head is
    returned.
    """
    text = _normalize_ws(doc.text)
    if budget <= 0 or not text:
        return ""
    terms = {t.lower() for t in query_terms}
    # match on the original text; lower() may change its length
    starts = [m.start() for m in _MATCH_RE.finditer(text) if m.group().lower() in terms]
    if not starts:
        return _cut_at_word(text, 0, budget)

    best_start, best_count = starts[0], 0
    for i, s in enumerate(starts):
        count = bisect.bisect_left(starts, s + budget) - i
        if count > best_count:
            best_start, best_count = s, count
    return _cut_at_word(text, best_start, budget)


def merge_hits(result_lists: Sequence[Sequence[SearchHit]]) -> List[SearchHit]:
    """Union of hit lists, one hit per doc_id keeping its best score."""
    best: Dict[str, SearchHit] = {}
    for hits in result_lists:
        for hit in hits:
            kept = best.get(hit.doc_id)
            if kept is None or hit.score > kept.score:
                best[hit.doc_id] = hit
    return sorted(best.values(), key=lambda h: (-h.score, h.doc_id))


def multi_query(
    backend: SearchBackend,
    queries: Sequence[str],
    per_query_k: int = 10,
    cap: int = DEFAULT_MULTI_QUERY_CAP,
) -> List[SearchHit]:
    """Run each query with its own ``per_query_k`` cap, then merge and dedup."""
    if len(queries) > cap:
        raise TooManyQueriesError(len(queries), cap)
    if not queries:
        raise ValueError("at least one query is required")
    return merge_hits([backend.query(q, per_query_k) for q in queries])
