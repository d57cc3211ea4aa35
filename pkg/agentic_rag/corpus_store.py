# corpus_store.py
# In-memory, line-addressed corpus built from a directory of text files.
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from agentic_rag.errors import DocumentNotFoundError, IngestionError
from agentic_rag.tokens import TokenCounter, count_tokens

logger = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = frozenset({"md", "txt"})
TITLE_MAX_CHARS = 120


def split_lines(text: str) -> List[str]:
    """Normalize CRLF, drop one trailing newline, split on "\\n"."""
    text = text.replace("\r\n", "\n")
    if text.endswith("\n"):
        text = text[:-1]
    return text.split("\n")


def extract_title(lines: Iterable[str], filename: str) -> str:
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        stripped = stripped.lstrip("#").strip()
        if stripped:
            return stripped[:TITLE_MAX_CHARS]
    return filename


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    filename: str
    file_type: str
    lines: Tuple[str, ...]
    token_count: int

    @property
    def total_lines(self) -> int:
        return len(self.lines)

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def to_manifest_row(self) -> Dict[str, object]:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "filename": self.filename,
            "file_type": self.file_type,
            "total_lines": self.total_lines,
            "token_count": self.token_count,
        }


def make_document(doc_id: str, text: str, counter: TokenCounter = count_tokens) -> Document:
    lines = tuple(split_lines(text))
    filename = Path(doc_id).name
    return Document(
        doc_id=doc_id,
        title=extract_title(lines, filename),
        filename=filename,
        file_type=Path(filename).suffix.lstrip(".").lower(),
        lines=lines,
        token_count=counter("\n".join(lines)),
    )


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    total_tokens: int
    avg_doc_tokens: float

    @classmethod
    def from_documents(cls, documents: Iterable[Document]) -> "CorpusStats":
        docs = list(documents)
        total = sum(d.token_count for d in docs)
        return cls(
            doc_count=len(docs),
            total_tokens=total,
            avg_doc_tokens=(total / len(docs)) if docs else 0.0,
        )


@dataclass(frozen=True)
class CorpusManifest:
    """Immutable after ingestion; safe to share across concurrent sessions."""

    documents: Tuple[Document, ...]
    corpus_stats: CorpusStats
    warnings: Tuple[str, ...] = ()
    _by_id: Dict[str, Document] = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_documents(cls, documents: Iterable[Document], warnings: Iterable[str] = ()) -> "CorpusManifest":
        docs = tuple(sorted(documents, key=lambda d: d.doc_id))
        by_id: Dict[str, Document] = {}
        for d in docs:
            if d.doc_id in by_id:
                raise IngestionError(f"duplicate doc_id: {d.doc_id}")
            by_id[d.doc_id] = d
        return cls(docs, CorpusStats.from_documents(docs), tuple(warnings), by_id)

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._by_id

    @property
    def doc_ids(self) -> List[str]:
        return [d.doc_id for d in self.documents]

    def get(self, doc_id: str) -> Optional[Document]:
        return self._by_id.get(doc_id)

    def recompute_stats(self) -> CorpusStats:
        return CorpusStats.from_documents(self.documents)

    def to_json(self) -> str:
        payload = {
            "corpus_stats": {
                "doc_count": self.corpus_stats.doc_count,
                "total_tokens": self.corpus_stats.total_tokens,
                "avg_doc_tokens": self.corpus_stats.avg_doc_tokens,
            },
            "documents": [d.to_manifest_row() for d in self.documents],
        }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _normalize_extensions(extensions: Iterable[str]) -> frozenset:
    exts = frozenset(e.strip().lstrip(".").lower() for e in extensions if e and e.strip())
    if not exts:
        raise IngestionError("no file extensions given")
    return exts


def ingest_directory(
    path: str,
    extensions: Iterable[str] = DEFAULT_EXTENSIONS,
    counter: TokenCounter = count_tokens,
) -> CorpusManifest:
    """One Document per matching file under ``path``; doc_id is the relative path."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"corpus directory not found or unreadable: {path}")
    exts = _normalize_extensions(extensions)

    documents: List[Document] = []
    warnings: List[str] = []
    for file in sorted(root.rglob("*")):
        if not file.is_file() or file.suffix.lstrip(".").lower() not in exts:
            continue
        doc_id = file.relative_to(root).as_posix()
        try:
            text = file.read_bytes().decode("utf-8")
        except UnicodeDecodeError:
            warnings.append(f"skipped {doc_id}: not valid UTF-8 text")
            logger.warning("skipping %s: not valid UTF-8 text", doc_id)
            continue
        except OSError as e:
            warnings.append(f"skipped {doc_id}: {e.strerror or e}")
            logger.warning("skipping %s: %s", doc_id, e)
            continue
        documents.append(make_document(doc_id, text, counter))

    if not documents:
        raise IngestionError(f"no documents with extensions {sorted(exts)} under {path}")

    manifest = CorpusManifest.from_documents(documents, warnings)
    logger.info(
        "ingested %d documents (%d tokens) from %s",
        manifest.corpus_stats.doc_count, manifest.corpus_stats.total_tokens, path,
    )
    return manifest


def get_document(manifest: CorpusManifest, doc_id: str) -> Document:
    doc = manifest.get(doc_id)
    if doc is None:
        raise DocumentNotFoundError(doc_id)
    return doc
