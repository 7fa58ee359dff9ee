"""Corpus, query ingestion and text analysis.

Corpus files are JSONL (``{"id": ..., "title": ..., "text": ...}`` per line),
query files are TSV (``query_id<TAB>text``).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

TOKEN_RE = re.compile(r"[^\W_]+")

DEFAULT_CAP = 128


class CorpusError(ValueError):
    """Raised for malformed corpus, query or judgment files."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None

    def full_text(self, use_title: bool = True) -> str:
        if use_title and self.title:
            return f"{self.title} {self.text}"
        return self.text


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return TOKEN_RE.findall(text.lower())


def truncate(tokens: list[str], cap: int) -> list[str]:
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    return list(tokens[:cap])


def analyze(text: str, cap: int | None = DEFAULT_CAP) -> list[str]:
    tokens = tokenize(text)
    return tokens if cap is None else truncate(tokens, cap)


def truncate_text(text: str, cap: int) -> str:
    """Cut raw text right after its ``cap``-th token, keeping original casing.

    Used for prompt insertion, where the LLM should see natural text rather
    than the lowercased token stream.
    """
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    if cap == 0:
        return ""
    end = None
    for i, m in enumerate(TOKEN_RE.finditer(text)):
        if i == cap - 1:
            end = m.end()
            break
    return text if end is None else text[:end]


def iter_corpus(path: str | Path) -> Iterator[Document]:
    """Stream documents from a JSONL file, rejecting malformed lines and duplicate ids."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            doc_id = obj.get("id", obj.get("_id"))
            if not isinstance(doc_id, str) or not doc_id:
                raise CorpusError(f"{path}:{lineno}: missing or empty string field 'id'")
            text = obj.get("text", "")
            if not isinstance(text, str):
                raise CorpusError(f"{path}:{lineno}: field 'text' must be a string")
            title = obj.get("title")
            if title is not None and not isinstance(title, str):
                raise CorpusError(f"{path}:{lineno}: field 'title' must be a string")
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            yield Document(doc_id=doc_id, text=text, title=title or None)


def load_corpus(path: str | Path) -> list[Document]:
    return list(iter_corpus(path))


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in docs:
            obj = {"id": doc.doc_id}
            if doc.title is not None:
                obj["title"] = doc.title
            obj["text"] = doc.text
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusError(
                    f"{path}:{lineno}: expected 2 tab-separated columns, got {len(parts)}"
                )
            qid, text = parts
            if not qid:
                raise CorpusError(f"{path}:{lineno}: empty query id")
            if qid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate query id {qid!r}")
            seen.add(qid)
            queries.append(Query(qid, text))
    return queries


def write_queries(queries: Iterable[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q in queries:
            f.write(f"{q.query_id}\t{q.text}\n")
