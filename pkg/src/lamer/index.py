"""Inverted index with BM25 collection statistics, plus on-disk persistence.

Directory layout written by :func:`save_index`::

    meta      JSON header: format name, version, counts, per-file size and CRC32
    terms     one ``term<TAB>document_frequency`` line per term, sorted by term
    postings  varint stream; per term (in ``terms`` order) the doc-ordinal gaps
              followed by the term frequencies
    docs      one ``doc_id<TAB>length`` line per document, in ordinal order
"""

from __future__ import annotations

import json
import os
import tempfile
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from lamer import varint
from lamer.corpus import DEFAULT_CAP, Document, analyze

FORMAT_NAME = "lamer-index"
FORMAT_VERSION = 1
FILES = ("terms", "postings", "docs")

Postings = tuple[np.ndarray, np.ndarray]


class IndexFormatError(Exception):
    """The directory does not hold a readable index of the current format."""


@dataclass(eq=False)
class InvertedIndex:
    postings: dict[str, Postings]
    doc_ids: list[str]
    doc_lengths: np.ndarray
    truncation_cap: int | None = DEFAULT_CAP
    use_title: bool = True
    _ordinal: dict[str, int] = field(default=None, init=False, repr=False, compare=False)

    @property
    def collection_size(self) -> int:
        return len(self.doc_ids)

    @property
    def total_tokens(self) -> int:
        return int(self.doc_lengths.sum())

    @property
    def avg_doc_length(self) -> float:
        n = self.collection_size
        return self.total_tokens / n if n else 0.0

    @property
    def num_terms(self) -> int:
        return len(self.postings)

    def doc_freq(self, term: str) -> int:
        p = self.postings.get(term)
        return 0 if p is None else len(p[0])

    def ordinal(self, doc_id: str) -> int:
        if self._ordinal is None:
            self._ordinal = {d: i for i, d in enumerate(self.doc_ids)}
        return self._ordinal[doc_id]

    def term_frequency(self, term: str, doc_ordinal: int) -> int:
        p = self.postings.get(term)
        if p is None:
            return 0
        ords, tfs = p
        i = int(np.searchsorted(ords, doc_ordinal))
        if i < len(ords) and ords[i] == doc_ordinal:
            return int(tfs[i])
        return 0

    @cached_property
    def id_rank(self) -> np.ndarray:
        """Position of each ordinal's doc_id in ascending doc_id order (for tie-breaking)."""
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    def same_content(self, other: InvertedIndex) -> bool:
        if (
            self.doc_ids != other.doc_ids
            or self.truncation_cap != other.truncation_cap
            or self.use_title != other.use_title
            or not np.array_equal(self.doc_lengths, other.doc_lengths)
            or self.postings.keys() != other.postings.keys()
        ):
            return False
        return all(
            np.array_equal(o1, o2) and np.array_equal(t1, t2)
            for (o1, t1), (o2, t2) in (
                (self.postings[t], other.postings[t]) for t in self.postings
            )
        )


def build_index(
    docs: Iterable[Document],
    truncation_cap: int | None = DEFAULT_CAP,
    use_title: bool = True,
) -> InvertedIndex:
    """Index documents in input order; ordinal ``i`` is the ``i``-th document."""
    doc_ids: list[str] = []
    lengths: list[int] = []
    ords: dict[str, list[int]] = {}
    tfs: dict[str, list[int]] = {}
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate document id {doc.doc_id!r}")
        if not doc.doc_id or any(c.isspace() for c in doc.doc_id):
            raise ValueError(f"document id must be non-empty without whitespace: {doc.doc_id!r}")
        seen.add(doc.doc_id)
        ordinal = len(doc_ids)
        tokens = analyze(doc.full_text(use_title), truncation_cap)
        doc_ids.append(doc.doc_id)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            if term in ords:
                ords[term].append(ordinal)
                tfs[term].append(tf)
            else:
                ords[term] = [ordinal]
                tfs[term] = [tf]
    postings = {
        term: (np.array(ords[term], dtype=np.int32), np.array(tfs[term], dtype=np.int32))
        for term in sorted(ords)
    }
    return InvertedIndex(
        postings=postings,
        doc_ids=doc_ids,
        doc_lengths=np.array(lengths, dtype=np.int64),
        truncation_cap=truncation_cap,
        use_title=use_title,
    )


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _serialize(idx: InvertedIndex) -> dict[str, bytes]:
    terms = sorted(idx.postings)
    term_lines = []
    chunks = []
    for term in terms:
        o, t = idx.postings[term]
        term_lines.append(f"{term}\t{len(o)}\n")
        chunks.append(varint.delta_encode(o))
        chunks.append(t.astype(np.int64))
    flat = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    docs = "".join(f"{d}\t{n}\n" for d, n in zip(idx.doc_ids, idx.doc_lengths.tolist()))
    return {
        "terms": "".join(term_lines).encode("utf-8"),
        "postings": varint.encode(flat),
        "docs": docs.encode("utf-8"),
    }


def save_index(idx: InvertedIndex, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blobs = _serialize(idx)
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "collection_size": idx.collection_size,
        "total_tokens": idx.total_tokens,
        "num_terms": idx.num_terms,
        "num_postings": int(sum(len(o) for o, _ in idx.postings.values())),
        "truncation_cap": idx.truncation_cap,
        "use_title": idx.use_title,
        "files": {
            name: {"bytes": len(data), "crc32": zlib.crc32(data)} for name, data in blobs.items()
        },
    }
    for name, data in blobs.items():
        _atomic_write(path / name, data)
    # meta last: a directory without meta is never mistaken for a complete index
    _atomic_write(path / "meta", (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def _read_meta(path: Path) -> dict:
    meta_path = path / "meta"
    if not meta_path.is_file():
        raise IndexFormatError(f"{path}: no index meta file")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise IndexFormatError(f"{meta_path}: unreadable header ({e})") from None
    if not isinstance(meta, dict) or meta.get("format") != FORMAT_NAME:
        raise IndexFormatError(f"{meta_path}: not a {FORMAT_NAME} header")
    if meta.get("version") != FORMAT_VERSION:
        raise IndexFormatError(
            f"{meta_path}: format version {meta.get('version')!r}, expected {FORMAT_VERSION}"
        )
    return meta


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    meta = _read_meta(path)
    blobs = {}
    for name in FILES:
        fpath = path / name
        if not fpath.is_file():
            raise IndexFormatError(f"{path}: missing index file {name!r}")
        data = fpath.read_bytes()
        expected = meta["files"][name]
        if len(data) != expected["bytes"] or zlib.crc32(data) != expected["crc32"]:
            raise IndexFormatError(f"{fpath}: size or checksum mismatch (corrupted index)")
        blobs[name] = data

    try:
        doc_ids, lengths = [], []
        for line in blobs["docs"].decode("utf-8").splitlines():
            d, n = line.split("\t")
            doc_ids.append(d)
            lengths.append(int(n))
        terms, dfs = [], []
        for line in blobs["terms"].decode("utf-8").splitlines():
            t, df = line.split("\t")
            terms.append(t)
            dfs.append(int(df))
        values = varint.decode(blobs["postings"]).astype(np.int64)
    except ValueError as e:
        raise IndexFormatError(f"{path}: malformed index data ({e})") from None

    n_docs = len(doc_ids)
    if n_docs != meta["collection_size"] or len(terms) != meta["num_terms"]:
        raise IndexFormatError(f"{path}: counts disagree with header")
    if values.size != 2 * sum(dfs):
        raise IndexFormatError(f"{path}: postings length disagrees with term table")

    postings: dict[str, Postings] = {}
    pos = 0
    for term, df in zip(terms, dfs):
        gaps = values[pos : pos + df]
        tf = values[pos + df : pos + 2 * df]
        pos += 2 * df
        ords = np.cumsum(gaps)
        if df == 0 or (df > 1 and gaps[1:].min() < 1) or ords[-1] >= n_docs or tf.min() < 1:
            raise IndexFormatError(f"{path}: invalid posting list for term {term!r}")
        postings[term] = (ords.astype(np.int32), tf.astype(np.int32))

    idx = InvertedIndex(
        postings=postings,
        doc_ids=doc_ids,
        doc_lengths=np.array(lengths, dtype=np.int64),
        truncation_cap=meta["truncation_cap"],
        use_title=meta["use_title"],
    )
    if idx.total_tokens != meta["total_tokens"]:
        raise IndexFormatError(f"{path}: token total disagrees with header")
    return idx


def index_size_bytes(path: str | Path) -> int:
    path = Path(path)
    return sum((path / name).stat().st_size for name in ("meta", *FILES))


def stats(
    idx: InvertedIndex,
    path: str | Path | None = None,
    queries: list[str] | None = None,
    k: int = 1000,
    params=None,
) -> dict:
    """Index size, vocabulary and collection figures; QPS when queries are given.

    When ``path`` is None the index is serialized to a scratch directory to
    measure its on-disk footprint.
    """
    if path is not None:
        size = index_size_bytes(path)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            save_index(idx, tmp)
            size = index_size_bytes(tmp)
    report = {
        "index_bytes": size,
        "num_terms": idx.num_terms,
        "collection_size": idx.collection_size,
        "avg_doc_length": idx.avg_doc_length,
        "total_tokens": idx.total_tokens,
    }
    if queries:
        from lamer.bm25 import Bm25Params, retrieve

        params = params or Bm25Params()
        start = time.perf_counter()
        for q in queries:
            retrieve(idx, params, q, k)
        elapsed = time.perf_counter() - start
        report["num_queries"] = len(queries)
        report["k"] = k
        report["seconds"] = elapsed
        report["qps"] = len(queries) / max(elapsed, 1e-12)
    return report
