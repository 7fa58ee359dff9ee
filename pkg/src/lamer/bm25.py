"""Okapi BM25 scoring and top-K retrieval over an :class:`InvertedIndex`."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from lamer.corpus import analyze
from lamer.index import InvertedIndex

IDF_VARIANTS = ("paper", "lucene")

_UNSET = object()


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4
    idf_variant: str = "paper"

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")
        if self.idf_variant not in IDF_VARIANTS:
            raise ValueError(f"idf_variant must be one of {IDF_VARIANTS}, got {self.idf_variant!r}")


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


@dataclass
class RankedList:
    entries: list[ScoredDoc] = field(default_factory=list)
    k_requested: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ScoredDoc]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]


def idf_value(collection_size: int, doc_freq: int, variant: str = "paper") -> float:
    ratio = (collection_size - doc_freq + 0.5) / (doc_freq + 0.5)
    if variant == "paper":
        return math.log(ratio)
    if variant == "lucene":
        return math.log1p(ratio)
    raise ValueError(f"unknown idf variant {variant!r}")


def idf(idx: InvertedIndex, term: str, variant: str = "paper") -> float:
    """Inverse document frequency of an indexed term.

    ``paper`` is ln((N - n + 0.5) / (n + 0.5)) and goes negative for terms in
    more than half the collection; ``lucene`` adds 1 inside the log and is
    always positive.
    """
    n = idx.doc_freq(term)
    if n == 0:
        raise KeyError(f"term {term!r} not in index")
    return idf_value(idx.collection_size, n, variant)


def _length_norm(idx: InvertedIndex, params: Bm25Params, lengths: np.ndarray) -> np.ndarray:
    avgdl = idx.avg_doc_length
    if avgdl == 0:
        # only reachable when every document is empty, so no term ever matches
        return np.full(lengths.shape, params.k1)
    return params.k1 * (1.0 - params.b + params.b * lengths / avgdl)


def score(idx: InvertedIndex, params: Bm25Params, q: list[str], doc_ordinal: int) -> float:
    """BM25 score of one document for an already-analyzed query token list."""
    if not 0 <= doc_ordinal < idx.collection_size:
        raise IndexError(f"doc ordinal {doc_ordinal} out of range")
    norm = float(_length_norm(idx, params, idx.doc_lengths[doc_ordinal : doc_ordinal + 1])[0])
    total = 0.0
    for term, count in Counter(q).items():
        tf = idx.term_frequency(term, doc_ordinal)
        if tf == 0:
            continue
        w = idf(idx, term, params.idf_variant)
        total += count * (w * (tf * (params.k1 + 1)) / (tf + norm))
    return total


def score_all(
    idx: InvertedIndex, params: Bm25Params, q: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Scores for every document plus a mask of documents sharing a term with ``q``."""
    n = idx.collection_size
    scores = np.zeros(n, dtype=np.float64)
    matched = np.zeros(n, dtype=bool)
    if n == 0:
        return scores, matched
    for term, count in Counter(q).items():
        p = idx.postings.get(term)
        if p is None:
            continue
        ords, tfs = p
        w = idf_value(n, len(ords), params.idf_variant)
        tf = tfs.astype(np.float64)
        norm = _length_norm(idx, params, idx.doc_lengths[ords])
        scores[ords] += count * (w * (tf * (params.k1 + 1)) / (tf + norm))
        matched[ords] = True
    return scores, matched


# Scores equal to this many decimals rank as ties. Sums of the same terms in a
# different order can differ in the last bit, which must not beat the doc_id rule.
TIE_DECIMALS = 10


def top_k(idx: InvertedIndex, scores: np.ndarray, matched: np.ndarray, k: int) -> RankedList:
    cand = np.flatnonzero(matched)
    neg = -np.round(scores[cand], TIE_DECIMALS)
    if cand.size > k:
        threshold = np.partition(neg, k - 1)[k - 1]
        keep = neg <= threshold
        cand, neg = cand[keep], neg[keep]
    order = np.lexsort((idx.id_rank[cand], neg))[:k]
    chosen = cand[order]
    return RankedList(
        entries=[ScoredDoc(idx.doc_ids[i], float(scores[i])) for i in chosen.tolist()],
        k_requested=k,
    )


def retrieve(
    idx: InvertedIndex,
    params: Bm25Params,
    q_text: str,
    k: int,
    cap=_UNSET,
) -> RankedList:
    """Top-``k`` documents for ``q_text``, descending score, ties by ascending doc_id.

    Scores that agree to ``TIE_DECIMALS`` decimal places count as ties.

    The query is tokenized and truncated to ``cap`` tokens (default: the
    index's own truncation cap; ``None`` disables truncation). Documents that
    share no term with the query are never returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if cap is _UNSET:
        cap = idx.truncation_cap
    tokens = analyze(q_text, cap)
    scores, matched = score_all(idx, params, tokens)
    return top_k(idx, scores, matched, k)


def format_run_lines(query_id: str, ranked: RankedList, run_tag: str) -> list[str]:
    return [
        f"{query_id} Q0 {e.doc_id} {rank} {e.score:.6f} {run_tag}\n"
        for rank, e in enumerate(ranked.entries, start=1)
    ]
