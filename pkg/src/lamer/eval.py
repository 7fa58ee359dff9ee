"""TREC qrels/run parsing and MAP, nDCG@10, Recall@1000.

Conventions:
  * nDCG uses graded gain ``2**grade - 1`` and discount ``log2(rank + 1)``;
    the ideal ranking is built from all judged grades of the query.
  * MAP and recall binarize grades at ``Qrels.threshold``. The default is 2 when
    any judgment is graded above 1 (TREC DL style), else 1.
  * Queries without relevant documents are left out of the MAP/recall means and
    score 0 for nDCG; they are listed under ``no_relevant``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from lamer.corpus import CorpusError

METRICS = ("map", "ndcg@10", "recall@1000")


@dataclass
class Qrels:
    judgments: dict[str, dict[str, int]]
    threshold: int | None = None

    def __post_init__(self):
        if self.threshold is None:
            top = max((g for j in self.judgments.values() for g in j.values()), default=0)
            self.threshold = 2 if top > 1 else 1

    def for_query(self, query_id: str) -> dict[str, int]:
        return self.judgments.get(query_id, {})

    def relevant(self, query_id: str) -> set[str]:
        return {d for d, g in self.for_query(query_id).items() if g >= self.threshold}


@dataclass
class RunFile:
    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    run_tag: str = "lamer"

    def ranking(self, query_id: str) -> list[str]:
        return [d for d, _ in self.rankings.get(query_id, [])]


def load_qrels(path: str | Path, threshold: int | None = None) -> Qrels:
    judgments: dict[str, dict[str, int]] = defaultdict(dict)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 'qid iter docid grade', got {line!r}")
            qid, _, docid, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: grade {grade_s!r} is not an integer") from None
            if grade < 0:
                raise CorpusError(f"{path}:{lineno}: negative grade {grade}")
            if docid in judgments[qid]:
                raise CorpusError(f"{path}:{lineno}: duplicate judgment for ({qid}, {docid})")
            judgments[qid][docid] = grade
    return Qrels(dict(judgments), threshold)


def load_run(path: str | Path) -> RunFile:
    """Parse a 6-column TREC run; rows are re-sorted by rank within each query."""
    rows: dict[str, list[tuple[int, str, float]]] = defaultdict(list)
    tag = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise CorpusError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
            qid, _, docid, rank, score, tag = parts
            try:
                rows[qid].append((int(rank), docid, float(score)))
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad rank or score") from None
    run = RunFile(run_tag=tag or "lamer")
    for qid, items in rows.items():
        items.sort()
        seen = set()
        for i, (rank, docid, _) in enumerate(items, start=1):
            if rank != i:
                raise CorpusError(f"{path}: query {qid}: ranks not contiguous from 1")
            if docid in seen:
                raise CorpusError(f"{path}: query {qid}: duplicate document {docid}")
            seen.add(docid)
        run.rankings[qid] = [(d, s) for _, d, s in items]
    return run


def format_run(run: RunFile) -> str:
    return "".join(
        f"{qid} Q0 {docid} {rank} {score:.6f} {run.run_tag}\n"
        for qid, items in run.rankings.items()
        for rank, (docid, score) in enumerate(items, start=1)
    )


def _dcg(grades: Sequence[int]) -> float:
    return sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(grades))


def ndcg_at_k(ranking: Sequence[str], judged: Mapping[str, int], k: int = 10) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = _dcg(ideal)
    if idcg == 0:
        return 0.0
    return _dcg([judged.get(d, 0) for d in ranking[:k]]) / idcg


def average_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for i, d in enumerate(ranking, start=1):
        if d in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def recall_at_k(ranking: Sequence[str], relevant: set[str], k: int = 1000) -> float:
    if not relevant:
        return 0.0
    return len(relevant.intersection(ranking[:k])) / len(relevant)


@dataclass
class EvalResult:
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    no_relevant: list[str]
    threshold: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "threshold": self.threshold,
                "num_queries": len(self.per_query),
                "means": self.means,
                "no_relevant": self.no_relevant,
                "per_query": self.per_query,
            },
            indent=2,
            sort_keys=True,
        )

    def format_table(self, per_query: bool = False) -> str:
        header = f"{'query':<12} {'MAP':>8} {'nDCG@10':>8} {'R@1k':>8}"
        lines = [header, "-" * len(header)]
        if per_query:
            for qid, m in self.per_query.items():
                lines.append(
                    f"{qid:<12} {m['map']:>8.4f} {m['ndcg@10']:>8.4f} {m['recall@1000']:>8.4f}"
                )
        m = self.means
        lines.append(f"{'all':<12} {m['map']:>8.4f} {m['ndcg@10']:>8.4f} {m['recall@1000']:>8.4f}")
        if self.no_relevant:
            lines.append(f"queries without relevant documents: {len(self.no_relevant)}")
        return "\n".join(lines) + "\n"


def evaluate_run(run: RunFile, qrels: Qrels) -> EvalResult:
    """Evaluate every query in ``qrels``; run-only queries are ignored."""
    per_query: dict[str, dict[str, float]] = {}
    no_relevant: list[str] = []
    for qid in sorted(qrels.judgments):
        ranking = run.ranking(qid)
        judged = qrels.for_query(qid)
        rel = qrels.relevant(qid)
        per_query[qid] = {
            "map": average_precision(ranking, rel),
            "ndcg@10": ndcg_at_k(ranking, judged, 10),
            "recall@1000": recall_at_k(ranking, rel, 1000),
        }
        if not rel:
            no_relevant.append(qid)

    def mean(metric: str, qids: list[str]) -> float:
        return sum(per_query[q][metric] for q in qids) / len(qids) if qids else 0.0

    with_rel = [q for q in per_query if q not in set(no_relevant)]
    means = {
        "map": mean("map", with_rel),
        "ndcg@10": mean("ndcg@10", list(per_query)),
        "recall@1000": mean("recall@1000", with_rel),
    }
    return EvalResult(per_query, means, no_relevant, qrels.threshold)
