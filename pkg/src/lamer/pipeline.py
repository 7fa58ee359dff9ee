"""End-to-end LameR retrieval: candidates, answers, augmentation, final search.

Modes:
  baseline_bm25  plain BM25 on the query.
  lamer          top-M first pass -> prompt -> N answers -> augmented query -> top-K.
  oracle         as lamer, but demo passages are the judged gold documents.
  second_round   lamer, then the demo/answer/augment stage is repeated with the
                 first round's final ranking as candidate source.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

from lamer.bm25 import Bm25Params, RankedList, retrieve
from lamer.corpus import DEFAULT_CAP, Document, Query, tokenize, truncate_text
from lamer.eval import Qrels, RunFile
from lamer.index import InvertedIndex
from lamer.llm import AnswerSet, GenerationBackend, GenerationConfig, GenerationError, generate
from lamer.prompting import DemoSelection, NoGoldDocuments, get_template, select_demos

log = logging.getLogger(__name__)

MODES = ("lamer", "oracle", "second_round", "baseline_bm25")


@dataclass(frozen=True)
class LamerConfig:
    M: int = 10
    N: int = 5
    K: int = 1000
    mode: str = "lamer"
    demo_selection: DemoSelection = field(default_factory=DemoSelection)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    template_key: str = "dl"
    template_file: str | None = None
    separator: str = " "
    query_cap: int | None = DEFAULT_CAP
    doc_cap: int | None = DEFAULT_CAP
    answer_cap: int | None = DEFAULT_CAP
    truncate_prompt_query: bool = False
    use_title: bool = True
    concurrency: int = 4
    run_tag: str = "lamer"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.concurrency < 1:
            raise ValueError(f"concurrency must be >= 1, got {self.concurrency}")

    @property
    def selection(self) -> DemoSelection:
        """Demo selection with its window forced to ``M``."""
        return replace(self.demo_selection, window=self.M)

    @property
    def gen(self) -> GenerationConfig:
        """Generation config with its answer count forced to ``N``."""
        return replace(self.generation, num_answers=self.N)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> LamerConfig:
        d = dict(d)
        nested = {"demo_selection": DemoSelection, "bm25": Bm25Params, "generation": GenerationConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], Mapping):
                d[key] = typ(**d[key])
        return cls(**d)


@dataclass(frozen=True)
class AugmentedQuery:
    query: Query
    answers: AnswerSet
    augmented_text: str


def augment(q: Query, answers: AnswerSet | Sequence[str], separator: str = " ") -> AugmentedQuery:
    """Interleave the query before every answer: ``q a1 q a2 ... q aN``."""
    items = list(answers)
    if not items:
        raise ValueError("at least one answer is required")
    parts = []
    for a in items:
        parts.append(q.text)
        parts.append(a)
    aset = answers if isinstance(answers, AnswerSet) else AnswerSet(items)
    return AugmentedQuery(q, aset, separator.join(parts))


class Encoder(Protocol):
    def encode(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class HashingEncoder:
    """Signed feature hashing of tokens into ``dim`` integer-valued buckets."""

    dim: int = 64

    def encode(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "big")
            v[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        return v


def fuse_dense(q: Query, answers: AnswerSet | Sequence[str], encoder: Encoder) -> np.ndarray:
    """Mean over answers of ``(enc(q) + enc(a)) / 2``."""
    items = list(answers)
    if not items:
        raise ValueError("at least one answer is required")
    eq = np.asarray(encoder.encode(q.text), dtype=np.float64)
    total = np.zeros_like(eq)
    for a in items:
        ea = np.asarray(encoder.encode(a), dtype=np.float64)
        if ea.shape != eq.shape:
            raise ValueError(f"encoding shape mismatch: query {eq.shape}, answer {ea.shape}")
        total += (eq + ea) / 2
    return total / len(items)


@dataclass
class QueryReport:
    query_id: str
    mode: str
    timings: dict[str, float] = field(default_factory=dict)
    llm_calls: int = 0
    answers_used: int = 0
    demo_ids: list[str] = field(default_factory=list)
    prompt_tokens: int = 0
    augmented_tokens: int = 0
    fallback: str | None = None
    warnings: list[str] = field(default_factory=list)
    num_results: int = 0


class _Runner:
    def __init__(self, idx, docs, cfg: LamerConfig, backend, qrels):
        self.idx = idx
        self.docs = docs
        self.cfg = cfg
        self.backend = backend
        self.qrels = qrels
        self.template = get_template(cfg.template_key, cfg.template_file) if cfg.mode != "baseline_bm25" else None

    def search(self, text: str, k: int, cap) -> RankedList:
        return retrieve(self.idx, self.cfg.bm25, text, k, cap=cap)

    def _demos(self, q: Query, source: RankedList | None, sel: DemoSelection, rep: QueryReport):
        if sel.window == 0:
            return []
        if self.docs is None:
            raise ValueError("demo selection needs the document texts (docs mapping)")
        try:
            return select_demos(
                source, sel, self.idx, self.docs, self.qrels, q.query_id,
                cap=self.cfg.doc_cap, use_title=self.cfg.use_title,
            )
        except NoGoldDocuments as e:
            rep.warnings.append(f"{e}; falling back to top_consecutive(0)")
            rep.fallback = "oracle->top_consecutive"
            fb = DemoSelection("top_consecutive", window=sel.window, start_index=0)
            if source is None:
                source = self.search(q.text, fb.retrieval_depth(), self.cfg.query_cap)
            return select_demos(
                source, fb, self.idx, self.docs, None, q.query_id,
                cap=self.cfg.doc_cap, use_title=self.cfg.use_title,
            )

    def _augmented_round(
        self, q: Query, source: RankedList | None, sel: DemoSelection, first_sample: int, rep: QueryReport
    ) -> RankedList | None:
        """Prompt, generate and search with the augmented query; None if no answer came back."""
        cfg = self.cfg
        demos = self._demos(q, source, sel, rep)
        rep.demo_ids = [d.doc_id for d in demos]
        prompt_query = q
        if cfg.truncate_prompt_query and cfg.query_cap is not None:
            prompt_query = Query(q.query_id, truncate_text(q.text, cfg.query_cap))
        prompt = self.template.render(prompt_query.text, [d.text for d in demos])
        rep.prompt_tokens += len(tokenize(prompt))

        t = time.perf_counter()
        try:
            answers = generate(self.backend, prompt, cfg.gen, first_sample=first_sample)
            rep.llm_calls += answers.calls
        except GenerationError as e:
            rep.llm_calls += e.calls
            rep.warnings.extend(e.errors)
            if not e.answers:
                rep.timings["generation"] = rep.timings.get("generation", 0.0) + time.perf_counter() - t
                return None
            rep.warnings.append(f"proceeding with {len(e.answers)} of {cfg.N} answers")
            answers = AnswerSet(e.answers)
        rep.timings["generation"] = rep.timings.get("generation", 0.0) + time.perf_counter() - t
        rep.answers_used = len(answers)

        capped = [truncate_text(a, cfg.answer_cap) if cfg.answer_cap is not None else a for a in answers]
        capped = [a if a.strip() else full for a, full in zip(capped, answers)]
        query_part = q.text if cfg.query_cap is None else truncate_text(q.text, cfg.query_cap)
        aug = augment(Query(q.query_id, query_part), capped, cfg.separator)
        rep.augmented_tokens = len(tokenize(aug.augmented_text))

        t = time.perf_counter()
        # parts were capped individually; the concatenation must not be cut again
        ranked = self.search(aug.augmented_text, cfg.K, None)
        rep.timings["final_retrieval"] = rep.timings.get("final_retrieval", 0.0) + time.perf_counter() - t
        return ranked

    def run(self, q: Query) -> tuple[RankedList, QueryReport]:
        cfg = self.cfg
        rep = QueryReport(q.query_id, cfg.mode)
        start = time.perf_counter()
        if cfg.mode == "baseline_bm25":
            ranked = self.search(q.text, cfg.K, cfg.query_cap)
        else:
            sel = cfg.selection
            if cfg.mode == "oracle":
                sel = replace(sel, scheme="oracle")
            source = None
            depth = sel.retrieval_depth()
            if depth > 0:
                t = time.perf_counter()
                source = self.search(q.text, depth, cfg.query_cap)
                rep.timings["first_pass"] = time.perf_counter() - t
            ranked = self._augmented_round(q, source, sel, 0, rep)
            if ranked is not None and cfg.mode == "second_round":
                ranked = self._augmented_round(q, ranked, sel, cfg.N, rep)
            if ranked is None:
                rep.fallback = "baseline_bm25"
                rep.warnings.append("no answers generated; falling back to plain BM25")
                log.warning("query %s: generation failed, using plain BM25", q.query_id)
                ranked = self.search(q.text, cfg.K, cfg.query_cap)
        rep.timings["total"] = time.perf_counter() - start
        rep.num_results = len(ranked)
        return ranked, rep


def run_query(
    q: Query,
    idx: InvertedIndex,
    cfg: LamerConfig,
    backend: GenerationBackend | None = None,
    qrels: Qrels | None = None,
    docs: Mapping[str, Document] | None = None,
) -> RankedList:
    return _Runner(idx, docs, cfg, backend, qrels).run(q)[0]


@dataclass
class BatchReport:
    queries: list[QueryReport]
    config: dict
    elapsed: float = 0.0

    def summary(self) -> dict:
        return {
            "num_queries": len(self.queries),
            "llm_calls": sum(r.llm_calls for r in self.queries),
            "fallbacks": sum(r.fallback is not None for r in self.queries),
            "errors": sum(any(w.startswith("error:") for w in r.warnings) for r in self.queries),
            "elapsed_seconds": self.elapsed,
        }

    def to_json(self) -> str:
        return json.dumps(
            {
                "summary": self.summary(),
                "config": self.config,
                "queries": [asdict(r) for r in self.queries],
            },
            indent=2,
        )


def run_batch(
    queries: Sequence[Query],
    idx: InvertedIndex,
    cfg: LamerConfig,
    backend: GenerationBackend | None = None,
    qrels: Qrels | None = None,
    docs: Mapping[str, Document] | None = None,
) -> tuple[RunFile, BatchReport]:
    """Run every query, ``cfg.concurrency`` at a time; output keeps input order.

    A query whose processing raises is retried as plain BM25 and the error is
    recorded in its report; the batch itself never aborts.
    """
    runner = _Runner(idx, docs, cfg, backend, qrels)

    def one(q: Query) -> tuple[RankedList, QueryReport]:
        try:
            return runner.run(q)
        except Exception as e:  # noqa: BLE001 - isolate per-query failures
            log.exception("query %s failed", q.query_id)
            rep = QueryReport(q.query_id, cfg.mode, fallback="baseline_bm25")
            rep.warnings.append(f"error: {type(e).__name__}: {e}")
            try:
                ranked = runner.search(q.text, cfg.K, cfg.query_cap)
            except Exception as e2:  # noqa: BLE001
                rep.warnings.append(f"error: baseline also failed: {e2}")
                ranked = RankedList([], cfg.K)
            rep.num_results = len(ranked)
            return ranked, rep

    start = time.perf_counter()
    if cfg.concurrency == 1 or len(queries) <= 1:
        results = [one(q) for q in queries]
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            results = list(pool.map(one, queries))
    run = RunFile(run_tag=cfg.run_tag)
    for q, (ranked, _) in zip(queries, results):
        run.rankings[q.query_id] = [(e.doc_id, e.score) for e in ranked]
    report = BatchReport([rep for _, rep in results], cfg.to_dict(), time.perf_counter() - start)
    return run, report
