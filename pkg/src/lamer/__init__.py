"""Zero-shot retrieval with BM25 and LLM answer augmentation."""

from lamer.bm25 import Bm25Params, RankedList, ScoredDoc, idf, retrieve, score
from lamer.corpus import Document, Query, load_corpus, load_queries, tokenize, truncate
from lamer.eval import Qrels, RunFile, evaluate_run, load_qrels, load_run
from lamer.index import InvertedIndex, build_index, load_index, save_index
from lamer.llm import AnswerSet, GenerationConfig, StubBackend, generate
from lamer.pipeline import LamerConfig, augment, fuse_dense, run_batch, run_query
from lamer.prompting import DemoSelection, PromptTemplate, render_prompt, select_demos

__version__ = "0.1.0"

__all__ = [
    "AnswerSet",
    "Bm25Params",
    "DemoSelection",
    "Document",
    "GenerationConfig",
    "InvertedIndex",
    "LamerConfig",
    "PromptTemplate",
    "Qrels",
    "Query",
    "RankedList",
    "RunFile",
    "ScoredDoc",
    "StubBackend",
    "augment",
    "build_index",
    "evaluate_run",
    "fuse_dense",
    "generate",
    "idf",
    "load_corpus",
    "load_index",
    "load_qrels",
    "load_queries",
    "load_run",
    "render_prompt",
    "retrieve",
    "run_batch",
    "run_query",
    "save_index",
    "score",
    "select_demos",
    "tokenize",
    "truncate",
]
