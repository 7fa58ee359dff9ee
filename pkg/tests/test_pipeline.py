import random

import numpy as np
import pytest

from lamer.bm25 import Bm25Params, retrieve
from lamer.corpus import Document, Query
from lamer.eval import Qrels, evaluate_run
from lamer.index import build_index
from lamer.llm import AnswerSet, BackendError, CachedBackend, StubBackend
from lamer.pipeline import (
    HashingEncoder,
    LamerConfig,
    augment,
    fuse_dense,
    run_batch,
    run_query,
)
from lamer.prompting import DemoSelection

from oracles import brute_force_bm25
from synth import rare_term_collection

Q0 = Query("q0", "q0")


def test_augment_interleaves():
    aug = augment(Q0, ["a1", "a2"])
    assert aug.augmented_text == "q0 a1 q0 a2"
    assert augment(Q0, ["a1"], separator="\n").augmented_text == "q0\na1"
    with pytest.raises(ValueError):
        augment(Q0, [])


def test_augment_recoverable():
    rng = random.Random(0)
    for _ in range(50):
        q = Query("x", f"query{rng.randint(0, 9)}")
        answers = [f"ans{rng.randint(0, 999)} word{rng.randint(0, 9)}" for _ in range(rng.randint(1, 6))]
        parts = augment(q, AnswerSet(answers)).augmented_text.split(" ")
        tokens_per = [1] + [len(a.split(" ")) for a in answers]
        out, pos = [], 0
        for a_len in tokens_per[1:]:
            assert parts[pos] == q.text
            out.append(" ".join(parts[pos + 1 : pos + 1 + a_len]))
            pos += 1 + a_len
        assert out == answers and pos == len(parts)


@pytest.fixture
def collection():
    rng = random.Random(21)
    vocab = [f"t{i}" for i in range(30)]
    texts = {f"d{i:02d}": " ".join(rng.choices(vocab, k=rng.randint(2, 12))) for i in range(60)}
    return texts, build_index([Document(d, t) for d, t in texts.items()])


def test_augmented_score_decomposes(collection):
    texts, idx = collection
    q = "t1 t5"
    answers = ["t2 t3 t3", "t5 t9", "t29"]
    aug = augment(Query("q", q), answers).augmented_text
    got = {e.doc_id: e.score for e in retrieve(idx, Bm25Params(), aug, len(texts), cap=None)}
    parts = [brute_force_bm25(texts, q)] * len(answers) + [brute_force_bm25(texts, a) for a in answers]
    for d in texts:
        expected = sum(p.get(d, 0.0) for p in parts)
        assert got.get(d, 0.0) == pytest.approx(expected, abs=1e-9)


def test_answers_equal_to_query_keep_argmax(collection):
    texts, idx = collection
    for q in ["t1 t5", "t7", "t10 t11 t12"]:
        top = retrieve(idx, Bm25Params(), q, 1).doc_ids
        aug = augment(Query("q", q), [q] * 5).augmented_text
        assert retrieve(idx, Bm25Params(), aug, 1, cap=None).doc_ids == top


@pytest.fixture
def rare():
    docs, queries, qrels = rare_term_collection()
    return docs, queries, qrels, build_index(docs.values())


def test_baseline_matches_retrieve(rare):
    docs, queries, _, idx = rare
    cfg = LamerConfig(mode="baseline_bm25", K=20)
    for q in queries[:5]:
        assert run_query(q, idx, cfg).entries == retrieve(idx, cfg.bm25, q.text, 20).entries


def test_m_zero_still_returns_k_deep_list(rare):
    docs, queries, _, idx = rare
    cfg = LamerConfig(M=0, N=2, K=30)
    backend = StubBackend("fixed_lexicon", lexicon=["group1 group2 group3"])
    ranked = run_query(queries[0], idx, cfg, backend, docs=docs)
    assert len(ranked) == 30


def test_echo_uplift_on_gold(rare):
    docs, queries, qrels, idx = rare
    cfg = LamerConfig(M=10, N=5, K=100)
    backend = StubBackend("echo_top_candidate")
    for q in queries[:10]:
        gold = next(iter(qrels.relevant(q.query_id)))
        base = {e.doc_id: e.score for e in retrieve(idx, cfg.bm25, q.text, 100)}
        final = run_query(q, idx, cfg, backend, docs=docs)
        assert final.doc_ids[0] == gold
        assert final[0].score > base[gold]


def test_keyed_hash_on_query_independent_of_m(rare):
    docs, queries, _, idx = rare
    vocab = [f"beta{i}" for i in range(50)]
    backend = StubBackend("keyed_hash", key_on="query", vocabulary=vocab)
    runs = []
    for m in (0, 10):
        cfg = LamerConfig(M=m, N=3, K=50, concurrency=1)
        runs.append(run_batch(queries[:8], idx, cfg, backend, docs=docs)[0].rankings)
    assert runs[0] == runs[1]


class AlwaysFails:
    def complete(self, prompt, cfg, i):
        raise BackendError("down")


def test_generation_failure_falls_back(rare):
    docs, queries, _, idx = rare
    cfg = LamerConfig(N=2, K=10, generation=LamerConfig().generation.__class__(max_retries=0))
    run, report = run_batch(queries[:3], idx, cfg, AlwaysFails(), docs=docs)
    for q, rep in zip(queries[:3], report.queries):
        assert rep.fallback == "baseline_bm25"
        assert run.rankings[q.query_id] == [(e.doc_id, e.score) for e in retrieve(idx, cfg.bm25, q.text, 10)]


def test_partial_answers_used(rare):
    docs, queries, _, idx = rare

    class Half:
        def complete(self, prompt, cfg, i):
            if i == 0:
                raise BackendError("one bad sample")
            return "gamma3"

    cfg = LamerConfig(N=3, K=10, concurrency=1, generation=LamerConfig().generation.__class__(max_retries=0))
    _, report = run_batch(queries[:1], idx, cfg, Half(), docs=docs)
    rep = report.queries[0]
    assert rep.answers_used == 2 and rep.fallback is None


def test_oracle_mode(rare):
    docs, queries, _, idx = rare
    qrels = Qrels({"q000": {"doc005": 2, "doc007": 1, "doc009": 0}}, threshold=1)
    cfg = LamerConfig(mode="oracle", N=1, K=10, concurrency=1)
    run, report = run_batch(queries[:2], idx, cfg, StubBackend("echo_top_candidate"), qrels=qrels, docs=docs)
    assert report.queries[0].demo_ids == ["doc005", "doc007"]
    assert run.rankings["q000"][0][0] == "doc005"
    # no judgments for q001: falls back to the BM25 top window
    assert report.queries[1].fallback == "oracle->top_consecutive"
    assert report.queries[1].demo_ids == ["doc001"]


def test_second_round_uses_fresh_samples(rare):
    docs, queries, _, idx = rare
    seen = []

    class Recorder:
        def complete(self, prompt, cfg, i):
            seen.append(i)
            return "beta2 gamma2"

    cfg = LamerConfig(mode="second_round", N=2, K=10, concurrency=1)
    _, report = run_batch(queries[:1], idx, cfg, Recorder(), docs=docs)
    assert seen == [0, 1, 2, 3]
    # the second round's candidates come from the first round's final list
    assert report.queries[0].demo_ids[0] == "doc002"


def test_dense_fusion():
    enc = HashingEncoder(dim=32)
    q = Query("q", "solar power cells")
    assert np.array_equal(fuse_dense(q, [q.text] * 3, enc), enc.encode(q.text))
    a = "photovoltaic panels"
    assert np.array_equal(fuse_dense(q, [a], enc), (enc.encode(q.text) + enc.encode(a)) / 2)
    answers = ["panels convert light", "silicon wafers"]
    expected = np.mean([(enc.encode(q.text) + enc.encode(x)) / 2 for x in answers], axis=0)
    np.testing.assert_allclose(fuse_dense(q, answers, enc), expected, atol=1e-9)


def test_dense_fusion_shape_mismatch():
    class Bad:
        def encode(self, text):
            return np.zeros(3 if text == "q" else 4)

    with pytest.raises(ValueError):
        fuse_dense(Query("x", "q"), ["a"], Bad())


def test_batch_order_and_error_isolation(rare):
    docs, queries, _, idx = rare

    class Picky:
        def complete(self, prompt, cfg, i):
            if '"alpha3"' in prompt:
                raise RuntimeError("unexpected crash")
            return "beta1"

    cfg = LamerConfig(N=1, K=5, concurrency=4, generation=LamerConfig().generation.__class__(max_retries=0))
    run, report = run_batch(queries[:10], idx, cfg, Picky(), docs=docs)
    assert list(run.rankings) == [q.query_id for q in queries[:10]]
    assert [r.query_id for r in report.queries] == [q.query_id for q in queries[:10]]
    assert report.queries[3].fallback == "baseline_bm25"
    assert sum(r.fallback is not None for r in report.queries) == 1


def test_cached_rerun_identical(rare, tmp_path):
    docs, queries, _, idx = rare
    cfg = LamerConfig(N=3, K=20)
    first, _ = run_batch(queries[:10], idx, cfg, CachedBackend(StubBackend("keyed_hash"), tmp_path), docs=docs)
    cached = CachedBackend(AlwaysFails(), tmp_path)
    second, report = run_batch(queries[:10], idx, cfg, cached, docs=docs)
    assert first.rankings == second.rankings
    assert cached.misses == 0 and report.summary()["fallbacks"] == 0


def test_config_round_trip():
    cfg = LamerConfig(M=3, N=2, demo_selection=DemoSelection(scheme="sample_top_n", seed=7))
    assert LamerConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.selection.window == 3 and cfg.gen.num_answers == 2
    with pytest.raises(ValueError):
        LamerConfig(mode="nope")
