import pytest
from hypothesis import given
from hypothesis import strategies as st

from lamer.corpus import (
    CorpusError,
    Document,
    Query,
    load_corpus,
    load_queries,
    tokenize,
    truncate,
    truncate_text,
    write_corpus,
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("The CAT sat.", ["the", "cat", "sat"]),
        ("", []),
        ("state-of-the-art BM25!", ["state", "of", "the", "art", "bm25"]),
        ("snake_case  tabs\tand\nnewlines", ["snake", "case", "tabs", "and", "newlines"]),
    ],
)
def test_tokenize(text, expected):
    assert tokenize(text) == expected


def test_truncate():
    assert truncate(["a", "b", "c"], 2) == ["a", "b"]
    assert truncate(["a"], 128) == ["a"]
    long = [f"t{i}" for i in range(300)]
    cut = truncate(long, 128)
    assert len(cut) == 128 and cut == long[:128]
    with pytest.raises(ValueError):
        truncate(["a"], -1)


@given(st.text())
def test_tokenize_idempotent_under_rejoin(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks
    assert "" not in toks


@given(st.lists(st.text(min_size=1)), st.integers(min_value=0, max_value=50))
def test_truncate_idempotent(seq, cap):
    assert truncate(truncate(seq, cap), cap) == truncate(seq, cap)


@given(st.text(alphabet="abcXYZ019 .,-_\n"), st.integers(min_value=0, max_value=20))
def test_truncate_text_matches_token_truncation(text, cap):
    assert tokenize(truncate_text(text, cap)) == truncate(tokenize(text), cap)


def test_truncate_text_keeps_case():
    assert truncate_text("Hello, World! Again.", 2) == "Hello, World"


def test_load_corpus(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "d1", "text": "a b"}\n{"id": "d2", "title": "T", "text": "c"}\n')
    docs = load_corpus(p)
    assert docs == [Document("d1", "a b"), Document("d2", "c", "T")]
    assert docs[1].full_text() == "T c"
    assert docs[1].full_text(use_title=False) == "c"


def test_load_corpus_missing_id_names_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "d1", "text": "a"}\n{"text": "b"}\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_load_corpus_malformed_json(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "d1", "text": "a"}\n{oops\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_load_corpus_duplicate_id(tmp_path):
    lines = [f'{{"id": "x{i}", "text": "t"}}' for i in range(7)]
    lines[2] = '{"id": "d1", "text": "t"}'
    lines[6] = '{"id": "d1", "text": "u"}'
    p = tmp_path / "c.jsonl"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusError, match="'d1'") as exc:
        load_corpus(p)
    assert ":7:" in str(exc.value)


@given(
    st.lists(
        st.tuples(
            st.text(alphabet="abcdef0123", min_size=1, max_size=8),
            st.one_of(st.none(), st.text(max_size=20)),
            st.text(max_size=40),
        ),
        max_size=10,
        unique_by=lambda t: t[0],
    )
)
def test_corpus_round_trip(tmp_path_factory, rows):
    docs = [Document(i, text, title or None) for i, title, text in rows]
    p = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(docs, p)
    assert load_corpus(p) == docs


def test_load_queries(tmp_path):
    p = tmp_path / "q.tsv"
    p.write_text("q1\twhat is bm25\nq2\tcats\n")
    assert load_queries(p) == [Query("q1", "what is bm25"), Query("q2", "cats")]


def test_load_queries_empty(tmp_path):
    p = tmp_path / "q.tsv"
    p.write_text("")
    assert load_queries(p) == []


def test_load_queries_wrong_columns(tmp_path):
    p = tmp_path / "q.tsv"
    p.write_text("q1\tok\nq2\ttoo\tmany\n")
    with pytest.raises(CorpusError, match=":2:"):
        load_queries(p)
