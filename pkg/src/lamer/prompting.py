"""Candidate-prompted instructions and demo-passage selection.

A rendered prompt is laid out as::

    <head with {q} replaced>
    1.<candidate 1>
    2.<candidate 2>
    ...
    <tail>

joined by single newlines, with no trailing newline. With no candidates it is
just ``head + "\\n" + tail``.
"""

from __future__ import annotations

import configparser
import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from lamer.bm25 import RankedList
from lamer.corpus import DEFAULT_CAP, Document, Query, truncate_text
from lamer.index import InvertedIndex

SCHEMES = ("top_consecutive", "sample_top_n", "sample_collection", "oracle")


class NoGoldDocuments(LookupError):
    """Oracle demo selection found no relevant judgments for the query."""


@dataclass(frozen=True)
class PromptTemplate:
    task_key: str
    instruction_head: str
    instruction_tail: str

    def render(self, query_text: str, candidates: list[str]) -> str:
        lines = [self.instruction_head.replace("{q}", query_text)]
        # one candidate per line, whatever whitespace the passage carried
        lines.extend(f"{i}.{' '.join(c.split())}" for i, c in enumerate(candidates, start=1))
        lines.append(self.instruction_tail)
        return "\n".join(lines)


def _parse_templates(text: str, source: str) -> dict[str, PromptTemplate]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text, source=source)
    out: dict[str, PromptTemplate] = {}
    for key in parser.sections():
        sec = parser[key]
        if "head" not in sec or "tail" not in sec:
            raise ValueError(f"{source}: template [{key}] needs both 'head' and 'tail'")
        if "{q}" not in sec["head"]:
            raise ValueError(f"{source}: template [{key}] head lacks the {{q}} placeholder")
        tmpl = PromptTemplate(key, sec["head"], sec["tail"])
        out[key] = tmpl
        for alias in sec.get("aliases", "").split(","):
            if alias.strip():
                out[alias.strip()] = tmpl
    return out


def load_templates(path: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Bundled templates, overridden/extended by those in ``path`` if given."""
    bundled = resources.files("lamer").joinpath("templates.ini").read_text(encoding="utf-8")
    templates = _parse_templates(bundled, "templates.ini")
    if path is not None:
        templates.update(_parse_templates(Path(path).read_text(encoding="utf-8"), str(path)))
    return templates


def get_template(task_key: str, path: str | Path | None = None) -> PromptTemplate:
    templates = load_templates(path)
    try:
        return templates[task_key]
    except KeyError:
        raise KeyError(
            f"unknown template {task_key!r}; available: {', '.join(sorted(templates))}"
        ) from None


def render_prompt(tmpl: PromptTemplate, q: Query, demos: list[Document], use_title: bool = True) -> str:
    return tmpl.render(q.text, [d.full_text(use_title) for d in demos])


@dataclass(frozen=True)
class DemoSelection:
    """How the demo passages are picked.

    ``top_consecutive`` takes ``window`` ranked entries from ``start_index``;
    ``sample_top_n`` draws ``window`` of the top ``top_n`` at random;
    ``sample_collection`` draws from the whole collection; ``oracle`` uses the
    gold documents from the judgments.
    """

    scheme: str = "top_consecutive"
    window: int = 10
    start_index: int = 0
    top_n: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.window < 0 or self.start_index < 0 or self.top_n < 0:
            raise ValueError("window, start_index and top_n must be >= 0")

    def retrieval_depth(self) -> int:
        """How deep the first-pass ranked list must be for this scheme."""
        if self.scheme == "top_consecutive":
            return self.start_index + self.window
        if self.scheme == "sample_top_n":
            return max(self.top_n, self.window)
        return 0

    def rng(self, query_id: str) -> random.Random:
        return random.Random(f"{self.seed}:{query_id}")


def _truncated(doc: Document, cap: int | None, use_title: bool) -> Document:
    text = doc.full_text(use_title)
    if cap is not None:
        text = truncate_text(text, cap)
    return Document(doc.doc_id, text, None)


def select_demos(
    ranked: RankedList | None,
    sel: DemoSelection,
    idx: InvertedIndex,
    docs: Mapping[str, Document],
    qrels=None,
    query_id: str = "",
    cap: int | None = DEFAULT_CAP,
    use_title: bool = True,
) -> list[Document]:
    """Pick the demo passages for one query.

    Returned documents carry the (title-prefixed) text truncated to ``cap``
    tokens in their ``text`` field.

    Raises:
        NoGoldDocuments: oracle scheme and the query has no gold documents.
    """
    if sel.window == 0:
        return []
    ids: list[str]
    if sel.scheme == "top_consecutive":
        pool = ranked.doc_ids if ranked is not None else []
        ids = pool[sel.start_index : sel.start_index + sel.window]
    elif sel.scheme == "sample_top_n":
        pool = (ranked.doc_ids if ranked is not None else [])[: sel.top_n]
        ids = sel.rng(query_id).sample(pool, min(sel.window, len(pool)))
    elif sel.scheme == "sample_collection":
        pool = idx.doc_ids
        ids = sel.rng(query_id).sample(pool, min(sel.window, len(pool)))
    else:
        judged = qrels.for_query(query_id) if qrels is not None else {}
        threshold = qrels.threshold if qrels is not None else 1
        gold = sorted(
            ((g, d) for d, g in judged.items() if g >= threshold and d in docs),
            key=lambda gd: (-gd[0], gd[1]),
        )
        if not gold:
            raise NoGoldDocuments(f"no gold documents for query {query_id!r}")
        ids = [d for _, d in gold[: sel.window]]
    return [_truncated(docs[d], cap, use_title) for d in ids]
