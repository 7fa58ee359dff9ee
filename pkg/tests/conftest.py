import sys
from pathlib import Path

import pytest

from lamer.corpus import Document
from lamer.index import build_index

sys.path.insert(0, str(Path(__file__).parent))

TOY_TEXTS = {"d1": "cat sat mat", "d2": "dog sat log", "d3": "cat cat dog"}


@pytest.fixture
def toy_docs():
    return [Document(d, t) for d, t in TOY_TEXTS.items()]


@pytest.fixture
def toy_index(toy_docs):
    return build_index(toy_docs)


def write_jsonl(path, docs):
    from lamer.corpus import write_corpus

    write_corpus(docs, path)
    return path


# Acceptance criteria register here; the summary prints one line per criterion.
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status:4s}  {detail}")
