"""Answer generation through pluggable text-generation backends.

A backend is anything with ``complete(prompt, cfg, sample_index) -> str``.
``sample_index`` distinguishes the independent samples drawn for one prompt;
stub backends may use it, HTTP backends ignore it except for caching.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from lamer.corpus import truncate_text

log = logging.getLogger(__name__)

STUB_MODES = ("echo_top_candidate", "fixed_lexicon", "keyed_hash")

_FIRST_CANDIDATE = re.compile(r"^1\.(.*)$", re.MULTILINE)
_QUOTED = re.compile(r'"(.*)"')

# config fields that do not change what a single sample looks like
_NON_SAMPLING_FIELDS = ("num_answers", "timeout", "max_retries", "retry_backoff")


class GenerationError(RuntimeError):
    """Some answers could not be produced after all retries.

    ``answers`` holds the ones that did succeed, ``errors`` one message per
    failed sample.
    """

    def __init__(self, message: str, answers: list[str], errors: list[str], calls: int = 0):
        super().__init__(message)
        self.answers = answers
        self.errors = errors
        self.calls = calls


class BackendError(RuntimeError):
    """A single backend request failed (transport, HTTP status, bad payload)."""


@dataclass(frozen=True)
class GenerationConfig:
    num_answers: int = 5
    max_answer_tokens: int = 256
    temperature: float = 0.7
    top_p: float = 1.0
    model_name: str = "gpt-3.5-turbo"
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0

    def __post_init__(self):
        if self.num_answers < 1:
            raise ValueError(f"num_answers must be >= 1, got {self.num_answers}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass
class AnswerSet:
    answers: list[str]
    calls: int = 0

    def __len__(self) -> int:
        return len(self.answers)

    def __iter__(self):
        return iter(self.answers)

    def __post_init__(self):
        if not self.answers:
            raise ValueError("an answer set needs at least one answer")
        for a in self.answers:
            if not a.strip():
                raise ValueError("answers must be non-empty after trimming whitespace")


class GenerationBackend(Protocol):
    def complete(self, prompt: str, cfg: GenerationConfig, sample_index: int) -> str: ...


def query_of(prompt: str) -> str:
    """The quoted query in a prompt's first line, or the whole first line."""
    first = prompt.split("\n", 1)[0]
    m = _QUOTED.search(first)
    return m.group(1) if m else first


@dataclass
class StubBackend:
    """Deterministic offline backend.

    Modes:
      echo_top_candidate: text of candidate ``1.`` in the prompt, or the
        prompt's first (query) line when there are no candidates.
      fixed_lexicon: ``lexicon[sample_index % len(lexicon)]``.
      keyed_hash: words derived from a SHA-256 of the prompt (or of the query
        alone with ``key_on="query"``) and the sample index. Words come from
        ``vocabulary`` when given, else are hex strings.
    """

    mode: str = "echo_top_candidate"
    lexicon: list[str] = field(default_factory=list)
    vocabulary: list[str] = field(default_factory=list)
    key_on: str = "prompt"
    num_words: int = 8

    def __post_init__(self):
        if self.mode not in STUB_MODES:
            raise ValueError(f"stub mode must be one of {STUB_MODES}, got {self.mode!r}")
        if self.mode == "fixed_lexicon" and not self.lexicon:
            raise ValueError("fixed_lexicon mode needs a non-empty lexicon")
        if self.key_on not in ("prompt", "query"):
            raise ValueError("key_on must be 'prompt' or 'query'")

    def complete(self, prompt: str, cfg: GenerationConfig, sample_index: int) -> str:
        if self.mode == "echo_top_candidate":
            m = _FIRST_CANDIDATE.search(prompt)
            text = m.group(1) if m else prompt.split("\n", 1)[0]
        elif self.mode == "fixed_lexicon":
            text = self.lexicon[sample_index % len(self.lexicon)]
        else:
            key = prompt if self.key_on == "prompt" else query_of(prompt)
            digest = hashlib.sha256(f"{key}\x00{sample_index}".encode()).digest()
            if self.vocabulary:
                words = [
                    self.vocabulary[int.from_bytes(digest[2 * i : 2 * i + 2], "big") % len(self.vocabulary)]
                    for i in range(min(self.num_words, 16))
                ]
            else:
                hexd = digest.hex()
                words = [f"h{hexd[6 * i : 6 * i + 6]}" for i in range(min(self.num_words, 10))]
            text = " ".join(words)
        return truncate_text(text, cfg.max_answer_tokens)


class OpenAIChatBackend:
    """OpenAI-compatible ``/chat/completions`` client.

    ``base_url`` and ``api_key`` default to ``LAMER_API_BASE`` /
    ``LAMER_API_KEY`` (falling back to ``OPENAI_API_KEY``).
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = (
            base_url or os.environ.get("LAMER_API_BASE") or "https://api.openai.com/v1"
        ).rstrip("/")
        self.api_key = api_key or os.environ.get("LAMER_API_KEY") or os.environ.get("OPENAI_API_KEY")
        self.client = client or httpx.Client()

    def complete(self, prompt: str, cfg: GenerationConfig, sample_index: int) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_answer_tokens,
            "n": 1,
        }
        try:
            resp = self.client.post(
                f"{self.base_url}/chat/completions", json=body, headers=headers, timeout=cfg.timeout
            )
        except httpx.HTTPError as e:
            raise BackendError(f"request failed: {e}") from e
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise BackendError(f"unexpected response payload: {e}") from e


class CachedBackend:
    """On-disk response cache in front of another backend.

    Entries are keyed by a hash of the prompt, the sampling-relevant config
    and the sample index, so reruns are free and reproduce earlier outputs.
    """

    def __init__(self, backend: GenerationBackend, cache_dir: str | Path):
        self.backend = backend
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(prompt: str, cfg: GenerationConfig, sample_index: int) -> str:
        cfg_part = {k: v for k, v in asdict(cfg).items() if k not in _NON_SAMPLING_FIELDS}
        payload = json.dumps(
            {"prompt": prompt, "config": cfg_part, "sample": sample_index}, sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def complete(self, prompt: str, cfg: GenerationConfig, sample_index: int) -> str:
        key = self.key(prompt, cfg, sample_index)
        path = self.cache_dir / key[:2] / f"{key}.json"
        if path.is_file():
            self.hits += 1
            return json.loads(path.read_text(encoding="utf-8"))["text"]
        text = self.backend.complete(prompt, cfg, sample_index)
        self.misses += 1
        if text.strip():
            path.parent.mkdir(exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump({"prompt": prompt, "sample": sample_index, "text": text}, f)
            os.replace(tmp, path)
        return text


def generate(
    backend: GenerationBackend,
    prompt: str,
    cfg: GenerationConfig,
    first_sample: int = 0,
    sleep=time.sleep,
) -> AnswerSet:
    """Draw ``cfg.num_answers`` answers, one backend request per answer.

    Failed or whitespace-only responses are retried with exponential backoff
    (``retry_backoff * 2**attempt`` seconds).

    Raises:
        GenerationError: if any sample still fails after ``max_retries``
            retries; the successful answers are attached to the exception.
    """
    if not prompt.strip():
        raise ValueError("prompt must be non-empty")
    answers: list[str] = []
    errors: list[str] = []
    calls = 0
    for i in range(first_sample, first_sample + cfg.num_answers):
        last_error = ""
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                sleep(cfg.retry_backoff * 2 ** (attempt - 1))
            calls += 1
            try:
                text = backend.complete(prompt, cfg, i)
            except Exception as e:  # noqa: BLE001 - custom backends raise anything
                last_error = f"{type(e).__name__}: {e}"
                log.debug("sample %d attempt %d failed: %s", i, attempt, e)
                continue
            if text.strip():
                answers.append(text.strip())
                break
            last_error = "empty response"
        else:
            errors.append(f"sample {i}: {last_error}")
    if errors:
        raise GenerationError(
            f"{len(errors)} of {cfg.num_answers} answers failed", answers, errors, calls
        )
    return AnswerSet(answers, calls)
