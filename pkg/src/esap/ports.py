"""Pluggable ports: chat models, embedders, and SQL executors.

Production adapters talk to an OpenAI-style HTTP endpoint and to SQLite.
Test doubles (scripted queue, extractive stub, hashing embedder) are
first-class citizens so every pipeline can run deterministically offline.
"""

from __future__ import annotations

import os
import re
import sqlite3
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import (
    ModelRefusal,
    NonSelectRejected,
    ScriptExhausted,
    SqlRuntimeError,
    SqlSyntaxError,
    SqlTimeout,
    TransportError,
)

EMBED_DIM = 256

ENV_API_KEY = "ESAP_API_KEY"
ENV_BASE_URL = "ESAP_BASE_URL"
ENV_MODEL = "ESAP_MODEL"


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]    # (role, content) pairs
    temperature: float = 0.0
    max_tokens: int = 1024
    model: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("message list must be non-empty")

    @property
    def last_user(self) -> str:
        for role, content in reversed(self.messages):
            if role == "user":
                return content
        return self.messages[-1][1]


def chat_request(prompt: str, system: str = "", temperature: float = 0.0,
                 max_tokens: int = 1024) -> ChatRequest:
    messages: list[tuple[str, str]] = []
    if system:
        messages.append(("system", system))
    messages.append(("user", prompt))
    return ChatRequest(messages=tuple(messages), temperature=temperature,
                       max_tokens=max_tokens)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "complete"
    prompt_tokens: int = 0
    completion_tokens: int = 0
    model: str = "stub"

    def __post_init__(self):
        if self.finish_reason == "complete" and self.text is None:
            raise ValueError("complete responses must carry text")


class ChatPort(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


# ---------------------------------------------------------------------------
# Test doubles
# ---------------------------------------------------------------------------

class ScriptedModel:
    """Replays a fixed queue of responses; optional per-call request checks.

    Each script entry is either a string or a (predicate, string) pair. When
    a predicate is present it receives the ChatRequest and must return True,
    otherwise the mismatch is reported immediately; this keeps prompt drift
    from silently passing tests.
    """

    def __init__(self, script: list):
        self._script = list(script)
        self._cursor = 0
        self.requests: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        if self._cursor >= len(self._script):
            raise ScriptExhausted(
                f"scripted model exhausted after {len(self._script)} responses")
        entry = self._script[self._cursor]
        self._cursor += 1
        if isinstance(entry, tuple):
            predicate, text = entry
            if not predicate(request):
                raise AssertionError(
                    f"scripted call {self._cursor} received unexpected request: "
                    f"{request.last_user[:200]!r}")
        else:
            text = entry
        return ChatResponse(text=text, model="scripted")

    @property
    def calls(self) -> int:
        return self._cursor


_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


class ExtractiveStub:
    """Deterministic offline model whose grounding is perfect by construction.

    Given an assembled context prompt it returns the context sentence with
    the highest token overlap against the question (earliest sentence on
    ties), citing the snippet it came from. Rewrite prompts echo the
    question; critique prompts approve; anything else is acknowledged.
    """

    REFINE_MARKER = "Rewrite the user question"
    CRITIQUE_MARKER = "sufficient or insufficient"

    def chat(self, request: ChatRequest) -> ChatResponse:
        prompt = request.last_user
        if self.REFINE_MARKER in prompt:
            question = prompt.rsplit("QUESTION:", 1)[-1].strip()
            return ChatResponse(text=question or prompt.strip())
        if self.CRITIQUE_MARKER in prompt:
            return ChatResponse(text="sufficient")
        if "# CONTEXT" in prompt:
            return ChatResponse(text=self._extract(prompt))
        return ChatResponse(text="Acknowledged.")

    def _extract(self, prompt: str) -> str:
        from .tokenizer import token_texts
        question = prompt.rsplit("QUESTION:", 1)[-1].strip()
        q_tokens = set(token_texts(question))
        snippets = re.findall(r"^\[(\d+)\] (.+)$", prompt, flags=re.MULTILINE)
        best_sentence = ""
        best_no = 1
        best_overlap = -1
        for number, text in snippets:
            for sentence in _SENTENCE_RE.split(text):
                sentence = sentence.strip()
                if not sentence:
                    continue
                overlap = len(q_tokens & set(token_texts(sentence)))
                if overlap > best_overlap:
                    best_overlap = overlap
                    best_sentence = sentence
                    best_no = int(number)
        if not best_sentence:
            return "No supporting context was retrieved."
        return f"{best_sentence} [{best_no}]"


# ---------------------------------------------------------------------------
# HTTP chat adapter
# ---------------------------------------------------------------------------

class HttpChatModel:
    """OpenAI-style chat-completions client with bounded retry.

    Reads endpoint configuration from ESAP_API_KEY / ESAP_BASE_URL /
    ESAP_MODEL unless given explicitly. Transport failures, 429 and 5xx
    are retried with exponential backoff up to the attempt cap; the last
    error is surfaced verbatim. Other 4xx fail immediately.
    """

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str | None = None, max_attempts: int = 3,
                 backoff_base: float = 0.5, session=None):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "gpt-4o")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        if session is None:
            import requests
            session = requests.Session()
        self._session = session
        if not self.base_url:
            raise TransportError(
                f"no chat endpoint configured; set {ENV_BASE_URL}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model or self.model,
            "messages": [{"role": role, "content": content}
                         for role, content in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}",
                   "Content-Type": "application/json"}
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._session.post(url, json=payload, headers=headers,
                                              timeout=60)
            except Exception as exc:
                last_error = exc
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = TransportError(f"HTTP {response.status_code}")
                continue
            if response.status_code >= 400:
                raise TransportError(
                    f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
                choice = body["choices"][0]
                text = choice["message"]["content"]
                usage = body.get("usage", {})
            except Exception as exc:
                raise TransportError(f"malformed response body: {exc}") from exc
            if text is None or not str(text).strip():
                raise ModelRefusal("model returned empty content")
            return ChatResponse(
                text=str(text),
                finish_reason=choice.get("finish_reason", "complete"),
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                model=payload["model"],
            )
        raise TransportError(
            f"chat endpoint unreachable after {self.max_attempts} attempts: "
            f"{last_error}")


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class HashingEmbedder:
    """Deterministic feature-hashing embedder; no model weights required.

    Each token hashes to one of ``dim`` coordinates with a +/-1 sign taken
    from the hash's top bit; the result is L2-normalized (all-zero stays
    zero). Same text, same vector, on every platform.
    """

    def __init__(self, dim: int = EMBED_DIM):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self._token_cache: dict[str, tuple[int, float]] = {}

    def embed(self, texts: list[str]) -> np.ndarray:
        from .tokenizer import token_texts
        cache = self._token_cache
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            vec = out[row]
            for token in token_texts(text):
                slot = cache.get(token)
                if slot is None:
                    h = _fnv1a64(token.encode("utf-8"))
                    slot = (h % self.dim, 1.0 if (h >> 63) == 0 else -1.0)
                    cache[token] = slot
                vec[slot[0]] += slot[1]
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec /= norm
        return out

    def __call__(self, texts: list[str]) -> np.ndarray:
        return self.embed(texts)


# ---------------------------------------------------------------------------
# SQL execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SqlResult:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    truncated: bool = False
    duration_ms: float = 0.0

    @property
    def row_count(self) -> int:
        return len(self.rows)


_SELECT_RE = re.compile(r"^\s*(SELECT|WITH)\b", re.IGNORECASE)


def _strip_sql(sql: str) -> str:
    """Remove comments and collapse to the bare statement for gate checks."""
    no_block = re.sub(r"/\*.*?\*/", " ", sql, flags=re.DOTALL)
    no_line = re.sub(r"--[^\n]*", " ", no_block)
    return no_line.strip().rstrip(";").strip()


class SqliteExecutor:
    """Read-only SQLite executor with a statement gate and row/time budgets.

    Only a single SELECT (or WITH ... SELECT) statement is accepted; the
    connection itself is opened in read-only mode as a second line of
    defense. Long queries are interrupted via the progress handler.
    """

    def __init__(self, db_path: str, max_rows: int = 1000,
                 timeout_s: float = 5.0):
        self.db_path = str(db_path)
        self.max_rows = max_rows
        self.timeout_s = timeout_s

    def execute(self, sql: str) -> SqlResult:
        bare = _strip_sql(sql)
        if not bare:
            raise SqlSyntaxError("empty SQL statement")
        if not _SELECT_RE.match(bare):
            raise NonSelectRejected(
                f"only SELECT statements are allowed, got: {bare.split()[0]!r}")
        if ";" in bare:
            raise NonSelectRejected("multiple SQL statements are not allowed")

        uri = f"file:{self.db_path}?mode=ro"
        started = time.perf_counter()
        try:
            conn = sqlite3.connect(uri, uri=True)
        except sqlite3.Error as exc:
            raise SqlRuntimeError(f"cannot open database: {exc}") from exc
        deadline = time.monotonic() + self.timeout_s

        def guard():
            return 1 if time.monotonic() > deadline else 0

        conn.set_progress_handler(guard, 2000)
        try:
            cursor = conn.execute(bare)
            rows = cursor.fetchmany(self.max_rows + 1)
            columns = tuple(d[0] for d in cursor.description or ())
        except sqlite3.OperationalError as exc:
            message = str(exc)
            if "interrupted" in message.lower():
                raise SqlTimeout(
                    f"query exceeded {self.timeout_s}s budget") from exc
            if "syntax error" in message.lower():
                raise SqlSyntaxError(message) from exc
            raise SqlRuntimeError(message) from exc
        except sqlite3.Error as exc:
            raise SqlRuntimeError(str(exc)) from exc
        finally:
            conn.close()

        truncated = len(rows) > self.max_rows
        if truncated:
            rows = rows[:self.max_rows]
        return SqlResult(columns=columns,
                         rows=tuple(tuple(r) for r in rows),
                         truncated=truncated,
                         duration_ms=(time.perf_counter() - started) * 1000.0)


def execute_sql(statement: str, executor: SqliteExecutor) -> SqlResult:
    """Run one read-only statement through an executor."""
    return executor.execute(statement)


@dataclass
class SchemaColumn:
    name: str
    type: str


@dataclass
class SchemaTable:
    name: str
    columns: list[SchemaColumn] = field(default_factory=list)
    foreign_keys: list[tuple[str, str, str]] = field(default_factory=list)
    # (column, other_table, other_column)
    row_count: int | None = None


def introspect_schema(db_path: str, with_counts: bool = False) -> list[SchemaTable]:
    """Read table/column/FK structure (and optional row counts) from SQLite."""
    uri = f"file:{db_path}?mode=ro"
    conn = sqlite3.connect(uri, uri=True)
    try:
        names = [r[0] for r in conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' "
            "AND name NOT LIKE 'sqlite_%' ORDER BY name")]
        tables = []
        for name in names:
            columns = [SchemaColumn(name=r[1], type=r[2] or "TEXT")
                       for r in conn.execute(f'PRAGMA table_info("{name}")')]
            fks = [(r[3], r[2], r[4] or r[3])
                   for r in conn.execute(f'PRAGMA foreign_key_list("{name}")')]
            count = None
            if with_counts:
                count = conn.execute(f'SELECT COUNT(*) FROM "{name}"').fetchone()[0]
            tables.append(SchemaTable(name=name, columns=columns,
                                      foreign_keys=fks, row_count=count))
    finally:
        conn.close()
    return tables


def serialize_schema(tables: list[SchemaTable]) -> str:
    """One line per table, then one line per foreign key.

    table(col:type, col:type)
    table.col -> other.col
    """
    lines = []
    for table in tables:
        cols = ", ".join(f"{c.name}:{c.type}" for c in table.columns)
        lines.append(f"{table.name}({cols})")
    for table in tables:
        for col, other, other_col in table.foreign_keys:
            lines.append(f"{table.name}.{col} -> {other}.{other_col}")
    return "\n".join(lines)


EmbedFn = Callable[[list[str]], np.ndarray]
