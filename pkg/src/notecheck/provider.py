"""Uniform boundary to chat and embedding backends.

Every call goes through a persistent digest-keyed cache (append-only
JSONL), so reruns never re-spend backend calls and pipelines are
reproducible. A deterministic mock backend supports fully offline runs;
the live backend speaks the common REST chat/embeddings shape.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .errors import DataError, ProviderError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system: str
    user: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise DataError(f"temperature must be >= 0, got {self.temperature}")
        if not self.system.strip() or not self.user.strip():
            raise DataError("chat prompts must be nonempty")
        if self.max_tokens < 1:
            raise DataError("max_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    cached: bool
    latency_ms: float


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """dot(u,v) / (|u||v|), clamped into [-1, 1] against rounding."""
    if len(u.values) != len(v.values):
        raise DataError(
            f"embedding dimension mismatch: {len(u.values)} vs {len(v.values)}"
        )
    nu, nv = u.norm(), v.norm()
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine similarity undefined for zero vectors")
    dot = sum(a * b for a, b in zip(u.values, v.values))
    return max(-1.0, min(1.0, dot / (nu * nv)))


def chat_digest(request: ChatRequest) -> str:
    payload = {
        "kind": "chat",
        "model_id": request.model_id,
        "system": request.system,
        "user": request.user,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    return _digest(payload)


def embedding_digest(model_id: str, text: str) -> str:
    return _digest({"kind": "embedding", "model_id": model_id, "text": text})


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class TransientBackendError(ProviderError):
    """Retryable backend failure (network hiccup, 5xx, timeout)."""


class ChatBackend(Protocol):
    network: bool

    def complete(self, request: ChatRequest) -> str: ...


class EmbeddingBackend(Protocol):
    network: bool

    def embed_texts(self, texts: Sequence[str], model_id: str) -> list[list[float]]: ...


class MockChatBackend:
    """Scripted chat backend: first matching rule wins, else the default.

    Rules are (pattern, response) pairs; the pattern is matched as a
    regex against system and user text, and the response is either a
    string or a callable taking the ChatRequest.
    """

    network = False

    def __init__(
        self,
        rules: Iterable[tuple[str, str | Callable[[ChatRequest], str]]] = (),
        default: str | Callable[[ChatRequest], str] | None = None,
    ):
        self.rules = [(re.compile(p, re.IGNORECASE | re.DOTALL), r) for p, r in rules]
        self.default = default
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        haystack = request.system + "\n" + request.user
        for pattern, response in self.rules:
            if pattern.search(haystack):
                return response(request) if callable(response) else response
        if self.default is None:
            raise ProviderError(
                f"mock has no rule for request starting {request.user[:60]!r}"
            )
        return self.default(request) if callable(self.default) else self.default


class MockEmbeddingBackend:
    """Deterministic embeddings: seeded hash of the text expanded to a
    pseudo-random unit vector, with an override table for texts whose
    mutual similarity a test needs to pin exactly."""

    network = False

    def __init__(
        self,
        dim: int = 64,
        seed: int = 0,
        overrides: dict[str, Sequence[float]] | None = None,
    ):
        self.dim = dim
        self.seed = seed
        self.overrides = {k: tuple(float(x) for x in v) for k, v in (overrides or {}).items()}
        self.calls = 0

    def embed_texts(self, texts: Sequence[str], model_id: str) -> list[list[float]]:
        self.calls += 1
        return [self._vector(text, model_id) for text in texts]

    def _vector(self, text: str, model_id: str) -> list[float]:
        override = self.overrides.get(text)
        if override is not None:
            if len(override) != self.dim:
                raise DataError(
                    f"override vector for {text[:40]!r} has dim {len(override)}, expected {self.dim}"
                )
            return list(override)
        key = hashlib.sha256(f"{self.seed}|{model_id}|{text}".encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(key[:8], "big"))
        raw = [rng.gauss(0.0, 1.0) for _ in range(self.dim)]
        norm = math.sqrt(sum(v * v for v in raw))
        return [v / norm for v in raw]


class LiveBackend:
    """REST backend for OpenAI-style /chat/completions and /embeddings."""

    network = True

    def __init__(self, endpoint: str, credential_env: str = "NOTECHECK_API_KEY",
                 timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.credential_env = credential_env
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.credential_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, route: str, payload: dict) -> dict:
        import requests

        try:
            resp = requests.post(
                f"{self.endpoint}{route}", json=payload,
                headers=self._headers(), timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request to {route} failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransientBackendError(f"{route} returned {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderError(f"{route} returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderError(f"{route} returned non-JSON payload") from exc

    def complete(self, request: ChatRequest) -> str:
        data = self._post(
            "/chat/completions",
            {
                "model": request.model_id,
                "messages": [
                    {"role": "system", "content": request.system},
                    {"role": "user", "content": request.user},
                ],
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            },
        )
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat payload: {data!r:.200}") from exc

    def embed_texts(self, texts: Sequence[str], model_id: str) -> list[list[float]]:
        data = self._post("/embeddings", {"model": model_id, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embeddings payload: {data!r:.200}") from exc


class ResponseCache:
    """Append-only JSONL cache keyed by request digest.

    Each record stores the digest, a short human-oriented request
    summary, the stored response payload, and a timestamp. The cache is
    loaded fully at open; writes are serialized by a lock.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, object] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._entries[record["digest"]] = record["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str):
        with self._lock:
            return self._entries.get(digest)

    def put(self, digest: str, kind: str, summary: str, response) -> None:
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = response
            if self.path is not None:
                record = {
                    "digest": digest,
                    "kind": kind,
                    "summary": summary,
                    "response": response,
                    "ts": time.time(),
                }
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
                    handle.write("\n")


@dataclass
class ProviderStats:
    chat_calls: int = 0
    chat_cache_hits: int = 0
    embed_calls: int = 0
    embed_texts: int = 0
    embed_cache_hits: int = 0
    network_calls: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


class Provider:
    """Cached, retrying front of a chat backend and an embedding backend.

    Thread-safe: per-digest locks give the single-flight guarantee (at
    most one backend invocation per key under concurrent callers).
    """

    def __init__(
        self,
        chat_backend: ChatBackend,
        embedding_backend: EmbeddingBackend,
        cache: ResponseCache | None = None,
        batch_size: int = 64,
        retries: int = 3,
        retry_base_delay: float = 0.5,
        retry_max_delay: float = 8.0,
    ):
        if batch_size < 1:
            raise DataError("batch_size must be positive")
        self.chat_backend = chat_backend
        self.embedding_backend = embedding_backend
        self.cache = cache if cache is not None else ResponseCache(None)
        self.batch_size = batch_size
        self.retries = retries
        self.retry_base_delay = retry_base_delay
        self.retry_max_delay = retry_max_delay
        self.stats = ProviderStats()
        self._key_locks: dict[str, threading.Lock] = {}
        self._key_locks_guard = threading.Lock()

    def _lock_for(self, digest: str) -> threading.Lock:
        with self._key_locks_guard:
            lock = self._key_locks.get(digest)
            if lock is None:
                lock = self._key_locks[digest] = threading.Lock()
            return lock

    def _with_retries(self, call: Callable[[], object], label: str):
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                return call()
            except TransientBackendError as exc:
                last = exc
                if attempt < self.retries:
                    delay = min(
                        self.retry_max_delay,
                        self.retry_base_delay * (2 ** (attempt - 1)),
                    )
                    logger.warning(
                        "%s attempt %d/%d failed (%s); retrying in %.2fs",
                        label, attempt, self.retries, exc, delay,
                    )
                    if delay > 0:
                        time.sleep(delay)
        raise ProviderError(f"{label} failed after {self.retries} attempts: {last}")

    def chat(self, request: ChatRequest) -> ChatResponse:
        digest = chat_digest(request)
        cached = self.cache.get(digest)
        if cached is not None:
            self.stats.chat_cache_hits += 1
            return ChatResponse(text=str(cached), cached=True, latency_ms=0.0)
        with self._lock_for(digest):
            cached = self.cache.get(digest)
            if cached is not None:
                self.stats.chat_cache_hits += 1
                return ChatResponse(text=str(cached), cached=True, latency_ms=0.0)
            started = time.perf_counter()
            text = self._with_retries(
                lambda: self.chat_backend.complete(request), "chat"
            )
            latency = (time.perf_counter() - started) * 1000.0
            if not isinstance(text, str) or not text:
                raise ProviderError("backend returned an empty chat payload")
            self.stats.chat_calls += 1
            if self.chat_backend.network:
                self.stats.network_calls += 1
            self.cache.put(
                digest, "chat",
                f"{request.model_id}: {request.user[:80]}", text,
            )
            return ChatResponse(text=text, cached=False, latency_ms=latency)

    def embed(self, texts: Sequence[str], model_id: str) -> list[EmbeddingVector]:
        if not texts:
            raise DataError("embed() requires at least one text")
        for i, text in enumerate(texts):
            if not text or not text.strip():
                raise DataError(f"embed() got an empty string at position {i}")
        digests = [embedding_digest(model_id, t) for t in texts]
        out: list[EmbeddingVector | None] = [None] * len(texts)
        missing: dict[str, int] = {}
        for i, (text, digest) in enumerate(zip(texts, digests)):
            payload = self.cache.get(digest)
            if payload is not None:
                self.stats.embed_cache_hits += 1
                out[i] = EmbeddingVector(tuple(payload), model_id)
            elif digest not in missing:
                missing[digest] = i
        if missing:
            # Coarse lock: concurrent embedders of the same text re-check
            # the cache here, preserving at-most-once per key.
            with self._lock_for("embedding-batch"):
                todo = [
                    (digest, idx) for digest, idx in missing.items()
                    if self.cache.get(digest) is None
                ]
                for start in range(0, len(todo), self.batch_size):
                    chunk = todo[start : start + self.batch_size]
                    chunk_texts = [texts[idx] for _, idx in chunk]
                    vectors = self._with_retries(
                        lambda ct=chunk_texts: self.embedding_backend.embed_texts(
                            ct, model_id
                        ),
                        "embed",
                    )
                    if len(vectors) != len(chunk_texts):
                        raise ProviderError(
                            f"backend returned {len(vectors)} vectors for {len(chunk_texts)} texts"
                        )
                    self.stats.embed_calls += 1
                    self.stats.embed_texts += len(chunk_texts)
                    if self.embedding_backend.network:
                        self.stats.network_calls += 1
                    for (digest, idx), values in zip(chunk, vectors):
                        if not any(v != 0.0 for v in values):
                            raise ProviderError(
                                f"backend returned a zero embedding for {texts[idx][:40]!r}"
                            )
                        self.cache.put(
                            digest, "embedding",
                            f"{model_id}: {texts[idx][:80]}", list(values),
                        )
        for i, digest in enumerate(digests):
            if out[i] is None:
                payload = self.cache.get(digest)
                if payload is None:
                    raise ProviderError("embedding missing after backend call")
                out[i] = EmbeddingVector(tuple(payload), model_id)
        return out  # type: ignore[return-value]
