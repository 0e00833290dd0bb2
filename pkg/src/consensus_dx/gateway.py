"""Single entry point for model calls.

A :class:`Gateway` wraps exactly one provider (live HTTP, replay of recorded
responses, or a synthetic voter model) plus an optional content-addressed
response cache, retry with exponential backoff, and a token-bucket rate
limiter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol

from ._text import truncate_at_sentence

logger = logging.getLogger(__name__)

API_KEY_ENV = "CONSENSUS_DX_API_KEY"


class GatewayError(RuntimeError):
    pass


class TransientError(GatewayError):
    """Upstream failure worth retrying (timeouts, 429, 5xx)."""


class UpstreamExhaustedError(GatewayError):
    pass


class ReplayMissError(GatewayError):
    def __init__(self, digest: str):
        super().__init__(f"no recorded response for request digest {digest}")
        self.digest = digest


class AuthenticationError(GatewayError):
    pass


class ProviderKind(str, Enum):
    HTTP = "http"
    REPLAY = "replay"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class CompletionRequest:
    model_name: str
    prompt: str
    temperature: float
    top_p: float
    max_output_tokens: int = 64
    # Annotations for offline providers (turn, item ...). Never sent upstream
    # and not part of the cache key.
    metadata: Mapping = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not 0 <= self.temperature <= 1:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p out of range: {self.top_p}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    @classmethod
    def from_dict(cls, data: Mapping) -> "CompletionRequest":
        return cls(
            model_name=str(data["model_name"]),
            prompt=str(data["prompt"]),
            temperature=float(data["temperature"]),
            top_p=float(data["top_p"]),
            max_output_tokens=int(data["max_output_tokens"]),
        )


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    provider: ProviderKind
    cached: bool
    latency_ms: float


def _number(x: float) -> str:
    # 0.5, 0.50 and 5e-1 all canonicalize to "0.5"
    return repr(float(x))


def canonical_request(request: CompletionRequest) -> dict:
    return {
        "max_output_tokens": int(request.max_output_tokens),
        "model_name": request.model_name,
        "prompt": request.prompt,
        "temperature": _number(request.temperature),
        "top_p": _number(request.top_p),
    }


def cache_key(request: CompletionRequest) -> str:
    blob = json.dumps(canonical_request(request), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _atomic_write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False, indent=1, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class ResponseCache:
    """One JSON file per request digest under ``directory``."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> str | None:
        path = self.path_for(digest)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return data["response_text"]

    def put(self, request: CompletionRequest, text: str, digest: str | None = None) -> None:
        digest = digest or cache_key(request)
        _atomic_write_json(
            self.path_for(digest),
            {
                "request": canonical_request(request),
                "response_text": text,
                "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            },
        )

    def __len__(self) -> int:
        return sum(1 for _ in self.directory.glob("*.json")) if self.directory.exists() else 0


class Provider(Protocol):
    kind: ProviderKind

    def complete(self, request: CompletionRequest) -> str: ...


class HttpProvider:
    """Chat-completions endpoint client (``POST {base_url}/chat/completions``)."""

    kind = ProviderKind.HTTP

    def __init__(self, base_url: str, api_key: str | None = None, timeout: float = 60.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._httpx = httpx
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: CompletionRequest) -> str:
        if not self.api_key:
            raise AuthenticationError(f"missing API key; set {API_KEY_ENV}")
        body = {
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except self._httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"upstream rejected credentials ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"upstream status {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"upstream status {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected response body: {exc}") from exc


class ReplayProvider:
    """Serves recorded responses from a cache-format directory; never goes upstream."""

    kind = ProviderKind.REPLAY

    def __init__(self, directory: str | Path):
        self._store = ResponseCache(directory)

    def complete(self, request: CompletionRequest) -> str:
        digest = cache_key(request)
        text = self._store.get(digest)
        if text is None:
            raise ReplayMissError(digest)
        return text


class ConfuserMode(str, Enum):
    BINARY = "binary"
    DISTINCT = "distinct"


@dataclass(frozen=True)
class SyntheticVoterModel:
    per_turn_accuracy: Mapping[int, float]
    confuser_mode: ConfuserMode = ConfuserMode.BINARY
    seed: int = 0

    def __post_init__(self):
        for turn, p in self.per_turn_accuracy.items():
            if not 0 <= p <= 1:
                raise ValueError(f"accuracy for turn {turn} outside [0, 1]: {p}")

    @classmethod
    def uniform(cls, turns, p: float, **kwargs) -> "SyntheticVoterModel":
        return cls({t: p for t in turns}, **kwargs)


def _unit_draw(seed: int, turn_id: int, item_key) -> float:
    if isinstance(item_key, (tuple, list)):
        item_key = list(item_key)
    blob = json.dumps([seed, turn_id, item_key], ensure_ascii=False)
    digest = hashlib.sha256(blob.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def synth_answer(model: SyntheticVoterModel, turn_id: int, item_key, truth: str) -> str:
    """Truth with probability ``per_turn_accuracy[turn_id]``, else the confuser.

    The draw is a hash of ``(seed, turn_id, item_key)``, so answers are
    reproducible and independent across turns and items.
    """
    if turn_id not in model.per_turn_accuracy:
        raise KeyError(f"synthetic model has no accuracy for turn {turn_id}")
    if _unit_draw(model.seed, turn_id, item_key) < model.per_turn_accuracy[turn_id]:
        return truth
    if ConfuserMode(model.confuser_mode) is ConfuserMode.BINARY:
        return "WRONG"
    return f"WRONG-{turn_id}"


class SyntheticProvider:
    """Offline provider driven by :class:`SyntheticVoterModel`.

    Reads the request metadata: ``task="predict"`` requests need ``turn_id``,
    ``note_id`` and ``medication``; ``task="summarize"`` requests need
    ``note_id`` and ``target_length`` and get an extractive prefix of the note.
    """

    kind = ProviderKind.SYNTHETIC

    def __init__(
        self,
        model: SyntheticVoterModel,
        truths: Mapping[tuple[str, str], str],
        notes: Mapping[str, str] | None = None,
    ):
        self.model = model
        self.truths = dict(truths)
        self.notes = dict(notes or {})

    def complete(self, request: CompletionRequest) -> str:
        meta = request.metadata
        task = meta.get("task")
        if task == "predict":
            key = (meta["note_id"], meta["medication"])
            if key not in self.truths:
                raise GatewayError(f"synthetic provider has no truth for {key!r}")
            return synth_answer(self.model, int(meta["turn_id"]), key, self.truths[key])
        if task == "summarize":
            text = self.notes[meta["note_id"]]
            return truncate_at_sentence(text, int(meta["target_length"]))
        raise GatewayError("synthetic provider needs request metadata with a known task")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 0.5  # seconds
    max_delay: float = 30.0
    jitter: bool = True

    def delay(self, attempt: int, rng: random.Random | None = None) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        d = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        if self.jitter:
            d *= 0.5 + (rng or random).random() / 2
        return d


class RateLimiter:
    """Token bucket; ``acquire`` blocks until a token is available."""

    def __init__(
        self,
        per_minute: float = 60.0,
        burst: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if per_minute <= 0:
            raise ValueError("rate must be positive")
        self.rate = per_minute / 60.0
        self.capacity = float(burst)
        self._tokens = float(burst)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                self._sleep((1 - self._tokens) / self.rate)


class Gateway:
    def __init__(
        self,
        provider: Provider,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
        limiter: RateLimiter | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.limiter = limiter
        self._sleep = sleep
        self._lock = threading.Lock()
        self.upstream_calls = 0
        self.cache_hits = 0

    @property
    def kind(self) -> ProviderKind:
        return self.provider.kind

    def _count(self, attr: str) -> None:
        with self._lock:
            setattr(self, attr, getattr(self, attr) + 1)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        start = time.perf_counter()
        digest = cache_key(request)
        if self.cache is not None:
            text = self.cache.get(digest)
            if text is not None:
                self._count("cache_hits")
                return CompletionResponse(text, self.kind, True, (time.perf_counter() - start) * 1000)

        text = self._call_with_retry(request)
        if self.cache is not None:
            self.cache.put(request, text, digest)
        return CompletionResponse(text, self.kind, False, (time.perf_counter() - start) * 1000)

    def _call_with_retry(self, request: CompletionRequest) -> str:
        attempts = self.retry.max_attempts
        for attempt in range(1, attempts + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            self._count("upstream_calls")
            try:
                return self.provider.complete(request)
            except TransientError as exc:
                if attempt == attempts:
                    raise UpstreamExhaustedError(
                        f"giving up after {attempts} attempts: {exc}"
                    ) from exc
                delay = self.retry.delay(attempt)
                logger.warning("transient upstream error (%s); retry %d in %.2fs", exc, attempt, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")
