"""Caption providers, the persistent prompt cache, and the bounded fetch pool."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import httpx

from .io import atomic_write_text
from .screens import ScreenPrompt

log = logging.getLogger(__name__)

API_KEY_ENV = "CAPTION_API_KEY"
_QUOTES = {'"': '"', "'": "'", "“": "”", "‘": "’"}
_RETRY_STATUS = {408, 409, 429, 500, 502, 503, 504}


class ProviderError(RuntimeError):
    pass


class TransientProviderError(ProviderError):
    """A failure worth retrying (rate limit, server error, dropped connection)."""


class FixtureMiss(ProviderError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"prompt_key {key} not found in caption fixture")


@dataclass
class ProviderConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model_name: str = "gpt-3.5-turbo"
    max_concurrent: int = 8
    retry_limit: int = 5
    cost_per_1k_tokens: Decimal = Decimal("0.002")
    backoff_base: float = 1.0
    timeout: float = 60.0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        self.cost_per_1k_tokens = Decimal(str(self.cost_per_1k_tokens))


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: int | None = None


class CaptionProvider(Protocol):
    def complete(self, prompt: ScreenPrompt) -> Completion: ...


class FixtureProvider:
    """Offline provider answering from a ``{prompt_key: caption}`` mapping."""

    def __init__(self, captions: Mapping[str, str]):
        self.captions = dict(captions)

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"caption fixture {path} must be a JSON object")
        return cls(data)

    def complete(self, prompt: ScreenPrompt) -> Completion:
        try:
            return Completion(self.captions[prompt.prompt_key])
        except KeyError:
            raise FixtureMiss(prompt.prompt_key) from None


class HttpProvider:
    """Chat-completions style HTTP provider. One call per ``complete``; no retries here."""

    def __init__(self, config: ProviderConfig, api_key: str | None = None, client: httpx.Client | None = None):
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.client = client or httpx.Client(timeout=config.timeout)

    def complete(self, prompt: ScreenPrompt) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt.prompt_text}],
            "temperature": self.config.temperature,
        }
        try:
            resp = self.client.post(self.config.endpoint, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        if resp.status_code in _RETRY_STATUS:
            raise TransientProviderError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        usage = data.get("usage") or {}
        tokens = usage.get("total_tokens")
        return Completion(text, int(tokens) if tokens is not None else None)


def clean_caption(text: str) -> str:
    text = text.strip()
    while len(text) >= 2 and text[0] in _QUOTES and text[-1] == _QUOTES[text[0]]:
        inner = text[1:-1]
        # 'a' and 'b' starts and ends with quotes but is not one quoted span
        if text[0] in inner or _QUOTES[text[0]] in inner:
            break
        text = inner.strip()
    return text


class CaptionCache:
    """``{prompt_key: caption}`` store, optionally persisted to a JSON file."""

    def __init__(self, path: str | Path | None = None, flush_every: int = 50):
        self.path = Path(path) if path is not None else None
        self.flush_every = flush_every
        self._data: dict[str, str] = {}
        self._dirty = 0
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._data = json.loads(self.path.read_text(encoding="utf-8"))

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._data.get(key)

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def commit(self, key: str, caption: str) -> None:
        with self._lock:
            self._data[key] = caption
            self._dirty += 1
            if self.path is not None and self._dirty >= self.flush_every:
                self._flush_locked()

    def flush(self) -> None:
        with self._lock:
            if self.path is not None:
                self._flush_locked()

    def _flush_locked(self) -> None:
        atomic_write_text(self.path, json.dumps(self._data, indent=1, sort_keys=True, ensure_ascii=False) + "\n")
        self._dirty = 0


@dataclass
class FetchResult:
    captions: dict[str, str] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    attempts: dict[str, int] = field(default_factory=dict)
    calls: int = 0
    cache_hits: int = 0
    tokens: int = 0
    cost: Decimal = Decimal(0)


class CaptionFetcher:
    """Resolve prompts to captions with caching, retries and bounded concurrency.

    Concurrent requests for the same prompt key share one in-flight call, so
    the provider is asked at most once per key for the fetcher's lifetime.
    """

    def __init__(
        self,
        provider: CaptionProvider,
        config: ProviderConfig | None = None,
        cache: CaptionCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.config = config or ProviderConfig()
        self.cache = cache if cache is not None else CaptionCache()
        self.sleep = sleep
        self._lock = threading.Lock()
        self._inflight: dict[str, Future] = {}
        self._stats = FetchResult()

    def _call(self, prompt: ScreenPrompt) -> str:
        cfg = self.config
        for attempt in range(1, cfg.retry_limit + 1):
            with self._lock:
                self._stats.calls += 1
                self._stats.attempts[prompt.prompt_key] = attempt
            try:
                completion = self.provider.complete(prompt)
            except TransientProviderError as exc:
                log.info("prompt %s attempt %d failed: %s", prompt.prompt_key, attempt, exc)
                if attempt == cfg.retry_limit:
                    raise ProviderError(f"gave up after {attempt} attempts: {exc}") from exc
                self.sleep(cfg.backoff_base * 2 ** (attempt - 1))
                continue
            caption = clean_caption(completion.text)
            if not caption:
                raise ProviderError("provider returned an empty caption")
            tokens = completion.tokens
            if tokens is None:
                tokens = len(prompt.prompt_text.split()) + len(completion.text.split())
            with self._lock:
                self._stats.tokens += tokens
                self._stats.cost += Decimal(tokens) / 1000 * cfg.cost_per_1k_tokens
            self.cache.commit(prompt.prompt_key, caption)
            return caption
        raise AssertionError("unreachable")

    def _submit(self, pool: ThreadPoolExecutor, prompt: ScreenPrompt, use_cache: bool) -> Future:
        key = prompt.prompt_key
        with self._lock:
            fut = self._inflight.get(key)
            if fut is not None:
                return fut
            cached = self.cache.get(key) if use_cache else None
            fut = Future()
            if cached is not None:
                self._stats.cache_hits += 1
                fut.set_result(cached)
            else:
                fut = pool.submit(self._call, prompt)
            self._inflight[key] = fut
            return fut

    def fetch(self, prompts: Iterable[ScreenPrompt], use_cache: bool = True) -> FetchResult:
        """Resolve every prompt; failures are recorded, never raised.

        ``use_cache=False`` re-queries keys already present in the cache
        (caption augmentation); keys resolved earlier by this fetcher are
        still reused.
        """
        prompts = list(prompts)
        with ThreadPoolExecutor(max_workers=self.config.max_concurrent) as pool:
            futures = [(p.prompt_key, self._submit(pool, p, use_cache)) for p in prompts]
            result = FetchResult()
            for key, fut in futures:
                try:
                    result.captions[key] = fut.result()
                except ProviderError as exc:
                    result.failures[key] = str(exc)
        self.cache.flush()
        with self._lock:
            result.calls = self._stats.calls
            result.cache_hits = self._stats.cache_hits
            result.tokens = self._stats.tokens
            result.cost = self._stats.cost
            result.attempts = dict(self._stats.attempts)
        return result


def fetch_captions(
    prompts: Iterable[ScreenPrompt],
    provider: CaptionProvider,
    config: ProviderConfig | None = None,
    cache: CaptionCache | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> FetchResult:
    return CaptionFetcher(provider, config, cache, sleep).fetch(prompts)
