"""LLM completion gateway: providers, retries, token usage, and a scripted mock."""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)


class UsageSource(enum.Enum):
    PROVIDER_REPORTED = "ProviderReported"
    ESTIMATED = "Estimated"


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int
    source: UsageSource

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "Usage") -> "Usage":
        source = (
            UsageSource.PROVIDER_REPORTED
            if self.source is other.source is UsageSource.PROVIDER_REPORTED
            else UsageSource.ESTIMATED
        )
        return Usage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens, source)

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens, "source": self.source.value}


@dataclass(frozen=True)
class ModelSpec:
    provider_id: str
    model_name: str
    context_window: int
    pricing_key: str

    def __post_init__(self):
        if self.context_window <= 0:
            raise ValueError("context_window must be positive")


BUILTIN_MODELS = {
    "gemini-3": ModelSpec("gemini", "gemini-3-pro-preview", 1_000_000, "gemini-3"),
    "gpt-5.1": ModelSpec("openai", "gpt-5.1-2025-11-13", 400_000, "gpt-5.1"),
    "mock": ModelSpec("mock", "mock", 1_000_000, "gpt-5.1"),
}


@dataclass(frozen=True)
class CompletionRequest:
    system_text: str
    user_text: str
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for part in (self.system_text, self.user_text, repr(self.temperature), str(self.max_output_tokens)):
            h.update(part.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: Usage
    latency: float = 0.0
    attempts: int = 1


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 1.0
    backoff_multiplier: float = 2.0
    retry_on: tuple[type[Exception], ...] = ()

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_base < 0 or self.backoff_multiplier < 1:
            raise ValueError("backoff must be non-negative and non-shrinking")

    def retryable(self, exc: Exception) -> bool:
        classes = self.retry_on or (Timeout, RateLimited, ProviderUnavailable)
        return isinstance(exc, classes)

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return self.backoff_base * self.backoff_multiplier ** (attempt - 1)


class ProviderError(Exception):
    """Base for every failure raised by the gateway."""


class Timeout(ProviderError):
    pass


class RateLimited(ProviderError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class AuthFailure(ProviderError):
    pass


class ContextOverflow(ProviderError):
    pass


class ScriptExhausted(ProviderError):
    pass


class RetriesExhausted(ProviderError):
    def __init__(self, last_error: Exception, attempts: int):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(f"gave up after {attempts} attempts: {type(last_error).__name__}: {last_error}")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class RawCompletion:
    """What a provider hands back before the gateway attaches usage provenance."""

    text: str
    input_tokens: int | None = None
    output_tokens: int | None = None


class Provider(Protocol):
    provider_id: str

    def send(self, spec: ModelSpec, req: CompletionRequest) -> RawCompletion: ...

    def healthy(self) -> bool: ...


# -- HTTP providers -----------------------------------------------------------

API_KEY_ENV = {"openai": "OPENAI_API_KEY", "gemini": "GEMINI_API_KEY"}


class _HTTPProvider:
    provider_id = ""
    base_url = ""

    def __init__(self, api_key: str | None = None, timeout: float = 120.0, client: httpx.Client | None = None):
        self._api_key = api_key
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    @property
    def api_key(self) -> str:
        key = self._api_key or os.environ.get(API_KEY_ENV[self.provider_id])
        if not key:
            raise AuthFailure(f"{API_KEY_ENV[self.provider_id]} is not set")
        return key

    def healthy(self) -> bool:
        return bool(self._api_key or os.environ.get(API_KEY_ENV[self.provider_id]))

    def _post(self, url: str, payload: dict, headers: dict) -> dict:
        try:
            resp = self._client.post(url, json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise Timeout(str(exc)) from exc
        except httpx.TransportError as exc:
            raise ProviderUnavailable(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimited("HTTP 429")
        if resp.status_code == 408:
            raise Timeout("HTTP 408")
        if resp.status_code >= 500:
            raise ProviderUnavailable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text
            if "context" in body.lower() and ("length" in body.lower() or "window" in body.lower()):
                raise ContextOverflow(body[:500])
            raise ProviderError(f"HTTP {resp.status_code}: {body[:500]}")
        return resp.json()


class OpenAIProvider(_HTTPProvider):
    provider_id = "openai"
    base_url = "https://api.openai.com"

    def send(self, spec: ModelSpec, req: CompletionRequest) -> RawCompletion:
        payload = {
            "model": spec.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_completion_tokens": req.max_output_tokens,
        }
        data = self._post("/v1/chat/completions", payload, {"Authorization": f"Bearer {self.api_key}"})
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {exc}") from exc
        usage = data.get("usage") or {}
        return RawCompletion(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))


class GeminiProvider(_HTTPProvider):
    provider_id = "gemini"
    base_url = "https://generativelanguage.googleapis.com"

    def send(self, spec: ModelSpec, req: CompletionRequest) -> RawCompletion:
        payload = {
            "systemInstruction": {"parts": [{"text": req.system_text}]},
            "contents": [{"role": "user", "parts": [{"text": req.user_text}]}],
            "generationConfig": {"temperature": req.temperature, "maxOutputTokens": req.max_output_tokens},
        }
        data = self._post(
            f"/v1beta/models/{spec.model_name}:generateContent", payload, {"x-goog-api-key": self.api_key}
        )
        try:
            parts = data["candidates"][0]["content"]["parts"]
            text = "".join(p.get("text", "") for p in parts)
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response shape: {exc}") from exc
        usage = data.get("usageMetadata") or {}
        return RawCompletion(text, usage.get("promptTokenCount"), usage.get("candidatesTokenCount"))


# -- Mock provider ------------------------------------------------------------

_ERRORS = {
    cls.__name__: cls
    for cls in (Timeout, RateLimited, ProviderUnavailable, AuthFailure, ContextOverflow, ProviderError)
}


@dataclass(frozen=True)
class ScriptedResponse:
    text: str = ""
    input_tokens: int | None = None
    output_tokens: int | None = None
    error: str | None = None
    # Keyed-mode matchers; an entry with none of them matches nothing.
    fingerprint: str | None = None
    contains: str | None = None
    system_contains: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScriptedResponse":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scripted-response keys: {sorted(unknown)}")
        if d.get("error") is not None and d["error"] not in _ERRORS:
            raise ValueError(f"unknown scripted error {d['error']!r}")
        return cls(**d)

    def matches(self, req: CompletionRequest) -> bool:
        if self.fingerprint is None and self.contains is None and self.system_contains is None:
            return False
        if self.fingerprint is not None and self.fingerprint != req.fingerprint():
            return False
        if self.contains is not None and self.contains not in req.user_text:
            return False
        if self.system_contains is not None and self.system_contains not in req.system_text:
            return False
        return True

    def play(self) -> RawCompletion:
        if self.error is not None:
            raise _ERRORS[self.error](f"scripted {self.error}")
        return RawCompletion(self.text, self.input_tokens, self.output_tokens)


def _as_scripted(item: ScriptedResponse | Mapping | str) -> ScriptedResponse:
    if isinstance(item, ScriptedResponse):
        return item
    if isinstance(item, str):
        return ScriptedResponse(text=item)
    return ScriptedResponse.from_dict(item)


class MockProvider:
    """Deterministic offline provider.

    In sequential mode responses are replayed in order; in keyed mode
    each request is answered by the first entry whose matchers accept it,
    so the same request always gets the same answer.
    """

    provider_id = "mock"

    def __init__(
        self,
        script: Sequence[ScriptedResponse | Mapping | str] = (),
        keyed: Sequence[ScriptedResponse | Mapping] | Mapping[str, ScriptedResponse | Mapping | str] = (),
    ):
        self._sequence = [_as_scripted(s) for s in script]
        if isinstance(keyed, Mapping):
            entries = []
            for fp, item in keyed.items():
                entry = _as_scripted(item)
                entries.append(ScriptedResponse(**{**entry.__dict__, "fingerprint": fp}))
            self._keyed = entries
        else:
            self._keyed = [_as_scripted(k) for k in keyed]
        if not self._sequence and not self._keyed:
            raise ValueError("mock script must not be empty")
        self._lock = threading.Lock()
        self._pos = 0
        self.requests: list[CompletionRequest] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, list):
            return cls(script=data)
        return cls(script=data.get("responses", ()), keyed=data.get("keyed", ()))

    def healthy(self) -> bool:
        return True

    def send(self, spec: ModelSpec, req: CompletionRequest) -> RawCompletion:
        with self._lock:
            self.requests.append(req)
            for entry in self._keyed:
                if entry.matches(req):
                    break
            else:
                if self._pos >= len(self._sequence):
                    raise ScriptExhausted(f"mock script exhausted after {self._pos} responses")
                entry = self._sequence[self._pos]
                self._pos += 1
        return entry.play()


def mock_provider(script: Sequence | Mapping) -> MockProvider:
    if isinstance(script, Mapping):
        return MockProvider(keyed=script)
    return MockProvider(script=script)


# -- Gateway ------------------------------------------------------------------


class AuditLog:
    """Append-only JSON-lines transcript of requests and responses."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


class Gateway:
    """Routes requests to providers with pre-flight checks, retries and a concurrency cap."""

    def __init__(
        self,
        providers: Mapping[str, Provider] | Iterable[Provider],
        policy: RetryPolicy | None = None,
        max_in_flight: int = 4,
        audit: AuditLog | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not isinstance(providers, Mapping):
            providers = {p.provider_id: p for p in providers}
        self.providers = dict(providers)
        self.policy = policy or RetryPolicy()
        self.max_in_flight = max_in_flight
        self.audit = audit
        self._sleep = sleep
        self._slots = {pid: threading.BoundedSemaphore(max_in_flight) for pid in self.providers}

    def provider_for(self, spec: ModelSpec) -> Provider:
        try:
            return self.providers[spec.provider_id]
        except KeyError:
            raise ProviderError(f"no provider configured for {spec.provider_id!r}") from None

    def healthy(self, spec: ModelSpec) -> bool:
        try:
            return self.provider_for(spec).healthy()
        except ProviderError:
            return False

    def complete(
        self, spec: ModelSpec, req: CompletionRequest, policy: RetryPolicy | None = None
    ) -> CompletionResponse:
        policy = policy or self.policy
        prompt_tokens = estimate_tokens(req.system_text) + estimate_tokens(req.user_text)
        if prompt_tokens > spec.context_window:
            raise ContextOverflow(
                f"prompt needs ~{prompt_tokens} tokens, {spec.model_name} window is {spec.context_window}"
            )
        provider = self.provider_for(spec)
        attempt = 0
        start = time.perf_counter()
        while True:
            attempt += 1
            try:
                with self._slots[spec.provider_id]:
                    raw = provider.send(spec, req)
                break
            except ProviderError as exc:
                if not policy.retryable(exc):
                    raise
                if attempt >= policy.max_attempts:
                    raise RetriesExhausted(exc, attempt) from exc
                delay = policy.delay(attempt)
                logger.info("retrying %s after %s (attempt %d, sleeping %.2fs)", spec.model_name, exc, attempt, delay)
                self._sleep(delay)
        latency = time.perf_counter() - start
        if raw.input_tokens is not None and raw.output_tokens is not None:
            usage = Usage(raw.input_tokens, raw.output_tokens, UsageSource.PROVIDER_REPORTED)
        else:
            usage = Usage(prompt_tokens, estimate_tokens(raw.text), UsageSource.ESTIMATED)
        if self.audit is not None:
            self.audit.write(
                {
                    "fingerprint": req.fingerprint(),
                    "model": spec.model_name,
                    "provider": spec.provider_id,
                    "system_text": req.system_text,
                    "user_text": req.user_text,
                    "response": raw.text,
                    "usage": usage.to_dict(),
                    "attempts": attempt,
                }
            )
        return CompletionResponse(raw.text, usage, latency, attempt)


def default_providers(mock: MockProvider | None = None) -> dict[str, Provider]:
    providers: dict[str, Provider] = {"openai": OpenAIProvider(), "gemini": GeminiProvider()}
    if mock is not None:
        providers["mock"] = mock
    return providers
