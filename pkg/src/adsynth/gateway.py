"""Uniform chat-completion client with retries, an in-flight cap, full
request/response transcripts, and a deterministic record/replay mode.

The transcript store is a directory holding one JSON file per request hash,
so recorded fixtures diff cleanly under version control and a pipeline run in
replay mode is a pure function of its inputs and the store.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Union

log = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


class GatewayError(Exception):
    pass


class ConfigurationError(GatewayError):
    """The gateway cannot operate as configured (bad mode, missing store/provider)."""


class ReplayMiss(GatewayError):
    """Replay mode has no transcript for the request hash."""


class ProviderError(GatewayError):
    """Non-transient provider failure; never retried."""


class TransientProviderError(GatewayError):
    """Retryable provider failure (rate limit, 5xx, connection reset)."""


class Timeout(GatewayError):
    """The final attempt timed out."""


class RetriesExhausted(GatewayError):
    """Transient failures persisted beyond the retry limit."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    model_id: str
    max_output_tokens: int
    temperature: float = 0.0
    # Used for logging and transcript bookkeeping only; excluded from the
    # replay key so re-tagged requests still hit the same transcript.
    request_tag: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt is empty")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    attempts: int
    latency: float
    truncated: bool = False


@dataclass(frozen=True)
class ProviderReply:
    text: str
    truncated: bool = False


ProviderResult = Union[str, ProviderReply]


class Provider(Protocol):
    def __call__(self, request: CompletionRequest) -> ProviderResult: ...


@dataclass(frozen=True)
class GatewayConfig:
    mode: str = "replay"
    transcript_dir: Path | str | None = None
    retry_limit: int = 2
    backoff: tuple[float, ...] = (0.5, 1.0)
    max_in_flight: int = 4
    request_timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode {self.mode!r} not one of {MODES}")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be positive")
        if self.retry_limit < 0:
            raise ConfigurationError("retry_limit must be >= 0")


def transcript_key(request: CompletionRequest) -> str:
    """Stable content hash over (prompt, model_id, temperature,
    max_output_tokens); the request tag is deliberately excluded."""
    payload = json.dumps(
        {
            "prompt": request.prompt,
            "model_id": request.model_id,
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class TranscriptStore:
    """Directory of one JSON file per request hash; writes are serialized."""

    def __init__(self, directory: Path | str):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, key: str, request: CompletionRequest, text: str, truncated: bool) -> None:
        entry = {
            "key": key,
            "request": {
                "prompt": request.prompt,
                "model_id": request.model_id,
                "temperature": request.temperature,
                "max_output_tokens": request.max_output_tokens,
                "request_tag": request.request_tag,
            },
            "response": {"text": text, "truncated": truncated},
        }
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            with open(self._path(key), "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True, indent=2)
                fh.write("\n")

    def keys(self) -> list[str]:
        if not self.directory.exists():
            return []
        return sorted(p.stem for p in self.directory.glob("*.json"))


class Gateway:
    """Shareable completion client enforcing the configured in-flight bound.

    ``live`` calls the provider; ``record`` additionally persists every
    response to the transcript store; ``replay`` answers from the store only
    and never touches the network.
    """

    def __init__(self, config: GatewayConfig, provider: Provider | None = None):
        self.config = config
        self._provider = provider
        self._inflight = threading.BoundedSemaphore(config.max_in_flight)
        self._sleep: Callable[[float], None] = time.sleep
        if config.mode in ("record", "replay"):
            if config.transcript_dir is None:
                raise ConfigurationError(f"{config.mode} mode requires a transcript_dir")
            self.store: TranscriptStore | None = TranscriptStore(config.transcript_dir)
        else:
            self.store = None
        if config.mode in ("live", "record") and provider is None:
            raise ConfigurationError(f"{config.mode} mode requires a provider")
        self.request_count = 0
        self._count_lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._count_lock:
            self.request_count += 1
        if self.config.mode == "replay":
            response = self._replay(request)
        else:
            response = self._call_provider(request)
        log.debug(
            "completed %s key=%s attempts=%d latency=%.3fs out=%d chars",
            request.request_tag or "(untagged)",
            transcript_key(request)[:12],
            response.attempts,
            response.latency,
            len(response.text),
        )
        return response

    def _replay(self, request: CompletionRequest) -> CompletionResponse:
        key = transcript_key(request)
        entry = self.store.get(key)
        if entry is None:
            raise ReplayMiss(f"no transcript for {key} (tag={request.request_tag!r})")
        response = entry["response"]
        return CompletionResponse(
            text=response["text"],
            attempts=1,
            latency=0.0,
            truncated=bool(response.get("truncated", False)),
        )

    def _call_provider(self, request: CompletionRequest) -> CompletionResponse:
        started = time.monotonic()
        attempts = 0
        last_error: GatewayError | None = None
        while attempts <= self.config.retry_limit:
            attempts += 1
            try:
                with self._inflight:
                    reply = self._provider(request)
            except (TransientProviderError, Timeout) as exc:
                last_error = exc
                log.warning("attempt %d for %r failed: %s", attempts, request.request_tag, exc)
                if attempts <= self.config.retry_limit:
                    delay = 0.0
                    if self.config.backoff:
                        delay = self.config.backoff[min(attempts - 1, len(self.config.backoff) - 1)]
                    if delay > 0:
                        self._sleep(delay)
                continue
            if isinstance(reply, str):
                reply = ProviderReply(text=reply)
            if self.config.mode == "record":
                self.store.put(transcript_key(request), request, reply.text, reply.truncated)
            return CompletionResponse(
                text=reply.text,
                attempts=attempts,
                latency=time.monotonic() - started,
                truncated=reply.truncated,
            )
        if isinstance(last_error, Timeout):
            raise Timeout(f"timed out after {attempts} attempts (tag={request.request_tag!r})") from last_error
        raise RetriesExhausted(
            f"gave up after {attempts} attempts (tag={request.request_tag!r})"
        ) from last_error


class HttpChatProvider:
    """Minimal chat-completions HTTP provider.

    Sends a single-user-message chat request to an OpenAI-compatible endpoint.
    Endpoint and credentials come from the environment so no secret ever
    lands in a config file.
    """

    ENDPOINT_VAR = "ADSYNTH_PROVIDER_URL"
    API_KEY_VAR = "ADSYNTH_API_KEY"

    def __init__(self, endpoint: str, api_key: str, timeout: float = 60.0, session=None):
        import requests

        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self._session = session or requests.Session()

    @classmethod
    def from_env(cls, timeout: float = 60.0) -> "HttpChatProvider":
        import os

        endpoint = os.environ.get(cls.ENDPOINT_VAR)
        api_key = os.environ.get(cls.API_KEY_VAR)
        if not endpoint or not api_key:
            raise ConfigurationError(
                f"live/record mode needs {cls.ENDPOINT_VAR} and {cls.API_KEY_VAR} in the environment"
            )
        return cls(endpoint, api_key, timeout=timeout)

    def __call__(self, request: CompletionRequest) -> ProviderReply:
        import requests

        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            http = self._session.post(
                self.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise Timeout(str(exc)) from exc
        except requests.ConnectionError as exc:
            raise TransientProviderError(str(exc)) from exc
        if http.status_code == 429 or http.status_code >= 500:
            raise TransientProviderError(f"HTTP {http.status_code}: {http.text[:200]}")
        if http.status_code != 200:
            raise ProviderError(f"HTTP {http.status_code}: {http.text[:200]}")
        try:
            body = http.json()
            choice = body["choices"][0]
            return ProviderReply(
                text=choice["message"]["content"],
                truncated=choice.get("finish_reason") == "length",
            )
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
