"""Chat-completion gateway with deterministic record/replay.

Requests use the common wire shape (messages array in, choices out) so any
compatible endpoint works. Every exchange can be persisted as a transcript
file named by a content hash of the request, which makes whole experiments
reproducible offline: ``replay_strict`` serves exclusively from that cache
and fails loudly on a miss.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import requests

from .promptkit import PromptBundle

logger = logging.getLogger(__name__)

API_KEY_VAR = "LLM_API_KEY"
ENDPOINT_VAR = "LLM_ENDPOINT_URL"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"

MODES = ("live", "record", "replay", "replay_strict")
FINISH_REASONS = ("stop", "length", "other")


class GatewayError(RuntimeError):
    pass


class CredentialsError(GatewayError):
    pass


class CacheMissError(GatewayError):
    pass


class TransientError(GatewayError):
    """Retryable transport failure (network hiccup, rate limit, 5xx)."""


@dataclass(frozen=True)
class ModelParams:
    model_name: str
    max_output_tokens: int = 4096
    temperature: float = 0.0
    endpoint_url: str | None = None
    request_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Transcript:
    cache_key: str
    request: list[dict[str, str]]
    response_text: str
    finish_reason: str
    timestamp: str

    @property
    def truncated(self) -> bool:
        return self.finish_reason == "length"


def cache_key_for(params: ModelParams, messages: list[dict[str, str]]) -> str:
    """Stable content hash of the request; transport details stay out."""
    payload = {
        "model": params.model_name,
        "temperature": params.temperature,
        "max_output_tokens": params.max_output_tokens,
        "seed": params.request_seed,
        "messages": messages,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _normalize_finish_reason(reason) -> str:
    return reason if reason in FINISH_REASONS else "other"


class HttpTransport:
    """Default transport: POST to a chat-completion endpoint."""

    def __init__(self, endpoint_url: str | None = None, timeout: float = 120.0):
        self.endpoint_url = endpoint_url
        self.timeout = timeout

    def __call__(self, payload: dict) -> dict:
        api_key = os.environ.get(API_KEY_VAR)
        if not api_key:
            raise CredentialsError(f"environment variable {API_KEY_VAR} is not set")
        endpoint = self.endpoint_url or os.environ.get(ENDPOINT_VAR) or DEFAULT_ENDPOINT
        try:
            response = requests.post(
                endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientError(f"network failure calling {endpoint}: {exc}") from exc
        if response.status_code in (401, 403):
            raise CredentialsError(f"endpoint rejected credentials (HTTP {response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientError(f"endpoint returned HTTP {response.status_code}")
        if response.status_code != 200:
            raise GatewayError(f"endpoint returned HTTP {response.status_code}: {response.text[:500]}")
        return response.json()


class Gateway:
    """Mode-aware completion client; see module docstring for the modes."""

    def __init__(
        self,
        params: ModelParams,
        mode: str = "replay",
        cache_dir: str | Path | None = None,
        *,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        transport: Callable[[dict], dict] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {list(MODES)}, got {mode!r}")
        if mode != "live" and cache_dir is None:
            raise ValueError(f"mode {mode!r} requires a cache directory")
        self.params = params
        self.mode = mode
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.transport = transport if transport is not None else HttpTransport(params.endpoint_url)
        self.sleep = sleep

    def _cache_path(self, cache_key: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / f"{cache_key}.json"

    def _load_cached(self, cache_key: str) -> Transcript | None:
        path = self._cache_path(cache_key)
        if not path.exists():
            return None
        data = json.loads(path.read_text("utf-8"))
        return Transcript(
            cache_key=data["cache_key"],
            request=data["request"],
            response_text=data["response_text"],
            finish_reason=data["finish_reason"],
            timestamp=data["timestamp"],
        )

    def _store(self, transcript: Transcript) -> None:
        assert self.cache_dir is not None
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        record = {
            "cache_key": transcript.cache_key,
            "model": self.params.model_name,
            "params": {
                "temperature": self.params.temperature,
                "max_output_tokens": self.params.max_output_tokens,
                "seed": self.params.request_seed,
            },
            "request": transcript.request,
            "response_text": transcript.response_text,
            "finish_reason": transcript.finish_reason,
            "timestamp": transcript.timestamp,
        }
        path = self._cache_path(transcript.cache_key)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False, indent=2) + "\n", "utf-8")
        os.replace(tmp, path)

    def _call_with_retries(self, payload: dict) -> dict:
        last: TransientError | None = None
        for attempt in range(self.max_attempts):
            try:
                return self.transport(payload)
            except TransientError as exc:
                last = exc
                if attempt == self.max_attempts - 1:
                    break
                delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
                logger.warning("transient failure (%s); retrying in %.1fs", exc, delay)
                self.sleep(delay)
        raise GatewayError(f"giving up after {self.max_attempts} attempts: {last}")

    def complete(self, bundle: PromptBundle) -> Transcript:
        """Send one prompt bundle; replay from cache when the mode allows.

        Truncation (finish_reason "length") is carried in the transcript so
        callers can exclude the page instead of scoring a partial response.
        """
        messages = bundle.messages()
        cache_key = cache_key_for(self.params, messages)
        if self.mode in ("replay", "replay_strict"):
            cached = self._load_cached(cache_key)
            if cached is not None:
                return cached
            if self.mode == "replay_strict":
                raise CacheMissError(f"no cached transcript for cache_key {cache_key}")
        payload = {
            "model": self.params.model_name,
            "messages": messages,
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_output_tokens,
        }
        if self.params.request_seed is not None:
            payload["seed"] = self.params.request_seed
        data = self._call_with_retries(payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
            finish = _normalize_finish_reason(choice.get("finish_reason"))
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed endpoint response: {exc}") from exc
        transcript = Transcript(
            cache_key=cache_key,
            request=messages,
            response_text=text,
            finish_reason=finish,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        if self.mode in ("record", "replay"):
            self._store(transcript)
        return transcript

    def store_transcript(self, transcript: Transcript) -> None:
        """Persist an externally built transcript (fixture/cache seeding)."""
        self._store(transcript)
