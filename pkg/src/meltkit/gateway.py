"""Completion access to the annotation model.

Two providers share one interface: a live HTTP client with disk caching,
token-bucket rate limiting, and exponential backoff, and a deterministic
mock whose output is a pure function of (prompt digest, seed, attempt) for
offline tests and reproducible pipeline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol

import requests

from .labels import LABELS
from .prompt import PromptText, parse_dialogue_line

logger = logging.getLogger(__name__)

API_KEY_ENV = "MELT_API_KEY"
DEFAULT_BASE_URL = "https://api.openai.com/v1"

# Published per-million-token prices for the default model, used only for
# the pre-flight cost estimate.
PRICE_PER_1M_PROMPT_USD = 2.50
PRICE_PER_1M_COMPLETION_USD = 10.00


class GatewayError(RuntimeError):
    pass


class AuthMissing(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class ProviderTimeout(GatewayError):
    pass


class ProviderError(GatewayError):
    def __init__(self, status_code: int, message: str) -> None:
        super().__init__(f"provider returned {status_code}: {message}")
        self.status_code = status_code


@dataclass(frozen=True)
class ModelConfig:
    model_id: str = "gpt-4o-2024-08-06"
    temperature: float = 1.0
    max_retries: int = 3
    timeout_s: float = 60.0
    requests_per_minute: int = 60

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be positive")


@dataclass(frozen=True)
class CompletionRecord:
    prompt_digest: str
    raw_text: str
    model_id: str
    temperature: float
    timestamp: str
    attempt: int

    def to_record(self) -> dict:
        return {
            "prompt_digest": self.prompt_digest,
            "raw_text": self.raw_text,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "timestamp": self.timestamp,
            "attempt": self.attempt,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CompletionRecord":
        return cls(
            prompt_digest=record["prompt_digest"],
            raw_text=record["raw_text"],
            model_id=record["model_id"],
            temperature=float(record["temperature"]),
            timestamp=record["timestamp"],
            attempt=int(record["attempt"]),
        )


class Gateway(Protocol):
    config: ModelConfig

    def complete(
        self, p: PromptText, attempt: int = 1, force_refresh: bool = False
    ) -> CompletionRecord: ...


class TokenBucket:
    """Admission limiter: capacity = rate, refill = rate/60 tokens per second."""

    def __init__(self, requests_per_minute: int) -> None:
        self._capacity = float(requests_per_minute)
        self._tokens = float(requests_per_minute)
        self._rate = requests_per_minute / 60.0
        self._updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self._capacity, self._tokens + (now - self._updated) * self._rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            time.sleep(wait)


class DiskCache:
    """One JSON file per completion, keyed by (model_id, temperature, digest)."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, model_id: str, temperature: float, digest: str) -> Path:
        safe_model = re.sub(r"[^A-Za-z0-9._-]", "_", model_id)
        return self.root / f"{safe_model}__t{temperature!r}__{digest}.json"

    def get(self, model_id: str, temperature: float, digest: str) -> Optional[CompletionRecord]:
        path = self._path(model_id, temperature, digest)
        if not path.exists():
            return None
        return CompletionRecord.from_record(json.loads(path.read_text(encoding="utf-8")))

    def put(self, record: CompletionRecord) -> None:
        path = self._path(record.model_id, record.temperature, record.prompt_digest)
        fd, tmp_name = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record.to_record(), fh, ensure_ascii=False)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise


def estimate_tokens(text: str) -> int:
    # Rough 4-characters-per-token heuristic; used only for dry-run estimates.
    return max(1, len(text) // 4)


def estimate_cost_usd(n_prompts: int, prompt_tokens: int, completion_tokens_each: int = 150) -> float:
    prompt_cost = prompt_tokens * PRICE_PER_1M_PROMPT_USD / 1_000_000
    completion_cost = n_prompts * completion_tokens_each * PRICE_PER_1M_COMPLETION_USD / 1_000_000
    return round(prompt_cost + completion_cost, 4)


class LiveGateway:
    """HTTP chat-completion client with cache, rate limit, and backoff."""

    def __init__(
        self,
        config: ModelConfig = ModelConfig(),
        cache_dir: Optional[Path] = None,
        base_url: str = DEFAULT_BASE_URL,
        api_key: Optional[str] = None,
        session: Optional[requests.Session] = None,
    ) -> None:
        self.config = config
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self.base_url = base_url.rstrip("/")
        self._api_key = api_key
        self._session = session or requests.Session()
        self._bucket = TokenBucket(config.requests_per_minute)

    def _key(self) -> str:
        key = self._api_key or os.environ.get(API_KEY_ENV, "")
        if not key:
            raise AuthMissing(f"no API credential: set {API_KEY_ENV}")
        return key

    def complete(
        self, p: PromptText, attempt: int = 1, force_refresh: bool = False
    ) -> CompletionRecord:
        cfg = self.config
        if self.cache is not None and not force_refresh:
            hit = self.cache.get(cfg.model_id, cfg.temperature, p.digest)
            if hit is not None:
                return hit
        key = self._key()  # fail before any network I/O

        payload = {
            "model": cfg.model_id,
            "temperature": cfg.temperature,
            "messages": [{"role": "user", "content": p.body}],
        }
        last_error: Optional[Exception] = None
        for i in range(cfg.max_retries + 1):
            self._bucket.acquire()
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers={"Authorization": f"Bearer {key}"},
                    timeout=cfg.timeout_s,
                )
            except requests.Timeout as exc:
                last_error = ProviderTimeout(f"request timed out after {cfg.timeout_s}s")
                logger.warning("timeout on attempt %d: %s", i + 1, exc)
            else:
                if resp.status_code == 200:
                    text = resp.json()["choices"][0]["message"]["content"]
                    record = CompletionRecord(
                        prompt_digest=p.digest,
                        raw_text=text,
                        model_id=cfg.model_id,
                        temperature=cfg.temperature,
                        timestamp=datetime.now(timezone.utc).isoformat(),
                        attempt=attempt,
                    )
                    if self.cache is not None:
                        self.cache.put(record)
                    return record
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = RateLimited(f"status {resp.status_code} from provider")
                    logger.warning("retryable status %d on attempt %d", resp.status_code, i + 1)
                else:
                    raise ProviderError(resp.status_code, resp.text[:500])
            if i < cfg.max_retries:
                time.sleep(min(2.0**i, 30.0))
        assert last_error is not None
        raise last_error


# Phrase banks for the mock's free-text descriptors. Loudness and pitch
# entries stay mappable by the caption lexicon.
_MOCK_LOUDNESS = (
    "soft and hesitant",
    "quiet",
    "moderate",
    "conversational",
    "loud",
    "booming",
)
_MOCK_PITCH = (
    "low",
    "deep and flat",
    "medium",
    "mid-range",
    "high",
    "shrill",
)
_MOCK_RHYTHM = ("slow", "measured", "steady", "quick", "rapid-fire")
_MOCK_IMPACT = ("soothing", "tense", "warm", "jarring", "urgent")

# Fixed instant so mock pipeline outputs are byte-identical across runs.
MOCK_TIMESTAMP = "1970-01-01T00:00:00+00:00"


def _mock_hash(digest: str, seed: int, attempt: int) -> bytes:
    return hashlib.sha256(f"{digest}:{seed}:{attempt}".encode("utf-8")).digest()


def mock_is_malformed(digest: str, seed: int, attempt: int = 1) -> bool:
    """True on the fixed 5% slice of digest space that yields bad output."""
    h = int.from_bytes(_mock_hash(digest, seed, attempt)[:8], "big")
    return h % 20 == 0


class MockGateway:
    """Deterministic offline provider.

    raw_text is a pure function of (prompt digest, seed, attempt): the
    emotion cycles the 7-label vocabulary uniformly, descriptors come from
    fixed phrase banks, and a fixed 5% slice of digest space yields a
    deliberately malformed response so error paths stay exercised.
    """

    def __init__(self, seed: int = 0, config: ModelConfig = ModelConfig(model_id="mock")) -> None:
        self.seed = seed
        self.config = config

    def complete(
        self, p: PromptText, attempt: int = 1, force_refresh: bool = False
    ) -> CompletionRecord:
        raw = self._render(p, attempt)
        return CompletionRecord(
            prompt_digest=p.digest,
            raw_text=raw,
            model_id=self.config.model_id,
            temperature=self.config.temperature,
            timestamp=MOCK_TIMESTAMP,
            attempt=attempt,
        )

    def _render(self, p: PromptText, attempt: int) -> str:
        h = _mock_hash(p.digest, self.seed, attempt)
        h_int = int.from_bytes(h[:8], "big")
        if h_int % 20 == 0:
            variant = (h_int // 20) % 3
            if variant == 0:
                return '{"character": "somebody", "context": "cut off mid'
            if variant == 1:
                return "I cannot describe the voice for this line."
            return json.dumps(
                {
                    "character": "somebody",
                    "context": "a scene",
                    "elements": {
                        "emotion": "excited",
                        "loudness": "loud",
                        "pitch": "high",
                        "rhythm_speed": "quick",
                        "emotional_impact": "energetic",
                    },
                }
            )

        speaker, season, episode, _text = parse_dialogue_line(p.body)
        emotion = LABELS[(h_int // 20) % 7]
        pick = lambda bank, offset: bank[int.from_bytes(h[offset : offset + 2], "big") % len(bank)]
        body = json.dumps(
            {
                "character": speaker,
                "context": f"A scene from s{season}e{episode}.",
                "elements": {
                    "emotion": emotion.value.capitalize(),
                    "loudness": pick(_MOCK_LOUDNESS, 8),
                    "pitch": pick(_MOCK_PITCH, 10),
                    "rhythm_speed": pick(_MOCK_RHYTHM, 12),
                    "emotional_impact": pick(_MOCK_IMPACT, 14),
                },
            },
            indent=4,
        )
        if (h_int >> 3) % 4 == 0:
            return f"Here is the description:\n```json\n{body}\n```"
        return body
