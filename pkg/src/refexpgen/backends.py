"""Uniform client layer for describer and merger model backends.

Live backends are HTTP endpoints: POST ``{"prompt": str, "image_b64"?: str}``,
response ``{"text": str}``. Credentials come from ``COLLAB_API_KEY_{NAME}``
environment variables. Mock backends (endpoint ``mock:<seed>``) are fully
deterministic and never touch the network, which is what the test suite and
``--mock`` pipeline runs use.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import requests
from PIL import Image, UnidentifiedImageError

from .geometry import Role
from .ingest import CropSpec

logger = logging.getLogger(__name__)


class BackendError(Exception):
    """Base class for failures while talking to a backend."""


class BackendTimeout(BackendError):
    """The backend did not answer within its configured timeout."""


class RemoteError(BackendError):
    """The backend answered with an error, or was unreachable."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"backend error (status {status}): {body[:200]}")


class KindMismatch(BackendError):
    """A prompt of the wrong shape was sent to a backend (e.g. image to a merger)."""


class EmptyCategory(ValueError):
    """A prompt was requested for an empty category string."""


class EmptyCandidates(ValueError):
    """A merge prompt was requested with no candidate descriptions."""


class DecodeError(ValueError):
    """An image file exists but cannot be decoded."""


class BackendKind(Enum):
    VISION_DESCRIBER = "vision_describer"
    TEXT_MERGER = "text_merger"
    MOCK = "mock"


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: BackendKind
    endpoint: str
    timeout: float = 30.0
    max_retries: int = 3
    rate_limit: float = 5.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout!r}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries!r}")
        if self.rate_limit <= 0:
            raise ValueError(f"rate_limit must be > 0, got {self.rate_limit!r}")


@dataclass(frozen=True)
class Prompt:
    """Prompt text plus optional image crop; describer prompts carry the crop.

    ``instance_id``/``category``/``candidates`` are transport metadata used by
    deterministic mock backends; live endpoints only ever see ``text`` and the
    encoded crop.
    """

    text: str
    image_ref: CropSpec | None = None
    instance_id: str | None = None
    category: str | None = None
    candidates: tuple[str, ...] | None = None


@dataclass(frozen=True)
class TimedDescription:
    backend_name: str
    text: str
    elapsed: float
    word_count: int

    @classmethod
    def from_text(cls, backend_name: str, text: str, elapsed: float) -> "TimedDescription":
        return cls(
            backend_name=backend_name,
            text=text,
            elapsed=elapsed,
            word_count=len(text.split()),
        )


def build_generation_prompt(category: str, role: Role) -> Prompt:
    """Describer prompt for one instance category, with an optional role hint."""
    if not category:
        raise EmptyCategory("category must be nonempty")
    text = f"What are the characteristics of {category} in the image?"
    if role is not Role.UNKNOWN:
        text += f" The {category} is a {role.value}."
    return Prompt(text=text, category=category)


def build_merge_prompt(category: str, candidates: list[str]) -> Prompt:
    """Merger prompt: the candidate descriptions, numbered in input order."""
    if not candidates:
        raise EmptyCandidates("candidates must be nonempty")
    numbered = " ".join(f"{i}. {text}" for i, text in enumerate(candidates, start=1))
    text = f"Extract descriptions of {category} based on: {numbered}"
    return Prompt(text=text, category=category, candidates=tuple(candidates))


# Fixed word tables for deterministic mock descriptions. Sixteen entries each,
# indexed by slices of a stable 64-bit hash.
MOCK_ADJECTIVES = (
    "red", "blue", "green", "yellow", "white", "black", "small", "large",
    "bright", "dark", "shiny", "worn", "round", "narrow", "tall", "striped",
)
MOCK_NOUNS = (
    "edges", "markings", "corners", "stripes", "wheels", "handles",
    "lights", "panels", "surfaces", "patterns", "frames", "labels",
    "buttons", "straps", "covers", "fittings",
)


def _stable_hash64(*parts) -> int:
    """Platform-independent 64-bit hash of the stringified parts."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def mock_description(seed: int, backend_name: str, instance_id: str, category: str) -> str:
    """Deterministic stand-in description; identical inputs give identical text."""
    h = _stable_hash64(seed, backend_name, instance_id)
    adj1 = MOCK_ADJECTIVES[h % len(MOCK_ADJECTIVES)]
    adj2 = MOCK_ADJECTIVES[(h >> 16) % len(MOCK_ADJECTIVES)]
    noun = MOCK_NOUNS[(h >> 32) % len(MOCK_NOUNS)]
    return f"a {adj1} {category} with {adj2} {noun}"


def encode_crop(spec: CropSpec) -> bytes:
    """Read the image, crop the spec's box, and return PNG bytes."""
    path = Path(spec.image_path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {spec.image_path}")
    try:
        with Image.open(path) as img:
            img.load()
            left = max(0, math.floor(spec.bbox.x_min))
            top = max(0, math.floor(spec.bbox.y_min))
            right = min(img.width, math.ceil(spec.bbox.x_max))
            bottom = min(img.height, math.ceil(spec.bbox.y_max))
            cropped = img.crop((left, top, right, bottom))
            buf = io.BytesIO()
            cropped.save(buf, format="PNG")
            return buf.getvalue()
    except UnidentifiedImageError as exc:
        raise DecodeError(f"cannot decode image {spec.image_path}: {exc}") from exc


def _api_key_env_name(backend_name: str) -> str:
    return "COLLAB_API_KEY_" + re.sub(r"[^A-Za-z0-9]+", "_", backend_name).strip("_").upper()


def _mock_seed(endpoint: str) -> int:
    _, _, tail = endpoint.partition(":")
    try:
        return int(tail)
    except ValueError:
        return 0


class _RateLimiter:
    """Token-interval limiter: call starts are spaced >= 1/rate seconds apart."""

    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self._interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            start = max(now, self._next_free)
            self._next_free = start + self._interval
            wait = start - now
        if wait > 0:
            self._sleep(wait)


# HTTP statuses worth retrying; everything else in 4xx is a hard failure.
_RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


class BackendClient:
    """One backend's query path: rate limiting, retries with backoff, timing.

    Safe for concurrent use; the limiter and session are internally
    synchronized. ``sleep``/``rng``/``post`` are injectable for tests.
    """

    def __init__(
        self,
        spec: BackendSpec,
        *,
        sleep=time.sleep,
        rng: random.Random | None = None,
        post=None,
    ):
        self.spec = spec
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._limiter = _RateLimiter(spec.rate_limit, sleep=sleep)
        self._post = post or self._default_post
        self._session = requests.Session() if post is None else None

    def _default_post(self, url: str, body: dict, timeout: float, headers: dict):
        resp = self._session.post(url, json=body, timeout=timeout, headers=headers)
        return resp.status_code, resp.text

    def _is_mock(self) -> bool:
        return self.spec.kind is BackendKind.MOCK or self.spec.endpoint.startswith("mock:")

    def query(self, prompt: Prompt) -> TimedDescription:
        """Send the prompt and return the backend's text with elapsed time.

        Transient failures (timeouts, 429/5xx, transport errors) are retried up
        to ``max_retries`` times with exponential backoff (base 1 s, factor 2,
        full jitter); other HTTP errors fail immediately.
        """
        kind = self.spec.kind
        if kind is BackendKind.VISION_DESCRIBER and prompt.image_ref is None:
            raise KindMismatch(f"describer {self.spec.name!r} needs an image-bearing prompt")
        if kind is BackendKind.TEXT_MERGER and prompt.image_ref is not None:
            raise KindMismatch(f"merger {self.spec.name!r} cannot take an image-bearing prompt")

        self._limiter.acquire()
        if self._is_mock():
            text, elapsed = self._mock_reply(prompt)
            return TimedDescription.from_text(self.spec.name, text, elapsed)

        body = {"prompt": prompt.text}
        if prompt.image_ref is not None:
            body["image_b64"] = base64.b64encode(encode_crop(prompt.image_ref)).decode("ascii")
        headers = {}
        api_key = os.environ.get(_api_key_env_name(self.spec.name))
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        start = time.perf_counter()
        last_error: BackendError | None = None
        for attempt in range(self.spec.max_retries + 1):
            try:
                status, text_body = self._post(
                    self.spec.endpoint, body, self.spec.timeout, headers
                )
            except requests.Timeout as exc:
                last_error = BackendTimeout(f"{self.spec.name}: timed out after {self.spec.timeout}s")
                logger.warning("backend %s attempt %d timed out: %s", self.spec.name, attempt + 1, exc)
            except requests.RequestException as exc:
                last_error = RemoteError(0, f"transport error: {exc}")
                logger.warning("backend %s attempt %d failed: %s", self.spec.name, attempt + 1, exc)
            else:
                if status == 200:
                    reply = self._parse_reply(status, text_body)
                    elapsed = time.perf_counter() - start
                    return TimedDescription.from_text(self.spec.name, reply, elapsed)
                if status in _RETRYABLE_STATUSES:
                    last_error = RemoteError(status, text_body)
                    logger.warning(
                        "backend %s attempt %d got status %d", self.spec.name, attempt + 1, status
                    )
                else:
                    raise RemoteError(status, text_body)
            if attempt < self.spec.max_retries:
                self._sleep(self._rng.uniform(0.0, 1.0 * 2**attempt))
        raise last_error

    def _parse_reply(self, status: int, text_body: str) -> str:
        try:
            payload = json.loads(text_body)
            return payload["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise RemoteError(status, f"malformed response body: {text_body[:200]}") from exc

    def _mock_reply(self, prompt: Prompt) -> tuple[str, float]:
        seed = _mock_seed(self.spec.endpoint)
        if prompt.candidates is not None:
            texts = list(prompt.candidates)
            if len(texts) == 1:
                text = texts[0].strip()
            else:
                from .ensemble import baseline_merge

                text = baseline_merge(texts, quorum=math.ceil(len(texts) / 2))
            h = _stable_hash64(seed, self.spec.name, prompt.text)
        else:
            text = mock_description(
                seed, self.spec.name, prompt.instance_id or "", prompt.category or ""
            )
            h = _stable_hash64(seed, self.spec.name, prompt.instance_id or "")
        # Simulated latency keeps mock runs byte-reproducible (and >= the
        # microseconds the mock actually took).
        elapsed = 0.5 + (h % 2000) / 1000.0
        return text, elapsed


_clients: dict[BackendSpec, BackendClient] = {}
_clients_lock = threading.Lock()


def get_client(spec: BackendSpec) -> BackendClient:
    """Shared client per spec, so rate limiting persists across callers."""
    with _clients_lock:
        client = _clients.get(spec)
        if client is None:
            client = _clients[spec] = BackendClient(spec)
        return client


def query(spec: BackendSpec, prompt: Prompt) -> TimedDescription:
    return get_client(spec).query(prompt)


def make_mock_spec(name: str, seed: int) -> BackendSpec:
    """A fast deterministic replacement backend keeping only the name."""
    return BackendSpec(
        name=name,
        kind=BackendKind.MOCK,
        endpoint=f"mock:{seed}",
        timeout=5.0,
        max_retries=0,
        rate_limit=1000.0,
    )


__all__ = [
    "BackendClient",
    "BackendError",
    "BackendKind",
    "BackendSpec",
    "BackendTimeout",
    "DecodeError",
    "EmptyCandidates",
    "EmptyCategory",
    "KindMismatch",
    "MOCK_ADJECTIVES",
    "MOCK_NOUNS",
    "Prompt",
    "RemoteError",
    "TimedDescription",
    "build_generation_prompt",
    "build_merge_prompt",
    "encode_crop",
    "get_client",
    "make_mock_spec",
    "mock_description",
    "query",
]
