"""Typed HTTP clients for the external neural services.

One POST route per capability: /encode, /caption, /dense_caption, /tags,
/complete. All payloads are JSON; images travel base64-encoded. Clients
retry transient failures (connection errors, 429, 5xx) with jittered
exponential backoff and carry idempotency keys so retries are safe server-side.
Payloads violating the documented schema are rejected, never repaired, except
for the documented tag normalization (lowercase, trim, dedupe by max
confidence).
"""

import base64
import io
import logging
import random
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
import requests
from PIL import Image

from .adapter import FrameEmbeddingTensor
from .errors import (PayloadError, RetryExhaustedError, ServiceError,
                     ShapeError, ValidationError)
from .keyframes import FrameBatch

log = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass
class EncoderConfig:
    """Vision-encoder service parameters; input_side must divide by patch_size."""

    endpoint: str = ""
    patch_size: int = 14
    input_side: int = 224
    embed_dim: int = 1024

    def __post_init__(self):
        if self.input_side % self.patch_size != 0:
            raise ValidationError(
                f"input_side {self.input_side} not divisible by patch size {self.patch_size}")

    @property
    def tokens_per_frame(self) -> int:
        side = self.input_side // self.patch_size
        return side * side


@dataclass(frozen=True)
class FrameCaption:
    text: str
    confidence: float

    def __post_init__(self):
        if not self.text:
            raise ValidationError("caption text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class RegionCaption:
    text: str
    confidence: float
    box: tuple  # normalized (x0, y0, x1, y1)

    def __post_init__(self):
        if not self.text:
            raise ValidationError("region caption text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        x0, y0, x1, y1 = self.box
        if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
            raise ValidationError(f"box {self.box} not well-ordered inside the unit square")


@dataclass(frozen=True)
class Tag:
    label: str
    confidence: float

    def __post_init__(self):
        if not self.label or self.label != self.label.strip().lower():
            raise ValidationError(f"tag label {self.label!r} not a lowercase token")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class TagSet:
    tags: tuple

    def __post_init__(self):
        labels = [t.label for t in self.tags]
        if len(labels) != len(set(labels)):
            raise ValidationError("tag labels must be unique")

    def labels(self):
        return [t.label for t in self.tags]


@dataclass
class LlmRequest:
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    finish_reason: str  # complete | length | error

    def __post_init__(self):
        if self.finish_reason == "complete" and not self.text:
            raise ValidationError("complete response must carry text")


@dataclass
class ClientMetrics:
    requests: int = 0
    attempts: int = 0
    retries: int = 0
    rate_limited: int = 0
    failures: int = 0


class ServiceClient:
    """Shareable HTTP handle for one endpoint, safe for concurrent calls.

    Bounded in-flight requests via a semaphore; exponential backoff with
    jitter (base 250 ms doubling, at most `max_attempts` tries). `sleep` is
    injectable so tests do not wait.
    """

    def __init__(self, base_url, *, api_key=None, timeout=30.0, max_attempts=5,
                 backoff_base=0.25, max_inflight=8, session=None,
                 sleep=time.sleep, jitter_rng=None):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.session = session or requests.Session()
        self.sleep = sleep
        self.metrics = ClientMetrics()
        self._jitter = jitter_rng or random.Random()
        self._inflight = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()

    def post_json(self, route, payload) -> dict:
        url = f"{self.base_url}{route}"
        idempotency_key = uuid.uuid4().hex
        with self._lock:
            self.metrics.requests += 1
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            with self._lock:
                self.metrics.attempts += 1
                if attempt > 1:
                    self.metrics.retries += 1
            headers = {"X-Idempotency-Key": idempotency_key,
                       "X-Attempt": str(attempt)}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            try:
                with self._inflight:
                    resp = self.session.post(url, json=payload, headers=headers,
                                             timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = ServiceError(f"transport failure calling {url}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise PayloadError(f"non-JSON body from {url}",
                                           body=resp.text[:1000]) from exc
                if resp.status_code in RETRYABLE_STATUSES:
                    if resp.status_code == 429:
                        with self._lock:
                            self.metrics.rate_limited += 1
                    last_error = ServiceError(
                        f"retryable status {resp.status_code} from {url}",
                        status=resp.status_code, body=resp.text[:1000])
                else:
                    with self._lock:
                        self.metrics.failures += 1
                    raise ServiceError(
                        f"protocol violation: status {resp.status_code} from {url}",
                        status=resp.status_code, body=resp.text[:1000])
            if attempt < self.max_attempts:
                delay = self.backoff_base * (2 ** (attempt - 1))
                self.sleep(delay * self._jitter.uniform(0.5, 1.5))
        with self._lock:
            self.metrics.failures += 1
        raise RetryExhaustedError(
            f"gave up on {url} after {self.max_attempts} attempts: {last_error}")


def png_b64(frame: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(frame).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _frame_payload(frame: np.ndarray, side: int) -> dict:
    img = Image.fromarray(frame).resize((side, side), Image.BILINEAR)
    arr = np.asarray(img)
    return {"width": arr.shape[1], "height": arr.shape[0],
            "channels": arr.shape[2] if arr.ndim == 3 else 1,
            "pixels_b64": base64.b64encode(arr.tobytes()).decode("ascii")}


def encode_frames(client: ServiceClient, cfg: EncoderConfig,
                  batch: FrameBatch) -> FrameEmbeddingTensor:
    """Encode all frames in one batched call; returns a (T, N, D) tensor.

    If the service emits one extra leading token per frame (a CLS-style
    summary), it is stripped client-side so N stays (input_side/patch)^2.
    """
    if len(batch) == 0:
        raise ValidationError("cannot encode an empty frame batch")
    payload = {
        "frames": [dict(_frame_payload(f, cfg.input_side),
                        key=f"{batch.video_id}/{i}")
                   for i, f in enumerate(batch.frames)],
        "patch_size": cfg.patch_size,
        "input_side": cfg.input_side,
        "embed_dim": cfg.embed_dim,
    }
    body = client.post_json("/encode", payload)
    try:
        shape = tuple(body["shape"])
        dtype = np.dtype(body["dtype"])
        raw = base64.b64decode(body["data_b64"])
        data = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise PayloadError("malformed /encode response", body=str(body)[:500]) from exc
    expected_n = cfg.tokens_per_frame
    if data.shape[0] != len(batch) or data.shape[2] != cfg.embed_dim:
        raise ShapeError(
            f"encoder returned shape {data.shape}, expected "
            f"({len(batch)}, {expected_n}, {cfg.embed_dim})")
    if data.shape[1] == expected_n + 1:
        data = data[:, 1:, :]
    elif data.shape[1] != expected_n:
        raise ShapeError(
            f"encoder returned {data.shape[1]} tokens per frame, expected "
            f"{expected_n} (or {expected_n + 1} with a CLS token)")
    return FrameEmbeddingTensor(data)


def _image_request(frame: np.ndarray, key: str) -> dict:
    return {"key": key, "image_b64": png_b64(frame)}


def caption_frame(client: ServiceClient, frame: np.ndarray, key: str) -> FrameCaption:
    body = client.post_json("/caption", _image_request(frame, key))
    try:
        return FrameCaption(text=body["text"], confidence=float(body["confidence"]))
    except (KeyError, TypeError, ValidationError) as exc:
        log.error("bad /caption payload for %s: %r", key, body)
        raise PayloadError(f"malformed /caption response: {exc}",
                           body=str(body)[:500]) from exc


def dense_caption_frame(client: ServiceClient, frame: np.ndarray, key: str):
    body = client.post_json("/dense_caption", _image_request(frame, key))
    try:
        return [RegionCaption(text=r["text"], confidence=float(r["confidence"]),
                              box=tuple(r["box"]))
                for r in body["regions"]]
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        log.error("bad /dense_caption payload for %s: %r", key, body)
        raise PayloadError(f"malformed /dense_caption response: {exc}",
                           body=str(body)[:500]) from exc


def tag_frame(client: ServiceClient, frame: np.ndarray, key: str) -> TagSet:
    body = client.post_json("/tags", _image_request(frame, key))
    try:
        best = {}
        order = []
        for item in body["tags"]:
            label = str(item["label"]).strip().lower()
            confidence = float(item["confidence"])
            if not 0.0 <= confidence <= 1.0:
                raise ValidationError(f"confidence {confidence} outside [0, 1]")
            if label not in best:
                order.append(label)
                best[label] = confidence
            else:
                best[label] = max(best[label], confidence)
        return TagSet(tags=tuple(Tag(label, best[label]) for label in order))
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        log.error("bad /tags payload for %s: %r", key, body)
        raise PayloadError(f"malformed /tags response: {exc}",
                           body=str(body)[:500]) from exc


def complete_text(client: ServiceClient, req: LlmRequest) -> LlmResponse:
    """One text completion; truncation (finish_reason != complete) is returned,
    not raised, so callers can decide how to degrade."""
    if not req.prompt:
        raise ValidationError("prompt must be non-empty")
    body = client.post_json("/complete", {
        "prompt": req.prompt, "max_tokens": req.max_tokens,
        "temperature": req.temperature, "seed": req.seed,
    })
    try:
        return LlmResponse(text=body.get("text", ""),
                           finish_reason=body["finish_reason"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise PayloadError(f"malformed /complete response: {exc}",
                           body=str(body)[:500]) from exc


class LlmClient:
    """Completer protocol adapter: `.complete(LlmRequest) -> LlmResponse`.

    Anything with this method (e.g. ScriptedCompleter in mockmodels) can stand
    in for the real service wherever a completer is expected.
    """

    def __init__(self, client: ServiceClient, model_tag: str = "llm"):
        self.client = client
        self.model_tag = model_tag

    def complete(self, req: LlmRequest) -> LlmResponse:
        return complete_text(self.client, req)


@dataclass
class GatewayBundle:
    """The per-capability clients the enrichment pipeline consumes."""

    captioner: ServiceClient
    dense_captioner: ServiceClient
    tagger: ServiceClient
    llm: object  # completer protocol
    encoder: ServiceClient | None = None
    encoder_config: EncoderConfig = field(default_factory=EncoderConfig)
