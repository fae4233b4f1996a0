"""Uniform wire protocol for external neural-model services.

Every model the pipeline leans on (text/image embedding, image tagging,
open-vocabulary detection, mask segmentation, voice activity detection,
speech recognition, audio tagging, chat) is reached the same way: POST
``/v1/{kind}`` with a JSON body, base64 payloads for media. Requests and
responses both pass schema validation, so malformed payloads never reach
pipeline code. Transport failures are retried with bounded exponential
backoff and then surface as :class:`BackendTransportError`, distinct
from schema violations.
"""

from __future__ import annotations

import base64
import io
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np
from PIL import Image

from .audio import AsrSegment, AudioTrack, SpeechSpan, align_words_fallback
from .errors import BackendSchemaError, BackendTransportError, InvalidInputError
from .geometry import Box, MaskRLE
from .tracking import Detection

logger = logging.getLogger(__name__)

KINDS = (
    "embed_text",
    "embed_image",
    "tag_image",
    "detect",
    "segment_mask",
    "vad",
    "asr",
    "audio_tag",
    "chat",
)

DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF_S = 0.2
DEFAULT_CHAT_MAX_TOKENS = 256


@dataclass(frozen=True)
class BackendEndpoint:
    kind: str
    url: str
    timeout_s: float = 30.0
    auth_token: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown endpoint kind {self.kind!r}")
        if self.timeout_s <= 0:
            raise InvalidInputError("timeout_s must be positive")


# ---------------------------------------------------------------------------
# Schema validation
# ---------------------------------------------------------------------------

def _expect(cond: bool, kind: str, msg: str) -> None:
    if not cond:
        raise BackendSchemaError(f"{kind}: {msg}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_b64(kind: str, payload: dict, key: str) -> None:
    _expect(isinstance(payload.get(key), str), kind, f"{key} must be a base64 string")
    try:
        base64.b64decode(payload[key], validate=True)
    except Exception:
        raise BackendSchemaError(f"{kind}: {key} is not valid base64")


def _check_span(kind: str, span, what: str) -> None:
    _expect(isinstance(span, dict), kind, f"{what} must be an object")
    _expect(
        _is_num(span.get("start_s")) and _is_num(span.get("end_s")),
        kind,
        f"{what} needs numeric start_s/end_s",
    )
    _expect(
        0 <= span["start_s"] < span["end_s"], kind, f"{what} times out of order"
    )


def _check_box(kind: str, box, what: str) -> None:
    _expect(
        isinstance(box, (list, tuple)) and len(box) == 4 and all(_is_num(v) for v in box),
        kind,
        f"{what} must be [x1, y1, x2, y2]",
    )
    _expect(box[0] < box[2] and box[1] < box[3], kind, f"{what} is degenerate")


def validate_request(kind: str, payload: Any) -> None:
    _expect(isinstance(payload, dict), kind, "request must be a JSON object")
    if kind == "embed_text":
        _expect(isinstance(payload.get("text"), str), kind, "text must be a string")
    elif kind == "embed_image":
        _check_b64(kind, payload, "image_b64")
        _expect(payload.get("format") in ("png", "jpeg"), kind, "format must be png|jpeg")
    elif kind == "tag_image":
        _check_b64(kind, payload, "image_b64")
    elif kind == "detect":
        _check_b64(kind, payload, "image_b64")
        tags = payload.get("tags")
        _expect(
            isinstance(tags, list) and all(isinstance(t, str) for t in tags),
            kind,
            "tags must be a list of strings",
        )
    elif kind == "segment_mask":
        _check_b64(kind, payload, "image_b64")
        _check_box(kind, payload.get("box"), "box")
    elif kind in ("vad", "asr", "audio_tag"):
        _check_b64(kind, payload, "audio_b64")
        if kind == "asr":
            _check_span(kind, payload.get("window"), "window")
        if kind == "audio_tag":
            _check_span(kind, payload.get("span"), "span")
    elif kind == "chat":
        _expect(isinstance(payload.get("prompt"), str), kind, "prompt must be a string")
        _expect(_is_num(payload.get("temperature")), kind, "temperature must be numeric")
        _expect(
            isinstance(payload.get("max_tokens"), int), kind, "max_tokens must be an int"
        )
    else:
        raise BackendSchemaError(f"unknown kind {kind!r}")


def _check_vector(kind: str, payload: dict) -> None:
    _expect(isinstance(payload.get("dim"), int), kind, "dim must be an int")
    vec = payload.get("vector")
    _expect(
        isinstance(vec, list) and all(_is_num(v) for v in vec),
        kind,
        "vector must be a list of numbers",
    )
    _expect(len(vec) == payload["dim"], kind, "vector length != dim")


def _check_tags(kind: str, tags, exactly: int | None = None) -> None:
    _expect(isinstance(tags, list), kind, "tags must be a list")
    if exactly is not None:
        _expect(len(tags) == exactly, kind, f"expected exactly {exactly} tags")
    prev = 1.0
    for t in tags:
        _expect(isinstance(t, dict), kind, "each tag must be an object")
        _expect(isinstance(t.get("label"), str), kind, "tag label must be a string")
        _expect(
            _is_num(t.get("prob")) and 0 <= t["prob"] <= 1,
            kind,
            "tag prob must be in [0, 1]",
        )
        _expect(t["prob"] <= prev + 1e-9, kind, "tag probs must be descending")
        prev = t["prob"]


def validate_response(kind: str, payload: Any) -> None:
    _expect(isinstance(payload, dict), kind, "response must be a JSON object")
    if kind in ("embed_text", "embed_image"):
        _check_vector(kind, payload)
    elif kind == "tag_image":
        _check_tags(kind, payload.get("tags"))
    elif kind == "detect":
        dets = payload.get("detections")
        _expect(isinstance(dets, list), kind, "detections must be a list")
        for d in dets:
            _expect(isinstance(d, dict), kind, "each detection must be an object")
            _check_box(kind, d.get("box"), "detection box")
            _expect(
                _is_num(d.get("score")) and 0 <= d["score"] <= 1,
                kind,
                "detection score must be in [0, 1]",
            )
            _expect(isinstance(d.get("tag"), str), kind, "detection tag must be a string")
    elif kind == "segment_mask":
        rle = payload.get("mask_rle")
        _expect(isinstance(rle, dict), kind, "mask_rle must be an object")
        _expect(
            isinstance(rle.get("h"), int) and isinstance(rle.get("w"), int),
            kind,
            "mask_rle needs integer h/w",
        )
        runs = rle.get("runs")
        _expect(
            isinstance(runs, list)
            and all(isinstance(r, int) and r >= 0 for r in runs),
            kind,
            "mask_rle runs must be nonnegative ints",
        )
        _expect(
            sum(runs) == rle["h"] * rle["w"], kind, "mask_rle runs must cover h*w"
        )
    elif kind == "vad":
        spans = payload.get("spans")
        _expect(isinstance(spans, list), kind, "spans must be a list")
        for s in spans:
            _check_span(kind, s, "span")
    elif kind == "asr":
        _expect(isinstance(payload.get("text"), str), kind, "text must be a string")
        _expect(isinstance(payload.get("language"), str), kind, "language must be a string")
        _expect(
            _is_num(payload.get("language_prob"))
            and 0 <= payload["language_prob"] <= 1,
            kind,
            "language_prob must be in [0, 1]",
        )
        if payload.get("words") is not None:
            words = payload["words"]
            _expect(isinstance(words, list), kind, "words must be a list")
            for w in words:
                _expect(
                    isinstance(w, dict) and isinstance(w.get("word"), str),
                    kind,
                    "each word needs a string word",
                )
                _check_span(kind, {"start_s": w.get("start_s"), "end_s": w.get("end_s")}, "word span")
    elif kind == "audio_tag":
        _check_tags(kind, payload.get("tags"), exactly=3)
    elif kind == "chat":
        _expect(isinstance(payload.get("text"), str), kind, "text must be a string")
    else:
        raise BackendSchemaError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------

class Connection(Protocol):
    """Anything that can answer one validated backend request."""

    def call(self, kind: str, request: dict) -> dict: ...


class HttpConnection:
    """HTTP transport over the POST /v1/{kind} protocol.

    Retries transport failures (connection errors, timeouts, 5xx/4xx
    statuses) up to ``attempts`` times with exponential backoff, then
    raises :class:`BackendTransportError`.
    """

    def __init__(
        self,
        endpoints: dict[str, BackendEndpoint],
        session=None,
        attempts: int = DEFAULT_ATTEMPTS,
        backoff_s: float = DEFAULT_BACKOFF_S,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import requests

        self.endpoints = endpoints
        self.session = session or requests.Session()
        self.attempts = attempts
        self.backoff_s = backoff_s
        self._sleep = sleep

    def call(self, kind: str, request: dict) -> dict:
        import requests

        endpoint = self.endpoints.get(kind)
        if endpoint is None:
            raise BackendTransportError(f"no endpoint configured for kind {kind!r}")
        headers = {}
        if endpoint.auth_token:
            headers["Authorization"] = f"Bearer {endpoint.auth_token}"
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    endpoint.url,
                    json=request,
                    timeout=endpoint.timeout_s,
                    headers=headers,
                )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("%s attempt %d failed: %s", kind, attempt + 1, exc)
                continue
            if resp.status_code != 200:
                last_error = BackendTransportError(
                    f"{kind}: HTTP {resp.status_code} from {endpoint.url}"
                )
                logger.warning("%s attempt %d: HTTP %d", kind, attempt + 1, resp.status_code)
                continue
            try:
                return resp.json()
            except ValueError as exc:
                # Non-JSON body is a malformed response, not a transport blip.
                raise BackendSchemaError(f"{kind}: response body is not JSON") from exc
        raise BackendTransportError(
            f"{kind}: gave up after {self.attempts} attempts"
        ) from last_error


# ---------------------------------------------------------------------------
# Encoding helpers
# ---------------------------------------------------------------------------

def encode_image_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(image_b64: str) -> np.ndarray:
    raw = base64.b64decode(image_b64)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"))


def encode_audio_wav(audio: AudioTrack) -> str:
    return base64.b64encode(audio.to_wav_bytes()).decode("ascii")


# ---------------------------------------------------------------------------
# Typed facade
# ---------------------------------------------------------------------------

class BackendClient:
    """Typed helpers over a connection; validates both wire directions.

    Embedding vectors are re-normalized client-side regardless of what
    the server claims, so cosine math downstream can trust unit norms.
    """

    def __init__(self, connection: Connection):
        self.connection = connection

    def call(self, kind: str, request: dict) -> dict:
        validate_request(kind, request)
        response = self.connection.call(kind, request)
        validate_response(kind, response)
        return response

    def _normalize(self, vec: list[float]) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float64)
        norm = np.linalg.norm(arr)
        if norm == 0:
            raise BackendSchemaError("embedding has zero norm")
        return arr / norm

    def embed_text(self, text: str) -> np.ndarray:
        resp = self.call("embed_text", {"text": text})
        return self._normalize(resp["vector"])

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        resp = self.call(
            "embed_image", {"image_b64": encode_image_png(image), "format": "png"}
        )
        return self._normalize(resp["vector"])

    def tag_image(self, image: np.ndarray) -> list[tuple[str, float]]:
        resp = self.call("tag_image", {"image_b64": encode_image_png(image)})
        return [(t["label"], float(t["prob"])) for t in resp["tags"]]

    def detect(
        self, image: np.ndarray, tags: list[str], frame_idx: int
    ) -> list[Detection]:
        resp = self.call(
            "detect", {"image_b64": encode_image_png(image), "tags": list(tags)}
        )
        return [
            Detection(
                frame_idx=frame_idx,
                box=tuple(d["box"]),
                score=float(d["score"]),
                tag=d["tag"],
            )
            for d in resp["detections"]
        ]

    def segment_mask(self, image: np.ndarray, box: Box) -> MaskRLE:
        resp = self.call(
            "segment_mask",
            {"image_b64": encode_image_png(image), "box": [float(v) for v in box]},
        )
        return MaskRLE.from_record(resp["mask_rle"])

    def vad(self, audio: AudioTrack) -> list[SpeechSpan]:
        resp = self.call("vad", {"audio_b64": encode_audio_wav(audio)})
        return [SpeechSpan(s["start_s"], s["end_s"]) for s in resp["spans"]]

    def asr(self, audio: AudioTrack, window: SpeechSpan) -> AsrSegment:
        resp = self.call(
            "asr",
            {
                "audio_b64": encode_audio_wav(audio),
                "window": {"start_s": window.start_s, "end_s": window.end_s},
            },
        )
        words = None
        if resp.get("words"):
            from .audio import WordSpan

            words = tuple(
                WordSpan(w["word"], w["start_s"], w["end_s"]) for w in resp["words"]
            )
        seg = AsrSegment(
            start_s=window.start_s,
            end_s=window.end_s,
            text=resp["text"],
            language=resp["language"],
            language_prob=float(resp["language_prob"]),
            words=words,
        )
        if seg.words is None and seg.text.strip():
            seg = align_words_fallback(seg)
        return seg

    def audio_tag(self, audio: AudioTrack, span: SpeechSpan) -> list[tuple[str, float]]:
        resp = self.call(
            "audio_tag",
            {
                "audio_b64": encode_audio_wav(audio),
                "span": {"start_s": span.start_s, "end_s": span.end_s},
            },
        )
        return [(t["label"], float(t["prob"])) for t in resp["tags"]]

    def chat(
        self,
        prompt: str,
        temperature: float = 0.0,
        max_tokens: int = DEFAULT_CHAT_MAX_TOKENS,
    ) -> str:
        resp = self.call("chat", self.chat_request(prompt, temperature, max_tokens))
        return resp["text"]

    @staticmethod
    def chat_request(
        prompt: str,
        temperature: float = 0.0,
        max_tokens: int = DEFAULT_CHAT_MAX_TOKENS,
    ) -> dict:
        return {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens}


def default_endpoints(base_url: str = "http://127.0.0.1:8099") -> dict[str, BackendEndpoint]:
    return {
        kind: BackendEndpoint(kind=kind, url=f"{base_url}/v1/{kind}") for kind in KINDS
    }
