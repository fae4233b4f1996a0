"""Deterministic in-process stand-ins for the model backends.

Every response is synthesized from a sha256 digest of the canonical
(sorted-keys) JSON request plus the suite seed, so identical requests
always get identical answers across runs, machines, and processes.
Tests that need specific replies (a judge verdict, a phrase list) queue
them on a :class:`MockScript`; scripted replies win over synthesis and
are consumed in FIFO order per request, which makes retry sequences
easy to stage.
"""

from __future__ import annotations

import hashlib
import io
import json
import wave
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backends import (
    DEFAULT_CHAT_MAX_TOKENS,
    validate_request,
    validate_response,
)
from .geometry import box_mask

EMBED_DIM = 32

TAG_VOCAB = (
    "ball",
    "person",
    "dog",
    "car",
    "tree",
    "chair",
    "table",
    "cup",
    "bird",
    "bicycle",
    "book",
    "lamp",
    "door",
    "window",
    "plant",
    "phone",
)

ASR_VOCAB = (
    "the",
    "a",
    "ball",
    "rolls",
    "over",
    "there",
    "look",
    "at",
    "this",
    "now",
    "it",
    "moves",
)


def canonical_digest(obj) -> str:
    """sha256 hex digest of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _hash_floats(seed_text: str, n: int) -> np.ndarray:
    """n floats in [0, 1) expanded from sha256 in counter mode."""
    out = np.empty(n, dtype=np.float64)
    i = 0
    counter = 0
    while i < n:
        block = hashlib.sha256(f"{seed_text}#{counter}".encode("utf-8")).digest()
        for off in range(0, 32, 8):
            if i >= n:
                break
            val = int.from_bytes(block[off : off + 8], "little")
            out[i] = val / 2.0**64
            i += 1
        counter += 1
    return out


@dataclass
class MockScript:
    """Queued canned replies, keyed by (kind, canonical request digest)."""

    replies: dict[tuple[str, str], deque] = field(default_factory=dict)
    chat_rules: list[tuple[Callable[[str], bool], str]] = field(default_factory=list)

    def add(self, kind: str, request: dict, response: dict) -> None:
        validate_request(kind, request)
        key = (kind, canonical_digest(request))
        self.replies.setdefault(key, deque()).append(response)

    def add_chat(
        self,
        prompt: str,
        text: str,
        temperature: float = 0.0,
        max_tokens: int = DEFAULT_CHAT_MAX_TOKENS,
    ) -> None:
        request = {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens}
        self.add("chat", request, {"text": text})

    def add_chat_rule(self, predicate: Callable[[str], bool], text: str) -> None:
        """Reply with ``text`` to any chat prompt the predicate accepts."""
        self.chat_rules.append((predicate, text))

    def pop(self, kind: str, request: dict) -> dict | None:
        queue = self.replies.get((kind, canonical_digest(request)))
        if queue:
            return queue.popleft()
        if kind == "chat":
            for predicate, text in self.chat_rules:
                if predicate(request["prompt"]):
                    return {"text": text}
        return None


def _wav_duration_s(audio_b64: str) -> float:
    import base64

    raw = base64.b64decode(audio_b64)
    with wave.open(io.BytesIO(raw), "rb") as wf:
        rate = wf.getframerate()
        return wf.getnframes() / float(rate) if rate else 0.0


class MockBackendSuite:
    """Synthesizes schema-valid responses for all backend kinds."""

    def __init__(self, seed: int = 0, script: MockScript | None = None):
        self.seed = seed
        self.script = script or MockScript()

    # -- helpers ----------------------------------------------------------

    def _floats(self, kind: str, digest: str, n: int) -> np.ndarray:
        return _hash_floats(f"{self.seed}:{kind}:{digest}", n)

    def _embedding(self, kind: str, key: str) -> list[float]:
        raw = self._floats(kind, key, EMBED_DIM) * 2.0 - 1.0
        vec = raw / np.linalg.norm(raw)
        return [float(v) for v in vec]

    # -- entry point ------------------------------------------------------

    def handle(self, kind: str, request: dict) -> dict:
        validate_request(kind, request)
        scripted = self.script.pop(kind, request)
        if scripted is not None:
            return scripted
        digest = canonical_digest(request)
        response = getattr(self, f"_make_{kind}")(request, digest)
        validate_response(kind, response)
        return response

    # -- per-kind synthesizers --------------------------------------------

    def _make_embed_text(self, request: dict, digest: str) -> dict:
        vec = self._embedding("embed_text", request["text"])
        return {"dim": EMBED_DIM, "vector": vec}

    def _make_embed_image(self, request: dict, digest: str) -> dict:
        vec = self._embedding("embed_image", digest)
        return {"dim": EMBED_DIM, "vector": vec}

    def _make_tag_image(self, request: dict, digest: str) -> dict:
        f = self._floats("tag_image", digest, 4)
        start = int(f[0] * len(TAG_VOCAB))
        labels = [TAG_VOCAB[(start + 3 * k) % len(TAG_VOCAB)] for k in range(3)]
        probs = sorted((0.25 + 0.74 * float(v) for v in f[1:4]), reverse=True)
        return {
            "tags": [
                {"label": lab, "prob": round(p, 6)}
                for lab, p in zip(labels, probs)
            ]
        }

    def _make_detect(self, request: dict, digest: str) -> dict:
        from .backends import decode_image

        image = decode_image(request["image_b64"])
        h, w = image.shape[:2]
        detections = []
        for tag in request["tags"]:
            f = self._floats("detect", f"{digest}:{tag}", 5)
            bw = max(2.0, (0.2 + 0.3 * f[2]) * w)
            bh = max(2.0, (0.2 + 0.3 * f[3]) * h)
            x1 = f[0] * (w - bw)
            y1 = f[1] * (h - bh)
            detections.append(
                {
                    "box": [
                        round(x1, 2),
                        round(y1, 2),
                        round(x1 + bw, 2),
                        round(y1 + bh, 2),
                    ],
                    "score": round(0.5 + 0.49 * float(f[4]), 6),
                    "tag": tag,
                }
            )
        return {"detections": detections}

    def _make_segment_mask(self, request: dict, digest: str) -> dict:
        from .backends import decode_image

        image = decode_image(request["image_b64"])
        h, w = image.shape[:2]
        mask = box_mask(request["box"], h, w)
        return {"mask_rle": mask.to_record()}

    def _make_vad(self, request: dict, digest: str) -> dict:
        duration = _wav_duration_s(request["audio_b64"])
        if duration < 0.2:
            return {"spans": []}
        f = self._floats("vad", digest, 2)
        first_end = duration * (0.35 + 0.15 * f[0])
        second_start = duration * (0.55 + 0.1 * f[1])
        spans = [{"start_s": round(duration * 0.05, 3), "end_s": round(first_end, 3)}]
        if second_start < duration * 0.9:
            spans.append(
                {
                    "start_s": round(second_start, 3),
                    "end_s": round(duration * 0.95, 3),
                }
            )
        return {"spans": spans}

    def _make_asr(self, request: dict, digest: str) -> dict:
        f = self._floats("asr", digest, 8)
        count = 3 + int(f[0] * 5)
        words = [
            ASR_VOCAB[int(f[1 + k % 7] * len(ASR_VOCAB)) % len(ASR_VOCAB)]
            for k in range(count)
        ]
        return {
            "text": " ".join(words),
            "language": "en",
            "language_prob": round(0.9 + 0.09 * float(f[7]), 6),
            "words": None,
        }

    def _make_audio_tag(self, request: dict, digest: str) -> dict:
        f = self._floats("audio_tag", digest, 3)
        p0 = 0.55 + 0.4 * float(f[0])
        p1 = p0 * (0.2 + 0.3 * float(f[1]))
        p2 = p1 * (0.2 + 0.5 * float(f[2]))
        return {
            "tags": [
                {"label": "speech", "prob": round(p0, 6)},
                {"label": "music", "prob": round(p1, 6)},
                {"label": "wind", "prob": round(p2, 6)},
            ]
        }

    def _make_chat(self, request: dict, digest: str) -> dict:
        # Judge prompts show the verdict JSON they expect; answer in kind
        # so mock eval runs exercise the parse path end to end.
        if '"pred"' in request["prompt"]:
            f = self._floats("chat_verdict", digest, 2)
            score = 1 + min(4, int(f[0] * 5))
            pred = "yes" if f[1] < 0.7 else "no"
            return {"text": json.dumps({"pred": pred, "score": score})}
        return {"text": f"[mock:{digest[:8]}]"}


class MockConnection:
    """In-process Connection serving a MockBackendSuite."""

    def __init__(self, suite: MockBackendSuite):
        self.suite = suite

    def call(self, kind: str, request: dict) -> dict:
        return self.suite.handle(kind, request)
