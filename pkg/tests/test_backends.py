"""Tests for wire validation, HTTP transport retries, and the mock suite."""

import json

import numpy as np
import pytest
import requests

from videoground.audio import AudioTrack, SpeechSpan
from videoground.backends import (
    BackendClient,
    BackendEndpoint,
    HttpConnection,
    KINDS,
    decode_image,
    default_endpoints,
    encode_image_png,
    validate_request,
    validate_response,
)
from videoground.errors import BackendSchemaError, BackendTransportError
from videoground.mocks import MockBackendSuite, MockConnection, MockScript
from videoground.mockserver import ServerThread


def demo_image(seed=0, h=24, w=32):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def demo_audio(duration_s=1.0):
    n = int(16000 * duration_s)
    t = np.arange(n) / 16000.0
    samples = (np.sin(2 * np.pi * 440.0 * t) * 8000).astype(np.int16)
    return AudioTrack(samples=samples)


class FakeResponse:
    def __init__(self, status_code=200, payload=None, body=b""):
        self.status_code = status_code
        self._payload = payload
        self._body = body

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    """Scripted session: pops one canned behavior per post call."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, timeout=None, headers=None):
        self.calls.append({"url": url, "json": json, "timeout": timeout,
                           "headers": headers or {}})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def one_endpoint(kind="embed_text", **kwargs):
    return {kind: BackendEndpoint(kind=kind, url=f"http://test/v1/{kind}",
                                  **kwargs)}


# --- schema validation ------------------------------------------------------

def test_validate_request_unknown_kind():
    with pytest.raises(BackendSchemaError):
        validate_request("summon", {})


def test_validate_request_field_checks():
    validate_request("embed_text", {"text": "hi"})
    with pytest.raises(BackendSchemaError):
        validate_request("embed_text", {"text": 3})
    with pytest.raises(BackendSchemaError):
        validate_request("tag_image", {"image_b64": "@@not-base64@@"})
    with pytest.raises(BackendSchemaError):
        validate_request("chat", {"prompt": "p", "temperature": 0.0,
                                  "max_tokens": "many"})
    with pytest.raises(BackendSchemaError):
        validate_request("segment_mask",
                         {"image_b64": "aGk=", "box": [5, 5, 1, 9]})


def test_validate_response_vector_length():
    validate_response("embed_text", {"dim": 2, "vector": [1.0, 0.0]})
    with pytest.raises(BackendSchemaError):
        validate_response("embed_text", {"dim": 3, "vector": [1.0, 0.0]})


def test_validate_response_tags_descending():
    good = {"tags": [{"label": "a", "prob": 0.9}, {"label": "b", "prob": 0.1}]}
    validate_response("tag_image", good)
    bad = {"tags": [{"label": "a", "prob": 0.1}, {"label": "b", "prob": 0.9}]}
    with pytest.raises(BackendSchemaError):
        validate_response("tag_image", bad)


def test_validate_response_audio_tag_needs_three():
    two = {"tags": [{"label": "speech", "prob": 0.9},
                    {"label": "music", "prob": 0.1}]}
    with pytest.raises(BackendSchemaError):
        validate_response("audio_tag", two)


def test_validate_response_rejects_bool_numbers():
    with pytest.raises(BackendSchemaError):
        validate_response("embed_text", {"dim": 1, "vector": [True]})


# --- transport --------------------------------------------------------------

def test_retry_then_success():
    ok = FakeResponse(200, {"dim": 1, "vector": [1.0]})
    session = FakeSession([requests.ConnectionError("down"), ok])
    sleeps = []
    conn = HttpConnection(one_endpoint(), session=session, attempts=3,
                          backoff_s=0.2, sleep=sleeps.append)
    assert conn.call("embed_text", {"text": "x"}) == {"dim": 1,
                                                      "vector": [1.0]}
    assert len(session.calls) == 2
    assert sleeps == [0.2]


def test_retry_exhaustion_raises_transport_error():
    session = FakeSession([FakeResponse(500)] * 3)
    sleeps = []
    conn = HttpConnection(one_endpoint(), session=session, attempts=3,
                          backoff_s=0.2, sleep=sleeps.append)
    with pytest.raises(BackendTransportError):
        conn.call("embed_text", {"text": "x"})
    assert len(session.calls) == 3
    assert sleeps == [0.2, 0.4]  # exponential backoff


def test_non_json_200_fails_fast():
    session = FakeSession([FakeResponse(200, payload=None, body=b"<html>")])
    conn = HttpConnection(one_endpoint(), session=session, attempts=3,
                          backoff_s=0.0, sleep=lambda s: None)
    with pytest.raises(BackendSchemaError):
        conn.call("embed_text", {"text": "x"})
    assert len(session.calls) == 1  # malformed body is not retried


def test_missing_endpoint():
    conn = HttpConnection({}, session=FakeSession([]))
    with pytest.raises(BackendTransportError):
        conn.call("chat", {})


def test_auth_token_header():
    ok = FakeResponse(200, {"dim": 1, "vector": [1.0]})
    session = FakeSession([ok])
    conn = HttpConnection(one_endpoint(auth_token="s3cret"), session=session)
    conn.call("embed_text", {"text": "x"})
    assert session.calls[0]["headers"]["Authorization"] == "Bearer s3cret"


def test_default_endpoints_cover_all_kinds():
    endpoints = default_endpoints("http://host:1234")
    assert set(endpoints) == set(KINDS)
    for kind, ep in endpoints.items():
        assert ep.url == f"http://host:1234/v1/{kind}"


def test_client_rejects_bad_request_before_send():
    class ExplodingConnection:
        def call(self, kind, request):
            raise AssertionError("must not be reached")

    client = BackendClient(ExplodingConnection())
    with pytest.raises(BackendSchemaError):
        client.call("embed_text", {"wrong": "field"})


def test_client_rejects_bad_response():
    class GarbageConnection:
        def call(self, kind, request):
            return {"dim": 2, "vector": [1.0]}

    client = BackendClient(GarbageConnection())
    with pytest.raises(BackendSchemaError):
        client.embed_text("hello")


def test_client_rejects_zero_norm_embedding():
    class ZeroConnection:
        def call(self, kind, request):
            return {"dim": 2, "vector": [0.0, 0.0]}

    client = BackendClient(ZeroConnection())
    with pytest.raises(BackendSchemaError):
        client.embed_text("hello")


# --- image helpers ----------------------------------------------------------

def test_image_png_roundtrip():
    image = demo_image(1)
    assert np.array_equal(decode_image(encode_image_png(image)), image)


# --- mock suite -------------------------------------------------------------

def test_mock_handles_every_kind():
    client = BackendClient(MockConnection(MockBackendSuite(seed=0)))
    image = demo_image(2)
    audio = demo_audio()
    window = SpeechSpan(0.0, 1.0)

    vec = client.embed_text("a red ball")
    assert vec.shape == (32,)
    assert np.linalg.norm(vec) == pytest.approx(1.0)

    assert client.embed_image(image).shape == (32,)

    tags = client.tag_image(image)
    assert len(tags) == 3
    assert all(b[1] <= a[1] for a, b in zip(tags, tags[1:]))

    dets = client.detect(image, [t for t, _ in tags], frame_idx=4)
    assert len(dets) == len(tags)
    for det in dets:
        assert det.frame_idx == 4
        x1, y1, x2, y2 = det.box
        assert 0 <= x1 < x2 <= image.shape[1]
        assert 0 <= y1 < y2 <= image.shape[0]

    mask = client.segment_mask(image, dets[0].box)
    assert (mask.height, mask.width) == image.shape[:2]
    assert mask.foreground_count > 0

    spans = client.vad(audio)
    assert spans
    for span in spans:
        assert 0.0 <= span.start_s < span.end_s <= 1.0 + 1e-9

    seg = client.asr(audio, window)
    assert seg.language == "en"
    assert seg.text
    assert seg.words  # fallback alignment kicks in

    audio_tags = client.audio_tag(audio, window)
    assert [t for t, _ in audio_tags] == ["speech", "music", "wind"]
    assert all(b[1] <= a[1] for a, b in zip(audio_tags, audio_tags[1:]))

    reply = client.chat("describe the scene")
    assert reply.startswith("[mock:")


def test_mock_vad_skips_tiny_audio():
    client = BackendClient(MockConnection(MockBackendSuite(seed=0)))
    assert client.vad(demo_audio(duration_s=0.1)) == []


def test_mock_is_deterministic_per_seed():
    a = BackendClient(MockConnection(MockBackendSuite(seed=5)))
    b = BackendClient(MockConnection(MockBackendSuite(seed=5)))
    c = BackendClient(MockConnection(MockBackendSuite(seed=6)))
    va, vb, vc = (cl.embed_text("same text") for cl in (a, b, c))
    assert np.array_equal(va, vb)
    assert not np.array_equal(va, vc)


def test_mock_judge_prompts_get_verdicts():
    client = BackendClient(MockConnection(MockBackendSuite(seed=0)))
    reply = client.chat('Rate it. Reply as {"pred": "n/a", "score": <1-5>}')
    verdict = json.loads(reply)
    assert verdict["pred"] in ("yes", "no")
    assert 1 <= verdict["score"] <= 5


def test_mock_script_fifo_and_rules():
    script = MockScript()
    script.add_chat("ping", "pong one")
    script.add_chat("ping", "pong two")
    script.add_chat_rule(lambda p: "ball" in p, "rule hit")
    suite = MockBackendSuite(seed=0, script=script)
    client = BackendClient(MockConnection(suite))
    assert client.chat("ping") == "pong one"
    assert client.chat("ping") == "pong two"
    assert client.chat("where is the ball") == "rule hit"
    assert client.chat("ping").startswith("[mock:")  # queue exhausted


def test_mock_script_non_chat_kind():
    request = {"text": "hello"}
    script = MockScript()
    script.add("embed_text", request, {"dim": 2, "vector": [1.0, 0.0]})
    client = BackendClient(MockConnection(MockBackendSuite(seed=0,
                                                           script=script)))
    assert np.array_equal(client.embed_text("hello"), np.array([1.0, 0.0]))


# --- local HTTP server ------------------------------------------------------

def test_http_round_trip_through_real_server():
    with ServerThread(MockBackendSuite(seed=3)) as server:
        conn = HttpConnection(default_endpoints(server.base_url))
        client = BackendClient(conn)
        vec = client.embed_text("over the wire")
        assert vec.shape == (32,)

        direct = BackendClient(MockConnection(MockBackendSuite(seed=3)))
        assert np.allclose(vec, direct.embed_text("over the wire"),
                           atol=1e-12)


def test_server_rejects_unknown_path_and_bad_json():
    with ServerThread(MockBackendSuite(seed=0)) as server:
        bogus = requests.post(f"{server.base_url}/v1/summon", json={},
                              timeout=5)
        assert bogus.status_code == 404
        broken = requests.post(f"{server.base_url}/v1/embed_text",
                               data=b"{not json", timeout=5)
        assert broken.status_code == 400
