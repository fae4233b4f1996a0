"""Tests for video ingestion, the artifact cache, and prompt templates."""

import io
import json
import wave

import numpy as np
import pytest

from videoground.cache import (
    ArtifactCache,
    atomic_write_bytes,
    atomic_write_text,
    bytes_digest,
    dir_digest,
    file_digest,
    input_digest,
)
from videoground.errors import IngestError, PipelineError
from videoground.fixtures import build_demo_video
from videoground.ingest import (
    TARGET_SAMPLE_RATE,
    ingest,
    normalize_audio,
    register_decoder,
)
from videoground.templates import load_template, template_hashes


def wav_bytes(samples, rate, width=2, channels=1):
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(samples.tobytes())
    return buf.getvalue()


# --- ingest -----------------------------------------------------------------

def test_ingest_demo_video(tmp_path):
    root = build_demo_video(tmp_path / "demo")
    meta, frames, audio = ingest(root)
    assert meta.video_id == "demo"
    assert meta.fps == 10.0
    assert meta.frame_count == 60
    assert (meta.height, meta.width) == (48, 64)
    assert len(frames) == 60
    assert frames.fps == 10.0
    assert audio is not None
    assert audio.sample_rate == TARGET_SAMPLE_RATE
    assert meta.to_record()["frame_count"] == 60


def test_ingest_without_audio(tmp_path):
    root = build_demo_video(tmp_path / "silent", with_audio=False)
    _, _, audio = ingest(root)
    assert audio is None


def test_ingest_video_id_defaults_to_dir_name(tmp_path):
    root = tmp_path / "clip42"
    build_demo_video(root)
    (root / "meta.json").write_text(json.dumps({"fps": 10.0}))
    meta, _, _ = ingest(root)
    assert meta.video_id == "clip42"


def test_ingest_missing_meta(tmp_path):
    root = build_demo_video(tmp_path / "demo")
    (root / "meta.json").unlink()
    with pytest.raises(IngestError):
        ingest(root)


def test_ingest_bad_fps(tmp_path):
    root = build_demo_video(tmp_path / "demo")
    (root / "meta.json").write_text(json.dumps({"fps": 0}))
    with pytest.raises(IngestError):
        ingest(root)


def test_ingest_inconsistent_frame_sizes(tmp_path):
    from PIL import Image

    root = build_demo_video(tmp_path / "demo")
    odd = Image.new("RGB", (10, 10))
    odd.save(root / "frames" / "frame_0000.png")
    with pytest.raises(IngestError):
        ingest(root)


def test_ingest_unknown_container(tmp_path):
    target = tmp_path / "movie.xyz"
    target.write_bytes(b"data")
    with pytest.raises(IngestError):
        ingest(target)


def test_register_decoder(tmp_path):
    calls = []

    def fake_decoder(path):
        calls.append(path)
        raise IngestError("decoder stub")

    register_decoder(".fake", fake_decoder)
    target = tmp_path / "clip.fake"
    target.write_bytes(b"data")
    with pytest.raises(IngestError, match="decoder stub"):
        ingest(target)
    assert calls == [target]


def test_normalize_audio_resamples():
    samples = np.zeros(8000, dtype=np.int16)
    track = normalize_audio(wav_bytes(samples, rate=8000))
    assert track.sample_rate == TARGET_SAMPLE_RATE
    assert len(track.samples) == 16000


def test_normalize_audio_mixes_stereo():
    left = np.full(100, 1000, dtype=np.int16)
    right = np.full(100, 3000, dtype=np.int16)
    stereo = np.empty(200, dtype=np.int16)
    stereo[0::2] = left
    stereo[1::2] = right
    track = normalize_audio(wav_bytes(stereo, rate=16000, channels=2))
    assert np.all(track.samples == 2000)


def test_normalize_audio_widens_8bit():
    # 8-bit WAV is unsigned around 128.
    samples = np.full(100, 128, dtype=np.uint8)
    track = normalize_audio(wav_bytes(samples, rate=16000, width=1))
    assert track.samples.dtype == np.int16
    assert np.all(np.abs(track.samples.astype(np.int32)) <= 256)


# --- cache ------------------------------------------------------------------

def test_bytes_and_file_digest(tmp_path):
    assert bytes_digest(b"abc") == bytes_digest(b"abc")
    assert bytes_digest(b"abc") != bytes_digest(b"abd")
    assert len(bytes_digest(b"")) == 64
    path = tmp_path / "f.bin"
    path.write_bytes(b"abc")
    assert file_digest(path) == bytes_digest(b"abc")


def test_dir_digest_covers_names_and_content(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for root in (a, b):
        (root / "sub").mkdir(parents=True)
        (root / "x.txt").write_text("one")
        (root / "sub" / "y.txt").write_text("two")
    assert dir_digest(a) == dir_digest(b)
    (b / "x.txt").write_text("changed")
    assert dir_digest(a) != dir_digest(b)
    (b / "x.txt").write_text("one")
    (b / "z.txt").write_text("")
    assert dir_digest(a) != dir_digest(b)


def test_input_digest_dispatches(tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("hello")
    assert input_digest(f) == file_digest(f)
    assert input_digest(tmp_path) == dir_digest(tmp_path)


def test_atomic_write(tmp_path):
    target = tmp_path / "nested" / "out.bin"
    target.parent.mkdir()
    atomic_write_bytes(target, b"one")
    assert target.read_bytes() == b"one"
    atomic_write_bytes(target, b"two")
    assert target.read_bytes() == b"two"
    atomic_write_text(target, "three")
    assert target.read_text() == "three"
    assert list(target.parent.iterdir()) == [target]  # no temp leftovers


def test_cache_store_and_lookup(tmp_path):
    cache = ArtifactCache(tmp_path / "cache")
    payload = b'{"rows": []}'
    cache.store("scenes", "in1", "cfg1", payload)
    assert cache.lookup("scenes", "in1", "cfg1") == payload
    assert cache.lookup("scenes", "in2", "cfg1") is None
    assert cache.lookup("scenes", "in1", "cfg2") is None
    assert cache.lookup("ground", "in1", "cfg1") is None


def test_cache_detects_corruption(tmp_path):
    root = tmp_path / "cache"
    cache = ArtifactCache(root)
    cache.store("scenes", "in1", "cfg1", b"payload")
    blobs = list(root.rglob("*.bin"))
    assert len(blobs) == 1
    blobs[0].write_bytes(b"tampered")
    assert cache.lookup("scenes", "in1", "cfg1") is None


def test_cache_overwrite_same_key(tmp_path):
    cache = ArtifactCache(tmp_path / "cache")
    cache.store("scenes", "in1", "cfg1", b"v1")
    cache.store("scenes", "in1", "cfg1", b"v2")
    assert cache.lookup("scenes", "in1", "cfg1") == b"v2"


# --- templates --------------------------------------------------------------

ALL_TEMPLATES = (
    "conversation_prompt",
    "phrase_extraction",
    "entity_matching",
    "question_mining",
    "judge_correctness",
    "judge_detail",
    "judge_context",
    "judge_temporal",
    "judge_consistency",
    "judge_qa",
)


def test_all_templates_load():
    for name in ALL_TEMPLATES:
        template = load_template(name)
        assert template.text.strip()
        assert len(template.hash) == 12
        int(template.hash, 16)  # hex digest


def test_template_cache_returns_same_object():
    assert load_template("judge_qa") is load_template("judge_qa")


def test_unknown_template():
    with pytest.raises(PipelineError):
        load_template("nonexistent")


def test_judge_templates_request_json_verdicts():
    for name in ALL_TEMPLATES:
        if name.startswith("judge_"):
            assert '"pred"' in load_template(name).text


def test_template_hashes_map():
    hashes = template_hashes(["judge_qa", "phrase_extraction"])
    assert set(hashes) == {"judge_qa", "phrase_extraction"}
    assert hashes["judge_qa"] == load_template("judge_qa").hash


def test_placeholders_present():
    assert "{response}" in load_template("phrase_extraction").text
    assert "{phrases}" in load_template("entity_matching").text
    assert "{objects}" in load_template("entity_matching").text
    assert "{caption}" in load_template("question_mining").text
    for name in ("judge_correctness", "judge_detail", "judge_context",
                 "judge_temporal"):
        text = load_template(name).text
        assert "{question}" in text
        assert "{reference_answer}" in text
        assert "{model_answer}" in text
    consistency = load_template("judge_consistency").text
    assert "{question2}" in consistency
    assert "{model_answer2}" in consistency
