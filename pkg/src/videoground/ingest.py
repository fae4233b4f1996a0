"""Media ingestion: frame directories now, containers via plug-ins.

The native layout is a directory holding ``meta.json`` (video_id, fps),
a ``frames/`` subdirectory of image files decoded in sorted-name order,
and an optional ``audio.wav``. Audio is normalized to 16 kHz mono PCM
regardless of source format (channel mean, linear resample). Container
formats (mp4 and friends) are not decoded in-repo: a decoder callable
can be registered per suffix, and asking for an unregistered suffix is
an error rather than a silent fallback.
"""

from __future__ import annotations

import io
import json
import logging
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image, UnidentifiedImageError

from .audio import AudioTrack
from .errors import IngestError
from .scenes import FrameSequence

logger = logging.getLogger(__name__)

TARGET_SAMPLE_RATE = 16000

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    path: str
    fps: float
    frame_count: int
    width: int
    height: int
    channels: int = 3

    def __post_init__(self):
        if self.fps <= 0:
            raise IngestError(f"fps must be positive, got {self.fps}")
        if self.frame_count < 1:
            raise IngestError("video must have at least one frame")

    def to_record(self) -> dict:
        return {
            "video_id": self.video_id,
            "fps": self.fps,
            "frame_count": self.frame_count,
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
        }


IngestResult = tuple[VideoMeta, FrameSequence, AudioTrack | None]

_DECODERS: dict[str, Callable[[Path], IngestResult]] = {}


def register_decoder(suffix: str, decoder: Callable[[Path], IngestResult]) -> None:
    """Register a container decoder for a file suffix like '.mp4'."""
    _DECODERS[suffix.lower()] = decoder


def normalize_audio(raw: bytes) -> AudioTrack:
    """Any PCM WAV to 16 kHz mono int16: channel mean, linear resample."""
    try:
        with wave.open(io.BytesIO(raw), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
    except (wave.Error, EOFError) as exc:
        raise IngestError(f"unreadable WAV audio: {exc}")
    if width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float64)
    elif width == 1:
        samples = (np.frombuffer(frames, dtype=np.uint8).astype(np.float64) - 128.0) * 256.0
    else:
        raise IngestError(f"unsupported WAV sample width {width}")
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if rate != TARGET_SAMPLE_RATE and samples.size:
        duration = samples.size / rate
        n_out = max(1, int(round(duration * TARGET_SAMPLE_RATE)))
        src_t = np.arange(samples.size, dtype=np.float64) / rate
        dst_t = np.arange(n_out, dtype=np.float64) / TARGET_SAMPLE_RATE
        samples = np.interp(dst_t, src_t, samples)
    clipped = np.clip(np.rint(samples), -32768, 32767).astype(np.int16)
    return AudioTrack(samples=clipped, sample_rate=TARGET_SAMPLE_RATE)


def _load_frame_dir(path: Path) -> IngestResult:
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise IngestError(f"missing metadata JSON: {meta_path}")
    try:
        meta_raw = json.loads(meta_path.read_text(encoding="utf-8"))
    except (ValueError, OSError) as exc:
        raise IngestError(f"unreadable metadata JSON: {exc}")
    if not isinstance(meta_raw.get("fps"), (int, float)) or meta_raw["fps"] <= 0:
        raise IngestError("metadata must carry a positive fps")
    video_id = meta_raw.get("video_id") or path.name

    frame_dir = path / "frames"
    if not frame_dir.is_dir():
        raise IngestError(f"missing frames directory: {frame_dir}")
    frame_paths = sorted(
        p for p in frame_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES
    )
    if not frame_paths:
        raise IngestError(f"no frames found under {frame_dir}")
    frames = []
    shape = None
    for fp in frame_paths:
        try:
            with Image.open(fp) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (UnidentifiedImageError, OSError) as exc:
            raise IngestError(f"unreadable frame {fp}: {exc}")
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise IngestError(
                f"inconsistent frame size at {fp}: {arr.shape} vs {shape}"
            )
        frames.append(arr)

    audio = None
    audio_path = path / "audio.wav"
    if audio_path.is_file():
        audio = normalize_audio(audio_path.read_bytes())

    height, width = shape[0], shape[1]
    meta = VideoMeta(
        video_id=video_id,
        path=str(path),
        fps=float(meta_raw["fps"]),
        frame_count=len(frames),
        width=width,
        height=height,
    )
    return meta, FrameSequence(frames, fps=meta.fps), audio


def ingest(path: str | Path) -> IngestResult:
    """Decode a frame directory or a registered container format."""
    p = Path(path)
    if p.is_dir():
        return _load_frame_dir(p)
    suffix = p.suffix.lower()
    decoder = _DECODERS.get(suffix)
    if decoder is None:
        raise IngestError(
            f"no decoder registered for {suffix or p.name!r}; "
            "ingest frame directories or register_decoder() a container decoder"
        )
    if not p.exists():
        raise IngestError(f"no such file: {p}")
    return decoder(p)
