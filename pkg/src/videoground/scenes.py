"""Content-change shot segmentation.

Grounding runs per consistent-camera segment, so videos are first split
wherever the frame-to-frame content score jumps. The score is the mean
absolute HSV difference between consecutive frames, the classic fast-cut
content detector: cheap, threshold-based, and blind to gradual fades by
design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError

DEFAULT_THRESHOLD = 27.0
DEFAULT_MIN_LEN = 15

# Longer image side after downscaling for scoring.
SCORE_MAX_SIDE = 256


@dataclass(frozen=True)
class SceneSegment:
    """Half-open frame span [start_frame, end_frame)."""

    start_frame: int
    end_frame: int

    def __post_init__(self):
        if not (0 <= self.start_frame < self.end_frame):
            raise InvalidInputError(
                f"bad segment [{self.start_frame}, {self.end_frame})"
            )

    def __len__(self) -> int:
        return self.end_frame - self.start_frame

    def to_record(self, video_id: str, fps: float) -> dict:
        return {
            "video_id": video_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "start_s": self.start_frame / fps,
            "end_s": self.end_frame / fps,
        }


class FrameSequence:
    """Decoded 8-bit RGB frames plus their frame rate.

    All frames must share dimensions; enforced once here so downstream
    code can index freely.
    """

    def __init__(self, frames: list[np.ndarray], fps: float):
        if fps <= 0:
            raise InvalidInputError(f"fps must be positive, got {fps}")
        shape = None
        for i, frame in enumerate(frames):
            if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
                raise ShapeError(f"frame {i}: expected uint8 (h, w, 3), got "
                                 f"{frame.dtype} {frame.shape}")
            if shape is None:
                shape = frame.shape
            elif frame.shape != shape:
                raise ShapeError(f"frame {i}: size {frame.shape} != {shape}")
        self.frames = frames
        self.fps = float(fps)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, idx: int) -> np.ndarray:
        return self.frames[idx]

    @property
    def height(self) -> int:
        return self.frames[0].shape[0] if self.frames else 0

    @property
    def width(self) -> int:
        return self.frames[0].shape[1] if self.frames else 0


def rgb_to_hsv255(rgb: np.ndarray) -> np.ndarray:
    """8-bit RGB image to float HSV with all three channels on a 0..255 scale.

    Standard hexcone formulation; hue is rescaled from degrees so the
    channels can be averaged together. Returns float64 (h, w, 3).
    """
    rgb = rgb.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.max(rgb, axis=-1)
    c_min = np.min(rgb, axis=-1)
    delta = v - c_min

    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(v > 0, 255.0 * delta / v, 0.0)

        hue = np.zeros_like(v)
        nonzero = delta > 0
        r_max = nonzero & (v == r)
        g_max = nonzero & ~r_max & (v == g)
        b_max = nonzero & ~r_max & ~g_max
        hue = np.where(r_max, ((g - b) / delta) % 6.0, hue)
        hue = np.where(g_max, (b - r) / delta + 2.0, hue)
        hue = np.where(b_max, (r - g) / delta + 4.0, hue)
    h = hue * 60.0 / 360.0 * 255.0
    return np.stack([h, s, v], axis=-1)


def _downscale_stride(height: int, width: int) -> int:
    return max(1, math.ceil(max(height, width) / SCORE_MAX_SIDE))


def downscale_for_score(img: np.ndarray) -> np.ndarray:
    """Subsample with a uniform integer stride so the longer side is <= 256.

    Nearest-neighbor by stride keeps the operation exactly reproducible
    in a plain pixel loop.
    """
    stride = _downscale_stride(img.shape[0], img.shape[1])
    return img[::stride, ::stride]


def frame_content_score(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over pixels of the average absolute HSV channel difference.

    Score lives in [0, 255]; identical frames score 0. Both frames are
    downscaled with the same stride before conversion.
    """
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    hsv_a = rgb_to_hsv255(downscale_for_score(a))
    hsv_b = rgb_to_hsv255(downscale_for_score(b))
    return float(np.mean(np.abs(hsv_a - hsv_b)))


def detect_scenes(
    video: FrameSequence,
    threshold: float = DEFAULT_THRESHOLD,
    min_len: int = DEFAULT_MIN_LEN,
) -> list[SceneSegment]:
    """Sequential scan placing a cut where the content score exceeds ``threshold``.

    A cut at frame i starts a new segment at i; it is only taken once the
    running segment has at least ``min_len`` frames, so every emitted
    segment except possibly the last satisfies the minimum length. The
    result always partitions [0, len(video)).
    """
    if threshold <= 0:
        raise InvalidInputError("threshold must be positive")
    if min_len < 1:
        raise InvalidInputError("min_len must be >= 1")
    n = len(video)
    if n == 0:
        return []

    cuts = []
    last_cut = 0
    for i in range(1, n):
        if i - last_cut < min_len:
            continue
        if frame_content_score(video[i - 1], video[i]) > threshold:
            cuts.append(i)
            last_cut = i

    bounds = [0] + cuts + [n]
    return [SceneSegment(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
