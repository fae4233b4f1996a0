"""Bundled synthetic fixture: a tiny 3-shot video plus GT annotations.

The video is 60 frames of 64x48 RGB at 10 fps, three 20-frame shots
with distinct solid backgrounds and a static bright square per shot.
Frames within a shot are byte-identical, so the content score is 0
inside shots and well above the default threshold at the two cuts
(frames 20 and 40). Build one on disk with
``python -m videoground.fixtures OUTDIR``.
"""

from __future__ import annotations

import io
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .cache import atomic_write_bytes

FRAME_WIDTH = 64
FRAME_HEIGHT = 48
SEGMENT_LEN = 20
FPS = 10.0
SQUARE_SIDE = 12

# (background RGB, square top-left) per shot; hues far apart so the cut
# score clears the default threshold 27.
SEGMENT_SPECS = (
    ((200, 40, 40), (8, 8)),
    ((40, 200, 80), (26, 18)),
    ((60, 80, 220), (40, 28)),
)

AUDIO_RATE = 16000
AUDIO_SECONDS = 2.0
AUDIO_FREQ_HZ = 440.0


def demo_frame(segment: int) -> np.ndarray:
    bg, (x, y) = SEGMENT_SPECS[segment]
    frame = np.empty((FRAME_HEIGHT, FRAME_WIDTH, 3), dtype=np.uint8)
    frame[:, :] = bg
    frame[y : y + SQUARE_SIDE, x : x + SQUARE_SIDE] = (255, 255, 255)
    return frame


def demo_frames() -> list[np.ndarray]:
    return [demo_frame(i // SEGMENT_LEN) for i in range(SEGMENT_LEN * len(SEGMENT_SPECS))]


def demo_audio_samples() -> np.ndarray:
    t = np.arange(int(AUDIO_RATE * AUDIO_SECONDS), dtype=np.float64) / AUDIO_RATE
    wave = 8000.0 * np.sin(2.0 * math.pi * AUDIO_FREQ_HZ * t)
    return np.rint(wave).astype(np.int16)


def build_demo_video(
    dest: str | Path, video_id: str = "demo", with_audio: bool = True
) -> Path:
    """Write the fixture as an ingestable frame directory; returns its path."""
    from .audio import AudioTrack

    root = Path(dest)
    frame_dir = root / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    meta = {"video_id": video_id, "fps": FPS}
    atomic_write_bytes(root / "meta.json", (json.dumps(meta, sort_keys=True) + "\n").encode())
    for i, frame in enumerate(demo_frames()):
        buf = io.BytesIO()
        Image.fromarray(frame, mode="RGB").save(buf, format="PNG")
        atomic_write_bytes(frame_dir / f"frame_{i:04d}.png", buf.getvalue())
    if with_audio:
        track = AudioTrack(samples=demo_audio_samples(), sample_rate=AUDIO_RATE)
        atomic_write_bytes(root / "audio.wav", track.to_wav_bytes())
    return root


def build_grounding_gt(path: str | Path, video_id: str = "demo") -> Path:
    """One interrogative GT item over the fixture's first shot."""
    item = {
        "video_id": video_id,
        "prompt": "where is the ball in the video?",
        "prompt_type": "interrogative",
        "boxes": {"0": [8, 8, 20, 20], "10": [8, 8, 20, 20]},
    }
    payload = json.dumps(item, sort_keys=True) + "\n"
    atomic_write_bytes(path, payload.encode("utf-8"))
    return Path(path)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Build the bundled demo fixture.")
    parser.add_argument("outdir", help="Directory to create the fixture in.")
    parser.add_argument("--video-id", default="demo")
    parser.add_argument("--no-audio", action="store_true")
    parser.add_argument("--gt", action="store_true",
                        help="Also write gt.jsonl next to the video directory.")
    args = parser.parse_args(argv)
    root = Path(args.outdir)
    video_dir = build_demo_video(
        root / args.video_id, video_id=args.video_id, with_audio=not args.no_audio
    )
    print(f"wrote fixture video to {video_dir}")
    if args.gt:
        gt_path = build_grounding_gt(root / "gt.jsonl", video_id=args.video_id)
        print(f"wrote grounding GT to {gt_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
