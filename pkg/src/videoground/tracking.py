"""Class-agnostic greedy IoU tracking.

Deterministic stand-in for an online tracker backend: per frame, the
(track, detection) pairs are sorted by IoU and matched greedily above a
gate, each side used at most once. Unmatched detections open new tracks;
a track that misses too many consecutive frames is retired and never
revived, so a reappearing object gets a fresh identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import InvalidInputError
from .geometry import Box, MaskRLE, iou, validate_box

DEFAULT_IOU_GATE = 0.3
DEFAULT_MAX_MISSED = 5


@dataclass(frozen=True)
class Detection:
    frame_idx: int
    box: Box
    score: float
    tag: str

    def __post_init__(self):
        object.__setattr__(self, "box", validate_box(self.box))
        if not (0.0 <= self.score <= 1.0):
            raise InvalidInputError(f"score {self.score} out of [0, 1]")


@dataclass(frozen=True)
class Observation:
    frame_idx: int
    box: Box
    score: float
    mask: MaskRLE | None = None


@dataclass
class Track:
    track_id: int
    tag: str
    observations: list[Observation] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.observations, self.observations[1:]):
            if b.frame_idx <= a.frame_idx:
                raise InvalidInputError(
                    f"track {self.track_id}: frame indices not strictly increasing"
                )

    @property
    def first_frame(self) -> int:
        return self.observations[0].frame_idx

    @property
    def last_frame(self) -> int:
        return self.observations[-1].frame_idx

    def best_observation(self) -> Observation:
        """Highest-score observation; earliest frame wins ties."""
        return max(self.observations, key=lambda o: (o.score, -o.frame_idx))

    def box_at(self, frame_idx: int) -> Box | None:
        """Box at ``frame_idx``, linearly interpolated between observations.

        Returns None outside the observed span; tracks do not extrapolate.
        """
        obs = self.observations
        if frame_idx < obs[0].frame_idx or frame_idx > obs[-1].frame_idx:
            return None
        for i, o in enumerate(obs):
            if o.frame_idx == frame_idx:
                return o.box
            if o.frame_idx > frame_idx:
                prev = obs[i - 1]
                frac = (frame_idx - prev.frame_idx) / (o.frame_idx - prev.frame_idx)
                return tuple(
                    p + (c - p) * frac for p, c in zip(prev.box, o.box)
                )  # type: ignore[return-value]
        return None

    def to_record(self, video_id: str, phrase: str | None = None,
                  similarity: float | None = None) -> dict:
        rec = {
            "video_id": video_id,
            "track_id": self.track_id,
            "tag": self.tag,
            "observations": [
                {
                    "frame_idx": o.frame_idx,
                    "box": list(o.box),
                    "score": o.score,
                    **({"mask_rle": o.mask.to_record()} if o.mask is not None else {}),
                }
                for o in self.observations
            ],
        }
        if phrase is not None:
            rec["phrase"] = phrase
        if similarity is not None:
            rec["similarity"] = similarity
        return rec


class _ActiveTrack:
    __slots__ = ("track", "missed")

    def __init__(self, track: Track):
        self.track = track
        self.missed = 0


def associate_tracks(
    frames: Sequence[Sequence[Detection]],
    iou_gate: float = DEFAULT_IOU_GATE,
    max_missed: int = DEFAULT_MAX_MISSED,
    first_track_id: int = 0,
) -> list[Track]:
    """Greedy per-frame association of detections into identity tracks.

    ``frames`` is the per-step detection list in increasing frame order;
    an empty step still advances every active track's miss counter. New
    ids are assigned to unmatched detections in (x1, y1, x2, y2) order so
    identity numbering is independent of detector output order. Every
    input detection lands in exactly one track.
    """
    prev_frame_idx: int | None = None
    active: list[_ActiveTrack] = []
    finished: list[Track] = []
    next_id = first_track_id

    for step in frames:
        if step:
            idxs = {d.frame_idx for d in step}
            if len(idxs) != 1:
                raise InvalidInputError(f"one frame per step, got indices {sorted(idxs)}")
            frame_idx = step[0].frame_idx
            if prev_frame_idx is not None and frame_idx <= prev_frame_idx:
                raise InvalidInputError("frames must be processed in increasing order")
            prev_frame_idx = frame_idx

        # Greedy matching: best-overlap pairs first, ties broken by
        # track id then detection order for determinism.
        pairs = []
        for a in active:
            last_box = a.track.observations[-1].box
            for j, det in enumerate(step):
                overlap = iou(last_box, det.box)
                if overlap >= iou_gate:
                    pairs.append((overlap, a.track.track_id, j, a, det))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))

        matched_tracks = set()
        matched_dets = set()
        for overlap, tid, j, a, det in pairs:
            if tid in matched_tracks or j in matched_dets:
                continue
            matched_tracks.add(tid)
            matched_dets.add(j)
            a.track.observations.append(
                Observation(det.frame_idx, det.box, det.score)
            )
            a.missed = 0

        still_active = []
        for a in active:
            if a.track.track_id in matched_tracks:
                still_active.append(a)
                continue
            a.missed += 1
            if a.missed > max_missed:
                finished.append(a.track)
            else:
                still_active.append(a)
        active = still_active

        new_dets = [d for j, d in enumerate(step) if j not in matched_dets]
        for det in sorted(new_dets, key=lambda d: d.box):
            track = Track(
                track_id=next_id,
                tag=det.tag,
                observations=[Observation(det.frame_idx, det.box, det.score)],
            )
            next_id += 1
            active.append(_ActiveTrack(track))

    finished.extend(a.track for a in active)
    return sorted(finished, key=lambda t: t.track_id)
