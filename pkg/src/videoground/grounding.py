"""Phrase-to-object grounding over scene segments.

Given a model response about a video, extract the noun phrases worth
localizing, detect and track candidate objects within each shot (no
re-identification across cuts), and assign phrases to tracks either by
text-image embedding cosine similarity or by an LLM entity matcher.
Segments are independent: each is tagged, detected, and tracked in its
own worker, then track ids are renumbered globally in segment order so
output is deterministic regardless of worker scheduling.
"""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .backends import BackendClient
from .errors import BackendError, InvalidInputError, ShapeError
from .geometry import pad_box
from .scenes import FrameSequence, SceneSegment
from .templates import load_template
from .tracking import (
    DEFAULT_IOU_GATE,
    DEFAULT_MAX_MISSED,
    Observation,
    Track,
    associate_tracks,
)

logger = logging.getLogger(__name__)

DEFAULT_SIM_FLOOR = 0.25
DEFAULT_CROP_PAD_FRAC = 0.1
MATCHERS = ("embedding", "llm")


def normalize_phrase(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip().lower())


@dataclass(frozen=True)
class NounPhrase:
    text: str
    source: str = "llm"

    def __post_init__(self):
        if not self.text:
            raise InvalidInputError("phrase text must be nonempty")
        if self.text != normalize_phrase(self.text):
            raise InvalidInputError("phrase text must be lowercased and space-normalized")
        if self.source not in ("llm", "tag_fallback"):
            raise InvalidInputError(f"unknown phrase source {self.source!r}")


@dataclass(frozen=True)
class PhraseMatch:
    phrase: NounPhrase
    track_id: int
    similarity: float

    def __post_init__(self):
        if not -1.0 <= self.similarity <= 1.0:
            raise InvalidInputError("similarity must be in [-1, 1]")


@dataclass(frozen=True)
class GroundingOptions:
    iou_gate: float = DEFAULT_IOU_GATE
    max_missed: int = DEFAULT_MAX_MISSED
    sim_floor: float = DEFAULT_SIM_FLOOR
    matcher: str = "embedding"
    with_masks: bool = False
    crop_pad_frac: float = DEFAULT_CROP_PAD_FRAC
    sample_per_s: float = 1.0

    def __post_init__(self):
        if self.matcher not in MATCHERS:
            raise InvalidInputError(f"matcher must be one of {MATCHERS}")
        if self.sample_per_s <= 0:
            raise InvalidInputError("sample_per_s must be positive")


@dataclass(frozen=True)
class SegmentFailure:
    segment: SceneSegment
    error: str


@dataclass
class GroundingResult:
    tracks: list[Track]
    matches: list[PhraseMatch]
    phrases: list[NounPhrase]
    failures: list[SegmentFailure]

    def best_match_for_track(self, track_id: int) -> PhraseMatch | None:
        """Highest-similarity match on this track; ties keep phrase order."""
        best = None
        for m in self.matches:
            if m.track_id != track_id:
                continue
            if best is None or m.similarity > best.similarity:
                best = m
        return best

    def to_records(self, video_id: str) -> list[dict]:
        records = []
        for track in self.tracks:
            match = self.best_match_for_track(track.track_id)
            records.append(
                track.to_record(
                    video_id,
                    phrase=match.phrase.text if match else None,
                    similarity=match.similarity if match else None,
                )
            )
        return records


# ---------------------------------------------------------------------------
# Phrase extraction
# ---------------------------------------------------------------------------

_LIST_PREFIX = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def parse_phrase_list(reply: str) -> list[str]:
    """Newline/comma list to deduplicated, normalized phrase strings."""
    seen = set()
    out = []
    for chunk in re.split(r"[\n,]", reply):
        text = normalize_phrase(_LIST_PREFIX.sub("", chunk))
        if text and text not in seen:
            seen.add(text)
            out.append(text)
    return out


def extract_noun_phrases(
    response_text: str,
    client: BackendClient,
    fallback_tags: list[str] | None = None,
) -> list[NounPhrase]:
    """Ask the chat backend for the key noun phrases in a response.

    A failed or empty reply falls back to matching the response against
    the frame-tag vocabulary when one is supplied.
    """
    if not response_text.strip():
        raise InvalidInputError("response text must be nonempty")
    prompt = load_template("phrase_extraction").text.format(response=response_text)
    phrases: list[str] = []
    try:
        phrases = parse_phrase_list(client.chat(prompt))
    except BackendError as exc:
        logger.warning("phrase extraction backend failed: %s", exc)
    if phrases:
        return [NounPhrase(p, source="llm") for p in phrases]
    if fallback_tags:
        return [select_key_phrase(response_text, fallback_tags)]
    raise InvalidInputError("phrase extraction produced nothing and no fallback tags given")


def select_key_phrase(response_text: str, frame_tags: list[str]) -> NounPhrase:
    """Pick the tag best supported by the response.

    Longest tag occurring as a substring of the normalized response wins,
    ties going to the earliest occurrence; when no tag occurs, fall back
    to the tag seen most often across frames.
    """
    if not frame_tags:
        raise InvalidInputError("frame tag list must be nonempty")
    response = normalize_phrase(response_text)
    best: tuple[int, int, str] | None = None
    for tag in frame_tags:
        norm = normalize_phrase(tag)
        if not norm:
            continue
        pos = response.find(norm)
        if pos < 0:
            continue
        key = (-len(norm), pos, norm)
        if best is None or key < best:
            best = key
    if best is not None:
        return NounPhrase(best[2], source="tag_fallback")
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for i, tag in enumerate(frame_tags):
        norm = normalize_phrase(tag)
        if not norm:
            continue
        counts[norm] = counts.get(norm, 0) + 1
        order.setdefault(norm, i)
    if not counts:
        raise InvalidInputError("frame tag list has no usable tags")
    winner = min(counts, key=lambda t: (-counts[t], order[t]))
    return NounPhrase(winner, source="tag_fallback")


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def representative_crop(
    track: Track, frames: FrameSequence, pad_frac: float = DEFAULT_CROP_PAD_FRAC
) -> np.ndarray:
    """Crop around the track's highest-score observation, padded and clipped."""
    obs = track.best_observation()
    box = pad_box(obs.box, pad_frac, frames.width, frames.height)
    x1 = int(math.floor(box[0]))
    y1 = int(math.floor(box[1]))
    x2 = max(x1 + 1, int(math.ceil(box[2])))
    y2 = max(y1 + 1, int(math.ceil(box[3])))
    return frames[obs.frame_idx][y1:y2, x1:x2]


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"embedding widths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInputError("cannot take cosine of a zero vector")
    return float(min(1.0, max(-1.0, float(a @ b) / (na * nb))))


def assign_by_similarity(
    phrases: list[NounPhrase],
    phrase_vecs: list[np.ndarray],
    track_ids: list[int],
    track_vecs: list[np.ndarray],
    sim_floor: float,
) -> list[PhraseMatch]:
    """Argmax cosine assignment; ties favor the lowest track id."""
    matches = []
    for phrase, pvec in zip(phrases, phrase_vecs):
        best_id = None
        best_sim = -2.0
        for tid, tvec in sorted(zip(track_ids, track_vecs), key=lambda p: p[0]):
            sim = cosine_similarity(pvec, tvec)
            if sim > best_sim:
                best_sim = sim
                best_id = tid
        if best_id is not None and best_sim >= sim_floor:
            matches.append(PhraseMatch(phrase, best_id, best_sim))
    return matches


def match_phrases_embedding(
    phrases: list[NounPhrase],
    tracks: list[Track],
    client: BackendClient,
    sim_floor: float = DEFAULT_SIM_FLOOR,
    crops: dict[int, np.ndarray] | None = None,
    frames: FrameSequence | None = None,
    crop_pad_frac: float = DEFAULT_CROP_PAD_FRAC,
) -> list[PhraseMatch]:
    """Assign phrases to tracks by text-crop embedding cosine.

    Representative crops may be precomputed (``crops``, keyed by track
    id) or derived from ``frames``.
    """
    if not phrases or not tracks:
        return []
    if crops is None:
        if frames is None:
            raise InvalidInputError("need either crops or frames to embed tracks")
        crops = {t.track_id: representative_crop(t, frames, crop_pad_frac) for t in tracks}
    phrase_vecs = [client.embed_text(p.text) for p in phrases]
    track_ids = [t.track_id for t in tracks]
    track_vecs = [client.embed_image(crops[t.track_id]) for t in tracks]
    return assign_by_similarity(phrases, phrase_vecs, track_ids, track_vecs, sim_floor)


def match_phrases_llm(
    phrases: list[NounPhrase],
    tracks: list[Track],
    client: BackendClient,
) -> list[PhraseMatch]:
    """Assign phrases to tracks via the chat entity matcher.

    The reply is parsed as ``phrase->track_id`` lines; pairs naming an
    unknown phrase or track id are dropped. Matches carry similarity 1.0
    since the matcher asserts identity rather than scoring it.
    """
    if not phrases or not tracks:
        return []
    by_text = {p.text: p for p in phrases}
    valid_ids = {t.track_id for t in tracks}
    objects = "\n".join(f"{t.track_id}: {t.tag}" for t in tracks)
    prompt = load_template("entity_matching").text.format(
        phrases="\n".join(by_text), objects=objects
    )
    try:
        reply = client.chat(prompt)
    except BackendError as exc:
        logger.warning("entity matching backend failed: %s", exc)
        return []
    matches = []
    claimed = set()
    for line in reply.splitlines():
        if "->" not in line:
            continue
        left, _, right = line.partition("->")
        phrase = by_text.get(normalize_phrase(left))
        try:
            track_id = int(right.strip())
        except ValueError:
            continue
        if phrase is None or track_id not in valid_ids:
            continue
        if phrase.text in claimed:
            continue
        claimed.add(phrase.text)
        matches.append(PhraseMatch(phrase, track_id, 1.0))
    return matches


# ---------------------------------------------------------------------------
# Whole-video grounding
# ---------------------------------------------------------------------------

def sample_segment_indices(seg: SceneSegment, fps: float, sample_per_s: float) -> list[int]:
    """Frame indices sampled roughly sample_per_s times a second."""
    step = max(1, int(round(fps / sample_per_s)))
    return list(range(seg.start_frame, seg.end_frame, step))


@dataclass
class _SegmentWork:
    segment: SceneSegment
    tags: list[str]
    tracks: list[Track]
    error: str | None = None


def _process_segment(
    frames: FrameSequence,
    seg: SceneSegment,
    client: BackendClient,
    options: GroundingOptions,
) -> _SegmentWork:
    sampled = sample_segment_indices(seg, frames.fps, options.sample_per_s)
    tags: list[str] = []
    per_frame = []
    for idx in sampled:
        image = frames[idx]
        for label, _prob in client.tag_image(image):
            if label not in tags:
                tags.append(label)
        per_frame.append((idx, image))
    frames_dets = [client.detect(image, tags, idx) for idx, image in per_frame]
    tracks = associate_tracks(
        frames_dets, iou_gate=options.iou_gate, max_missed=options.max_missed
    )
    if options.with_masks:
        for track in tracks:
            track.observations = [
                replace(obs, mask=client.segment_mask(frames[obs.frame_idx], obs.box))
                for obs in track.observations
            ]
    return _SegmentWork(segment=seg, tags=tags, tracks=tracks)


def ground_video(
    frames: FrameSequence,
    scenes: list[SceneSegment],
    response_text: str,
    client: BackendClient,
    options: GroundingOptions | None = None,
    first_track_id: int = 0,
    max_workers: int = 1,
) -> GroundingResult:
    """Ground a response against a video, one tracker per scene segment.

    A backend hard-failure aborts only the segment it hit; the failure
    is recorded so reports can surface it. Track ids are assigned
    globally in segment order after all workers finish, which keeps the
    output independent of scheduling.
    """
    options = options or GroundingOptions()
    works: list[_SegmentWork] = []
    if max_workers > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [
                pool.submit(_process_segment, frames, seg, client, options)
                for seg in scenes
            ]
            for seg, fut in zip(scenes, futures):
                try:
                    works.append(fut.result())
                except BackendError as exc:
                    logger.warning("segment %s failed: %s", seg, exc)
                    works.append(_SegmentWork(seg, [], [], error=str(exc)))
    else:
        for seg in scenes:
            try:
                works.append(_process_segment(frames, seg, client, options))
            except BackendError as exc:
                logger.warning("segment %s failed: %s", seg, exc)
                works.append(_SegmentWork(seg, [], [], error=str(exc)))

    next_id = first_track_id
    for work in works:
        renumbered = []
        for track in work.tracks:
            track.track_id = next_id
            next_id += 1
            renumbered.append(track)
        work.tracks = renumbered

    all_tags: list[str] = []
    for work in works:
        for tag in work.tags:
            if tag not in all_tags:
                all_tags.append(tag)

    phrases: list[NounPhrase] = []
    if response_text.strip():
        try:
            phrases = extract_noun_phrases(response_text, client, fallback_tags=all_tags)
        except (BackendError, InvalidInputError) as exc:
            logger.warning("phrase extraction failed, grounding without phrases: %s", exc)

    tracks: list[Track] = []
    matches: list[PhraseMatch] = []
    failures: list[SegmentFailure] = []
    for work in works:
        if work.error is not None:
            failures.append(SegmentFailure(work.segment, work.error))
            continue
        tracks.extend(work.tracks)
        if not phrases or not work.tracks:
            continue
        try:
            if options.matcher == "llm":
                matches.extend(match_phrases_llm(phrases, work.tracks, client))
            else:
                matches.extend(
                    match_phrases_embedding(
                        phrases,
                        work.tracks,
                        client,
                        sim_floor=options.sim_floor,
                        frames=frames,
                        crop_pad_frac=options.crop_pad_frac,
                    )
                )
        except BackendError as exc:
            logger.warning("matching failed for segment %s: %s", work.segment, exc)
            failures.append(SegmentFailure(work.segment, f"matching: {exc}"))
    return GroundingResult(tracks=tracks, matches=matches, phrases=phrases, failures=failures)
