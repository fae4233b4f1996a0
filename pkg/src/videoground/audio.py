"""Speech transcript conditioning and filtering.

The flow mirrors a speech-first ingestion chain: detected speech spans
are merged and cut into recognizer-sized windows, recognized segments
get word timings (from the aligner backend when available, otherwise a
proportional fallback), and each segment then passes a language gate and
an audio-tag gate before it may appear in the conversation prompt.

Gate priority is fixed: language first, then missing-speech, then
music dominance, so a segment's drop reason is deterministic.
"""

from __future__ import annotations

import io
import logging
import re
import wave
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError
from .templates import load_template

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 30.0
DEFAULT_MERGE_GAP_S = 0.5
DEFAULT_MIN_LANGUAGE_PROB = 0.5
DEFAULT_MUSIC_RATIO = 2.0

_WORD_RE = re.compile(r"\S+")


class DropReason(str, Enum):
    NON_ENGLISH = "non_english"
    NO_SPEECH = "no_speech"
    MUSIC_DOMINANT = "music_dominant"


@dataclass(frozen=True)
class AudioTrack:
    """Mono 16-bit PCM samples; the wire format is 16 kHz WAV."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.int16)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise InvalidInputError("audio must be mono (1-d samples)")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"bad sample rate {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate

    def to_wav_bytes(self) -> bytes:
        buf = io.BytesIO()
        with wave.open(buf, "wb") as wav:
            wav.setnchannels(1)
            wav.setsampwidth(2)
            wav.setframerate(self.sample_rate)
            wav.writeframes(self.samples.astype("<i2").tobytes())
        return buf.getvalue()

    @classmethod
    def from_wav_bytes(cls, raw: bytes) -> "AudioTrack":
        with wave.open(io.BytesIO(raw), "rb") as wav:
            if wav.getnchannels() != 1 or wav.getsampwidth() != 2:
                raise InvalidInputError("expected mono 16-bit PCM WAV")
            rate = wav.getframerate()
            frames = wav.readframes(wav.getnframes())
        samples = np.frombuffer(frames, dtype="<i2")
        return cls(samples=samples, sample_rate=rate)


@dataclass(frozen=True)
class SpeechSpan:
    """Half-open time span [start_s, end_s) in seconds."""

    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise InvalidInputError(f"bad span ({self.start_s}, {self.end_s})")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def needs_padding(span: SpeechSpan, window_s: float) -> bool:
    """True when the recognizer must pad this window with silence."""
    return span.duration_s < window_s


@dataclass(frozen=True)
class WordSpan:
    word: str
    start_s: float
    end_s: float


@dataclass(frozen=True)
class AsrSegment:
    """Timed transcript text with language info and optional word timings."""

    start_s: float
    end_s: float
    text: str
    language: str | None = None
    language_prob: float | None = None
    words: tuple[WordSpan, ...] | None = None

    def __post_init__(self):
        if not (self.start_s < self.end_s):
            raise InvalidInputError(f"bad segment ({self.start_s}, {self.end_s})")
        if self.words is not None:
            object.__setattr__(self, "words", tuple(self.words))
            prev_end = self.start_s
            for w in self.words:
                if w.start_s < prev_end - 1e-9 or w.end_s > self.end_s + 1e-9:
                    raise InvalidInputError(
                        f"word {w.word!r} span ({w.start_s}, {w.end_s}) "
                        f"outside segment or out of order"
                    )
                prev_end = w.end_s


@dataclass(frozen=True)
class TaggedSegment:
    """Segment plus the recognizer's top three audio-event classes."""

    segment: AsrSegment
    top_tags: tuple[tuple[str, float], ...]

    def __post_init__(self):
        tags = tuple((str(label), float(prob)) for label, prob in self.top_tags)
        object.__setattr__(self, "top_tags", tags)
        if len(tags) != 3:
            raise InvalidInputError(f"expected exactly 3 tags, got {len(tags)}")
        probs = [p for _, p in tags]
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise InvalidInputError(f"tag probabilities out of [0,1]: {probs}")
        if any(probs[i] < probs[i + 1] for i in range(2)):
            raise InvalidInputError(f"tag probabilities not descending: {probs}")


@dataclass(frozen=True)
class Decision:
    keep: bool
    drop_reason: DropReason | None = None

    @classmethod
    def kept(cls) -> "Decision":
        return cls(keep=True)

    @classmethod
    def dropped(cls, reason: DropReason) -> "Decision":
        return cls(keep=False, drop_reason=reason)


@dataclass(frozen=True)
class FilteredTranscript:
    kept: tuple[AsrSegment, ...]
    dropped: tuple[tuple[AsrSegment, DropReason], ...]


def _merge_spans(spans: list[SpeechSpan], merge_gap_s: float) -> list[SpeechSpan]:
    merged: list[list[float]] = []
    for span in sorted(spans, key=lambda s: (s.start_s, s.end_s)):
        if merged and span.start_s - merged[-1][1] <= merge_gap_s:
            merged[-1][1] = max(merged[-1][1], span.end_s)
        else:
            merged.append([span.start_s, span.end_s])
    return [SpeechSpan(a, b) for a, b in merged]


def prepare_windows(
    spans: list[SpeechSpan],
    merge_gap_s: float = DEFAULT_MERGE_GAP_S,
    window_s: float = DEFAULT_WINDOW_S,
) -> list[SpeechSpan]:
    """Merge nearby speech spans, then cut to recognizer-window length.

    Overlapping inputs are unioned first. Adjacent spans whose gap is at
    most ``merge_gap_s`` merge into one; merged spans longer than
    ``window_s`` are cut into consecutive pieces of at most ``window_s``.
    Output spans are disjoint, ordered, and preserve the merged union.
    Silence padding of short windows is the recognizer client's job (see
    :func:`needs_padding`), never a span change here.
    """
    if window_s <= 0:
        raise InvalidInputError("window_s must be positive")
    if merge_gap_s < 0:
        raise InvalidInputError("merge_gap_s must be >= 0")
    out: list[SpeechSpan] = []
    for span in _merge_spans(spans, merge_gap_s):
        start = span.start_s
        while span.end_s - start > window_s:
            out.append(SpeechSpan(start, start + window_s))
            start += window_s
        out.append(SpeechSpan(start, span.end_s))
    return out


def align_words_fallback(seg: AsrSegment) -> AsrSegment:
    """Assign word spans by proportional character-count interpolation.

    Used when the alignment backend returns no word timings. Every
    character of the original text, separating spaces included, gets an
    equal slice of [start_s, end_s]; a word's span covers its own
    characters. The last word always ends exactly at ``end_s``.
    """
    if not seg.text.strip():
        raise InvalidInputError("cannot align empty text")
    matches = list(_WORD_RE.finditer(seg.text))
    total_chars = len(seg.text)
    per_char = (seg.end_s - seg.start_s) / total_chars
    words = []
    for i, m in enumerate(matches):
        w_start = seg.start_s + m.start() * per_char
        w_end = seg.start_s + m.end() * per_char
        if i == len(matches) - 1:
            w_end = seg.end_s
        words.append(WordSpan(m.group(), w_start, w_end))
    return AsrSegment(
        start_s=seg.start_s,
        end_s=seg.end_s,
        text=seg.text,
        language=seg.language,
        language_prob=seg.language_prob,
        words=tuple(words),
    )


def filter_language(seg: AsrSegment, min_prob: float = DEFAULT_MIN_LANGUAGE_PROB) -> Decision:
    """Keep only confidently English segments; boundary probability keeps."""
    if seg.language is None or seg.language_prob is None:
        return Decision.dropped(DropReason.NON_ENGLISH)
    if seg.language == "en" and seg.language_prob >= min_prob:
        return Decision.kept()
    return Decision.dropped(DropReason.NON_ENGLISH)


def filter_by_tags(tagged: TaggedSegment, music_ratio: float = DEFAULT_MUSIC_RATIO) -> Decision:
    """Drop segments that are not predominantly speech.

    Speech must appear among the top three tags at all; if it does,
    the segment is still dropped when the music probability reaches
    ``music_ratio`` times the speech probability.
    """
    probs = dict(tagged.top_tags)
    if "speech" not in probs:
        return Decision.dropped(DropReason.NO_SPEECH)
    p_speech = probs["speech"]
    p_music = probs.get("music", 0.0)
    if p_music > 0 and p_music >= music_ratio * p_speech:
        return Decision.dropped(DropReason.MUSIC_DOMINANT)
    return Decision.kept()


def decide_segment(
    tagged: TaggedSegment,
    min_language_prob: float = DEFAULT_MIN_LANGUAGE_PROB,
    music_ratio: float = DEFAULT_MUSIC_RATIO,
) -> Decision:
    """Full gate with fixed priority: language, then no_speech, then music."""
    lang = filter_language(tagged.segment, min_language_prob)
    if not lang.keep:
        return lang
    return filter_by_tags(tagged, music_ratio)


def assemble_transcript(
    segments: list[AsrSegment], decisions: list[Decision]
) -> FilteredTranscript:
    """Partition segments into kept/dropped per the paired decisions."""
    if len(segments) != len(decisions):
        raise InvalidInputError(
            f"{len(segments)} segments but {len(decisions)} decisions"
        )
    order = sorted(range(len(segments)), key=lambda i: (segments[i].start_s, segments[i].end_s))
    kept = []
    dropped = []
    for i in order:
        if decisions[i].keep:
            kept.append(segments[i])
        else:
            dropped.append((segments[i], decisions[i].drop_reason))
    return FilteredTranscript(kept=tuple(kept), dropped=tuple(dropped))


def build_prompt(
    transcript: FilteredTranscript,
    user_instruction: str,
    video_token_placeholder: str = "<video>",
) -> str:
    """Render the conversation prompt from the versioned template.

    Three blocks: system preamble, the video placeholder, and the audio
    transcript lines. The audio block is omitted entirely when nothing
    survived filtering.
    """
    template = load_template("conversation_prompt")
    if transcript.kept:
        lines = [
            f"[{seg.start_s:.2f}–{seg.end_s:.2f}] {seg.text}"
            for seg in transcript.kept
        ]
        audio_block = (
            "The video has the following audio transcript:\n" + "\n".join(lines) + "\n\n"
        )
    else:
        audio_block = ""
    return template.text.format(
        video=video_token_placeholder,
        audio_block=audio_block,
        instruction=user_instruction,
    )
