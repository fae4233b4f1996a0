"""Benchmark harness: LLM-judge scoring and spatial-grounding mean IoU.

The conversation benchmark scores model answers on five axes with a
chat-backend judge whose replies must contain a strict JSON verdict;
zero-shot QA uses one combined correctness+score template per item.
Spatial grounding compares the track matched to the key phrase against
per-frame ground-truth boxes: mean IoU over annotated frames per item,
mean over items per dataset, reported on the x100 scale.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .backends import BackendClient
from .errors import BackendTransportError, InvalidInputError
from .geometry import Box, MaskRLE, iou, mask_to_box, validate_box
from .grounding import normalize_phrase, parse_phrase_list
from .templates import load_template, template_hashes
from .tracking import Observation, Track

logger = logging.getLogger(__name__)

CONV_METRICS = ("correctness", "detail", "context", "temporal", "consistency")
QA_METRIC = "qa"

METRIC_TEMPLATES = {
    "correctness": "judge_correctness",
    "detail": "judge_detail",
    "context": "judge_context",
    "temporal": "judge_temporal",
    "consistency": "judge_consistency",
    "qa": "judge_qa",
}

METRIC_DISPLAY = {
    "correctness": "Correctness",
    "detail": "Detail Orientation",
    "context": "Contextual Understanding",
    "temporal": "Temporal Understanding",
    "consistency": "Consistency",
}

DEFAULT_RETRIES = 3


@dataclass(frozen=True)
class JudgeVerdict:
    pred: str
    score: int
    raw: str
    valid: bool

    def __post_init__(self):
        if self.pred not in ("yes", "no", "n/a"):
            raise InvalidInputError(f"pred must be yes|no|n/a, got {self.pred!r}")
        if self.valid and not 1 <= self.score <= 5:
            raise InvalidInputError("valid verdicts need a score in [1, 5]")


@dataclass(frozen=True)
class ConvBenchItem:
    video_id: str
    question: str
    reference_answer: str
    model_answer: str
    metric: str
    question2: str | None = None
    model_answer2: str | None = None

    def __post_init__(self):
        if self.metric not in CONV_METRICS + (QA_METRIC,):
            raise InvalidInputError(f"unknown metric {self.metric!r}")
        if self.metric == "consistency" and not (self.question2 and self.model_answer2):
            raise InvalidInputError("consistency items need a second question/answer pair")

    @classmethod
    def from_record(cls, rec: dict) -> "ConvBenchItem":
        return cls(
            video_id=rec["video_id"],
            question=rec["question"],
            reference_answer=rec["reference_answer"],
            model_answer=rec["model_answer"],
            metric=rec["metric"],
            question2=rec.get("question2"),
            model_answer2=rec.get("model_answer2"),
        )


@dataclass(frozen=True)
class GroundingGtItem:
    video_id: str
    prompt: str
    boxes: dict[int, Box]
    prompt_type: str | None = None

    def __post_init__(self):
        if not self.boxes:
            raise InvalidInputError("grounding GT needs at least one annotated frame")
        for frame_idx, box in self.boxes.items():
            if frame_idx < 0:
                raise InvalidInputError("frame indices must be nonnegative")
            validate_box(box)

    @classmethod
    def from_record(cls, rec: dict) -> "GroundingGtItem":
        boxes = {int(k): tuple(v) for k, v in rec["boxes"].items()}
        return cls(
            video_id=rec["video_id"],
            prompt=rec["prompt"],
            boxes=boxes,
            prompt_type=rec.get("prompt_type"),
        )


@dataclass(frozen=True)
class MetricRow:
    mean: float | None
    count: int
    invalid: int
    accuracy: float | None = None

    def to_record(self) -> dict:
        rec = {"mean": self.mean, "count": self.count, "invalid": self.invalid}
        if self.accuracy is not None:
            rec["accuracy"] = self.accuracy
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "MetricRow":
        return cls(
            mean=rec.get("mean"),
            count=int(rec.get("count", 0)),
            invalid=int(rec.get("invalid", 0)),
            accuracy=rec.get("accuracy"),
        )


@dataclass
class BenchmarkReport:
    benchmark: str
    judge_model: str
    metrics: dict[str, MetricRow]
    template_hash: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "judge_model": self.judge_model,
            "template_hash": dict(self.template_hash),
            "metrics": {name: row.to_record() for name, row in self.metrics.items()},
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BenchmarkReport":
        return cls(
            benchmark=rec["benchmark"],
            judge_model=rec.get("judge_model", ""),
            metrics={
                name: MetricRow.from_record(row)
                for name, row in rec.get("metrics", {}).items()
            },
            template_hash=dict(rec.get("template_hash", {})),
        )


# ---------------------------------------------------------------------------
# Judge
# ---------------------------------------------------------------------------

_decoder = json.JSONDecoder()


def extract_json_object(text: str) -> dict | None:
    """First balanced JSON object embedded anywhere in the text."""
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = _decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def parse_verdict(reply: str) -> JudgeVerdict | None:
    """Verdict from the first balanced object, or None when malformed."""
    obj = extract_json_object(reply)
    if obj is None:
        return None
    pred = obj.get("pred")
    score = obj.get("score")
    if isinstance(pred, str):
        pred = pred.strip().lower()
    if pred not in ("yes", "no", "n/a"):
        return None
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        return None
    if isinstance(score, float):
        if not score.is_integer():
            return None
        score = int(score)
    if not 1 <= score <= 5:
        return None
    return JudgeVerdict(pred=pred, score=score, raw=reply, valid=True)


def judge_prompt(item: ConvBenchItem) -> str:
    template = load_template(METRIC_TEMPLATES[item.metric])
    fields = {
        "question": item.question,
        "reference_answer": item.reference_answer,
        "model_answer": item.model_answer,
    }
    if item.metric == "consistency":
        fields["question2"] = item.question2
        fields["model_answer2"] = item.model_answer2
    return template.text.format(**fields)


def judge_item(
    item: ConvBenchItem, client: BackendClient, retries: int = DEFAULT_RETRIES
) -> JudgeVerdict:
    """Score one item; ``retries`` is the total call budget.

    Parse failures re-ask until the budget runs out, then the item is
    marked invalid and excluded from means. Transport failures propagate
    so an unreachable judge is never silently scored as invalid.
    """
    if retries < 1:
        raise InvalidInputError("retries must be at least 1")
    prompt = judge_prompt(item)
    reply = ""
    for _ in range(retries):
        reply = client.chat(prompt, temperature=0.0)
        verdict = parse_verdict(reply)
        if verdict is not None:
            return verdict
        logger.debug("judge reply unparseable for %s, re-asking", item.video_id)
    logger.warning("judge gave no parseable verdict for %s/%s", item.video_id, item.metric)
    return JudgeVerdict(pred="n/a", score=0, raw=reply, valid=False)


def aggregate(verdicts: list[JudgeVerdict], qa: bool = False) -> MetricRow:
    """Reduce verdicts to a report row; means cover valid verdicts only."""
    valid = [v for v in verdicts if v.valid]
    invalid = len(verdicts) - len(valid)
    if not valid:
        return MetricRow(mean=None, count=0, invalid=invalid)
    mean = float(np.mean([v.score for v in valid], dtype=np.float64))
    accuracy = None
    if qa:
        accuracy = sum(1 for v in valid if v.pred == "yes") / len(valid)
    return MetricRow(mean=mean, count=len(valid), invalid=invalid, accuracy=accuracy)


# ---------------------------------------------------------------------------
# Spatial grounding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictedTrack:
    """A track plus the phrase it was matched to, as read from artifacts."""

    track: Track
    phrase: str | None = None
    similarity: float | None = None

    @classmethod
    def from_record(cls, rec: dict) -> "PredictedTrack":
        observations = []
        for o in rec["observations"]:
            mask = None
            if o.get("mask_rle") is not None:
                mask = MaskRLE.from_record(o["mask_rle"])
            observations.append(
                Observation(
                    frame_idx=int(o["frame_idx"]),
                    box=tuple(o["box"]),
                    score=float(o["score"]),
                    mask=mask,
                )
            )
        track = Track(
            track_id=int(rec["track_id"]), tag=rec["tag"], observations=observations
        )
        return cls(track=track, phrase=rec.get("phrase"),
                   similarity=rec.get("similarity"))


def predicted_box(track: Track, frame_idx: int) -> Box | None:
    """Box at a frame: mask-derived at observed frames, interpolated between."""
    for obs in track.observations:
        if obs.frame_idx == frame_idx:
            return mask_to_box(obs.mask) if obs.mask is not None else obs.box
    return track.box_at(frame_idx)


def eval_spatial_grounding(
    preds: list[PredictedTrack], gt: GroundingGtItem, key_phrase: str
) -> float:
    """Mean IoU over the item's annotated frames, in [0, 1].

    The prediction is the track matched to the key phrase; with several
    (one per scene segment) the highest-similarity one covering each
    frame is used. Frames no matched track covers score 0.
    """
    key = normalize_phrase(key_phrase)
    candidates = [p for p in preds if p.phrase is not None and normalize_phrase(p.phrase) == key]
    candidates.sort(key=lambda p: (-(p.similarity if p.similarity is not None else 1.0),
                                   p.track.track_id))
    if not candidates:
        logger.warning("no track matched phrase %r for %s", key_phrase, gt.video_id)
        return 0.0
    total = 0.0
    for frame_idx in sorted(gt.boxes):
        box = None
        for cand in candidates:
            box = predicted_box(cand.track, frame_idx)
            if box is not None:
                break
        if box is not None:
            total += iou(box, gt.boxes[frame_idx])
    return total / len(gt.boxes)


def eval_grounding_dataset(item_scores: list[float]) -> float | None:
    """Dataset score: mean of item scores, reported x100; None when empty."""
    if not item_scores:
        return None
    return float(np.mean(np.asarray(item_scores, dtype=np.float64)) * 100.0)


def select_interrogative(item: GroundingGtItem) -> bool:
    """Keep only items annotated as interrogative prompts."""
    if item.prompt_type is None:
        logger.warning("item %s has no prompt-type annotation, dropping", item.video_id)
        return False
    return item.prompt_type == "interrogative"


def mine_questions(caption: str, client: BackendClient) -> list[str]:
    """Mine interrogative prompts from a caption via the chat backend."""
    if not caption.strip():
        raise InvalidInputError("caption must be nonempty")
    prompt = load_template("question_mining").text.format(caption=caption)
    try:
        reply = client.chat(prompt)
    except BackendTransportError as exc:
        logger.warning("question mining backend failed: %s", exc)
        return []
    questions = []
    for line in reply.splitlines():
        text = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line).strip()
        if text:
            questions.append(text)
    return questions


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _render_columns(headers: list[str], values: list[str]) -> str:
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()
    body = "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
    return f"{head}\n{body}\n"


def _fmt_mean(mean: float | None) -> str:
    return "n/a" if mean is None else f"{mean:.2f}"


def render_conversation_table(report: BenchmarkReport) -> str:
    """Five-axis table in the published column order."""
    headers = [METRIC_DISPLAY[m] for m in CONV_METRICS]
    values = []
    for metric in CONV_METRICS:
        row = report.metrics.get(metric)
        values.append(_fmt_mean(row.mean) if row else "n/a")
    return _render_columns(headers, values)


def render_qa_table(report: BenchmarkReport) -> str:
    """Zero-shot QA accuracy/score pair."""
    row = report.metrics.get(QA_METRIC)
    accuracy = "n/a"
    score = "n/a"
    if row is not None:
        if row.accuracy is not None:
            accuracy = f"{row.accuracy * 100.0:.1f}"
        if row.mean is not None:
            score = f"{row.mean:.1f}"
    return _render_columns(["Accuracy", "Score"], [accuracy, score])


def render_grounding_table(scores: dict[str, float | None]) -> str:
    """One mean-IoU (x100) column per dataset."""
    headers = list(scores)
    values = ["n/a" if scores[k] is None else f"{scores[k]:.1f}" for k in headers]
    return _render_columns(headers, values)


def conversation_report(
    verdicts_by_metric: dict[str, list[JudgeVerdict]], judge_model: str
) -> BenchmarkReport:
    metrics = {m: aggregate(v) for m, v in verdicts_by_metric.items()}
    names = [METRIC_TEMPLATES[m] for m in verdicts_by_metric]
    return BenchmarkReport(
        benchmark="video-conversation",
        judge_model=judge_model,
        metrics=metrics,
        template_hash=template_hashes(names),
    )


def qa_report(verdicts: list[JudgeVerdict], judge_model: str) -> BenchmarkReport:
    return BenchmarkReport(
        benchmark="zeroshot-qa",
        judge_model=judge_model,
        metrics={QA_METRIC: aggregate(verdicts, qa=True)},
        template_hash=template_hashes([METRIC_TEMPLATES[QA_METRIC]]),
    )
