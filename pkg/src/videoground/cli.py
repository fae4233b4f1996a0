"""Command-line entry points for the grounded video-conversation pipeline.

Every subcommand writes its artifact (JSONL with a header line, or a
JSON report) atomically, plus a ``<artifact>.manifest.json`` recording
the config hash, template hashes, and input digests that produced it.
A content-addressed cache keyed by (stage, input digest, config hash)
skips completed work; runs with mock backends and a fixed seed are
bit-reproducible.

Exit codes: 0 success, 1 usage error, 2 pipeline failure, 3 backend
transport failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import click

from .audio import TaggedSegment, assemble_transcript, decide_segment, prepare_windows
from .backends import BackendClient, BackendEndpoint, HttpConnection
from .cache import ArtifactCache, atomic_write_bytes, input_digest
from .config import PipelineConfig, load_config
from .errors import BackendTransportError, PipelineError
from .evalsuite import (
    BenchmarkReport,
    ConvBenchItem,
    GroundingGtItem,
    PredictedTrack,
    conversation_report,
    eval_grounding_dataset,
    eval_spatial_grounding,
    judge_item,
    qa_report,
    render_conversation_table,
    render_grounding_table,
    render_qa_table,
    select_interrogative,
)
from .grounding import ground_video, select_key_phrase
from .ingest import ingest
from .mocks import MockBackendSuite, MockConnection
from .scenes import detect_scenes
from .templates import template_hashes

logger = logging.getLogger(__name__)

STAGE_TEMPLATES = {
    "scenes": [],
    "transcribe": ["conversation_prompt"],
    "ground": ["phrase_extraction", "entity_matching"],
    "eval-conv": [
        "judge_correctness",
        "judge_detail",
        "judge_context",
        "judge_temporal",
        "judge_consistency",
    ],
    "eval-qa": ["judge_qa"],
    "eval-grounding": [],
    "report": [],
}


@dataclass
class AppContext:
    config: PipelineConfig
    cache: ArtifactCache | None
    mock: bool
    max_workers: int

    @property
    def seed(self) -> int:
        return self.config.seed

    def cache_token(self) -> str:
        """Config hash extended with the backend mode, for cache keying."""
        blob = json.dumps(
            {"config": self.config.to_dict(), "mock": self.mock},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def client(self, judge_endpoint: str | None = None) -> BackendClient:
        if self.mock:
            return BackendClient(MockConnection(MockBackendSuite(seed=self.seed)))
        endpoints = self.config.backends.endpoints()
        if judge_endpoint:
            endpoints["chat"] = BackendEndpoint(
                kind="chat",
                url=judge_endpoint,
                timeout_s=self.config.backends.timeout_s,
                auth_token=self.config.backends.auth_token,
            )
        return BackendClient(
            HttpConnection(
                endpoints,
                attempts=self.config.backends.attempts,
                backoff_s=self.config.backends.backoff_s,
            )
        )


def _jsonl_bytes(header: dict, rows: list[dict]) -> bytes:
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(row, sort_keys=True) for row in rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def _json_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def read_jsonl(path: str | Path) -> tuple[dict | None, list[dict]]:
    """(header, rows); the header is the first line when it looks like one."""
    header = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if i == 0 and isinstance(rec, dict) and "stage" in rec and "config_hash" in rec:
                header = rec
                continue
            rows.append(rec)
    return header, rows


def run_stage(
    ctx: AppContext,
    stage: str,
    inputs: dict[str, str | Path],
    out: str | Path,
    compute: Callable[[], bytes],
    extra_digests: dict[str, str] | None = None,
) -> None:
    """Cache-aware execution of one stage, artifact plus manifest."""
    digests = {name: input_digest(path) for name, path in sorted(inputs.items())}
    if extra_digests:
        digests.update(extra_digests)
    combined = hashlib.sha256(
        json.dumps(digests, sort_keys=True).encode("utf-8")
    ).hexdigest()
    token = ctx.cache_token()
    payload = None
    if ctx.cache is not None:
        payload = ctx.cache.lookup(stage, combined, token)
        if payload is not None:
            logger.info("%s: cache hit", stage)
    if payload is None:
        payload = compute()
        if ctx.cache is not None:
            ctx.cache.store(stage, combined, token, payload)
    atomic_write_bytes(out, payload)
    manifest = {
        "stage": stage,
        "config_hash": ctx.config.config_hash,
        "input_digests": digests,
        "template_hashes": template_hashes(STAGE_TEMPLATES[stage]),
        "seed": ctx.seed,
    }
    atomic_write_bytes(f"{out}.manifest.json", _json_bytes(manifest))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="YAML config file; defaults apply when omitted.")
@click.option("--cache-dir", type=click.Path(), default=None,
              help="Content-addressed cache directory; no caching when omitted.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--max-workers", type=int, default=1, show_default=True,
              help="Worker pool size for parallel stages.")
@click.option("--mock", is_flag=True, help="Force the deterministic mock backends.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, cache_dir, seed, max_workers, mock, verbose):
    """Grounded video-conversation pipeline tools."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if max_workers < 1:
        raise click.UsageError("--max-workers must be at least 1")
    config = load_config(config_path)
    if seed is not None:
        config.seed = seed
    config.validate()
    ctx.obj = AppContext(
        config=config,
        cache=ArtifactCache(cache_dir) if cache_dir else None,
        mock=mock,
        max_workers=max_workers,
    )


@cli.command()
@click.argument("video", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Scene JSONL path.")
@click.pass_obj
def scenes(app: AppContext, video, out):
    """Detect shot boundaries and write scene segments."""

    def compute() -> bytes:
        meta, frames, _ = ingest(video)
        segs = detect_scenes(
            frames,
            threshold=app.config.scenes.threshold,
            min_len=app.config.scenes.min_len,
        )
        rows = [seg.to_record(meta.video_id, meta.fps) for seg in segs]
        header = {"stage": "scenes", "config_hash": app.config.config_hash}
        return _jsonl_bytes(header, rows)

    run_stage(app, "scenes", {"video": video}, out, compute)


@cli.command()
@click.argument("video", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Transcript JSONL path.")
@click.pass_obj
def transcribe(app: AppContext, video, out):
    """VAD, ASR, and filtering into a transcript artifact."""

    def compute() -> bytes:
        meta, _frames, audio = ingest(video)
        header = {"stage": "transcribe", "config_hash": app.config.config_hash}
        if audio is None or audio.samples.size == 0:
            logger.warning("%s has no audio, writing empty transcript", meta.video_id)
            return _jsonl_bytes(header, [])
        client = app.client()
        spans = client.vad(audio)
        windows = prepare_windows(
            spans,
            merge_gap_s=app.config.audio.merge_gap_s,
            window_s=app.config.audio.window_s,
        )

        def process(window):
            seg = client.asr(audio, window)
            tags = client.audio_tag(audio, window)
            return TaggedSegment(segment=seg, top_tags=tuple(tags))

        if app.max_workers > 1 and len(windows) > 1:
            with ThreadPoolExecutor(max_workers=app.max_workers) as pool:
                tagged = list(pool.map(process, windows))
        else:
            tagged = [process(w) for w in windows]
        decisions = [
            decide_segment(
                t,
                min_language_prob=app.config.audio.min_language_prob,
                music_ratio=app.config.audio.music_ratio,
            )
            for t in tagged
        ]
        assemble_transcript([t.segment for t in tagged], decisions)
        rows = []
        order = sorted(
            range(len(tagged)),
            key=lambda i: (tagged[i].segment.start_s, tagged[i].segment.end_s),
        )
        for i in order:
            seg = tagged[i].segment
            row = {
                "video_id": meta.video_id,
                "start_s": seg.start_s,
                "end_s": seg.end_s,
                "text": seg.text,
                "language": seg.language,
                "language_prob": seg.language_prob,
                "top_tags": [
                    {"label": lab, "prob": prob} for lab, prob in tagged[i].top_tags
                ],
                "kept": decisions[i].keep,
            }
            if not decisions[i].keep:
                row["drop_reason"] = decisions[i].drop_reason.value
            rows.append(row)
        return _jsonl_bytes(header, rows)

    run_stage(app, "transcribe", {"video": video}, out, compute)


@cli.command()
@click.argument("video", type=click.Path(exists=True))
@click.option("--response", default="", help="Model response text to ground.")
@click.option("--response-file", type=click.Path(exists=True), default=None,
              help="File holding the response text (overrides --response).")
@click.option("--out", required=True, type=click.Path(), help="Track JSONL path.")
@click.pass_obj
def ground(app: AppContext, video, response, response_file, out):
    """Detect, track, and match phrases per scene segment."""
    if response_file is not None:
        response = Path(response_file).read_text(encoding="utf-8")

    def compute() -> bytes:
        meta, frames, _ = ingest(video)
        segs = detect_scenes(
            frames,
            threshold=app.config.scenes.threshold,
            min_len=app.config.scenes.min_len,
        )
        result = ground_video(
            frames,
            segs,
            response,
            app.client(),
            options=app.config.grounding.to_options(),
            max_workers=app.max_workers,
        )
        header = {
            "stage": "ground",
            "config_hash": app.config.config_hash,
            "phrases": [p.text for p in result.phrases],
            "segment_failures": [
                {
                    "start_frame": f.segment.start_frame,
                    "end_frame": f.segment.end_frame,
                    "error": f.error,
                }
                for f in result.failures
            ],
        }
        return _jsonl_bytes(header, result.to_records(meta.video_id))

    extra = {"response": hashlib.sha256(response.encode("utf-8")).hexdigest()}
    run_stage(app, "ground", {"video": video}, out, compute, extra_digests=extra)


def _read_items(path: str | Path, default_metric: str | None = None) -> list[ConvBenchItem]:
    _header, rows = read_jsonl(path)
    items = []
    for rec in rows:
        if default_metric is not None:
            rec = dict(rec)
            rec["metric"] = default_metric
        items.append(ConvBenchItem.from_record(rec))
    return items


def _judge_all(
    app: AppContext,
    items: list[ConvBenchItem],
    retries: int | None,
    max_in_flight: int | None,
    judge_endpoint: str | None,
):
    client = app.client(judge_endpoint=judge_endpoint)
    budget = retries if retries is not None else app.config.eval.retries
    cap = max_in_flight if max_in_flight is not None else app.config.eval.max_in_flight
    if cap > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            return list(pool.map(lambda it: judge_item(it, client, budget), items))
    return [judge_item(it, client, budget) for it in items]


@cli.command(name="eval-conv")
@click.argument("items_path", metavar="ITEMS", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Report JSON path.")
@click.option("--retries", type=int, default=None,
              help="Total judge call budget per item.")
@click.option("--max-in-flight", type=int, default=None,
              help="Concurrent judge calls.")
@click.option("--judge-endpoint", default=None, help="Chat endpoint URL override.")
@click.pass_obj
def eval_conv(app: AppContext, items_path, out, retries, max_in_flight, judge_endpoint):
    """Five-axis conversation benchmark with the LLM judge."""

    def compute() -> bytes:
        items = _read_items(items_path)
        verdicts = _judge_all(app, items, retries, max_in_flight, judge_endpoint)
        by_metric: dict[str, list] = {}
        for item, verdict in zip(items, verdicts):
            by_metric.setdefault(item.metric, []).append(verdict)
        report = conversation_report(by_metric, judge_model=_judge_model(app, judge_endpoint))
        rec = report.to_record()
        rec["config_hash"] = app.config.config_hash
        return _json_bytes(rec)

    run_stage(app, "eval-conv", {"items": items_path}, out, compute)


@cli.command(name="eval-qa")
@click.argument("items_path", metavar="ITEMS", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Report JSON path.")
@click.option("--retries", type=int, default=None,
              help="Total judge call budget per item.")
@click.option("--max-in-flight", type=int, default=None,
              help="Concurrent judge calls.")
@click.option("--judge-endpoint", default=None, help="Chat endpoint URL override.")
@click.pass_obj
def eval_qa(app: AppContext, items_path, out, retries, max_in_flight, judge_endpoint):
    """Zero-shot QA: accuracy plus 1-5 score from one combined judgment."""

    def compute() -> bytes:
        items = _read_items(items_path, default_metric="qa")
        verdicts = _judge_all(app, items, retries, max_in_flight, judge_endpoint)
        report = qa_report(verdicts, judge_model=_judge_model(app, judge_endpoint))
        rec = report.to_record()
        rec["config_hash"] = app.config.config_hash
        return _json_bytes(rec)

    run_stage(app, "eval-qa", {"items": items_path}, out, compute)


def _judge_model(app: AppContext, judge_endpoint: str | None) -> str:
    if app.mock:
        return f"mock-judge(seed={app.seed})"
    if judge_endpoint:
        return judge_endpoint
    return app.config.eval.judge_model


@cli.command(name="eval-grounding")
@click.argument("gt_path", metavar="GT", type=click.Path(exists=True))
@click.argument("tracks_path", metavar="TRACKS", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Report JSON path.")
@click.option("--dataset", default="Grounding", show_default=True,
              help="Dataset label in the rendered table.")
@click.pass_obj
def eval_grounding(app: AppContext, gt_path, tracks_path, out, dataset):
    """Mean IoU (x100) of phrase-matched tracks against GT boxes."""

    def compute() -> bytes:
        _header, gt_rows = read_jsonl(gt_path)
        _theader, track_rows = read_jsonl(tracks_path)
        preds_by_video: dict[str, list[PredictedTrack]] = {}
        for rec in track_rows:
            preds_by_video.setdefault(rec["video_id"], []).append(
                PredictedTrack.from_record(rec)
            )
        items = [GroundingGtItem.from_record(rec) for rec in gt_rows]
        kept_items = [item for item in items if select_interrogative(item)]
        results = []
        scores = []
        for item in kept_items:
            preds = preds_by_video.get(item.video_id, [])
            tags = sorted({p.track.tag for p in preds})
            key_phrase = None
            if tags:
                key_phrase = select_key_phrase(item.prompt, tags).text
                score = eval_spatial_grounding(preds, item, key_phrase)
            else:
                logger.warning("no tracks for %s, scoring 0", item.video_id)
                score = 0.0
            scores.append(score)
            results.append(
                {
                    "video_id": item.video_id,
                    "prompt": item.prompt,
                    "key_phrase": key_phrase,
                    "score": score,
                }
            )
        rec = {
            "benchmark": "spatial-grounding",
            "dataset": dataset,
            "score": eval_grounding_dataset(scores),
            "items": results,
            "evaluated": len(kept_items),
            "dropped": len(items) - len(kept_items),
            "config_hash": app.config.config_hash,
        }
        return _json_bytes(rec)

    run_stage(
        app, "eval-grounding", {"gt": gt_path, "tracks": tracks_path}, out, compute
    )


@cli.command(name="report")
@click.argument("artifacts", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Rendered table path.")
@click.pass_obj
def report(app: AppContext, artifacts, out):
    """Render eval artifacts as text tables; refuses mismatched configs."""

    def compute() -> bytes:
        records = []
        for path in artifacts:
            with open(path, encoding="utf-8") as fh:
                records.append((path, json.load(fh)))
        hashes = {rec.get("config_hash") for _path, rec in records}
        if len(hashes) > 1:
            raise PipelineError(
                f"refusing to merge artifacts with mismatched config hashes: {sorted(map(str, hashes))}"
            )
        blocks = []
        grounding_scores: dict[str, float | None] = {}
        for path, rec in records:
            benchmark = rec.get("benchmark")
            if benchmark == "video-conversation":
                table = render_conversation_table(BenchmarkReport.from_record(rec))
                blocks.append(f"# {benchmark}\n{table}")
            elif benchmark == "zeroshot-qa":
                table = render_qa_table(BenchmarkReport.from_record(rec))
                blocks.append(f"# {benchmark}\n{table}")
            elif benchmark == "spatial-grounding":
                grounding_scores[rec.get("dataset", "Grounding")] = rec.get("score")
            else:
                raise PipelineError(f"{path}: unknown benchmark {benchmark!r}")
        if grounding_scores:
            table = render_grounding_table(grounding_scores)
            blocks.append(f"# spatial-grounding\n{table}")
        return ("\n".join(blocks)).encode("utf-8")

    inputs = {f"artifact{i}": path for i, path in enumerate(artifacts)}
    run_stage(app, "report", inputs, out, compute)


def main(argv=None) -> int:
    """Entry point mapping failures to documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except BackendTransportError as exc:
        click.echo(f"backend transport failure: {exc}", err=True)
        return 3
    except PipelineError as exc:
        click.echo(f"pipeline failure: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"pipeline failure: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
