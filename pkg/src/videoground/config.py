"""Declarative pipeline configuration with one section per module.

The YAML file is strict: unknown keys anywhere are rejected so typos
fail loudly instead of silently running defaults. The resolved config
hashes to a stable hex digest (canonical JSON, sorted keys) that every
artifact embeds; two artifacts merge only when their hashes agree.
Environment variables of the form VIDEOGROUND_ENDPOINT_{KIND} override
endpoint URLs and nothing else.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .audio import (
    DEFAULT_MERGE_GAP_S,
    DEFAULT_MIN_LANGUAGE_PROB,
    DEFAULT_MUSIC_RATIO,
    DEFAULT_WINDOW_S,
)
from .backends import DEFAULT_ATTEMPTS, DEFAULT_BACKOFF_S, KINDS, BackendEndpoint
from .errors import ConfigError
from .evalsuite import DEFAULT_RETRIES
from .grounding import DEFAULT_CROP_PAD_FRAC, DEFAULT_SIM_FLOOR, MATCHERS, GroundingOptions
from .scenes import DEFAULT_MIN_LEN, DEFAULT_THRESHOLD
from .tracking import DEFAULT_IOU_GATE, DEFAULT_MAX_MISSED

ENDPOINT_ENV_PREFIX = "VIDEOGROUND_ENDPOINT_"


@dataclass
class FeaturesConfig:
    num_frames: int = 100

    def validate(self):
        if self.num_frames < 1:
            raise ConfigError("features.num_frames must be at least 1")


@dataclass
class ScenesConfig:
    threshold: float = DEFAULT_THRESHOLD
    min_len: int = DEFAULT_MIN_LEN

    def validate(self):
        if self.threshold <= 0:
            raise ConfigError("scenes.threshold must be positive")
        if self.min_len < 1:
            raise ConfigError("scenes.min_len must be at least 1")


@dataclass
class AudioConfig:
    window_s: float = DEFAULT_WINDOW_S
    merge_gap_s: float = DEFAULT_MERGE_GAP_S
    min_language_prob: float = DEFAULT_MIN_LANGUAGE_PROB
    music_ratio: float = DEFAULT_MUSIC_RATIO

    def validate(self):
        if self.window_s <= 0:
            raise ConfigError("audio.window_s must be positive")
        if self.merge_gap_s < 0:
            raise ConfigError("audio.merge_gap_s must be nonnegative")
        if not 0 <= self.min_language_prob <= 1:
            raise ConfigError("audio.min_language_prob must be in [0, 1]")
        if self.music_ratio <= 0:
            raise ConfigError("audio.music_ratio must be positive")


@dataclass
class GroundingConfig:
    iou_gate: float = DEFAULT_IOU_GATE
    max_missed: int = DEFAULT_MAX_MISSED
    sim_floor: float = DEFAULT_SIM_FLOOR
    matcher: str = "embedding"
    with_masks: bool = False
    crop_pad_frac: float = DEFAULT_CROP_PAD_FRAC
    sample_per_s: float = 1.0

    def validate(self):
        if not 0 <= self.iou_gate <= 1:
            raise ConfigError("grounding.iou_gate must be in [0, 1]")
        if self.max_missed < 0:
            raise ConfigError("grounding.max_missed must be nonnegative")
        if not -1 <= self.sim_floor <= 1:
            raise ConfigError("grounding.sim_floor must be in [-1, 1]")
        if self.matcher not in MATCHERS:
            raise ConfigError(f"grounding.matcher must be one of {MATCHERS}")
        if self.crop_pad_frac < 0:
            raise ConfigError("grounding.crop_pad_frac must be nonnegative")
        if self.sample_per_s <= 0:
            raise ConfigError("grounding.sample_per_s must be positive")

    def to_options(self) -> GroundingOptions:
        return GroundingOptions(
            iou_gate=self.iou_gate,
            max_missed=self.max_missed,
            sim_floor=self.sim_floor,
            matcher=self.matcher,
            with_masks=self.with_masks,
            crop_pad_frac=self.crop_pad_frac,
            sample_per_s=self.sample_per_s,
        )


@dataclass
class EvalConfig:
    retries: int = DEFAULT_RETRIES
    max_in_flight: int = 4
    judge_model: str = "mock-judge"

    def validate(self):
        if self.retries < 1:
            raise ConfigError("eval.retries must be at least 1")
        if self.max_in_flight < 1:
            raise ConfigError("eval.max_in_flight must be at least 1")


@dataclass
class BackendsConfig:
    base_url: str = "http://127.0.0.1:8099"
    attempts: int = DEFAULT_ATTEMPTS
    backoff_s: float = DEFAULT_BACKOFF_S
    timeout_s: float = 30.0
    auth_token: str | None = None
    urls: dict = field(default_factory=dict)

    def validate(self):
        if self.attempts < 1:
            raise ConfigError("backends.attempts must be at least 1")
        if self.backoff_s < 0:
            raise ConfigError("backends.backoff_s must be nonnegative")
        if self.timeout_s <= 0:
            raise ConfigError("backends.timeout_s must be positive")
        for kind in self.urls:
            if kind not in KINDS:
                raise ConfigError(f"backends.urls has unknown kind {kind!r}")

    def endpoints(self) -> dict[str, BackendEndpoint]:
        """Resolved endpoint per kind; env vars trump config URLs."""
        out = {}
        for kind in KINDS:
            url = self.urls.get(kind, f"{self.base_url}/v1/{kind}")
            env = os.environ.get(f"{ENDPOINT_ENV_PREFIX}{kind.upper()}")
            if env:
                url = env
            out[kind] = BackendEndpoint(
                kind=kind, url=url, timeout_s=self.timeout_s, auth_token=self.auth_token
            )
        return out


_SECTIONS = {
    "features": FeaturesConfig,
    "scenes": ScenesConfig,
    "audio": AudioConfig,
    "grounding": GroundingConfig,
    "eval": EvalConfig,
    "backends": BackendsConfig,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    scenes: ScenesConfig = field(default_factory=ScenesConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    grounding: GroundingConfig = field(default_factory=GroundingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)

    def validate(self):
        for name in _SECTIONS:
            getattr(self, name).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    kwargs["seed"] = seed
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name} must be a mapping")
        kwargs[name] = _build_section(cls, section, name)
    config = PipelineConfig(**kwargs)
    config.validate()
    return config


def load_config(path: str | None) -> PipelineConfig:
    """Config from a YAML file; None loads pure defaults."""
    if path is None:
        config = PipelineConfig()
        config.validate()
        return config
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}")
    return config_from_dict(data or {})
