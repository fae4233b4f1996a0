"""Spatio-temporal pooling and projection over frame-level feature tensors.

The image encoder (an external backend) emits one token grid per frame.
This module turns the per-frame grids into a single video-level token
sequence: a mean over frames for every patch position, a mean over patch
positions for every frame, the two blocks stacked temporal-block-first,
and finally a small MLP projecting the stack into the language model's
embedding width.

All pooling and projection happens in float64 regardless of the input
precision so results are deterministic across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import InvalidInputError, ShapeError

TEMPORAL_FIRST = "temporal_first"


def _check_finite(name: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise InvalidInputError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class FrameFeatureTensor:
    """Per-frame encoder tokens, shape (frames, tokens, channels).

    ``tokens`` must equal ``grid_h * grid_w`` for the recorded token grid;
    ``patch_size`` records the encoder patch edge in pixels.
    """

    data: np.ndarray
    grid_h: int
    grid_w: int
    patch_size: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 3:
            raise ShapeError(f"expected (frames, tokens, channels), got {data.shape}")
        frames, tokens, channels = data.shape
        if frames < 1 or tokens < 1 or channels < 1:
            raise ShapeError(f"degenerate tensor shape {data.shape}")
        if self.grid_h * self.grid_w != tokens:
            raise ShapeError(
                f"token grid {self.grid_h}x{self.grid_w} does not match {tokens} tokens"
            )
        if self.patch_size < 1:
            raise InvalidInputError("patch_size must be >= 1")
        _check_finite("frame features", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class TemporalPooledFeature:
    """Mean over frames; shape (tokens, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ShapeError(f"expected (tokens, channels), got {data.shape}")
        _check_finite("temporal pooled feature", data)


@dataclass(frozen=True)
class SpatialPooledFeature:
    """Mean over patch tokens; shape (frames, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ShapeError(f"expected (frames, channels), got {data.shape}")
        _check_finite("spatial pooled feature", data)


@dataclass(frozen=True)
class VideoFeature:
    """Stacked video tokens, temporal block rows first.

    Rows ``0..num_temporal-1`` are the temporal pooled tokens (one per
    patch position), rows ``num_temporal..`` the spatial pooled tokens
    (one per frame). The layout marker travels with serialized output so
    downstream consumers never have to guess the block order.
    """

    data: np.ndarray
    num_temporal: int
    num_spatial: int
    layout: str = TEMPORAL_FIRST

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if self.layout != TEMPORAL_FIRST:
            raise InvalidInputError(f"unknown layout {self.layout!r}")
        if data.ndim != 2:
            raise ShapeError(f"expected (rows, channels), got {data.shape}")
        if self.num_temporal + self.num_spatial != data.shape[0]:
            raise ShapeError(
                f"{self.num_temporal}+{self.num_spatial} rows declared, "
                f"{data.shape[0]} present"
            )
        _check_finite("video feature", data)


@dataclass(frozen=True)
class ProjectedTokens:
    """Video tokens after projection; shape (rows, out_channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise ShapeError(f"expected (rows, channels), got {data.shape}")
        _check_finite("projected tokens", data)


@dataclass(frozen=True)
class TextTokens:
    """Tokenized text query; embeddings optional, width must match the projector."""

    ids: tuple[int, ...]
    embedded: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if self.embedded is not None:
            emb = np.asarray(self.embedded, dtype=np.float64)
            object.__setattr__(self, "embedded", emb)
            if emb.ndim != 2 or emb.shape[0] != len(self.ids):
                raise ShapeError(
                    f"embedded shape {emb.shape} does not match {len(self.ids)} ids"
                )
            _check_finite("text embeddings", emb)


@dataclass(frozen=True)
class Projector:
    """Row-wise MLP with max(0, .) between layers and none after the last.

    ``layers`` is a sequence of (weight, bias) pairs; weight i maps the
    previous width to the next one, so consecutive widths must chain.
    Training is out of scope here, so instances come either from
    :meth:`random` (seeded) or from a weights container on disk.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("projector needs at least one layer")
        cleaned = []
        prev_out = None
        for i, (weight, bias) in enumerate(self.layers):
            weight = np.asarray(weight, dtype=np.float64)
            bias = np.asarray(bias, dtype=np.float64)
            if weight.ndim != 2 or bias.ndim != 1:
                raise ShapeError(f"layer {i}: weight must be 2-d, bias 1-d")
            if bias.shape[0] != weight.shape[1]:
                raise ShapeError(
                    f"layer {i}: bias width {bias.shape[0]} != {weight.shape[1]}"
                )
            if prev_out is not None and weight.shape[0] != prev_out:
                raise ShapeError(
                    f"layer {i}: input width {weight.shape[0]} != previous output {prev_out}"
                )
            _check_finite(f"layer {i} weight", weight)
            _check_finite(f"layer {i} bias", bias)
            prev_out = weight.shape[1]
            cleaned.append((weight, bias))
        object.__setattr__(self, "layers", tuple(cleaned))

    @property
    def in_width(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1][0].shape[1]

    @classmethod
    def identity(cls, width: int) -> "Projector":
        return cls(layers=((np.eye(width), np.zeros(width)),))

    @classmethod
    def random(
        cls, in_width: int, out_width: int, hidden: int | None = None, seed: int = 0
    ) -> "Projector":
        """Two-layer projector with Gaussian weights scaled by 1/sqrt(fan_in)."""
        hidden = hidden or out_width
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out in ((in_width, hidden), (hidden, out_width)):
            weight = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
            bias = np.zeros(d_out)
            layers.append((weight, bias))
        return cls(layers=tuple(layers), seed=seed)

    def save(self, path) -> None:
        tensors = {}
        for i, (weight, bias) in enumerate(self.layers):
            tensors[f"weight_{i}"] = weight
            tensors[f"bias_{i}"] = bias
        tensorio.write_tensors(
            path, tensors, meta={"seed": self.seed, "num_layers": len(self.layers)}
        )

    @classmethod
    def load(cls, path) -> "Projector":
        tensors, header = tensorio.read_tensors(path)
        meta = header.get("meta", {})
        num_layers = int(meta.get("num_layers", len(tensors) // 2))
        layers = tuple(
            (tensors[f"weight_{i}"], tensors[f"bias_{i}"]) for i in range(num_layers)
        )
        return cls(layers=layers, seed=int(meta.get("seed", 0)))


def temporal_pool(x: FrameFeatureTensor) -> TemporalPooledFeature:
    """Mean over the frame axis: out[n, d] = mean_t x[t, n, d]."""
    pooled = np.mean(x.data, axis=0, dtype=np.float64)
    return TemporalPooledFeature(pooled)


def spatial_pool(x: FrameFeatureTensor) -> SpatialPooledFeature:
    """Mean over the token axis: out[t, d] = mean_n x[t, n, d]."""
    pooled = np.mean(x.data, axis=1, dtype=np.float64)
    return SpatialPooledFeature(pooled)


def assemble_video_feature(
    t: TemporalPooledFeature, z: SpatialPooledFeature
) -> VideoFeature:
    """Stack the temporal block above the spatial block along the token axis."""
    if t.data.shape[1] != z.data.shape[1]:
        raise ShapeError(
            f"channel mismatch: temporal {t.data.shape[1]} vs spatial {z.data.shape[1]}"
        )
    stacked = np.concatenate([t.data, z.data], axis=0)
    return VideoFeature(
        stacked, num_temporal=t.data.shape[0], num_spatial=z.data.shape[0]
    )


def split_video_feature(
    v: VideoFeature,
) -> tuple[TemporalPooledFeature, SpatialPooledFeature]:
    """Inverse of :func:`assemble_video_feature`."""
    t = v.data[: v.num_temporal]
    z = v.data[v.num_temporal :]
    return TemporalPooledFeature(t), SpatialPooledFeature(z)


def project_features(v: VideoFeature, g: Projector) -> ProjectedTokens:
    """Apply the projector row-wise; output keeps the row count of ``v``."""
    if v.data.shape[1] != g.in_width:
        raise ShapeError(
            f"feature width {v.data.shape[1]} != projector input width {g.in_width}"
        )
    h = v.data
    last = len(g.layers) - 1
    for i, (weight, bias) in enumerate(g.layers):
        h = h @ weight + bias
        if i != last:
            h = np.maximum(h, 0.0)
    return ProjectedTokens(h)


def sample_frame_indices(total_frames: int, count: int = 100) -> list[int]:
    """Uniformly spaced frame indices covering [0, total_frames).

    Always returns exactly ``count`` indices; short videos repeat frames
    so the downstream token budget stays fixed.
    """
    if total_frames < 1:
        raise InvalidInputError("total_frames must be >= 1")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    if count == 1:
        return [0]
    positions = np.linspace(0, total_frames - 1, num=count)
    return [int(round(p)) for p in positions]


def save_video_feature(path, v: VideoFeature) -> None:
    tensorio.write_tensors(
        path,
        {"video_feature": v.data},
        layouts={"video_feature": v.layout},
        meta={"num_temporal": v.num_temporal, "num_spatial": v.num_spatial},
    )


def load_video_feature(path) -> VideoFeature:
    tensors, header = tensorio.read_tensors(path)
    meta = header.get("meta", {})
    entry = next(e for e in header["tensors"] if e["name"] == "video_feature")
    return VideoFeature(
        tensors["video_feature"],
        num_temporal=int(meta["num_temporal"]),
        num_spatial=int(meta["num_spatial"]),
        layout=entry.get("layout", TEMPORAL_FIRST),
    )
