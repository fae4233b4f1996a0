"""Boxes, IoU, and run-length masks.

Boxes are (x1, y1, x2, y2) with exclusive max edges, so an integer box
covers exactly (x2-x1)*(y2-y1) pixels and IoU on integer boxes equals a
pixel-count ratio exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

Box = tuple[float, float, float, float]


def validate_box(box: Sequence[float]) -> Box:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x1 < x2 and y1 < y2):
        raise InvalidInputError(f"degenerate box {box}")
    return (x1, y1, x2, y2)


def box_area(box: Sequence[float]) -> float:
    x1, y1, x2, y2 = box
    return (x2 - x1) * (y2 - y1)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix1 = max(ax1, bx1)
    iy1 = max(ay1, by1)
    ix2 = min(ax2, bx2)
    iy2 = min(ay2, by2)
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if inter <= 0:
        return 0.0
    union = box_area(a) + box_area(b) - inter
    return inter / union


def pad_box(box: Sequence[float], pad_frac: float, width: int, height: int) -> Box:
    """Grow a box by ``pad_frac`` of its own size per side, clipped to the frame."""
    x1, y1, x2, y2 = box
    pad_x = (x2 - x1) * pad_frac
    pad_y = (y2 - y1) * pad_frac
    return (
        max(0.0, x1 - pad_x),
        max(0.0, y1 - pad_y),
        min(float(width), x2 + pad_x),
        min(float(height), y2 + pad_y),
    )


@dataclass(frozen=True)
class MaskRLE:
    """Row-major run-length mask: alternating background/foreground run lengths.

    The first run counts background pixels (possibly zero), and runs must
    sum to height*width.
    """

    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if self.height < 1 or self.width < 1:
            raise InvalidInputError(f"bad mask size {self.height}x{self.width}")
        if any(r < 0 for r in runs):
            raise InvalidInputError("negative run length")
        if sum(runs) != self.height * self.width:
            raise InvalidInputError(
                f"runs sum to {sum(runs)}, expected {self.height * self.width}"
            )

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "MaskRLE":
        mask = np.asarray(mask).astype(bool)
        if mask.ndim != 2:
            raise InvalidInputError(f"mask must be 2-d, got shape {mask.shape}")
        flat = mask.reshape(-1).astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = list(np.diff(bounds))
        if flat[0] == 1:
            runs = [0] + runs  # runs must start with a background count
        return cls(height=mask.shape[0], width=mask.shape[1], runs=tuple(runs))

    def to_mask(self) -> np.ndarray:
        flat = np.zeros(self.height * self.width, dtype=bool)
        pos = 0
        value = False
        for run in self.runs:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return flat.reshape(self.height, self.width)

    @property
    def foreground_count(self) -> int:
        return sum(self.runs[1::2])

    def to_record(self) -> dict:
        return {"h": self.height, "w": self.width, "runs": list(self.runs)}

    @classmethod
    def from_record(cls, rec: dict) -> "MaskRLE":
        return cls(height=rec["h"], width=rec["w"], runs=tuple(rec["runs"]))


def mask_to_box(mask: MaskRLE) -> Box:
    """Tight axis-aligned box around the mask foreground, exclusive max edges."""
    if mask.foreground_count == 0:
        raise InvalidInputError("mask has no foreground pixels")
    grid = mask.to_mask()
    rows = np.any(grid, axis=1).nonzero()[0]
    cols = np.any(grid, axis=0).nonzero()[0]
    return (
        float(cols[0]),
        float(rows[0]),
        float(cols[-1] + 1),
        float(rows[-1] + 1),
    )


def box_mask(box: Sequence[float], height: int, width: int) -> MaskRLE:
    """Mask covering the (integer-rounded) box interior; used by box-only mode."""
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    x1 = max(0, min(x1, width))
    x2 = max(0, min(x2, width))
    y1 = max(0, min(y1, height))
    y2 = max(0, min(y2, height))
    grid = np.zeros((height, width), dtype=bool)
    grid[y1:y2, x1:x2] = True
    return MaskRLE.from_mask(grid)
