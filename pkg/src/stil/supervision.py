"""Extra annotations (boxes, points, "action absent") as prior-score boosts,
and the per-video annotation cost model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Annotation, BoxProposal, Tube, VideoDecomposition, spatial_iou, with_priors

LABEL_SECONDS = 5.0
BOX_SECONDS = 15.0
POINT_SECONDS = 1.5


def temporal_delta(a_frame: int, b_frame: int) -> float:
    return max(0.0, 1.0 - abs(a_frame - b_frame) / 2.0)


def point_match(point, rect) -> float:
    """1 at the box centre, falling linearly to 0 at the centre-to-corner distance."""
    cx, cy = (rect[0] + rect[2]) / 2.0, (rect[1] + rect[3]) / 2.0
    radius = math.hypot(rect[2] - cx, rect[3] - cy)
    dist = math.hypot(point[0] - cx, point[1] - cy)
    return max(0.0, 1.0 - dist / radius)


def spatial_delta(ann: Annotation, rect) -> float:
    if ann.kind == "box":
        return spatial_iou(ann.geometry, rect)
    if ann.kind == "point":
        return point_match(ann.geometry, rect)
    return -1.0


def supervision_score(box: BoxProposal, anns: Iterable[Annotation]) -> float:
    total = 0.0
    for a in anns:
        dt = temporal_delta(a.frame_idx, box.frame_idx)
        if dt > 0:
            total += dt * spatial_delta(a, box.rect)
    return total


def apply_supervision(video: VideoDecomposition, anns: Sequence[Annotation]) -> VideoDecomposition:
    """Copy of ``video`` whose prior scores include the annotation scores."""
    if not anns:
        return video
    boost = np.array([supervision_score(b, anns) for b in video.boxes])
    return with_priors(video, video.priors + boost)


def annotations_from_tube(
    tube: Tube, num_frames: int, kind: str, stride: int, offset: int = 0
) -> list[Annotation]:
    """Simulated annotator: every ``stride``-th frame gets a box or point from
    the ground-truth tube, or a ``none`` entry where the action is absent."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if kind not in ("box", "point"):
        raise ValueError(f"cannot simulate {kind!r} annotations")
    out = []
    for f in range(offset, num_frames, stride):
        rect = tube.rect_at(f)
        if rect is None:
            out.append(Annotation("none", f))
        elif kind == "box":
            out.append(Annotation("box", f, tuple(rect)))
        else:
            out.append(Annotation("point", f, ((rect[0] + rect[2]) / 2, (rect[1] + rect[3]) / 2)))
    return out


# --------------------------------------------------------------------------
# annotation cost


@dataclass(frozen=True)
class Labels:
    name = "Video labels"


@dataclass(frozen=True)
class Points:
    stride: int = 1

    @property
    def name(self):
        return f"Points (stride={self.stride})"


@dataclass(frozen=True)
class Boxes:
    stride: int = 1

    @property
    def name(self):
        return f"Boxes (stride={self.stride})"


@dataclass(frozen=True)
class Mixture:
    weight: float
    first: object
    second: object

    @property
    def name(self):
        a = round(100 * self.weight)
        return f"Mixture ({a}:{100 - a})"


def annotation_cost(num_frames: float, strategy) -> float:
    """Estimated annotation seconds for one video of ``num_frames`` sampled frames.

    Annotated frame counts may be fractional (65 frames at stride 10 count as 6.5).
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    if isinstance(strategy, Labels):
        return LABEL_SECONDS
    if isinstance(strategy, (Points, Boxes)):
        if strategy.stride < 1:
            raise ValueError("stride must be >= 1")
        unit = POINT_SECONDS if isinstance(strategy, Points) else BOX_SECONDS
        return LABEL_SECONDS + num_frames / strategy.stride * unit
    if isinstance(strategy, Mixture):
        w = strategy.weight
        return w * annotation_cost(num_frames, strategy.first) + (1 - w) * annotation_cost(
            num_frames, strategy.second
        )
    raise TypeError(f"unknown annotation strategy {strategy!r}")


def parse_strategy(text: str):
    """Parse ``labels``, ``points:10``, ``boxes:1`` or ``mixture:0.5:labels:boxes:10``."""
    parts = text.strip().lower().split(":")
    kind = parts[0]
    if kind == "labels" and len(parts) == 1:
        return Labels()
    if kind in ("points", "boxes") and len(parts) <= 2:
        stride = int(parts[1]) if len(parts) == 2 else 1
        if stride < 1:
            raise ValueError("stride must be >= 1")
        return Points(stride) if kind == "points" else Boxes(stride)
    if kind == "mixture" and len(parts) >= 3:
        weight = float(parts[1])
        rest = parts[2:]
        split = 1 if rest[0] == "labels" else 2
        return Mixture(weight, parse_strategy(":".join(rest[:split])), parse_strategy(":".join(rest[split:])))
    raise ValueError(f"cannot parse annotation strategy {text!r}")


# rows of the published cost table; stride-1 rows are omitted for datasets
# whose features are sampled every 5th frame
COST_TABLE_ROWS = (
    Labels(),
    Points(10),
    Mixture(0.5, Labels(), Boxes(10)),
    Points(1),
    Boxes(10),
    Boxes(1),
)


def cost_table(frame_counts: dict[str, float], no_stride1: Iterable[str] = ()) -> list[list]:
    """Rows of ``[strategy name, cost per dataset...]``; ``None`` marks omitted cells."""
    skip = set(no_stride1)
    rows = []
    for strat in COST_TABLE_ROWS:
        row = [strat.name]
        for name, frames in frame_counts.items():
            dense = isinstance(strat, (Points, Boxes)) and strat.stride == 1
            row.append(None if dense and name in skip else annotation_cost(frames, strat))
        rows.append(row)
    return rows


def format_cost_table(frame_counts: dict[str, float], no_stride1: Iterable[str] = (), sep: str = ",") -> str:
    lines = [sep.join(["supervision_level", *frame_counts])]
    for row in cost_table(frame_counts, no_stride1):
        cells = [row[0]] + ["-" if c is None else f"{c:.2f}" for c in row[1:]]
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"
