"""Temporal Prim: greedy bidirectional growth of box tubes.

Edges only exist between boxes of adjacent sampled frames that overlap by at
least ``MIN_LINK_IOU``; their weight is the sum of the two box scores.  A tube
starts at a seed box and repeatedly takes the heavier of the best forward and
best backward edge leaving its current ends, so each added box costs one
comparison plus the edge evaluations for the next frame in that direction.
"""
from __future__ import annotations

import logging
import json
from typing import Callable, Sequence, Union

import numpy as np

from .data import (
    BoxProposal,
    LinearModel,
    Tube,
    VideoDecomposition,
    _write_lines,
    iou_one_to_many,
    spatial_iou,
)

log = logging.getLogger(__name__)

MIN_LINK_IOU = 0.1
SUPPRESS_IOU = 0.5
DEFAULT_MAX_TUBES = 5

STOP_TRAINING = "training"
STOP_INFERENCE = "inference"

ScoreSource = Union[str, LinearModel, Callable[[BoxProposal], float], np.ndarray]


def box_scores(video: VideoDecomposition, source: ScoreSource = "prior") -> np.ndarray:
    """Per-box scores of ``video`` indexed by ``BoxProposal.index``.

    ``source`` may be ``"prior"``, a `LinearModel`, a callable on boxes, or an
    already computed array.
    """
    if isinstance(source, str):
        if source != "prior":
            raise ValueError(f"unknown score source {source!r}")
        scores = video.priors.copy()
    elif isinstance(source, LinearModel):
        if not video.boxes:
            return np.zeros(0)
        if video.feature_dim != source.feature_dim:
            raise ValueError(
                f"model {source.action_id} has {source.feature_dim} dims, video has {video.feature_dim}"
            )
        scores = video.features.astype(np.float64) @ source.weights + source.bias
    elif callable(source):
        scores = np.array([source(b) for b in video.boxes], dtype=np.float64)
    else:
        scores = np.asarray(source, dtype=np.float64)
        if scores.shape != (len(video.boxes),):
            raise ValueError("score array does not match the number of boxes")
    if not np.all(np.isfinite(scores)):
        raise ValueError("box scores must be finite")
    return scores


def edge_weight(b1: BoxProposal, b2: BoxProposal, score: Callable[[BoxProposal], float]) -> float:
    """Weight of the edge between two boxes of the same video (0 if not linked)."""
    if abs(b1.frame_idx - b2.frame_idx) != 1:
        return 0.0
    if spatial_iou(b1.rect, b2.rect) < MIN_LINK_IOU:
        return 0.0
    return float(score(b1) + score(b2))


def _best_candidate(video, box, step, scores, blocked, stop_rule, stats):
    """Best extension of ``box`` into the adjacent frame ``box.frame_idx + step``.

    Returns ``(weight, candidate)`` or None when growth in that direction stops.
    """
    frame = box.frame_idx + step
    if frame < 0 or frame >= video.num_frames:
        return None
    cands = [b for b in video.frame_boxes(frame) if b.index not in blocked]
    if not cands:
        return None
    if stats is not None:
        stats["edge_evals"] = stats.get("edge_evals", 0) + len(cands)
    idx = np.array([b.index for b in cands])
    ious = iou_one_to_many(box.rect, video.rects[idx])
    weights = scores[box.index] + scores[idx]
    valid = np.flatnonzero(ious >= MIN_LINK_IOU)
    if len(valid) == 0:
        return None
    # argmax returns the first maximum, i.e. the lowest slot among ties
    best = valid[int(np.argmax(weights[valid]))]
    weight = float(weights[best])
    cand = cands[best]
    if weight <= 0:
        return None
    if stop_rule == STOP_INFERENCE and scores[cand.index] <= 0:
        return None
    return weight, cand


def grow_tube(
    video: VideoDecomposition,
    seed: BoxProposal,
    score: ScoreSource = "prior",
    stop_rule: str = STOP_TRAINING,
    blocked: set[int] | frozenset[int] = frozenset(),
    stats: dict | None = None,
) -> Tube:
    """Grow one tube from ``seed``.

    ``blocked`` holds indices of boxes that may not join the tube.  If
    ``stats`` is given, ``stats["edge_evals"]`` is incremented by the number of
    edge weights evaluated.
    """
    if stop_rule not in (STOP_TRAINING, STOP_INFERENCE):
        raise ValueError(f"unknown stop rule {stop_rule!r}")
    scores = score if isinstance(score, np.ndarray) else box_scores(video, score)
    forward = [seed]
    backward: list[BoxProposal] = []
    fwd = _best_candidate(video, seed, +1, scores, blocked, stop_rule, stats)
    bwd = _best_candidate(video, seed, -1, scores, blocked, stop_rule, stats)
    while fwd is not None or bwd is not None:
        if fwd is not None and (bwd is None or fwd[0] >= bwd[0]):
            box = fwd[1]
            forward.append(box)
            fwd = _best_candidate(video, box, +1, scores, blocked, stop_rule, stats)
        else:
            box = bwd[1]
            backward.append(box)
            bwd = _best_candidate(video, box, -1, scores, blocked, stop_rule, stats)
    return Tube.from_boxes(backward[::-1] + forward)


def link_video(
    video: VideoDecomposition,
    score: ScoreSource = "prior",
    stop_rule: str = STOP_TRAINING,
    max_tubes: int = DEFAULT_MAX_TUBES,
    stats: dict | None = None,
) -> list[Tube]:
    """Extract up to ``max_tubes`` tubes from ``video``.

    Each tube is seeded at the highest-scoring box not yet suppressed (ties:
    lowest frame, then lowest slot).  Afterwards every box overlapping a tube
    box in its frame by more than ``SUPPRESS_IOU`` is suppressed, both as a
    seed and as a tube member.  The video itself is not modified.
    """
    if max_tubes < 1:
        raise ValueError("max_tubes must be >= 1")
    if not video.boxes:
        log.warning("video %s has no boxes; no tubes linked", video.video_id)
        return []
    scores = box_scores(video, score)
    order = sorted(video.boxes, key=lambda b: (-scores[b.index], b.frame_idx, b.slot))
    suppressed: set[int] = set()
    tubes: list[Tube] = []
    for seed in order:
        if len(tubes) >= max_tubes:
            break
        if seed.index in suppressed:
            continue
        tube = grow_tube(video, seed, scores, stop_rule, suppressed, stats)
        tubes.append(tube)
        for box in tube.boxes:
            frame_boxes = video.frame_boxes(box.frame_idx)
            idx = np.array([b.index for b in frame_boxes])
            ious = iou_one_to_many(box.rect, video.rects[idx])
            suppressed.update(int(i) for i in idx[ious > SUPPRESS_IOU])
            suppressed.add(box.index)
    return tubes


def link_dataset(
    videos: Sequence[VideoDecomposition],
    score: ScoreSource = "prior",
    stop_rule: str = STOP_TRAINING,
    max_tubes: int = DEFAULT_MAX_TUBES,
) -> None:
    """Link every video in place, storing the result in ``video.tubes``."""
    for v in videos:
        v.tubes = link_video(v, score, stop_rule, max_tubes)


def save_tubes(videos: Sequence[VideoDecomposition], path) -> None:
    lines = []
    for v in videos:
        for j, t in enumerate(v.tubes):
            rec = {
                "video_id": v.video_id,
                "tube_idx": j,
                "frames": t.frames.tolist(),
                "rects": t.rects.tolist(),
            }
            lines.append(json.dumps(rec))
    _write_lines(path, lines)
