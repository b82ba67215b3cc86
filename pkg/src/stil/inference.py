"""Test-time detection: score boxes, link tubes with model scores, rerank."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import DataError, LinearModel, Tube, VideoDecomposition, _iter_jsonl, _write_lines
from .linking import DEFAULT_MAX_TUBES, STOP_INFERENCE, box_scores, link_video

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Detection:
    video_id: str
    action_id: str
    tube: Tube
    score: float
    context: float = 0.0
    negative_penalty: float = 0.0

    @property
    def frames(self):
        return self.tube.frames

    @property
    def rects(self):
        return self.tube.rects


def tube_score(m: LinearModel, tube: Tube) -> float:
    """Mean box score ``<w, x> + b`` over the tube's boxes."""
    X = np.stack([b.feature for b in tube.boxes]).astype(np.float64)
    return float(np.mean(X @ m.weights + m.bias))


def detect(
    video: VideoDecomposition,
    models: Mapping[str, LinearModel],
    max_tubes: int = DEFAULT_MAX_TUBES,
) -> list[Detection]:
    """One detection per linked tube per action, in action order."""
    if not video.boxes:
        log.warning("video %s has no boxes; no detections", video.video_id)
        return []
    out = []
    for action, m in models.items():
        scores = box_scores(video, m)
        for tube in link_video(video, scores, STOP_INFERENCE, max_tubes):
            idx = [b.index for b in tube.boxes]
            out.append(Detection(video.video_id, action, tube, float(np.mean(scores[idx]))))
    return out


def _context_score(video_model: LinearModel | None, video_feature, video_id: str) -> float | None:
    if video_feature is None or video_model is None:
        log.warning("no video feature/model for %s; context reranking skipped", video_id)
        return None
    return float(np.asarray(video_feature, dtype=np.float64) @ video_model.weights + video_model.bias)


def rerank_context(d: Detection, video_model: LinearModel | None, video_feature) -> Detection:
    """Add the whole-video classifier score to the detection score."""
    ctx = _context_score(video_model, video_feature, d.video_id)
    if ctx is None:
        return d
    return dataclasses.replace(d, score=d.score + ctx, context=ctx)


def rerank_negative(scores: Mapping[str, float]) -> dict[str, float]:
    """Penalise each action's score by its gap to the best action on the same tube."""
    if not scores:
        raise ValueError("need at least one action score")
    top = max(scores.values())
    return {a: s - (top - s) for a, s in scores.items()}


def detect_and_rerank(
    video: VideoDecomposition,
    models: Mapping[str, LinearModel],
    video_models: Mapping[str, LinearModel] | None = None,
    rerank: Sequence[str] = (),
    max_tubes: int = DEFAULT_MAX_TUBES,
) -> list[Detection]:
    """`detect` followed by optional ``"context"`` and ``"negative"`` reranking.

    Context is applied first; negative evidence then compares, for each tube,
    the context-adjusted scores of every action's model on that tube.
    """
    unknown = set(rerank) - {"context", "negative"}
    if unknown:
        raise ValueError(f"unknown reranker(s) {sorted(unknown)}")
    use_ctx = "context" in rerank
    if use_ctx and not video_models:
        raise DataError("context reranking requires video models")
    dets = detect(video, models, max_tubes)
    if not dets:
        return dets

    ctx = dict.fromkeys(models, 0.0)
    if use_ctx:
        for a in models:
            ctx[a] = _context_score(video_models.get(a), video.video_feature, video.video_id) or 0.0
    out = []
    for d in dets:
        d = dataclasses.replace(d, score=d.score + ctx[d.action_id], context=ctx[d.action_id])
        if "negative" in rerank:
            per_action = {a: tube_score(m, d.tube) + ctx[a] for a, m in models.items()}
            per_action[d.action_id] = d.score
            new = rerank_negative(per_action)[d.action_id]
            d = dataclasses.replace(d, score=new, negative_penalty=d.score - new)
        out.append(d)
    return out


def save_detections(dets: Sequence[Detection], path) -> None:
    lines = []
    for d in dets:
        rec = {
            "video_id": d.video_id,
            "action": d.action_id,
            "score": d.score,
            "frames": d.frames.tolist(),
            "rects": d.rects.tolist(),
        }
        lines.append(json.dumps(rec))
    _write_lines(path, lines)


def load_detections(path) -> list[Detection]:
    out = []
    for lineno, rec in _iter_jsonl(path):
        try:
            tube = Tube(frames=rec["frames"], rects=rec["rects"])
            out.append(Detection(str(rec["video_id"]), str(rec["action"]), tube, float(rec["score"])))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed detection ({exc!r})") from None
    return out
