"""Spatio-temporal overlap, detection matching, AP/mAP and AUC."""
from __future__ import annotations

import logging
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Tube, spatial_iou

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


def st_iou(a: Tube, b: Tube) -> float:
    """Mean per-frame spatial IoU over the union of both tubes' frames.

    Frames covered by only one tube count as zero overlap.
    """
    shared_lo = max(a.start_frame, b.start_frame)
    shared_hi = min(a.end_frame, b.end_frame)
    union = len(a) + len(b) - max(0, shared_hi - shared_lo + 1)
    total = 0.0
    for f in range(shared_lo, shared_hi + 1):
        total += spatial_iou(a.rect_at(f), b.rect_at(f))
    return total / union


def match_detections(dets: Sequence, gts: Mapping[str, Sequence[Tube]], tau: float) -> list[bool]:
    """True/false-positive flag per detection, in the given (score-descending) order.

    ``gts`` maps the ids of videos that are positive for the action to their
    ground-truth tubes.  Each detection claims the unmatched ground truth of
    its video with the highest overlap, provided that overlap is at least
    ``tau``.
    """
    matched: dict[str, set[int]] = {}
    flags = []
    for d in dets:
        tubes = gts.get(d.video_id, ())
        taken = matched.setdefault(d.video_id, set())
        best, best_ov = None, -1.0
        for g, gt in enumerate(tubes):
            if g in taken:
                continue
            ov = st_iou(d.tube, gt)
            if ov >= tau and ov > best_ov:
                best, best_ov = g, ov
        if best is not None:
            taken.add(best)
        flags.append(best is not None)
    return flags


def average_precision(flags: Sequence[bool], num_gt: int, interpolated: bool = False) -> float:
    """AP of a ranked list of tp/fp flags against ``num_gt`` ground truths.

    Non-interpolated by default: the mean over ground truths of the precision
    at the rank where each was found (0 for missed ones).  ``interpolated``
    switches to the all-point interpolated precision envelope.
    """
    if num_gt < 1:
        raise ValueError("num_gt must be >= 1")
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, len(flags) + 1)
    if not interpolated:
        return float(precision[flags].sum() / num_gt)
    recall = tp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def auc_score(scores: Sequence[float], correct: Sequence[bool]) -> float:
    """Area under the ROC curve; tied scores count half.  NaN if a class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    pos, neg = scores[correct], scores[~correct]
    if len(pos) == 0 or len(neg) == 0:
        return math.nan
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def _sorted(dets):
    return sorted(dets, key=lambda d: -d.score)


def action_ap(dets, gts: Mapping[str, Sequence[Tube]], tau: float, interpolated: bool = False) -> float:
    num_gt = sum(len(t) for t in gts.values())
    flags = match_detections(_sorted(dets), gts, tau)
    return average_precision(flags, num_gt, interpolated)


def action_auc(dets, gts: Mapping[str, Sequence[Tube]], tau: float) -> float:
    """ROC AUC of each video's top detection, correct when it overlaps a ground truth by ``tau``."""
    top = {}
    for d in _sorted(dets):
        top.setdefault(d.video_id, d)
    scores, correct = [], []
    for vid, d in top.items():
        ok = any(st_iou(d.tube, g) >= tau for g in gts.get(vid, ()))
        scores.append(d.score)
        correct.append(ok)
    return auc_score(scores, correct)


def _group(dets, ground_truth, actions):
    by_action = {a: [] for a in actions}
    for d in dets:
        if d.action_id in by_action:
            by_action[d.action_id].append(d)
    gts = {a: {} for a in actions}
    for (vid, action), tubes in ground_truth.items():
        if action in gts:
            gts[action].setdefault(vid, []).extend(tubes)
    return by_action, gts


def mean_ap(
    dets: Iterable,
    ground_truth: Mapping[tuple[str, str], Sequence[Tube]],
    actions: Sequence[str],
    tau: float = 0.5,
    interpolated: bool = False,
) -> float:
    """mAP over actions; actions without ground truth are skipped."""
    by_action, gts = _group(list(dets), ground_truth, actions)
    aps = []
    for a in actions:
        if not gts[a]:
            log.warning("action %s has no ground truth; excluded from mAP", a)
            continue
        aps.append(action_ap(by_action[a], gts[a], tau, interpolated))
    return float(np.mean(aps)) if aps else math.nan


def evaluate(
    dets: Iterable,
    ground_truth: Mapping[tuple[str, str], Sequence[Tube]],
    actions: Sequence[str],
    taus: Sequence[float] = DEFAULT_TAUS,
    interpolated: bool = False,
) -> list[dict]:
    """Rows of ``{action, tau, ap, auc}`` for every action and tau, followed by
    a ``mean`` row per tau."""
    by_action, gts = _group(list(dets), ground_truth, actions)
    rows = []
    for tau in taus:
        aps, aucs = [], []
        for a in actions:
            if not gts[a]:
                log.warning("action %s has no ground truth; excluded", a)
                continue
            ap = action_ap(by_action[a], gts[a], tau, interpolated)
            auc = action_auc(by_action[a], gts[a], tau)
            if math.isnan(auc):
                log.warning("action %s: AUC undefined at tau=%.2f (one class empty)", a, tau)
            else:
                aucs.append(auc)
            aps.append(ap)
            rows.append({"action": a, "tau": tau, "ap": ap, "auc": auc})
        rows.append(
            {
                "action": "mean",
                "tau": tau,
                "ap": float(np.mean(aps)) if aps else math.nan,
                "auc": float(np.mean(aucs)) if aucs else math.nan,
            }
        )
    return rows


def format_report(rows: Sequence[dict], sep: str = ",") -> str:
    lines = [sep.join(["action", "tau", "ap", "auc"])]
    for r in rows:
        lines.append(sep.join([r["action"], f"{r['tau']:.2f}", f"{r['ap']:.6f}", f"{r['auc']:.6f}"]))
    return "\n".join(lines) + "\n"
