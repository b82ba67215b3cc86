"""Latent max-margin training of per-action box classifiers.

`train_stil` alternates between selecting one contiguous subtube per
positive video (the E-step) and refitting a linear SVM on the selected boxes
against hard negatives and background boxes.  Positives are split into folds
so that each fold is relocalised by a model that never saw its own
selections.  `train_mil` keeps the same loop but selects the ``mu``
top-scoring boxes per video regardless of tubes.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import solver
from .data import (
    Annotation,
    DataError,
    LatentAssignment,
    LinearModel,
    Tube,
    VideoDecomposition,
    check_assignment,
)
from .linking import DEFAULT_MAX_TUBES, STOP_TRAINING, ScoreSource, box_scores, link_video
from .supervision import apply_supervision

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    C: float = 10.0
    epochs: int = 5
    folds: int = 3
    length_reg: float = 1.0
    mu: int = 10
    background_negatives_per_video: int = 10
    max_tubes: int = DEFAULT_MAX_TUBES
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if self.length_reg < 0:
            raise ValueError("length_reg must be >= 0")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if self.max_tubes < 1:
            raise ValueError("max_tubes must be >= 1")

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class EpochRecord:
    epoch: int
    fold: int
    trained_on: frozenset[str]
    relocalized: frozenset[str]
    mean_length: float
    mean_score: float
    objective: float


@dataclass
class TrainTrace:
    """What happened during training; filled in when passed to a trainer."""

    records: list[EpochRecord] = field(default_factory=list)
    assignments: list[dict[str, LatentAssignment]] = field(default_factory=list)
    selections: list[dict[str, np.ndarray]] = field(default_factory=list)
    videos: dict[str, VideoDecomposition] = field(default_factory=dict)


# --------------------------------------------------------------------------
# E-step


def _tube_scores(video: VideoDecomposition, j: int, scores: np.ndarray) -> np.ndarray:
    return scores[[b.index for b in video.tubes[j].boxes]]


def subtube_score(
    video: VideoDecomposition, j: int, k: int, s: int, box_score: ScoreSource, length_reg: float = 1.0
) -> float:
    """Sum of box scores over frames ``k..k+s`` of tube ``j`` minus ``length_reg * s``."""
    if not 0 <= j < len(video.tubes):
        raise IndexError(f"tube index {j} out of range")
    tube = video.tubes[j]
    if s < 0 or k < tube.start_frame or k + s > tube.end_frame:
        raise IndexError(f"subtube {k}..{k + s} outside tube span {tube.start_frame}..{tube.end_frame}")
    scores = box_score if isinstance(box_score, np.ndarray) else box_scores(video, box_score)
    vals = _tube_scores(video, j, scores)[k - tube.start_frame : k - tube.start_frame + s + 1]
    return float(np.cumsum(vals)[-1]) - length_reg * s


def e_step(video: VideoDecomposition, box_score: ScoreSource, length_reg: float = 1.0) -> LatentAssignment:
    """Highest-scoring subtube over all tubes of ``video``.

    Ties prefer the longer subtube, then the lower tube index, then the
    earlier start.
    """
    if not video.tubes:
        raise DataError(f"{video.video_id}: e_step needs at least one tube")
    scores = box_score if isinstance(box_score, np.ndarray) else box_scores(video, box_score)
    best_key, best = None, None
    for j, tube in enumerate(video.tubes):
        vals = _tube_scores(video, j, scores)
        for k in range(len(vals)):
            # running sums left to right
            z = np.cumsum(vals[k:]) - length_reg * np.arange(len(vals) - k)
            top = z.max()
            s = int(np.flatnonzero(z == top)[-1])
            key = (top, s)
            if best_key is None or key > best_key:
                best_key = key
                best = LatentAssignment(j, tube.start_frame + k, tube.start_frame + k + s)
    return best


def assignment_boxes(video: VideoDecomposition, a: LatentAssignment) -> np.ndarray:
    """Indices (into ``video.boxes``) of the boxes selected by ``a``."""
    tube = video.tubes[a.tube_idx]
    return np.array([tube.box_at(f).index for f in range(a.start, a.end + 1)])


def assignment_tube(video: VideoDecomposition, a: LatentAssignment) -> Tube:
    tube = video.tubes[a.tube_idx]
    lo, hi = a.start - tube.start_frame, a.end - tube.start_frame + 1
    return Tube.from_boxes(tube.boxes[lo:hi])


def background_boxes(video: VideoDecomposition, n: int) -> np.ndarray:
    """Up to ``n`` lowest-prior boxes that are not part of any tube."""
    in_tube = {b.index for t in video.tubes for b in t.boxes}
    free = [b for b in video.boxes if b.index not in in_tube]
    free.sort(key=lambda b: (b.prior_score, b.index))
    return np.array([b.index for b in free[:n]], dtype=np.int64)


# --------------------------------------------------------------------------
# shared latent training loop


def _split_videos(videos, action):
    pos = [v for v in videos if action in v.labels]
    neg = [v for v in videos if action not in v.labels]
    if not pos:
        raise DataError(f"no positive videos for action {action!r}")
    if not neg:
        raise DataError(f"no negative videos for action {action!r}")
    dims = {v.feature_dim for v in videos if v.boxes}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensionality across videos: {sorted(dims)}")
    return pos, neg


def _prepare(videos, action, cfg, supervision, need_tubes):
    out = []
    for v in videos:
        anns = supervision.get(v.video_id, ()) if supervision else ()
        if anns:
            v = apply_supervision(v, anns)
        if need_tubes and not v.tubes:
            v = dataclasses.replace(v, tubes=link_video(v, "prior", STOP_TRAINING, cfg.max_tubes))
        out.append(v)
    return out


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _build_set(pos_sel, neg_sel, background, C):
    Xp = [v.features[idx] for v, idx in pos_sel]
    Xn = [v.features[idx] for v, idx in neg_sel] + [v.features[idx] for v, idx in background]
    Xp = np.concatenate(Xp) if Xp else np.zeros((0, 0))
    Xn = np.concatenate(Xn)
    X = np.concatenate([Xp, Xn]) if len(Xp) else Xn
    y = np.concatenate([np.ones(len(Xp)), -np.ones(len(Xn))])
    return solver.TrainingSet(X, y, C=C)


def _train_latent(
    videos: Sequence[VideoDecomposition],
    action: str,
    cfg: TrainConfig,
    init_select: Callable,
    select: Callable,
    trace: TrainTrace | None,
) -> LinearModel:
    """``init_select(video, rng)`` and ``select(video, scores)`` return
    ``(box indices, extra)`` for a video; ``extra`` is a `LatentAssignment`
    for tube-based selection and None otherwise."""
    pos, neg = _split_videos(videos, action)
    rng = np.random.default_rng(_seed(cfg.seed, 0))
    nfolds = min(cfg.folds, len(pos))
    fold_of = np.empty(len(pos), dtype=np.int64)
    fold_of[rng.permutation(len(pos))] = np.arange(len(pos)) % nfolds

    background = [(v, background_boxes(v, cfg.background_negatives_per_video)) for v in videos]
    background = [(v, idx) for v, idx in background if len(idx)]

    pos_sel = [init_select(v, rng) for v in pos]
    neg_sel = [init_select(v, rng) for v in neg]
    if trace is not None:
        trace.videos.update({v.video_id: v for v in videos})
    _record_selection(trace, pos, pos_sel)

    def fit_on(pos_idx, seed):
        ts = _build_set(
            [(pos[i], pos_sel[i][0]) for i in pos_idx],
            [(v, s[0]) for v, s in zip(neg, neg_sel)],
            background,
            cfg.C,
        )
        model = solver.fit(ts, seed=seed, action_id=action)
        return model, solver.objective(model, ts)

    for epoch in range(1, cfg.epochs + 1):
        new_sel = list(pos_sel)
        for f in range(nfolds):
            members = [i for i in range(len(pos)) if fold_of[i] == f]
            train_idx = [i for i in range(len(pos)) if fold_of[i] != f] if nfolds > 1 else list(range(len(pos)))
            model, obj = fit_on(train_idx, _seed(cfg.seed, epoch, f + 1))
            for i in members:
                new_sel[i] = select(pos[i], box_scores(pos[i], model))
            stats = _selection_stats(pos, new_sel, members, model, cfg.length_reg)
            rec = EpochRecord(
                epoch,
                f,
                frozenset(pos[i].video_id for i in train_idx),
                frozenset(pos[i].video_id for i in members),
                *stats,
                obj,
            )
            log.info(
                "action=%s epoch=%d fold=%d mean_length=%.3f mean_score=%.4f objective=%.6g",
                action, epoch, f, rec.mean_length, rec.mean_score, obj,
            )
            if trace is not None:
                trace.records.append(rec)
        pos_sel = new_sel
        _record_selection(trace, pos, pos_sel)
        full, _ = fit_on(range(len(pos)), _seed(cfg.seed, epoch, 0))
        neg_sel = [select(v, box_scores(v, full)) for v in neg]

    final, _ = fit_on(range(len(pos)), _seed(cfg.seed, cfg.epochs + 1, 0))
    return final


def _selection_stats(pos, sel, members, model, length_reg):
    lengths, values = [], []
    for i in members:
        idx, a = sel[i]
        lengths.append(len(idx))
        s = box_scores(pos[i], model)[idx]
        values.append(float(s.sum()) - length_reg * (len(idx) - 1) if a is not None else float(s.mean()))
    return float(np.mean(lengths)), float(np.mean(values))


def _record_selection(trace, pos, sel):
    if trace is None:
        return
    trace.selections.append({v.video_id: s[0] for v, s in zip(pos, sel)})
    if all(s[1] is not None for s in sel):
        trace.assignments.append({v.video_id: s[1] for v, s in zip(pos, sel)})


# --------------------------------------------------------------------------
# public trainers


def train_stil(
    videos: Sequence[VideoDecomposition],
    action: str,
    cfg: TrainConfig = TrainConfig(),
    supervision: Mapping[str, Sequence[Annotation]] | None = None,
    trace: TrainTrace | None = None,
) -> LinearModel:
    """Train the box classifier for ``action`` from video labels.

    Videos without tubes are linked from their prior scores first.
    ``supervision`` maps video ids to extra annotations for this action; their
    scores are added to the box priors before linking and initialisation.
    """
    videos = _prepare(videos, action, cfg, supervision, need_tubes=True)
    lam = cfg.length_reg

    def select(v, scores):
        a = e_step(v, scores, lam)
        check_assignment(v, a)
        return assignment_boxes(v, a), a

    def init_select(v, rng):
        return select(v, box_scores(v, "prior"))

    return _train_latent(videos, action, cfg, init_select, select, trace)


def train_mil(
    videos: Sequence[VideoDecomposition],
    action: str,
    cfg: TrainConfig = TrainConfig(),
    mu: int | None = None,
    supervision: Mapping[str, Sequence[Annotation]] | None = None,
    trace: TrainTrace | None = None,
) -> LinearModel:
    """(Generalised) MIL baseline: ``mu`` boxes per video, random at the start,
    then the ``mu`` top-scoring ones.  ``mu=1`` is plain MIL."""
    mu = cfg.mu if mu is None else mu
    if mu < 1:
        raise ValueError("mu must be >= 1")
    # tubes only serve to keep tube boxes out of the background negatives
    videos = _prepare(videos, action, cfg, supervision, need_tubes=True)
    for v in videos:
        if mu > len(v.boxes):
            log.warning("mu=%d exceeds the %d boxes of video %s; using all boxes", mu, len(v.boxes), v.video_id)

    def select(v, scores):
        order = np.lexsort((np.arange(len(scores)), -scores))
        return np.sort(order[:mu]), None

    def init_select(v, rng):
        n = len(v.boxes)
        return np.sort(rng.choice(n, size=min(mu, n), replace=False)), None

    return _train_latent(videos, action, cfg, init_select, select, trace)


def train_video_classifier(
    videos: Sequence[VideoDecomposition], action: str, cfg: TrainConfig = TrainConfig()
) -> LinearModel:
    """Global whole-video classifier for ``action``, used for contextual reranking."""
    have = [v for v in videos if v.video_feature is not None]
    if len(have) < len(videos):
        log.warning("%d videos lack a video feature and are skipped", len(videos) - len(have))
    if not have:
        raise DataError("no video features available")
    X = np.stack([v.video_feature for v in have])
    y = np.array([1.0 if action in v.labels else -1.0 for v in have])
    return solver.fit(solver.TrainingSet(X, y, C=cfg.C), seed=_seed(cfg.seed, 99), action_id=action)


TRAINERS = {
    "stil": lambda videos, action, cfg, supervision=None: train_stil(videos, action, cfg, supervision),
    "genmil": lambda videos, action, cfg, supervision=None: train_mil(videos, action, cfg, cfg.mu, supervision),
    "mil": lambda videos, action, cfg, supervision=None: train_mil(videos, action, cfg, 1, supervision),
}


def train_all(
    videos: Sequence[VideoDecomposition],
    actions: Sequence[str],
    cfg: TrainConfig = TrainConfig(),
    method: str = "stil",
    supervision: Mapping[str, Mapping[str, Sequence[Annotation]]] | None = None,
    jobs: int = 1,
) -> dict[str, LinearModel]:
    """One model per action; ``supervision`` is keyed by action, then video id."""
    if method not in TRAINERS:
        raise ValueError(f"unknown training method {method!r}")
    trainer = TRAINERS[method]

    def one(action):
        sup = supervision.get(action) if supervision else None
        return trainer(videos, action, cfg, sup)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            models = list(pool.map(one, actions))
    else:
        models = [one(a) for a in actions]
    return dict(zip(actions, models))
