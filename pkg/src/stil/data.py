"""Core domain types and file ingestion for box-proposal datasets.

A dataset is a line-delimited JSON manifest (one record per video) plus one
or more binary feature files.  Feature files start with the 8 magic bytes
``STILFT01`` followed by the feature dimensionality as a little-endian
uint32, then ``D`` little-endian float32 values per box.  A box record's
``feat_offset`` is the row index into that matrix.
"""
from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"STILFT01"
MODEL_FORMAT_VERSION = 1
_NORM_TOL = 1e-6


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


class NumericError(ArithmeticError):
    """Raised when numerical input is unusable (NaN, Inf, degenerate labels)."""


def spatial_iou(a, b) -> float:
    """Intersection over union of two ``(x1, y1, x2, y2)`` rectangles."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_one_to_many(rect, rects: np.ndarray) -> np.ndarray:
    """Vectorised `spatial_iou` of one rectangle against an ``(n, 4)`` array."""
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(rect[2], rects[:, 2]) - np.maximum(rect[0], rects[:, 0])
    ih = np.minimum(rect[3], rects[:, 3]) - np.maximum(rect[1], rects[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (rect[2] - rect[0]) * (rect[3] - rect[1])
    area_b = (rects[:, 2] - rects[:, 0]) * (rects[:, 3] - rects[:, 1])
    return inter / (area_a + area_b - inter)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Unit-normalise a feature vector as float32.

    Zero vectors stay zero.  Vectors already within float32 round-off of unit
    norm are returned unchanged, which keeps normalisation idempotent and makes
    save/load round trips exact.
    """
    x = np.asarray(x, dtype=np.float32)
    norm = float(np.linalg.norm(x.astype(np.float64)))
    if norm == 0.0 or abs(norm - 1.0) <= _NORM_TOL:
        return x.copy()
    return (x.astype(np.float64) / norm).astype(np.float32)


def _check_rect(rect) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in rect)
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise DataError(f"non-finite box coordinates {rect!r}")
    if not (x1 < x2 and y1 < y2):
        raise DataError(f"degenerate box {rect!r}")
    return (x1, y1, x2, y2)


@dataclass(frozen=True, eq=False)
class BoxProposal:
    """One detected box in one sampled frame.

    ``slot`` is the position within its frame (frames are sorted by
    descending prior) and ``index`` the position in the video's flat box list.
    """

    frame_idx: int
    rect: tuple[float, float, float, float]
    prior_score: float
    feature: np.ndarray
    slot: int = 0
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rect", _check_rect(self.rect))
        if self.frame_idx < 0:
            raise DataError(f"negative frame index {self.frame_idx}")


@dataclass(frozen=True, eq=False)
class Tube:
    """A temporally contiguous run of boxes, one per sampled frame.

    Linked tubes carry their `BoxProposal` objects; ground-truth tubes and
    tubes read back from dumps only carry frames and rectangles.
    """

    frames: np.ndarray
    rects: np.ndarray
    boxes: tuple[BoxProposal, ...] | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        rects = np.asarray(self.rects, dtype=np.float64).reshape(-1, 4)
        if len(frames) == 0:
            raise DataError("empty tube")
        if len(frames) != len(rects):
            raise DataError("tube frames and rects differ in length")
        if np.any(np.diff(frames) != 1):
            raise DataError(f"tube frames are not contiguous: {frames.tolist()}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "rects", rects)

    @classmethod
    def from_boxes(cls, boxes: Sequence[BoxProposal]) -> "Tube":
        boxes = tuple(boxes)
        return cls(
            frames=[b.frame_idx for b in boxes],
            rects=[b.rect for b in boxes],
            boxes=boxes,
        )

    @property
    def start_frame(self) -> int:
        return int(self.frames[0])

    @property
    def end_frame(self) -> int:
        return int(self.frames[-1])

    def __len__(self) -> int:
        return len(self.frames)

    def box_at(self, frame: int) -> BoxProposal:
        return self.boxes[frame - self.start_frame]

    def rect_at(self, frame: int):
        if frame < self.start_frame or frame > self.end_frame:
            return None
        return self.rects[frame - self.start_frame]


def validate_tube(tube: Tube, min_iou: float = 0.1) -> None:
    """Raise `DataError` unless consecutive boxes overlap by at least ``min_iou``."""
    for i in range(len(tube) - 1):
        ov = spatial_iou(tube.rects[i], tube.rects[i + 1])
        if ov < min_iou:
            raise DataError(
                f"tube frames {tube.frames[i]}->{tube.frames[i + 1]} overlap {ov:.3f} < {min_iou}"
            )


@dataclass(eq=False)
class VideoDecomposition:
    """A video's box proposals, its linked tubes and its class labels."""

    video_id: str
    num_frames: int
    boxes: list[BoxProposal]
    labels: frozenset[str] = frozenset()
    video_feature: np.ndarray | None = None
    tubes: list[Tube] = field(default_factory=list)

    def __post_init__(self):
        if self.num_frames < 1:
            raise DataError(f"{self.video_id}: num_frames must be >= 1")
        self.labels = frozenset(self.labels)
        for b in self.boxes:
            if b.frame_idx >= self.num_frames:
                raise DataError(
                    f"{self.video_id}: box frame {b.frame_idx} >= num_frames {self.num_frames}"
                )

    @cached_property
    def boxes_per_frame(self) -> dict[int, list[BoxProposal]]:
        out: dict[int, list[BoxProposal]] = {}
        for b in self.boxes:
            out.setdefault(b.frame_idx, []).append(b)
        return out

    @cached_property
    def features(self) -> np.ndarray:
        """All box features stacked as an ``(n_boxes, D)`` float32 matrix."""
        if not self.boxes:
            return np.zeros((0, 0), dtype=np.float32)
        return np.stack([b.feature for b in self.boxes])

    @cached_property
    def priors(self) -> np.ndarray:
        return np.array([b.prior_score for b in self.boxes], dtype=np.float64)

    @cached_property
    def rects(self) -> np.ndarray:
        return np.array([b.rect for b in self.boxes], dtype=np.float64).reshape(-1, 4)

    @property
    def feature_dim(self) -> int:
        return len(self.boxes[0].feature) if self.boxes else 0

    def frame_boxes(self, frame: int) -> list[BoxProposal]:
        return self.boxes_per_frame.get(frame, [])


def build_video(
    video_id: str,
    num_frames: int,
    raw_boxes: Iterable[tuple[int, Sequence[float], float, np.ndarray]],
    labels: Iterable[str] = (),
    video_feature=None,
) -> VideoDecomposition:
    """Assemble a `VideoDecomposition` from ``(frame, rect, prior, feature)`` tuples.

    Boxes are sorted by frame, then by descending prior (stable), features are
    l2-normalised, and ``slot``/``index`` are assigned.
    """
    raw = list(raw_boxes)
    order = sorted(range(len(raw)), key=lambda i: (int(raw[i][0]), -float(raw[i][2]), i))
    boxes = []
    slot, prev_frame = 0, None
    for idx, i in enumerate(order):
        frame, rect, prior, feat = raw[i]
        frame = int(frame)
        slot = slot + 1 if frame == prev_frame else 0
        prev_frame = frame
        prior = float(prior)
        if not math.isfinite(prior):
            raise DataError(f"{video_id}: non-finite prior score")
        feat = np.asarray(feat, dtype=np.float32)
        if not np.all(np.isfinite(feat)):
            raise DataError(f"{video_id}: non-finite feature values")
        boxes.append(BoxProposal(frame, tuple(rect), prior, l2_normalize(feat), slot, idx))
    if video_feature is not None:
        video_feature = l2_normalize(np.asarray(video_feature, dtype=np.float64))
    return VideoDecomposition(video_id, int(num_frames), boxes, frozenset(labels), video_feature)


def with_priors(video: VideoDecomposition, priors: np.ndarray) -> VideoDecomposition:
    """Copy of ``video`` with replaced prior scores (``priors`` follows ``video.boxes``).

    Boxes are re-sorted by the new priors, so slots and indices may change.
    Tubes are dropped since they were linked from the old priors.
    """
    raw = [(b.frame_idx, b.rect, float(p), b.feature) for b, p in zip(video.boxes, priors)]
    return build_video(video.video_id, video.num_frames, raw, video.labels, video.video_feature)


@dataclass(frozen=True)
class LatentAssignment:
    """The subtube selected in one video: tube index and inclusive frame range."""

    tube_idx: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def check_assignment(video: VideoDecomposition, a: LatentAssignment) -> None:
    """Raise `DataError` unless ``a`` selects one contiguous run of one tube's boxes."""
    if not 0 <= a.tube_idx < len(video.tubes):
        raise DataError(f"{video.video_id}: tube index {a.tube_idx} out of range")
    tube = video.tubes[a.tube_idx]
    if not (tube.start_frame <= a.start <= a.end <= tube.end_frame):
        raise DataError(
            f"{video.video_id}: frames {a.start}..{a.end} outside tube span "
            f"{tube.start_frame}..{tube.end_frame}"
        )
    if not 1 <= a.length <= video.num_frames:
        raise DataError(f"{video.video_id}: subtube length {a.length} out of range")


# --------------------------------------------------------------------------
# feature files


def write_feature_file(path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ValueError("features must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", features.shape[1]))
        fh.write(features.tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise DataError(f"{path}: bad magic bytes {magic!r}")
        header = fh.read(4)
        if len(header) != 4:
            raise DataError(f"{path}: truncated header")
        (dim,) = struct.unpack("<I", header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if dim == 0 or data.size % dim:
        raise DataError(f"{path}: payload of {data.size} floats is not a multiple of D={dim}")
    return data.reshape(-1, dim).astype(np.float32)


# --------------------------------------------------------------------------
# manifest


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def load_dataset(path, actions: Iterable[str] | None = None) -> list[VideoDecomposition]:
    """Read a manifest and its feature files.

    A manifest line without ``video_id`` is treated as a header; an ``actions``
    list found there (or passed explicitly) restricts the allowed labels.
    Videos are returned in manifest order.
    """
    path = Path(path)
    base = path.parent
    known = set(actions) if actions is not None else None
    feature_cache: dict[str, np.ndarray] = {}
    videos: list[VideoDecomposition] = []
    dim = None
    seen = set()
    for lineno, rec in _iter_jsonl(path):
        if not isinstance(rec, dict):
            raise DataError(f"{path}:{lineno}: record is not an object")
        if "video_id" not in rec:
            if "actions" in rec and known is None:
                known = set(rec["actions"])
            continue
        vid = str(rec["video_id"])
        where = f"{path}:{lineno} (video {vid})"
        try:
            if vid in seen:
                raise DataError("duplicate video_id")
            seen.add(vid)
            labels = [str(a) for a in rec.get("labels", [])]
            if known is not None:
                unknown = sorted(set(labels) - known)
                if unknown:
                    raise DataError(f"unknown action identifier(s) {unknown}")
            boxes_rec = rec.get("boxes", [])
            feats = None
            if boxes_rec:
                fname = rec["feature_file"]
                if fname not in feature_cache:
                    feature_cache[fname] = read_feature_file(base / fname)
                feats = feature_cache[fname]
                if dim is None:
                    dim = feats.shape[1]
                elif feats.shape[1] != dim:
                    raise DataError(f"feature dimensionality {feats.shape[1]} != {dim}")
            raw = []
            for b in boxes_rec:
                off = int(b["feat_offset"])
                if not 0 <= off < len(feats):
                    raise DataError(f"feat_offset {off} out of range")
                rect = (b["x1"], b["y1"], b["x2"], b["y2"])
                raw.append((int(b["frame"]), rect, b["prior"], feats[off]))
            vfeat = rec.get("video_feature")
            video = build_video(vid, rec["num_frames"], raw, labels, vfeat)
        except DataError as exc:
            raise DataError(f"{where}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: malformed record ({exc!r})") from None
        videos.append(video)
    if videos:
        lo, hi = prior_range(videos)
        log.info("loaded %d videos from %s, prior scores in [%.4g, %.4g]", len(videos), path, lo, hi)
    return videos


def prior_range(videos: Sequence[VideoDecomposition]) -> tuple[float, float]:
    priors = [b.prior_score for v in videos for b in v.boxes]
    if not priors:
        return (math.nan, math.nan)
    return (min(priors), max(priors))


def save_dataset(
    videos: Sequence[VideoDecomposition],
    path,
    feature_file: str = "features.bin",
    actions: Sequence[str] | None = None,
) -> None:
    """Write ``videos`` as a manifest plus a single shared feature file."""
    path = Path(path)
    rows = []
    lines = []
    if actions is not None:
        lines.append(json.dumps({"actions": list(actions)}))
    for v in videos:
        boxes = []
        for b in v.boxes:
            boxes.append(
                {
                    "frame": b.frame_idx,
                    "x1": b.rect[0],
                    "y1": b.rect[1],
                    "x2": b.rect[2],
                    "y2": b.rect[3],
                    "prior": b.prior_score,
                    "feat_offset": len(rows),
                }
            )
            rows.append(b.feature)
        rec = {
            "video_id": v.video_id,
            "num_frames": v.num_frames,
            "labels": sorted(v.labels),
            "feature_file": feature_file,
            "boxes": boxes,
        }
        if v.video_feature is not None:
            rec["video_feature"] = [float(x) for x in v.video_feature]
        lines.append(json.dumps(rec))
    dim = videos[0].feature_dim if videos and rows else 1
    feats = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    write_feature_file(path.parent / feature_file, feats)
    _write_lines(path, lines)


def _write_lines(path, lines: Iterable[str]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# annotations and ground truth


@dataclass(frozen=True)
class Annotation:
    """A per-frame annotation: ``kind`` is ``"box"``, ``"point"`` or ``"none"``."""

    kind: str
    frame_idx: int
    geometry: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("box", "point", "none"):
            raise DataError(f"unknown annotation kind {self.kind!r}")
        geom = tuple(float(g) for g in self.geometry)
        expected = {"box": 4, "point": 2, "none": 0}[self.kind]
        if len(geom) != expected:
            raise DataError(f"{self.kind} annotation needs {expected} coordinates, got {len(geom)}")
        if self.kind == "box":
            _check_rect(geom)
        object.__setattr__(self, "geometry", geom)


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    action: str
    entries: tuple[Annotation, ...]

    def as_tube(self) -> Tube:
        """Interpret the box entries as a ground-truth tube (one box per frame)."""
        boxes = sorted((a for a in self.entries if a.kind == "box"), key=lambda a: a.frame_idx)
        return Tube(frames=[a.frame_idx for a in boxes], rects=[a.geometry for a in boxes])


def load_annotations(path) -> list[AnnotationRecord]:
    out = []
    for lineno, rec in _iter_jsonl(path):
        try:
            entries = tuple(
                Annotation(e["kind"], int(e["frame"]), tuple(e.get("geometry", ())))
                for e in rec["entries"]
            )
            out.append(AnnotationRecord(str(rec["video_id"]), str(rec["action"]), entries))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed annotation record ({exc!r})") from None
    return out


def save_annotations(records: Iterable[AnnotationRecord], path) -> None:
    lines = []
    for r in records:
        entries = [{"kind": a.kind, "frame": a.frame_idx, "geometry": list(a.geometry)} for a in r.entries]
        lines.append(json.dumps({"video_id": r.video_id, "action": r.action, "entries": entries}))
    _write_lines(path, lines)


def load_ground_truth(path) -> dict[tuple[str, str], list[Tube]]:
    """Ground-truth tubes keyed by ``(video_id, action)``."""
    gts: dict[tuple[str, str], list[Tube]] = {}
    for rec in load_annotations(path):
        gts.setdefault((rec.video_id, rec.action), []).append(rec.as_tube())
    return gts


# --------------------------------------------------------------------------
# linear models


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Weights and bias of a linear box (or video) classifier."""

    action_id: str
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def feature_dim(self) -> int:
        return len(self.weights)


def save_models(models: Sequence[LinearModel], path) -> None:
    dims = {m.feature_dim for m in models}
    if len(dims) > 1:
        raise DataError(f"models disagree on feature dimension: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    lines = [json.dumps({"feature_dim": dim, "format_version": MODEL_FORMAT_VERSION})]
    for m in models:
        lines.append(
            json.dumps({"action_id": m.action_id, "bias": m.bias, "weights": [float(w) for w in m.weights]})
        )
    _write_lines(path, lines)


def load_models(path) -> dict[str, LinearModel]:
    models: dict[str, LinearModel] = {}
    dim = None
    for lineno, rec in _iter_jsonl(path):
        try:
            if "format_version" in rec:
                if int(rec["format_version"]) != MODEL_FORMAT_VERSION:
                    raise DataError(f"unsupported model format_version {rec['format_version']}")
                dim = int(rec["feature_dim"])
                continue
            m = LinearModel(str(rec["action_id"]), rec["weights"], rec["bias"])
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: malformed model record ({exc!r})") from None
        if dim is None:
            raise DataError(f"{path}:{lineno}: model record before header")
        if m.feature_dim != dim:
            raise DataError(f"{path}:{lineno}: weights have {m.feature_dim} dims, header says {dim}")
        models[m.action_id] = m
    return models
