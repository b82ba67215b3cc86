"""Deterministic synthetic proposal datasets with known ground truth.

Every video shows one actor whose box drifts through the frame; the other
proposals per frame follow their own drifting tracks.  Actor boxes inside
the action's frame range carry the class signature plus Gaussian noise, and
distractor boxes carry random unit features.

Optionally some proposal tracks are loose "context" boxes: enlarged copies of
the actor box whose features mix the class signature with a per-class scene
direction.  They are the most class-discriminative boxes in the video yet
overlap the ground truth by only about ``1 / context_scale**2``, which is the
trap label-only learners fall into without an actor prior.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .data import (
    Annotation,
    AnnotationRecord,
    VideoDecomposition,
    build_video,
    l2_normalize,
    save_annotations,
    save_dataset,
    spatial_iou,
)

FRAME_W, FRAME_H = 320.0, 240.0
MIN_STEP_IOU = 0.4


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 40
    num_actions: int = 4
    frames_range: tuple[int, int] = (20, 30)
    boxes_per_frame: int = 6
    feature_dim: int = 32
    actor_prior: float = 0.9
    distractor_prior_max: float = 0.6
    noise_sigma: float = 0.05
    trimmed: bool = True
    seed: int = 0
    prior_jitter: float = 0.05
    scene_strength: float = 0.0
    video_noise: float = 0.5
    max_step: float = 0.1
    signature_seed: int = 0
    context_tracks: int = 0
    context_scale: float = 1.8
    context_prior: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "frames_range", tuple(int(f) for f in self.frames_range))
        lo, hi = self.frames_range
        problems = []
        if self.num_videos < 1 or self.num_actions < 1:
            problems.append("need at least one video and one action")
        if not 1 <= lo <= hi:
            problems.append(f"bad frames_range {self.frames_range}")
        if self.boxes_per_frame < 1:
            problems.append("boxes_per_frame must be >= 1")
        if not 0 <= self.context_tracks < self.boxes_per_frame:
            problems.append("context_tracks must be in [0, boxes_per_frame)")
        if self.context_scale <= 1:
            problems.append("context_scale must be > 1")
        needed = self.num_actions * (2 if self.uses_scene else 1)
        if self.feature_dim < needed:
            problems.append(f"feature_dim {self.feature_dim} < {needed} signature directions")
        if self.noise_sigma < 0 or self.prior_jitter < 0 or self.video_noise < 0:
            problems.append("noise levels must be >= 0")
        if self.distractor_prior_max < 0:
            problems.append("distractor_prior_max must be >= 0")
        if not 0 < self.max_step <= 0.2:
            # larger steps could drop consecutive actor IoU below MIN_STEP_IOU
            problems.append("max_step must be in (0, 0.2]")
        if problems:
            raise ValueError("inconsistent synthetic spec: " + "; ".join(problems))

    @property
    def uses_scene(self) -> bool:
        return self.scene_strength > 0

    @property
    def actions(self) -> list[str]:
        return [f"action{c}" for c in range(self.num_actions)]

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "SyntheticSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(cfg) - names
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**cfg)


def load_benchmark(name: str) -> dict:
    """A committed benchmark config (``easy-small`` or ``noisy-small``) as a dict."""
    text = resources.files("stil.benchmarks").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def benchmark_spec(name: str, **overrides) -> SyntheticSpec:
    cfg = dict(load_benchmark(name)["data"])
    cfg.update(overrides)
    return SyntheticSpec.from_mapping(cfg)


def signatures(spec: SyntheticSpec) -> np.ndarray:
    """Orthonormal class (and scene) directions as rows, float32.

    Drawn from ``signature_seed`` alone so that train and test sets generated
    with different seeds share their classes.
    """
    rng = np.random.default_rng(spec.signature_seed)
    k = spec.num_actions * (2 if spec.uses_scene else 1)
    q, _ = np.linalg.qr(rng.normal(size=(spec.feature_dim, k)))
    return q.T.astype(np.float32)


def _walk(rng, num_frames, spec):
    """A drifting box track; each step moves by at most ``max_step`` of the box size."""
    w = rng.uniform(50, 90)
    h = rng.uniform(80, 140)
    x = rng.uniform(0, FRAME_W - w)
    y = rng.uniform(0, FRAME_H - h)
    vx, vy = rng.uniform(-1, 1, size=2) * spec.max_step
    track = []
    for _ in range(num_frames):
        track.append((x, y, x + w, y + h))
        vx = np.clip(vx + rng.normal(scale=0.3 * spec.max_step), -spec.max_step, spec.max_step)
        vy = np.clip(vy + rng.normal(scale=0.3 * spec.max_step), -spec.max_step, spec.max_step)
        nx, ny = x + vx * w, y + vy * h
        if not 0 <= nx <= FRAME_W - w:
            vx = -vx
            nx = min(max(nx, 0.0), FRAME_W - w)
        if not 0 <= ny <= FRAME_H - h:
            vy = -vy
            ny = min(max(ny, 0.0), FRAME_H - h)
        x, y = nx, ny
    return [tuple(round(float(v), 3) for v in r) for r in track]


def _context_track(actor, scale):
    out = []
    for x1, y1, x2, y2 in actor:
        cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
        hw, hh = scale * (x2 - x1) / 2, scale * (y2 - y1) / 2
        out.append(
            tuple(
                round(float(v), 3)
                for v in (max(0.0, cx - hw), max(0.0, cy - hh), min(FRAME_W, cx + hw), min(FRAME_H, cy + hh))
            )
        )
    return out


def _video(idx, rng, spec, sig):
    action = idx % spec.num_actions
    label = spec.actions[action]
    lo, hi = spec.frames_range
    num_frames = int(rng.integers(lo, hi + 1))
    if spec.trimmed:
        a_start, a_end = 0, num_frames - 1
    else:
        length = int(rng.integers(max(1, num_frames // 3), max(2, 2 * num_frames // 3) + 1))
        length = min(length, num_frames)
        a_start = int(rng.integers(0, num_frames - length + 1))
        a_end = a_start + length - 1
    actor = _walk(rng, num_frames, spec)
    distractors = [_walk(rng, num_frames, spec) for _ in range(spec.boxes_per_frame - 1 - spec.context_tracks)]
    contexts = [_context_track(actor, spec.context_scale * rng.uniform(0.9, 1.1)) for _ in range(spec.context_tracks)]
    signature = sig[action].astype(np.float64)
    scene = sig[spec.num_actions + action].astype(np.float64) if spec.uses_scene else 0.0

    def noisy(direction):
        return l2_normalize(direction + spec.noise_sigma * rng.normal(size=spec.feature_dim))

    def noise_feature():
        return l2_normalize(rng.normal(size=spec.feature_dim))

    raw = []
    for f in range(num_frames):
        active = a_start <= f <= a_end
        feat = noisy(signature) if active else noise_feature()
        prior = spec.actor_prior + rng.uniform(-spec.prior_jitter, spec.prior_jitter)
        raw.append((f, actor[f], round(float(prior), 6), feat))
        for track in contexts:
            feat = noisy(signature + spec.scene_strength * scene) if active else noise_feature()
            prior = spec.context_prior + rng.uniform(-spec.prior_jitter, spec.prior_jitter)
            raw.append((f, track[f], round(float(prior), 6), feat))
        for track in distractors:
            prior = rng.uniform(0, spec.distractor_prior_max)
            raw.append((f, track[f], round(float(prior), 6), noise_feature()))
    vfeat = 0.5 * signature + scene + spec.video_noise * rng.normal(size=spec.feature_dim)
    video = build_video(f"vid{idx:04d}", num_frames, raw, [label], l2_normalize(vfeat))
    entries = tuple(Annotation("box", f, actor[f]) for f in range(a_start, a_end + 1))
    return video, AnnotationRecord(video.video_id, label, entries)


def generate_videos(spec: SyntheticSpec) -> tuple[list[VideoDecomposition], list[AnnotationRecord]]:
    """Videos and ground-truth records for ``spec``.

    Video ``i`` draws from its own child of the seed sequence, so videos can
    be produced independently and in any order.
    """
    sig = signatures(spec)
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_videos)
    videos, gts = [], []
    for i, child in enumerate(children):
        v, g = _video(i, np.random.default_rng(child), spec, sig)
        videos.append(v)
        gts.append(g)
    return videos, gts


def generate(spec: SyntheticSpec, out_dir) -> tuple[Path, Path]:
    """Write ``manifest.jsonl``, ``features.bin`` and ``groundtruth.jsonl`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    videos, gts = generate_videos(spec)
    manifest = out / "manifest.jsonl"
    gt_path = out / "groundtruth.jsonl"
    save_dataset(videos, manifest, "features.bin", actions=spec.actions)
    save_annotations(gts, gt_path)
    return manifest, gt_path


def min_consecutive_iou(record: AnnotationRecord) -> float:
    boxes = sorted(record.entries, key=lambda a: a.frame_idx)
    ious = [spatial_iou(a.geometry, b.geometry) for a, b in zip(boxes, boxes[1:])]
    return min(ious) if ious else 1.0
