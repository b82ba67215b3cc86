"""End-to-end synthetic benchmark: method x supervision level -> mAP and cost.

A benchmark config is a mapping with a ``data`` section (`SyntheticSpec`
fields), a ``train`` section (`TrainConfig` fields), the test-set seed offset,
and the methods, supervision levels and rerankers to run.  The committed
configs live in ``stil/benchmarks``.
"""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .data import AnnotationRecord, VideoDecomposition
from .evaluation import mean_ap
from .inference import detect_and_rerank
from .supervision import Boxes, Labels, Mixture, Points, annotation_cost, annotations_from_tube, parse_strategy
from .synthetic import SyntheticSpec, generate_videos, load_benchmark
from .trainer import TrainConfig, train_all, train_video_classifier

log = logging.getLogger(__name__)

RERANKS = {"none": (), "context": ("context",), "negative": ("negative",), "context+negative": ("context", "negative")}


def load_config(name_or_path) -> dict:
    """A committed benchmark by name, or a YAML/JSON config file."""
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml", ".json") or p.exists():
        text = p.read_text()
        return json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    return load_benchmark(str(name_or_path))


def _specs(cfg: Mapping, seed: int | None):
    data = dict(cfg["data"])
    train = dict(cfg.get("train", {}))
    if seed is not None:
        data["seed"] = seed
        train["seed"] = seed
    spec = SyntheticSpec.from_mapping(data)
    test = SyntheticSpec.from_mapping({**data, "seed": spec.seed + int(cfg.get("test_seed_offset", 1000))})
    return spec, test, TrainConfig.from_mapping(train)


def _kind_of(strategy):
    if isinstance(strategy, Points):
        return "point"
    if isinstance(strategy, Boxes):
        return "box"
    return None


def simulate_supervision(
    videos: Sequence[VideoDecomposition], records: Sequence[AnnotationRecord], strategy
) -> dict | None:
    """Annotations an annotator following ``strategy`` would produce for the
    training ground truth, keyed by action then video id.

    A mixture annotates the first ``weight`` share of the videos (in id order)
    with its first strategy and the rest with the second.
    """
    if isinstance(strategy, Labels):
        return None
    frames = {v.video_id: v.num_frames for v in videos}
    if isinstance(strategy, Mixture):
        ids = sorted(frames)
        cut = int(round(strategy.weight * len(ids)))
        plan = {vid: strategy.first if i < cut else strategy.second for i, vid in enumerate(ids)}
    else:
        plan = dict.fromkeys(frames, strategy)
    out: dict = {}
    for r in records:
        s = plan.get(r.video_id)
        kind = _kind_of(s)
        if kind is None:
            continue
        anns = annotations_from_tube(r.as_tube(), frames[r.video_id], kind, s.stride)
        out.setdefault(r.action, {})[r.video_id] = anns
    return out


def mean_cost(videos: Sequence[VideoDecomposition], strategy) -> float:
    return float(np.mean([annotation_cost(v.num_frames, strategy) for v in videos]))


def run_bench(
    cfg: Mapping,
    seed: int | None = None,
    jobs: int = 1,
    methods: Sequence[str] | None = None,
    supervision: Sequence[str] | None = None,
    reranks: Sequence[str] | None = None,
) -> list[dict]:
    """Rows of ``{method, supervision, rerank, tau, map, cost, train_seconds}``."""
    spec, test_spec, tcfg = _specs(cfg, seed)
    tau = float(cfg.get("tau", 0.5))
    methods = list(methods or cfg.get("methods", ["stil", "genmil", "mil"]))
    levels = list(supervision or cfg.get("supervision", ["labels"]))
    reranks = list(reranks or cfg.get("reranks", ["none"]))
    for r in reranks:
        if r not in RERANKS:
            raise ValueError(f"unknown rerank setting {r!r}")

    train, train_gt = generate_videos(spec)
    test, test_gt = generate_videos(test_spec)
    gt: dict = {}
    for r in test_gt:
        gt.setdefault((r.video_id, r.action), []).append(r.as_tube())
    actions = spec.actions
    need_ctx = any("context" in RERANKS[r] for r in reranks)
    video_models = {a: train_video_classifier(train, a, tcfg) for a in actions} if need_ctx else None

    rows = []
    for level in levels:
        strategy = parse_strategy(level)
        sup = simulate_supervision(train, train_gt, strategy)
        cost = mean_cost(train, strategy)
        for method in methods:
            t0 = time.perf_counter()
            models = train_all(train, actions, tcfg, method, sup, jobs=jobs)
            elapsed = time.perf_counter() - t0
            for r in reranks:
                dets = [d for v in test for d in detect_and_rerank(v, models, video_models, RERANKS[r], tcfg.max_tubes)]
                m = mean_ap(dets, gt, actions, tau)
                log.info("%s / %s / %s: mAP@%.2f = %.4f", method, strategy.name, r, tau, m)
                rows.append(
                    {
                        "method": method,
                        "supervision": strategy.name,
                        "rerank": r,
                        "tau": tau,
                        "map": m,
                        "cost": cost,
                        "train_seconds": elapsed,
                    }
                )
    return rows


def format_bench(rows: Sequence[dict], sep: str = ",", timings: bool = False) -> str:
    """Delimited table; timings are off by default so the output is reproducible."""
    cols = ["method", "supervision", "rerank", "tau", "map", "cost"] + (["train_seconds"] if timings else [])
    lines = [sep.join(cols)]
    for r in rows:
        cells = [r["method"], r["supervision"], r["rerank"], f"{r['tau']:.2f}", f"{r['map']:.6f}", f"{r['cost']:.2f}"]
        if timings:
            cells.append(f"{r['train_seconds']:.2f}")
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"
