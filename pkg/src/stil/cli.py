"""Command-line entry points: gen | link | train | infer | eval | cost | bench.

Every option can also come from a YAML/JSON file given with ``--config``;
top-level keys apply to any subcommand, a section named after the subcommand
overrides them, and explicit flags override both.  Errors are reported as one
JSON object on stderr, with exit code 1 for usage errors, 2 for data errors
and 3 for numeric failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from . import bench as bench_mod
from .data import (
    DataError,
    NumericError,
    load_annotations,
    load_dataset,
    load_ground_truth,
    load_models,
    save_models,
)
from .evaluation import DEFAULT_TAUS, evaluate, format_report
from .inference import detect_and_rerank, load_detections, save_detections
from .linking import DEFAULT_MAX_TUBES, STOP_TRAINING, link_dataset, save_tubes
from .supervision import format_cost_table
from .synthetic import SyntheticSpec, generate, load_benchmark
from .trainer import TRAINERS, TrainConfig, train_all, train_video_classifier

log = logging.getLogger("stil")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# average sampled frames per video of the datasets in the published cost table;
# UCF-101-24's count is implied by its stride-10 entries, and it has no stride-1 rows
DEFAULT_COST_FRAMES = {"UCF Sports": 65.0, "J-HMDB": 34.0, "UCF-101-24": 150.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _frames_arg(text):
    name, sep, value = text.rpartition("=")
    try:
        frames = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad frame count {text!r}") from None
    return (name if sep else f"F={value}"), frames


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file with option values")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--log-level", default="WARNING")

    p = _Parser(prog="stil", description="Spatio-temporal instance learning for action localization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--benchmark", help="start from a committed benchmark's data section")
    for f in SyntheticSpec.__dataclass_fields__.values():
        if f.name in ("seed", "frames_range", "trimmed"):
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=None)
    g.add_argument("--frames-range", type=int, nargs=2, default=None)
    g.add_argument("--untrimmed", action="store_true", default=None)

    k = sub.add_parser("link", parents=[common], help="link proposals into tubes with prior scores")
    k.add_argument("--manifest", required=True)
    k.add_argument("--out", required=True, help="tube dump (JSONL)")
    k.add_argument("--max-tubes", type=int, default=DEFAULT_MAX_TUBES)

    t = sub.add_parser("train", parents=[common], help="train one detector per action")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="model file (JSONL)")
    t.add_argument("--method", choices=sorted(TRAINERS), default="stil")
    t.add_argument("--C", dest="C", type=float, default=10.0)
    t.add_argument("--epochs", type=int, default=5)
    t.add_argument("--folds", type=int, default=3)
    t.add_argument("--mu", type=int, default=10, help="boxes per video for genmil")
    t.add_argument("--length-reg", type=float, default=1.0)
    t.add_argument("--background-negatives", type=int, default=10)
    t.add_argument("--max-tubes", type=int, default=DEFAULT_MAX_TUBES)
    t.add_argument("--supervision", help="annotation file with points/boxes for training videos")
    t.add_argument("--video-models-out", help="also train whole-video classifiers for context reranking")

    i = sub.add_parser("infer", parents=[common], help="detect action tubes")
    i.add_argument("--manifest", required=True)
    i.add_argument("--models", required=True)
    i.add_argument("--video-models")
    i.add_argument("--rerank", type=_csv, default=[], help="comma list of context,negative")
    i.add_argument("--max-tubes", type=int, default=DEFAULT_MAX_TUBES)
    i.add_argument("--out", required=True, help="detection dump (JSONL)")

    e = sub.add_parser("eval", parents=[common], help="AP and AUC of detections")
    e.add_argument("--detections", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--actions", type=_csv, help="defaults to the actions found in the ground truth")
    e.add_argument("--taus", type=lambda s: [float(x) for x in _csv(s)], default=list(DEFAULT_TAUS))
    e.add_argument("--interpolated", action="store_true", default=False)
    e.add_argument("--out", help="report file (default stdout)")

    c = sub.add_parser("cost", parents=[common], help="annotation cost table")
    c.add_argument(
        "--frames",
        type=_frames_arg,
        action="append",
        help="average frames per video, optionally NAME=FRAMES; repeatable",
    )
    c.add_argument("--no-stride1", type=_csv, default=None, help="datasets without stride-1 rows")
    c.add_argument("--out")

    b = sub.add_parser("bench", parents=[common], help="end-to-end synthetic benchmark")
    b.add_argument("--benchmark", default="easy-small", help="committed benchmark name or config path")
    b.add_argument("--methods", type=_csv)
    b.add_argument("--supervision", type=_csv, help="e.g. labels,points:10,boxes:10")
    b.add_argument("--rerank", type=_csv, help="e.g. none,context+negative")
    b.add_argument("--timings", action="store_true", default=False)
    b.add_argument("--out")
    return p


def _config_path(argv):
    for n, a in enumerate(argv):
        if a == "--config" and n + 1 < len(argv):
            return argv[n + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config``.

    Options given in the config no longer need to be repeated as flags.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    try:
        text = Path(path).read_text()
        cfg = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise DataError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"config {path} must be a mapping")
    values = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    values.update(cfg.get(command) or {})
    values = {k.replace("-", "_"): v for k, v in values.items()}
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    unknown = set(values) - set(actions) - {"config"}
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    for dest in values:
        if dest in actions:
            actions[dest].required = False
    sub.set_defaults(**{k: v for k, v in values.items() if k != "config"})
    return parser.parse_args(argv)


def _gen(args):
    cfg = dict(load_benchmark(args.benchmark)["data"]) if args.benchmark else {}
    for name in SyntheticSpec.__dataclass_fields__:
        v = getattr(args, name, None)
        if v is not None:
            cfg[name] = v
    if args.untrimmed:
        cfg["trimmed"] = False
    cfg["seed"] = args.seed
    spec = SyntheticSpec.from_mapping(cfg)
    manifest, gt = generate(spec, args.out)
    log.info("wrote %s and %s", manifest, gt)


def _link(args):
    videos = load_dataset(args.manifest)
    link_dataset(videos, "prior", STOP_TRAINING, args.max_tubes)
    save_tubes(videos, args.out)


def _supervision_map(path):
    out: dict = {}
    for rec in load_annotations(path):
        out.setdefault(rec.action, {}).setdefault(rec.video_id, []).extend(rec.entries)
    return out


def _actions(videos):
    return sorted({a for v in videos for a in v.labels})


def _train(args):
    videos = load_dataset(args.manifest)
    cfg = TrainConfig(
        C=args.C,
        epochs=args.epochs,
        folds=args.folds,
        length_reg=args.length_reg,
        mu=args.mu,
        background_negatives_per_video=args.background_negatives,
        max_tubes=args.max_tubes,
        seed=args.seed,
    )
    sup = _supervision_map(args.supervision) if args.supervision else None
    actions = _actions(videos)
    models = train_all(videos, actions, cfg, args.method, sup, jobs=args.jobs)
    save_models([models[a] for a in actions], args.out)
    if args.video_models_out:
        save_models([train_video_classifier(videos, a, cfg) for a in actions], args.video_models_out)


def _infer(args):
    videos = load_dataset(args.manifest)
    models = load_models(args.models)
    for v in videos:
        for m in models.values():
            if v.boxes and m.feature_dim != v.feature_dim:
                raise DataError(
                    f"model {m.action_id} expects {m.feature_dim}-d features, video {v.video_id} has {v.feature_dim}"
                )
    video_models = load_models(args.video_models) if args.video_models else None

    def one(v):
        return detect_and_rerank(v, models, video_models, args.rerank, args.max_tubes)

    with ThreadPoolExecutor(max(1, args.jobs)) as pool:
        per_video = list(pool.map(one, videos))
    save_detections([d for dets in per_video for d in dets], args.out)


def _write_or_print(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _eval(args):
    dets = load_detections(args.detections)
    gt = load_ground_truth(args.ground_truth)
    actions = args.actions or sorted({a for _, a in gt})
    rows = evaluate(dets, gt, actions, args.taus, args.interpolated)
    _write_or_print(format_report(rows), args.out)


def _cost(args):
    if args.frames:
        frames = dict(args.frames)
        skip = args.no_stride1 or []
    else:
        frames = DEFAULT_COST_FRAMES
        skip = ["UCF-101-24"] if args.no_stride1 is None else args.no_stride1
    _write_or_print(format_cost_table(frames, skip), args.out)


def _bench(args):
    try:
        cfg = bench_mod.load_config(args.benchmark)
    except FileNotFoundError:
        raise DataError(f"no benchmark or config named {args.benchmark!r}") from None
    rows = bench_mod.run_bench(cfg, args.seed, args.jobs, args.methods, args.supervision, args.rerank)
    _write_or_print(bench_mod.format_bench(rows, timings=args.timings), args.out)


COMMANDS = {
    "gen": _gen,
    "link": _link,
    "train": _train,
    "infer": _infer,
    "eval": _eval,
    "cost": _cost,
    "bench": _bench,
}


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except DataError as exc:
        return _fail("data", str(exc), EXIT_DATA)
    except NumericError as exc:
        return _fail("numeric", str(exc), EXIT_NUMERIC)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail("data", f"{exc.filename}: {exc.strerror}", EXIT_DATA)
    except ValueError as exc:
        # bad option values that only the library can judge (e.g. epochs < 1)
        return _fail("usage", str(exc), EXIT_USAGE)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
