import json
import subprocess
import sys

import pytest

from stil.cli import main


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> link -> train -> infer -> eval on a small dataset, run twice."""
    runs = []
    for name in ("a", "b"):
        d = tmp_path_factory.mktemp(name)
        steps = [
            ["gen", "--out", d / "data", "--num-videos", 12, "--num-actions", 2, "--seed", 1],
            ["link", "--manifest", d / "data/manifest.jsonl", "--out", d / "tubes.jsonl"],
            ["train", "--manifest", d / "data/manifest.jsonl", "--out", d / "models.jsonl", "--epochs", 2,
             "--video-models-out", d / "video_models.jsonl", "--jobs", 2],
            ["infer", "--manifest", d / "data/manifest.jsonl", "--models", d / "models.jsonl",
             "--video-models", d / "video_models.jsonl", "--rerank", "context,negative", "--out", d / "dets.jsonl"],
            ["eval", "--detections", d / "dets.jsonl", "--ground-truth", d / "data/groundtruth.jsonl",
             "--out", d / "report.csv"],
        ]
        for s in steps:
            assert main([str(a) for a in s]) == 0, s
        runs.append(d)
    return runs


def test_pipeline_outputs_identical(pipeline):
    a, b = pipeline
    for name in ("data/manifest.jsonl", "data/features.bin", "tubes.jsonl", "models.jsonl",
                 "video_models.jsonl", "dets.jsonl", "report.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_report_content(pipeline):
    lines = (pipeline[0] / "report.csv").read_text().splitlines()
    assert lines[0] == "action,tau,ap,auc"
    mean = [l.split(",") for l in lines if l.startswith("mean,")]
    assert [r[1] for r in mean] == ["0.10", "0.20", "0.30", "0.40", "0.50", "0.60"]
    assert all(0.0 <= float(r[2]) <= 1.0 for r in mean)


def test_cost_single_dataset(capsys):
    code, out, _ = _run(["cost", "--frames", "65"], capsys)
    assert code == 0
    rows = [l.split(",") for l in out.splitlines()[1:]]
    assert [float(r[1]) for r in rows] == [5.00, 14.75, 53.75, 102.50, 102.50, 980.00]


def test_cost_default_table(capsys):
    code, out, _ = _run(["cost"], capsys)
    lines = out.splitlines()
    assert lines[0] == "supervision_level,UCF Sports,J-HMDB,UCF-101-24"
    assert lines[4].endswith(",-") and lines[6].endswith(",-")


def _error(err):
    rec = json.loads(err.strip().splitlines()[-1])
    assert set(rec) == {"error", "message", "exit_code"}
    return rec


def test_usage_errors(capsys):
    code, _, err = _run(["train", "--manifest", "x"], capsys)
    assert code == 1 and _error(err)["error"] == "usage"
    code, _, err = _run(["link", "--manifest", "x", "--out", "y", "--jobs", "0"], capsys)
    assert code == 1
    code, _, err = _run(["frobnicate"], capsys)
    assert code == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    code, _, err = _run(["link", "--manifest", tmp_path / "none.jsonl", "--out", tmp_path / "t.jsonl"], capsys)
    assert code == 2 and _error(err)["exit_code"] == 2


def test_malformed_manifest(tmp_path, capsys):
    (tmp_path / "m.jsonl").write_text('{"video_id": "v", "num_frames": "many"}\n')
    code, _, err = _run(["link", "--manifest", tmp_path / "m.jsonl", "--out", tmp_path / "t.jsonl"], capsys)
    assert code == 2 and "v" in _error(err)["message"]


def test_numeric_failure(pipeline, tmp_path, capsys):
    manifest = pipeline[0] / "data/manifest.jsonl"
    code, _, err = _run(["train", "--manifest", manifest, "--out", tmp_path / "m.jsonl", "--C", "1e308",
                         "--epochs", 1], capsys)
    assert code == 3 and _error(err)["error"] == "numeric"


def test_infer_dimension_mismatch(pipeline, tmp_path, capsys):
    assert main(["gen", "--out", str(tmp_path / "d"), "--num-videos", "4", "--feature-dim", "16"]) == 0
    code, _, err = _run(["infer", "--manifest", tmp_path / "d/manifest.jsonl",
                         "--models", pipeline[0] / "models.jsonl", "--out", tmp_path / "x.jsonl"], capsys)
    assert code == 2 and "16" in _error(err)["message"]


def test_config_supplies_options(pipeline, tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"seed: 1\ngen:\n  out: {tmp_path / 'g'}\n  num_videos: 12\n  num_actions: 2\n")
    assert _run(["gen", "--config", cfg], capsys)[0] == 0
    assert (tmp_path / "g/features.bin").read_bytes() == (pipeline[0] / "data/features.bin").read_bytes()
    cfg.write_text("gen:\n  bogus: 1\n")
    code, _, err = _run(["gen", "--config", cfg, "--out", tmp_path / "h"], capsys)
    assert code == 1 and "bogus" in _error(err)["message"]


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"num_videos": 3}}))
    assert _run(["gen", "--config", cfg, "--out", tmp_path / "g", "--num-videos", 5], capsys)[0] == 0
    lines = (tmp_path / "g/manifest.jsonl").read_text().splitlines()
    assert sum('"video_id"' in l for l in lines) == 5


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stil", "cost", "--frames", "34"], capture_output=True, text=True)
    assert proc.returncode == 0 and "515.00" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "stil", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1 and json.loads(proc.stderr)["exit_code"] == 1
