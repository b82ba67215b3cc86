import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import area_iou, random_video
from stil.data import (
    Annotation,
    AnnotationRecord,
    DataError,
    LinearModel,
    Tube,
    build_video,
    l2_normalize,
    load_annotations,
    load_dataset,
    load_ground_truth,
    load_models,
    read_feature_file,
    save_annotations,
    save_dataset,
    save_models,
    spatial_iou,
    validate_tube,
    write_feature_file,
)

int_rect = st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 6), st.integers(1, 6)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3])
)


def test_iou_worked_example():
    assert spatial_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(2 / 6)
    assert area_iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)


def test_iou_identity_and_disjoint():
    assert spatial_iou((1, 1, 4, 5), (1, 1, 4, 5)) == 1.0
    assert spatial_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    # touching edges share no area
    assert spatial_iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0


@settings(max_examples=200, deadline=None)
@given(int_rect, int_rect)
def test_iou_matches_area_count(a, b):
    assert spatial_iou(a, b) == pytest.approx(area_iou(a, b), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(int_rect, int_rect)
def test_iou_symmetric_and_bounded(a, b):
    v = spatial_iou(a, b)
    assert v == spatial_iou(b, a)
    assert 0.0 <= v <= 1.0
    assert spatial_iou(a, a) == 1.0


def test_normalize_example():
    np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], rtol=1e-7)


def test_zero_feature_stays_zero():
    np.testing.assert_array_equal(l2_normalize(np.zeros(3)), np.zeros(3, dtype=np.float32))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=16))
def test_normalize_idempotent(x):
    once = l2_normalize(np.array(x))
    np.testing.assert_array_equal(l2_normalize(once), once)


def test_degenerate_box_rejected():
    with pytest.raises(DataError, match="degenerate box"):
        build_video("v", 1, [(0, (2, 0, 2, 5), 0.5, np.ones(2))])


def test_tube_must_be_contiguous():
    with pytest.raises(DataError, match="contiguous"):
        Tube(frames=[0, 2], rects=[(0, 0, 1, 1), (0, 0, 1, 1)])


def test_validate_tube_overlap():
    validate_tube(Tube(frames=[0, 1], rects=[(0, 0, 10, 10), (1, 0, 11, 10)]))
    with pytest.raises(DataError):
        validate_tube(Tube(frames=[0, 1], rects=[(0, 0, 10, 10), (20, 0, 30, 10)]))


def test_build_video_sorts_and_indexes():
    raw = [(1, (0, 0, 1, 1), 0.2, [1, 0]), (0, (0, 0, 1, 1), 0.1, [0, 1]), (1, (0, 0, 2, 2), 0.9, [1, 1])]
    v = build_video("v", 2, raw, ["a"])
    assert [(b.frame_idx, b.prior_score, b.slot, b.index) for b in v.boxes] == [
        (0, 0.1, 0, 0),
        (1, 0.9, 0, 1),
        (1, 0.2, 1, 2),
    ]
    assert v.features.dtype == np.float32 and v.features.shape == (3, 2)


def _write_manifest(tmp_path, records, features, header=None):
    write_feature_file(tmp_path / "f.bin", np.asarray(features, dtype=np.float32))
    lines = ([json.dumps(header)] if header else []) + [json.dumps(r) for r in records]
    (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
    return tmp_path / "m.jsonl"


def _box(frame, off, prior=0.5):
    return {"frame": frame, "x1": 0, "y1": 0, "x2": 10, "y2": 10, "prior": prior, "feat_offset": off}


def test_load_minimal_manifest(tmp_path):
    rec = {"video_id": "a", "num_frames": 2, "labels": ["x"], "feature_file": "f.bin", "boxes": [_box(0, 0), _box(1, 1)]}
    path = _write_manifest(tmp_path, [rec], [[3, 4], [1, 0]])
    (v,) = load_dataset(path)
    assert v.num_frames == 2 and len(v.boxes) == 2
    np.testing.assert_allclose(v.boxes[0].feature, [0.6, 0.8], rtol=1e-6)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda r: r["boxes"][0].update(x2=0), "degenerate box"),
        (lambda r: r["boxes"][0].update(feat_offset=9), "offset"),
        (lambda r: r["boxes"][0].update(frame=5), "num_frames"),
        (lambda r: r.pop("num_frames"), "num_frames"),
        (lambda r: r.update(labels=["unknown"]), "unknown"),
    ],
)
def test_manifest_errors_name_location(tmp_path, mutate, message):
    rec = {"video_id": "a", "num_frames": 2, "labels": ["x"], "feature_file": "f.bin", "boxes": [_box(0, 0)]}
    mutate(rec)
    path = _write_manifest(tmp_path, [rec], [[1, 0]], header={"actions": ["x"]})
    with pytest.raises(DataError, match=message) as err:
        load_dataset(path)
    assert "m.jsonl:2" in str(err.value)


def test_duplicate_video_id(tmp_path):
    rec = {"video_id": "a", "num_frames": 1, "labels": [], "feature_file": "f.bin", "boxes": [_box(0, 0)]}
    path = _write_manifest(tmp_path, [rec, rec], [[1, 0]])
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(path)


def test_feature_file_header_checked(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTMAGIC" + b"\0" * 8)
    with pytest.raises(DataError):
        read_feature_file(tmp_path / "bad.bin")


def test_feature_dim_mismatch(tmp_path):
    write_feature_file(tmp_path / "g.bin", np.ones((1, 3), dtype=np.float32))
    a = {"video_id": "a", "num_frames": 1, "labels": [], "feature_file": "f.bin", "boxes": [_box(0, 0)]}
    b = {"video_id": "b", "num_frames": 1, "labels": [], "feature_file": "g.bin", "boxes": [_box(0, 0)]}
    path = _write_manifest(tmp_path, [a, b], [[1, 0]])
    with pytest.raises(DataError, match="dim"):
        load_dataset(path)


def _same_video(a, b):
    assert a.video_id == b.video_id and a.num_frames == b.num_frames and a.labels == b.labels
    assert len(a.boxes) == len(b.boxes)
    for x, y in zip(a.boxes, b.boxes):
        assert (x.frame_idx, x.rect, x.prior_score, x.slot, x.index) == (y.frame_idx, y.rect, y.prior_score, y.slot, y.index)
        np.testing.assert_array_equal(x.feature, y.feature)
    if a.video_feature is None:
        assert b.video_feature is None
    else:
        np.testing.assert_array_equal(a.video_feature, b.video_feature)


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    videos = [random_video(rng, video_id=f"v{i}", dyadic=False) for i in range(8)]
    save_dataset(videos, tmp_path / "m.jsonl", actions=["a"])
    back = load_dataset(tmp_path / "m.jsonl")
    for a, b in zip(videos, back):
        _same_video(a, b)
    # and saving again is byte-identical
    save_dataset(back, tmp_path / "m2.jsonl", "features2.bin", actions=["a"])
    assert (tmp_path / "features.bin").read_bytes() == (tmp_path / "features2.bin").read_bytes()


def test_annotation_round_trip(tmp_path):
    recs = [
        AnnotationRecord("v", "a", (Annotation("box", 0, (0, 0, 2, 2)), Annotation("point", 3, (1, 1)), Annotation("none", 5))),
    ]
    save_annotations(recs, tmp_path / "a.jsonl")
    (back,) = load_annotations(tmp_path / "a.jsonl")
    assert back.entries == recs[0].entries


def test_annotation_geometry_checked():
    with pytest.raises(DataError):
        Annotation("point", 0, (1, 2, 3))
    with pytest.raises(DataError):
        Annotation("circle", 0, (1, 2))


def test_ground_truth_tubes(tmp_path):
    entries = tuple(Annotation("box", f, (f, 0, f + 5, 5)) for f in (2, 3, 4))
    save_annotations([AnnotationRecord("v", "a", entries)], tmp_path / "g.jsonl")
    gt = load_ground_truth(tmp_path / "g.jsonl")
    (tube,) = gt[("v", "a")]
    assert tube.frames.tolist() == [2, 3, 4]


def test_model_round_trip(tmp_path):
    ms = [LinearModel("a", [0.1, -2.5, 1e-9], 0.25), LinearModel("b", [1, 2, 3], -1)]
    save_models(ms, tmp_path / "m.jsonl")
    back = load_models(tmp_path / "m.jsonl")
    for m in ms:
        np.testing.assert_array_equal(back[m.action_id].weights, m.weights)
        assert back[m.action_id].bias == m.bias


def test_model_version_checked(tmp_path):
    (tmp_path / "m.jsonl").write_text('{"feature_dim": 1, "format_version": 99}\n')
    with pytest.raises(DataError, match="format_version"):
        load_models(tmp_path / "m.jsonl")
