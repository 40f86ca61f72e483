import json

import numpy as np
import pytest

from detcore.cocojson import SchemaError, load_detections, load_ground_truth
from detcore.evaluation import (
    SWEEP_THRESHOLDS,
    Detection,
    GroundTruthSet,
    assign_tp_fp,
    average_precision,
    class_ap,
    evaluate,
    pr_curve,
)
from detcore.geometry import BoxXyxy
from oracles import naive_map


def box(x, y, w, h):
    return BoxXyxy.from_xywh(x, y, w, h)


def gt_of(*items):
    gts = GroundTruthSet()
    for image_id, cat, b in items:
        gts.add(image_id, cat, b)
    return gts


def random_instance(seed, n_images=20, n_classes=3):
    """Integer pixel boxes so xywh and corner arithmetic agree exactly."""
    rng = np.random.default_rng(seed)
    gt_recs, det_recs = [], []
    for img in range(n_images):
        for _ in range(int(rng.integers(0, 6))):
            cat = int(rng.integers(n_classes))
            b = [int(v) for v in (*rng.integers(0, 400, 2), *rng.integers(10, 120, 2))]
            gt_recs.append({"image_id": img, "category_id": cat, "bbox": b})
            for _ in range(int(rng.integers(0, 3))):
                jitter = rng.integers(-15, 16, 4)
                d = [b[0] + int(jitter[0]), b[1] + int(jitter[1]),
                     max(1, b[2] + int(jitter[2])), max(1, b[3] + int(jitter[3]))]
                det_recs.append({"image_id": img, "category_id": cat, "bbox": d,
                                 "score": round(float(rng.random()), 2)})
        for _ in range(int(rng.integers(0, 3))):
            b = [int(v) for v in (*rng.integers(0, 400, 2), *rng.integers(10, 120, 2))]
            det_recs.append({"image_id": img, "category_id": int(rng.integers(n_classes)),
                             "bbox": b, "score": round(float(rng.random()), 2)})
    return gt_recs, det_recs


def to_objects(gt_recs, det_recs):
    gts = GroundTruthSet()
    for g in gt_recs:
        gts.add(g["image_id"], g["category_id"], box(*g["bbox"]))
    dets = [Detection(d["image_id"], d["category_id"], box(*d["bbox"]), d["score"])
            for d in det_recs]
    return dets, gts


def test_assign_tp_fp_fixtures():
    gts = gt_of((0, 1, box(0, 0, 10, 10)))
    # IoU = 60/100 for a 10x6 box inside the 10x10 gt
    assert assign_tp_fp([Detection(0, 1, box(0, 0, 10, 6), 0.9)], gts, 0.5) == [True]
    assert assign_tp_fp([Detection(0, 1, box(0, 0, 10, 4), 0.9)], gts, 0.5) == [False]
    dup = [Detection(0, 1, box(0, 0, 10, 9), 0.3), Detection(0, 1, box(1, 0, 9, 10), 0.8)]
    assert assign_tp_fp(dup, gts, 0.5) == [False, True]
    with pytest.raises(ValueError):
        assign_tp_fp([], gts, 1.0)


def test_threshold_is_inclusive():
    gts = gt_of((0, 1, box(0, 0, 10, 10)))
    assert assign_tp_fp([Detection(0, 1, box(0, 0, 10, 5), 0.5)], gts, 0.5) == [True]


def test_pr_curve_fixtures():
    assert pr_curve([True], 1).samples() == [(1.0, 1.0)]
    assert pr_curve([True, False], 2).samples() == [(0.5, 1.0), (0.5, 0.5)]
    assert len(pr_curve([], 3)) == 0


def test_average_precision_fixtures():
    assert average_precision(pr_curve([True], 1)) == 1.0
    assert abs(average_precision(pr_curve([True, False], 2)) - 51 / 101) <= 1e-12
    assert average_precision(pr_curve([], 3)) == 0.0
    assert average_precision(pr_curve([False], 0)) == 0.0


def test_evaluate_perfect_and_empty():
    gt_recs, _ = random_instance(0)
    perfect = [dict(g, score=1.0) for g in gt_recs]
    dets, gts = to_objects(gt_recs, perfect)
    report = evaluate(dets, gts, mode="sweep")
    assert report.map_50 == 1.0 and report.map_sweep == 1.0
    assert all(v == 1.0 for v in report.map_by_iou.values())
    assert evaluate([], gts).map_50 == 0.0
    with pytest.raises(ValueError, match="empty ground truth"):
        evaluate(dets, GroundTruthSet())


@pytest.mark.parametrize("seed", range(5))
def test_evaluate_matches_naive_evaluator_exactly(seed):
    gt_recs, det_recs = random_instance(seed)
    dets, gts = to_objects(gt_recs, det_recs)
    report = evaluate(dets, gts, mode="sweep")
    per_class, m50, sweep = naive_map(det_recs, gt_recs, SWEEP_THRESHOLDS)
    assert report.map_50 == m50
    assert report.map_sweep == sweep
    for cid, values in per_class.items():
        assert [report.ap[cid][t] for t in SWEEP_THRESHOLDS] == values


@pytest.mark.parametrize("seed", range(5))
def test_ap_nonincreasing_in_threshold(seed):
    dets, gts = to_objects(*random_instance(seed + 10))
    for cid in gts.present_classes():
        aps = [class_ap(dets, gts, cid, t)[0] for t in SWEEP_THRESHOLDS]
        assert all(b <= a for a, b in zip(aps, aps[1:]))


def test_lower_score_duplicate_never_increases_ap():
    rng = np.random.default_rng(3)
    for seed in range(5):
        dets, gts = to_objects(*random_instance(seed + 20))
        base = evaluate(dets, gts).map_50
        for _ in range(10):
            d = dets[int(rng.integers(len(dets)))]
            dup = Detection(d.image_id, d.category_id, d.bbox, d.score * float(rng.random()))
            assert evaluate(dets + [dup], gts).map_50 <= base


def test_monotone_score_transform_leaves_ap_unchanged():
    dets, gts = to_objects(*random_instance(30))
    base = evaluate(dets, gts, mode="sweep")
    squashed = [Detection(d.image_id, d.category_id, d.bbox, float(np.tanh(3 * d.score) + 7))
                for d in dets]
    other = evaluate(squashed, gts, mode="sweep")
    assert other.map_50 == base.map_50 and other.map_sweep == base.map_sweep


def test_report_values_in_unit_interval_and_unknown_classes_ignored():
    dets, gts = to_objects(*random_instance(40))
    stray = Detection(0, 99, box(0, 0, 5, 5), 1.0)
    report = evaluate(dets + [stray], gts, mode="sweep", extra_thresholds=(0.3,))
    assert report.map_50 == evaluate(dets, gts).map_50
    doc = report.to_dict()
    values = [doc["map_50"], doc["map_sweep"], *doc["map_by_iou"].values()]
    for entry in doc["per_class"].values():
        values += [entry["ap50"], entry["ap_sweep"], *entry["ap_by_iou"].values()]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert "0.30" in doc["map_by_iou"]


def test_loaders_round_trip(tmp_path):
    gt_recs, det_recs = random_instance(50)
    doc = {
        "images": [{"id": i, "width": 640, "height": 512} for i in range(20)],
        "annotations": [dict(g, id=k) for k, g in enumerate(gt_recs)],
        "categories": [{"id": c, "name": f"c{c}"} for c in range(3)],
    }
    (tmp_path / "gt.json").write_text(json.dumps(doc, indent=2))
    (tmp_path / "det.json").write_text(json.dumps(det_recs, indent=2))
    gts = load_ground_truth(tmp_path / "gt.json")
    dets = load_detections(tmp_path / "det.json")
    ref_dets, ref_gts = to_objects(gt_recs, det_recs)
    assert evaluate(dets, gts).map_50 == evaluate(ref_dets, ref_gts).map_50
    assert gts.categories == {0: "c0", 1: "c1", 2: "c2"}


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('[\n  {"image_id": 0,\n   "score": 0.5,,\n  }\n]\n')
    with pytest.raises(SchemaError) as info:
        load_detections(p)
    assert info.value.line == 3
    assert ":3:" in str(info.value)


def test_negative_box_dims_report_line(tmp_path):
    records = [
        {"image_id": 0, "category_id": 1, "bbox": [0, 0, 5, 5], "score": 0.9},
        {"image_id": 0, "category_id": 1, "bbox": [0, 0, -5, 5], "score": 0.8},
    ]
    p = tmp_path / "det.json"
    p.write_text(json.dumps(records, indent=2))
    with pytest.raises(SchemaError, match="non-positive") as info:
        load_detections(p)
    lines = [i + 1 for i, text in enumerate(p.read_text().splitlines()) if '"bbox"' in text]
    assert info.value.line == lines[1]


def test_ground_truth_schema_errors(tmp_path):
    p = tmp_path / "gt.json"
    p.write_text(json.dumps({"images": [], "annotations": []}))
    with pytest.raises(SchemaError, match="categories"):
        load_ground_truth(p)
    p.write_text(json.dumps({
        "images": [{"id": 0}],
        "annotations": [{"id": 0, "image_id": 5, "category_id": 1, "bbox": [0, 0, 1, 1]}],
        "categories": [{"id": 1, "name": "car"}],
    }, indent=1))
    with pytest.raises(SchemaError, match="unknown image_id"):
        load_ground_truth(p)
