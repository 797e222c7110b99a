import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hazelab.detection import (
    BBox,
    Detection,
    EvalConfig,
    GtBox,
    RecordError,
    average_precision,
    iou,
    load_detections,
    load_ground_truth,
    match_detections,
    mean_ap,
    write_records,
)

from helpers import as_objects, oracle_ap, random_instance


# --- primitives -------------------------------------------------------------


def test_iou_examples():
    a, b = BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 6, 6)) == 0.0
    assert iou(a, BBox(2, 0, 3, 2)) == 0.0
    assert iou(a, b) == pytest.approx(1 / 7)
    assert iou(a, b) == iou(b, a)


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(2, 0, 1, 1)
    with pytest.raises(ValueError):
        BBox(0, 0, float("nan"), 1)
    with pytest.raises(ValueError):
        Detection("a", "car", BBox(0, 0, 1, 1), 1.5)


def test_match_examples():
    gt = [GtBox("a", "car", BBox(0, 0, 10, 10))]
    flags, n = match_detections([Detection("a", "car", BBox(0, 0, 10, 10), 0.9)], gt)
    assert flags == [True] and n == 1
    dets = [Detection("a", "car", BBox(0, 0, 10, 9), 0.4), Detection("a", "car", BBox(0, 0, 10, 10), 0.8)]
    flags, _ = match_detections(dets, gt)
    assert flags == [True, False]


def test_match_prefers_highest_iou():
    gts = [GtBox("a", "car", BBox(0, 0, 10, 10)), GtBox("a", "car", BBox(1, 0, 11, 10))]
    dets = [Detection("a", "car", BBox(1, 0, 11, 10), 0.9), Detection("a", "car", BBox(0, 0, 10, 10), 0.5)]
    assert match_detections(dets, gts)[0] == [True, True]


def test_ap_hand_examples():
    assert average_precision([True], 1) == 1.0
    assert average_precision([False, True], 1) == 0.5
    assert average_precision([True, False], 1) == 1.0
    assert average_precision([True, False], 0) == 0.0
    assert average_precision([], 2) == 0.0
    assert average_precision([False, True], 1, "11-point") == pytest.approx(0.5)
    assert average_precision([True, False, True], 2, "11-point") == pytest.approx((6 * 1 + 5 * 2 / 3) / 11)


def test_map_examples():
    gts = [GtBox("a", "car", BBox(0, 0, 5, 5)), GtBox("b", "person", BBox(2, 2, 8, 9))]
    perfect = [Detection(g.image_id, g.class_name, g.bbox, 0.9) for g in gts]
    assert mean_ap(perfect, gts).mAP == 1.0
    assert mean_ap([], gts).mAP == 0.0
    res = mean_ap(perfect, gts, EvalConfig(classes=("car",)))
    assert list(res.per_class) == ["car"]
    # classes absent from ground truth are not scored
    extra = perfect + [Detection("a", "bus", BBox(0, 0, 1, 1), 0.5)]
    assert mean_ap(extra, gts).mAP == 1.0


def test_constructed_two_class_fixture():
    gts = [("i1", "car", (0, 0, 4, 4)), ("i1", "car", (5, 5, 9, 9)), ("i2", "car", (0, 0, 3, 3)),
           ("i2", "person", (1, 1, 5, 8)), ("i3", "person", (0, 0, 2, 6))]
    dets = [("i1", "car", (0, 0, 4, 4), 0.95), ("i1", "car", (0, 0, 4, 3), 0.9), ("i2", "car", (4, 4, 6, 6), 0.85),
            ("i1", "car", (5, 5, 9, 9), 0.5), ("i2", "person", (1, 1, 5, 7), 0.8), ("i3", "person", (0, 1, 2, 6), 0.3),
            ("i3", "person", (5, 5, 6, 6), 0.7)]
    d, g = as_objects(dets, gts)
    res = mean_ap(d, g, EvalConfig(classes=None))
    for c in ("car", "person"):
        assert abs(res.per_class[c] - oracle_ap(dets, gts, c)) < 1e-9
    # car: TP FP FP TP over 3 gts -> 1/3*1 + 1/3*0.5; person: TP FP TP over 2 -> 0.5 + 0.5*2/3
    assert res.per_class["car"] == pytest.approx(1 / 3 + 1 / 6)
    assert res.per_class["person"] == pytest.approx(0.5 + 1 / 3)


def test_randomized_against_oracle():
    for case in range(200):
        rng = np.random.default_rng(case)
        dets, gts = random_instance(rng)
        d, g = as_objects(dets, gts)
        res = mean_ap(d, g, EvalConfig(classes=None))
        expect = {c: oracle_ap(dets, gts, c) for c in {c for _, c, _ in gts}}
        assert set(res.per_class) == set(expect)
        for c, v in expect.items():
            assert abs(res.per_class[c] - v) < 1e-9
        if expect:
            assert abs(res.mAP - np.mean(list(expect.values()))) < 1e-9


def test_greedy_never_beats_exhaustive_matching():
    for case in range(200):
        rng = np.random.default_rng(1000 + case)
        dets, gts = random_instance(rng)
        d, g = as_objects(dets, gts)
        flags, _ = match_detections([x for x in d if x.class_name == "car"], [x for x in g if x.class_name == "car"])
        cd = [x for x in d if x.class_name == "car"]
        cg = [x for x in g if x.class_name == "car"]
        best = 0
        for perm in itertools.permutations(range(len(cg)), min(len(cd), len(cg))):
            ok = sum(cd[i].image_id == cg[j].image_id and iou(cd[i].bbox, cg[j].bbox) >= 0.5
                     for i, j in enumerate(perm))
            best = max(best, ok)
        if len(cd) > len(cg):
            for sub in itertools.combinations(range(len(cd)), len(cg)):
                for perm in itertools.permutations(range(len(cg))):
                    ok = sum(cd[i].image_id == cg[j].image_id and iou(cd[i].bbox, cg[j].bbox) >= 0.5
                             for i, j in zip(sub, perm))
                    best = max(best, ok)
        assert sum(flags) <= best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_map_invariants(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng)
    d, g = as_objects(dets, gts)
    base = mean_ap(d, g, EvalConfig(classes=None))
    shuffled = mean_ap(list(reversed(d)), list(reversed(g)), EvalConfig(classes=None))
    assert base.per_class == shuffled.per_class
    for c, ap in base.per_class.items():
        assert 0.0 <= ap <= 1.0
        worse = d + [Detection("zz", c, BBox(0, 0, 1, 1), 0.0)]
        assert mean_ap(worse, g, EvalConfig(classes=None)).per_class[c] <= ap + 1e-15
    cd = [x for x in d if x.class_name == "car"]
    cg = [x for x in g if x.class_name == "car"]
    flags, n = match_detections(cd, cg)
    assert sum(flags) <= n


def test_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(iou_threshold=1.5)
    with pytest.raises(ValueError):
        EvalConfig(interpolation="101-point")


# --- JSON lines -------------------------------------------------------------


def test_records_round_trip(tmp_path):
    dets, gts = random_instance(np.random.default_rng(5))
    d, g = as_objects(dets + [("c", "car", (0.5, 1.5, 2.25, 3.0), 0.125)], gts)
    write_records(d, tmp_path / "d.jsonl")
    write_records(g, tmp_path / "g.jsonl")
    assert load_detections(tmp_path / "d.jsonl") == d
    assert load_ground_truth(tmp_path / "g.jsonl") == g


def test_records_empty_and_errors(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_detections(tmp_path / "e.jsonl") == []
    good = json.dumps({"image": "a", "class": "car", "bbox": [0, 0, 1, 1]})
    bad = json.dumps({"image": "a", "class": "car", "bbox": [3, 0, 1, 1]})
    (tmp_path / "bad.jsonl").write_text(good + "\n" + bad + "\n")
    with pytest.raises(RecordError) as info:
        load_ground_truth(tmp_path / "bad.jsonl")
    assert info.value.lineno == 2
    assert ":2:" in str(info.value)
    (tmp_path / "noscore.jsonl").write_text(good + "\n")
    with pytest.raises(RecordError):
        load_detections(tmp_path / "noscore.jsonl")
    (tmp_path / "junk.jsonl").write_text("{not json\n")
    with pytest.raises(RecordError):
        load_ground_truth(tmp_path / "junk.jsonl")
