import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobiledensenet import BoxXYXY, LabeledBox, iou
from mobiledensenet.evaluation import evaluate_ap
from mobiledensenet.postprocess import Detection


def reference_ap(dets, gts, iou_thr, max_dets=100):
    """Plain-loop AP for one class at one IoU threshold (no crowd, no size filter).

    Detections are (image, score, box); ground truth is (image, box).
    """
    by_image = {}
    for img, score, box in dets:
        by_image.setdefault(img, []).append((score, box))
    kept = []
    for img, items in by_image.items():
        items = sorted(items, key=lambda t: -t[0])[:max_dets]
        taken = set()
        img_gts = [b for i, b in gts if i == img]
        for score, box in items:
            best, arg = iou_thr, -1
            for g, gb in enumerate(img_gts):
                if g in taken:
                    continue
                v = iou(box, gb)
                if v >= best:
                    if arg == -1 or v > best:
                        best, arg = v, g
            if arg >= 0:
                taken.add(arg)
            kept.append((score, arg >= 0))
    n_gt = len(gts)
    kept.sort(key=lambda t: -t[0])
    tp = fp = 0
    curve = []
    for _, hit in kept:
        tp += hit
        fp += not hit
        curve.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = k / 100
        total += max([p for rc, p in curve if rc >= r - 1e-12], default=0.0)
    return total / 101


def reference_report(all_dets, all_gts, classes):
    res = {}
    for name, thrs in (("AP", [0.5 + 0.05 * i for i in range(10)]), ("AP50", [0.5]), ("AP75", [0.75])):
        per_class = []
        for c in classes:
            gts = [(img, g.box) for img, v in all_gts.items() for g in v if g.class_id == c]
            if not gts:
                continue
            dets = [(img, d.score, d.box) for img, v in all_dets.items() for d in v if d.class_id == c]
            per_class.append(np.mean([reference_ap(dets, gts, t) for t in thrs]))
        res[name] = float(np.mean(per_class))
    return res


def _gt(box, c, crowd=False):
    return LabeledBox(BoxXYXY(*box), c, crowd)


def _d(box, c, s):
    return Detection(BoxXYXY(*box), c, s)


def mixed_fixture():
    """3 images, 2 classes: one false positive (image 3) and one missed box (class 1, image 3)."""
    gts = {
        1: [_gt((10, 10, 60, 60), 0), _gt((100, 100, 180, 150), 1)],
        2: [_gt((30, 40, 90, 120), 0)],
        3: [_gt((200, 10, 260, 70), 1)],
    }
    dets = {
        1: [_d((10, 10, 60, 60), 0, 0.9), _d((100, 100, 180, 150), 1, 0.7)],
        2: [_d((30, 40, 90, 120), 0, 0.6)],
        3: [_d((0, 200, 40, 240), 0, 0.8)],
    }
    return dets, gts


def test_mixed_fixture_hand_value():
    dets, gts = mixed_fixture()
    r = evaluate_ap(dets, gts, num_classes=2)
    class0 = (51 + 50 * 2 / 3) / 101  # precision 1 up to recall 0.5, then 2/3
    class1 = 51 / 101                  # recall stops at 0.5
    for v in (r.AP, r.AP50, r.AP75):
        assert v == pytest.approx((class0 + class1) / 2, abs=1e-12)
    assert r.counts["ground_truth"] == 4 and r.counts["detections"] == 4


def test_mixed_fixture_matches_reference():
    dets, gts = mixed_fixture()
    r = evaluate_ap(dets, gts, num_classes=2)
    ref = reference_report(dets, gts, [0, 1])
    for k in ref:
        assert abs(getattr(r, k) - ref[k]) < 1e-9


def _random_scene(rng, n_images=4, n_classes=2):
    gts, dets = {}, {}
    for img in range(n_images):
        gts[img], dets[img] = [], []
        for _ in range(rng.randint(0, 4)):
            x, y = rng.uniform(0, 200), rng.uniform(0, 200)
            b = (x, y, x + rng.uniform(20, 80), y + rng.uniform(20, 80))
            c = rng.randrange(n_classes)
            gts[img].append(_gt(b, c))
            if rng.random() < 0.8:  # a jittered detection of it
                j = [v + rng.uniform(-8, 8) for v in b]
                dets[img].append(_d(j, c if rng.random() < 0.9 else 1 - c, rng.random()))
        for _ in range(rng.randint(0, 3)):  # clutter
            x, y = rng.uniform(0, 250), rng.uniform(0, 250)
            dets[img].append(_d((x, y, x + rng.uniform(10, 60), y + rng.uniform(10, 60)),
                                rng.randrange(n_classes), rng.random()))
    return dets, gts


def test_random_scenes_match_reference():
    rng = random.Random(0)
    checked = 0
    for _ in range(40):
        dets, gts = _random_scene(rng)
        classes = sorted({g.class_id for v in gts.values() for g in v})
        if not classes:
            continue
        r = evaluate_ap(dets, gts, num_classes=2)
        ref = reference_report(dets, gts, classes)
        for k in ref:
            assert abs(getattr(r, k) - ref[k]) < 1e-9, (k, getattr(r, k), ref[k])
        checked += 1
    assert checked > 30


def test_perfect_and_empty():
    gts = {1: [_gt((0, 0, 20, 20), 0), _gt((50, 50, 150, 150), 1)], 2: [_gt((5, 5, 60, 60), 0)]}
    perfect = {k: [_d(g.box, g.class_id, 1.0) for g in v] for k, v in gts.items()}
    r = evaluate_ap(perfect, gts, num_classes=2)
    assert r.AP == r.AP50 == r.AP75 == 1.0
    assert r.APs == 1.0 and r.APm == 1.0 and r.APl == 1.0
    none = evaluate_ap({}, gts, num_classes=2)
    assert none.AP == 0.0 and none.AP50 == 0.0


def test_class_without_gt_excluded():
    gts = {1: [_gt((0, 0, 20, 20), 0)]}
    dets = {1: [_d((0, 0, 20, 20), 0, 0.9), _d((30, 30, 50, 50), 2, 0.9)]}
    r = evaluate_ap(dets, gts, num_classes=3)
    assert r.AP == 1.0
    assert r.per_class["1"] == -1.0 and r.per_class["2"] == -1.0


def test_size_buckets():
    small, medium, large = (0, 0, 20, 20), (100, 100, 160, 160), (200, 0, 320, 120)
    gts = {1: [_gt(small, 0), _gt(medium, 0), _gt(large, 0)]}
    dets = {1: [_d(medium, 0, 0.9), _d(large, 0, 0.8)]}  # small one missed
    r = evaluate_ap(dets, gts, num_classes=1)
    assert r.APs == 0.0 and r.APm == 1.0 and r.APl == 1.0
    only_large = evaluate_ap({1: [_d(large, 0, 0.9)]}, {1: [_gt(large, 0)]}, num_classes=1)
    assert only_large.APs == -1.0 and only_large.APm == -1.0


def test_crowd_is_ignore_region():
    gts = {1: [_gt((0, 0, 50, 50), 0), _gt((100, 0, 300, 200), 0, crowd=True)]}
    base = {1: [_d((0, 0, 50, 50), 0, 0.5)]}
    inside_crowd = {1: base[1] + [_d((120, 20, 180, 80), 0, 0.9), _d((150, 50, 220, 120), 0, 0.8)]}
    assert evaluate_ap(base, gts, num_classes=1).AP == 1.0
    assert evaluate_ap(inside_crowd, gts, num_classes=1).AP == 1.0
    outside = {1: base[1] + [_d((0, 250, 40, 290), 0, 0.9)]}
    assert evaluate_ap(outside, gts, num_classes=1).AP < 1.0


def test_report_serialisation():
    dets, gts = mixed_fixture()
    r = evaluate_ap(dets, gts, num_classes=2, class_names=["cat", "dog"])
    assert set(r.per_class) == {"cat", "dog"}
    assert '"AP50"' in r.to_json()
    head, row = r.table().splitlines()
    assert head.split() == ["AP", "AP50", "AP75", "APs", "APm", "APl"]


scene_seed = st.integers(0, 10 ** 6)


@settings(max_examples=40)
@given(scene_seed, st.floats(0.0, 1.0))
def test_false_positive_never_increases_ap(seed, score):
    rng = random.Random(seed)
    dets, gts = _random_scene(rng)
    if not any(gts.values()):
        return
    before = evaluate_ap(dets, gts, num_classes=2)
    dets = {k: list(v) for k, v in dets.items()}
    dets.setdefault(0, []).append(_d((1000, 1000, 1040, 1040), rng.randrange(2), score))
    after = evaluate_ap(dets, gts, num_classes=2)
    for k in ("AP", "AP50", "AP75", "APs", "APm", "APl"):
        assert getattr(after, k) <= getattr(before, k) + 1e-12


@settings(max_examples=40)
@given(scene_seed)
def test_top_scored_true_positive_never_decreases_ap(seed):
    rng = random.Random(seed)
    dets, gts = _random_scene(rng)
    # a gt that no same-class detection overlaps at IoU >= 0.5
    free = [(img, g) for img, v in gts.items() for g in v
            if all(d.class_id != g.class_id or iou(d.box, g.box) < 0.5 for d in dets.get(img, []))]
    if not free:
        return
    before = evaluate_ap(dets, gts, num_classes=2)
    img, g = free[0]
    dets = {k: list(v) for k, v in dets.items()}
    dets.setdefault(img, []).append(_d(g.box, g.class_id, 2.0))
    after = evaluate_ap(dets, gts, num_classes=2)
    for k in ("AP", "AP50", "AP75"):
        assert getattr(after, k) >= getattr(before, k) - 1e-12
    assert after.AP <= after.AP50
