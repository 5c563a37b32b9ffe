import json
import math
import os

import numpy as np
import pytest
from PIL import Image, ImageDraw

from mobiledensenet import BoxXYXY, LabeledBox, iou
from mobiledensenet.datasets import (DatasetError, SHAPE_CLASSES, draw_shape, export_coco, load_coco,
                                     synth_shapes)

EXPECTED = {
    11: [LabeledBox(BoxXYXY(10, 20, 40, 60), 0), LabeledBox(BoxXYXY(50, 5, 70, 15), 1)],
    12: [LabeledBox(BoxXYXY(0, 0, 120, 120), 2, True), LabeledBox(BoxXYXY(100, 100, 120, 120), 0)],
    13: [],
    14: [LabeledBox(BoxXYXY(1.5, 2.5, 11.75, 23.25), 2), LabeledBox(BoxXYXY(150, 40, 200, 100), 1)],
    15: [],
}


def test_fixture_exact_contents(fixtures_dir):
    ds = load_coco(os.path.join(fixtures_dir, "coco_five.json"))
    assert ds.class_names == ["rectangle", "ellipse", "triangle"]
    assert ds.category_ids == [3, 7, 12]
    assert [r.image_id for r in ds.records] == [11, 12, 13, 14, 15]
    assert {r.image_id: r.objects for r in ds.records} == EXPECTED
    assert ds.dropped_boxes == 1
    # crowd regions are kept for evaluation but not used as training boxes
    assert ds.records[1].boxes == [EXPECTED[12][1]]
    assert ds.ground_truth()[12] == EXPECTED[12]


def test_xywh_conversion():
    assert BoxXYXY.from_xywh(10, 20, 30, 40) == BoxXYXY(10, 20, 40, 60)


def test_empty_annotations(tmp_path):
    p = tmp_path / "e.json"
    p.write_text(json.dumps({"images": [{"id": 1, "file_name": "x.png", "width": 10, "height": 10}],
                             "annotations": [], "categories": [{"id": 1, "name": "a"}]}))
    ds = load_coco(p)
    assert len(ds) == 1 and ds.records[0].objects == []


def test_malformed_json_reports_byte_offset(tmp_path):
    p = tmp_path / "bad.json"
    p.write_bytes('{"images": [], "categories": [], "annotations": [}'.encode())
    with pytest.raises(DatasetError, match="byte offset 49"):
        load_coco(p)


def test_missing_images_all_listed(tmp_path, fixtures_dir):
    Image.new("RGB", (100, 80)).save(tmp_path / "a.png")
    Image.new("RGB", (200, 100)).save(tmp_path / "d.png")
    with pytest.raises(DatasetError) as err:
        load_coco(os.path.join(fixtures_dir, "coco_five.json"), tmp_path)
    msg = str(err.value)
    assert "3 image file(s) missing" in msg
    for name in ("b.png", "c.png", "e.png"):
        assert name in msg
    assert "a.png" not in msg


def test_unknown_category(tmp_path):
    p = tmp_path / "u.json"
    p.write_text(json.dumps({"images": [{"id": 1, "file_name": "x", "width": 9, "height": 9}],
                             "annotations": [{"id": 1, "image_id": 1, "category_id": 5, "bbox": [0, 0, 2, 2]}],
                             "categories": [{"id": 1, "name": "a"}]}))
    with pytest.raises(DatasetError, match="unknown category"):
        load_coco(p)


def test_coco_roundtrip(tmp_path, fixtures_dir):
    ds = load_coco(os.path.join(fixtures_dir, "coco_five.json"))
    out = tmp_path / "again.json"
    export_coco(ds, out)
    assert load_coco(out).content() == ds.content()


def test_synthetic_roundtrip_with_images(tmp_path):
    ds = synth_shapes(3, 4, image_size=96)
    export_coco(ds, tmp_path / "s.json", image_dir=tmp_path / "img")
    back = load_coco(tmp_path / "s.json", tmp_path / "img")
    assert back.content() == ds.content()
    for r1, r2 in zip(ds.records, back.records):
        assert np.array_equal(ds.load_image(r1), back.load_image(r2))


def test_synthetic_determinism():
    a, b = synth_shapes(7, 5), synth_shapes(7, 5)
    assert a.content() == b.content()
    for i in range(5):
        assert a[i][0].tobytes() == b[i][0].tobytes()
    assert synth_shapes(8, 5).content() != a.content()
    # an image does not depend on how many images were requested
    assert synth_shapes(7, 2).records[1].objects == a.records[1].objects


def test_synthetic_invariants():
    ds = synth_shapes(1, 300, image_size=320)
    for rec in ds.records:
        assert 1 <= len(rec.objects) <= 5
        for o in rec.objects:
            b = o.box
            assert b.is_valid() and 0 <= b.x1 and 0 <= b.y1 and b.x2 <= 320 and b.y2 <= 320
            assert 0 <= o.class_id < len(SHAPE_CLASSES)
            assert 16 <= b.width <= 160 and 16 <= b.height <= 160
        for i, p in enumerate(rec.objects):
            for q in rec.objects[i + 1:]:
                assert iou(p.box, q.box) < 0.3
    image, _ = ds[0]
    assert image.shape == (320, 320, 3) and image.dtype == np.uint8


def size_census(ds):
    areas = np.array([o.box.area for r in ds.records for o in r.objects])
    return {"small": float(np.mean(areas < 32 ** 2)),
            "medium": float(np.mean((areas >= 32 ** 2) & (areas <= 96 ** 2))),
            "large": float(np.mean(areas > 96 ** 2))}


def test_size_bucket_census():
    census = size_census(synth_shapes(0, 1000))
    assert all(v >= 0.10 for v in census.values()), census


def test_boxes_tight_around_rendered_pixels():
    """Render each shape alone and scan for its pixel extent."""
    ds = synth_shapes(5, 40, image_size=200)
    checked = 0
    for rec in ds.records:
        for s in rec.shapes:
            canvas = Image.new("L", (200, 200), 0)
            draw_shape(ImageDraw.Draw(canvas), SHAPE_CLASSES[s["class_id"]], s["box"], 255)
            ys, xs = np.nonzero(np.asarray(canvas))
            extent = (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
            assert all(abs(a - b) <= 1 for a, b in zip(extent, s["box"])), (s, extent)
            checked += 1
    assert checked > 60


def test_boxes_at_scaling(fixtures_dir):
    ds = load_coco(os.path.join(fixtures_dir, "coco_five.json"))
    b = ds.boxes_at(320)
    assert b.shape == (5, 4)
    assert ds.boxes_at(320, include_crowd=True).shape == (6, 4)
    assert b[0].tolist() == pytest.approx([32.0, 80.0, 128.0, 240.0])


def test_cached_loader():
    ds = synth_shapes(2, 3, image_size=64).cached()
    first = ds[1][0]
    assert ds[1][0] is first


def test_subset_and_errors():
    ds = synth_shapes(2, 10, image_size=64)
    sub = ds.subset([3, 4])
    assert [r.image_id for r in sub.records] == [3, 4]
    with pytest.raises(ValueError):
        synth_shapes(0, 0)
    assert math.isclose(len(ds), 10)
