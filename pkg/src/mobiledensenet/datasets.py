"""COCO-format ingestion/export and a deterministic synthetic shapes dataset."""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from PIL import Image, ImageDraw

from .geometry import BoxXYXY, LabeledBox, iou

log = logging.getLogger(__name__)

SHAPE_CLASSES = ("rectangle", "ellipse", "triangle")


class DatasetError(RuntimeError):
    pass


@dataclass
class ImageRecord:
    image_id: int
    file_name: str
    width: int
    height: int
    objects: list = field(default_factory=list)  # LabeledBox, crowd included
    shapes: Optional[list] = None  # synthetic render parameters

    @property
    def boxes(self) -> list:
        """Training annotations (crowd regions excluded)."""
        return [o for o in self.objects if not o.iscrowd]


@dataclass
class Dataset:
    records: list
    class_names: list
    category_ids: list = None  # original category id per dense class index
    loader: Callable = None
    image_root: str = None
    dropped_boxes: int = 0

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        rec = self.records[i]
        return self.load_image(rec), rec

    def load_image(self, rec: ImageRecord) -> np.ndarray:
        if self.loader is None:
            raise DatasetError("dataset has no image loader")
        return self.loader(rec)

    def cached(self) -> "Dataset":
        """Copy whose loader keeps decoded images in memory after first use."""
        if self.loader is None:
            raise DatasetError("dataset has no image loader")
        store, load = {}, self.loader

        def loader(rec):
            if rec.image_id not in store:
                store[rec.image_id] = load(rec)
            return store[rec.image_id]
        return Dataset(self.records, self.class_names, self.category_ids, loader, self.image_root,
                       self.dropped_boxes)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def ground_truth(self) -> dict:
        return {r.image_id: list(r.objects) for r in self.records}

    def all_boxes(self, include_crowd=False) -> np.ndarray:
        rows = [tuple(o.box) for r in self.records for o in r.objects if include_crowd or not o.iscrowd]
        return np.array(rows, dtype=np.float64).reshape(-1, 4)

    def boxes_at(self, size: int, include_crowd=False) -> np.ndarray:
        """Boxes rescaled to a square ``size`` x ``size`` network input."""
        rows = [(o.box.x1 * size / r.width, o.box.y1 * size / r.height,
                 o.box.x2 * size / r.width, o.box.y2 * size / r.height)
                for r in self.records for o in r.objects if include_crowd or not o.iscrowd]
        return np.array(rows, dtype=np.float64).reshape(-1, 4)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.records[i] for i in indices], self.class_names, self.category_ids,
                       self.loader, self.image_root)

    def content(self) -> tuple:
        """Comparable summary used for equality checks (ids, sizes, objects)."""
        return (
            tuple(self.class_names),
            tuple((r.image_id, r.file_name, r.width, r.height,
                   tuple((tuple(round(v, 6) for v in o.box), o.class_id, bool(o.iscrowd)) for o in r.objects))
                  for r in self.records),
        )


def _file_loader(root):
    def load(rec: ImageRecord) -> np.ndarray:
        with Image.open(os.path.join(root, rec.file_name)) as im:
            return np.asarray(im.convert("RGB"))
    return load


def load_coco(annotation_path, image_root=None, check_images: bool = True) -> Dataset:
    """Read a COCO detection annotation file.

    Category ids are remapped to dense indices in ascending id order. Crowd
    annotations are kept (flagged) for evaluation; zero-area boxes are dropped.
    """
    with open(annotation_path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise DatasetError(f"{annotation_path}: malformed JSON at byte offset {offset}: {exc.msg}") from exc
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise DatasetError(f"{annotation_path}: missing '{key}' array")
    cats = sorted(data["categories"], key=lambda c: c["id"])
    cat_index = {c["id"]: i for i, c in enumerate(cats)}
    images = {}
    for im in data["images"]:
        images[im["id"]] = ImageRecord(int(im["id"]), im["file_name"], int(im["width"]), int(im["height"]))
    dropped = 0
    for ann in data["annotations"]:
        rec = images.get(ann["image_id"])
        if rec is None:
            raise DatasetError(f"annotation {ann.get('id')} refers to unknown image {ann['image_id']}")
        if ann["category_id"] not in cat_index:
            raise DatasetError(f"annotation {ann.get('id')} has unknown category {ann['category_id']}")
        x, y, w, h = map(float, ann["bbox"])
        box = BoxXYXY(max(x, 0.0), max(y, 0.0), min(x + w, rec.width), min(y + h, rec.height))
        if box.width <= 0 or box.height <= 0:
            dropped += 1
            continue
        rec.objects.append(LabeledBox(box, cat_index[ann["category_id"]], bool(ann.get("iscrowd", 0))))
    if dropped:
        log.warning("%s: dropped %d zero-area boxes", annotation_path, dropped)
    records = [images[k] for k in sorted(images)]
    if image_root is not None and check_images:
        missing = [os.path.join(image_root, r.file_name) for r in records
                   if not os.path.isfile(os.path.join(image_root, r.file_name))]
        if missing:
            raise DatasetError(f"{len(missing)} image file(s) missing: " + ", ".join(missing))
    return Dataset(
        records=records,
        class_names=[c["name"] for c in cats],
        category_ids=[c["id"] for c in cats],
        loader=_file_loader(image_root) if image_root is not None else None,
        image_root=image_root,
        dropped_boxes=dropped,
    )


def export_coco(dataset: Dataset, annotation_path, image_dir=None) -> None:
    """Write ``dataset`` as COCO JSON; with ``image_dir``, also write PNG images."""
    cat_ids = dataset.category_ids or list(range(1, dataset.num_classes + 1))
    out = {"images": [], "annotations": [], "categories": []}
    for i, name in enumerate(dataset.class_names):
        out["categories"].append({"id": cat_ids[i], "name": name})
    ann_id = 1
    for rec in dataset.records:
        out["images"].append({"id": rec.image_id, "file_name": rec.file_name,
                              "width": rec.width, "height": rec.height})
        for o in rec.objects:
            b = o.box
            out["annotations"].append({
                "id": ann_id, "image_id": rec.image_id, "category_id": cat_ids[o.class_id],
                "bbox": [b.x1, b.y1, b.width, b.height], "area": b.area, "iscrowd": int(o.iscrowd),
            })
            ann_id += 1
        if image_dir is not None:
            path = os.path.join(image_dir, rec.file_name)
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            Image.fromarray(dataset.load_image(rec)).save(path)
    with open(annotation_path, "w") as fh:
        json.dump(out, fh)


# -- synthetic shapes ---------------------------------------------------------

MIN_SIDE, MAX_SIDE = 16, 160
MAX_PAIR_IOU = 0.3


def _image_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def _sample_shapes(rng, image_size, n_classes):
    shapes = []
    target = int(rng.integers(1, 6))
    attempts = 0
    while len(shapes) < target and attempts < 100:
        attempts += 1
        side = math.exp(rng.uniform(math.log(MIN_SIDE), math.log(MAX_SIDE)))
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        w = int(round(min(max(side * math.sqrt(aspect), MIN_SIDE), MAX_SIDE, image_size)))
        h = int(round(min(max(side / math.sqrt(aspect), MIN_SIDE), MAX_SIDE, image_size)))
        x0 = int(rng.integers(0, image_size - w + 1))
        y0 = int(rng.integers(0, image_size - h + 1))
        box = (x0, y0, x0 + w, y0 + h)
        if any(iou(box, s["box"]) >= MAX_PAIR_IOU for s in shapes):
            continue
        color = tuple(int(c) for c in rng.integers(150, 256, size=3))
        color = tuple(int(c * f) for c, f in zip(color, rng.uniform(0.55, 1.0, size=3)))
        shapes.append({"class_id": int(rng.integers(0, n_classes)), "box": box, "color": color})
    return shapes


def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    base = rng.uniform(20, 90, size=3).astype(np.float32)
    grad = rng.uniform(-30, 30, size=(2, 3)).astype(np.float32)
    img = base + xx[..., None] * grad[0] + yy[..., None] * grad[1]
    img += rng.normal(0, 8, size=(size, size, 3)).astype(np.float32)
    return np.clip(img, 0, 255).astype(np.uint8)


def draw_shape(draw: ImageDraw.ImageDraw, kind: str, box, color) -> None:
    """Render ``kind`` so that it exactly spans pixel columns x1..x2-1 and rows y1..y2-1."""
    x0, y0, x1, y1 = box
    xe, ye = x1 - 1, y1 - 1
    if kind == "rectangle":
        draw.rectangle([x0, y0, xe, ye], fill=color)
    elif kind == "ellipse":
        draw.ellipse([x0, y0, xe, ye], fill=color)
    elif kind == "triangle":
        mid = (x0 + xe) / 2
        draw.polygon([(mid, y0), (x0, ye), (xe, ye)], fill=color)
    else:
        raise ValueError(f"unknown shape {kind!r}")


def render_shapes(rec: ImageRecord, seed: int, class_names=SHAPE_CLASSES) -> np.ndarray:
    rng = _image_rng(seed, rec.image_id)
    _sample_shapes(rng, rec.width, len(class_names))  # advance to the render stream
    img = Image.fromarray(_background(rng, rec.width))
    draw = ImageDraw.Draw(img)
    for s in rec.shapes:
        draw_shape(draw, class_names[s["class_id"]], s["box"], s["color"])
    return np.asarray(img)


def synth_shapes(seed: int, n_images: int, image_size: int = 320, classes=SHAPE_CLASSES,
                 start_index: int = 0) -> Dataset:
    """Deterministic dataset of 1-5 flat shapes per image on a textured background.

    Object sides are drawn log-uniformly from [16, 160] px so that small,
    medium and large objects all occur; boxes are pixel-exact.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    classes = tuple(classes)
    records = []
    for i in range(start_index, start_index + n_images):
        shapes = _sample_shapes(_image_rng(seed, i), image_size, len(classes))
        objects = [LabeledBox(BoxXYXY(*map(float, s["box"])), s["class_id"]) for s in shapes]
        records.append(ImageRecord(i, f"shapes_{seed}_{i:06d}.png", image_size, image_size, objects, shapes))
    return Dataset(records, list(classes), list(range(1, len(classes) + 1)),
                   loader=lambda rec: render_shapes(rec, seed, classes))
