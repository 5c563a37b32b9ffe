"""Image preprocessing, batched prediction and dataset evaluation."""
import numpy as np
import torch
from PIL import Image, ImageDraw

from .anchors import generate_anchors
from .evaluation import evaluate_ap
from .geometry import BoxXYXY
from .postprocess import Detection, detect


def to_tensor(images) -> torch.Tensor:
    """uint8 HxWx3 arrays (same size) -> float tensor in [-1, 1], NCHW."""
    arr = np.stack(images).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).div_(127.5).sub_(1.0).contiguous()


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[0] == size and image.shape[1] == size:
        return image
    return np.asarray(Image.fromarray(image).resize((size, size), Image.BILINEAR))


def _rescale(det: Detection, sx: float, sy: float) -> Detection:
    b = det.box
    return det._replace(box=BoxXYXY(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy))


@torch.no_grad()
def predict_images(model, images, config, input_size=None, batch_size=16) -> list:
    """Detections per image, in the coordinates of each original image."""
    size = input_size or config.input_size
    anchors = generate_anchors(config, size)
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            batch = to_tensor([resize_image(im, size) for im in chunk])
            cls, box = model(batch)
            dets = detect(cls, box, anchors, [(size, size)] * len(chunk), config.score_threshold,
                          config.top_k, config.nms_iou_threshold)
            for im, d in zip(chunk, dets):
                sx, sy = im.shape[1] / size, im.shape[0] / size
                out.append([_rescale(x, sx, sy) for x in d] if (sx, sy) != (1.0, 1.0) else d)
    finally:
        model.train(was_training)
    return out


def predict_dataset(model, dataset, config, input_size=None, batch_size=16) -> dict:
    results = {}
    for start in range(0, len(dataset), batch_size):
        recs = dataset.records[start:start + batch_size]
        images = [dataset.load_image(r) for r in recs]
        for rec, dets in zip(recs, predict_images(model, images, config, input_size, batch_size)):
            results[rec.image_id] = dets
    return results


def evaluate_model(model, dataset, config, input_size=None):
    dets = predict_dataset(model, dataset, config, input_size)
    return evaluate_ap(dets, dataset.ground_truth(), num_classes=dataset.num_classes,
                       class_names=dataset.class_names)


def draw_detections(image: np.ndarray, dets, class_names=None, min_score=0.3) -> Image.Image:
    im = Image.fromarray(image).convert("RGB")
    draw = ImageDraw.Draw(im)
    for d in dets:
        if d.score < min_score:
            continue
        name = class_names[d.class_id] if class_names else str(d.class_id)
        draw.rectangle(list(d.box), outline=(255, 40, 40), width=2)
        draw.text((d.box.x1 + 2, d.box.y1 + 1), f"{name} {d.score:.2f}", fill=(255, 255, 0))
    return im
