"""Detection losses: cross-entropy with hard negative mining, DIoU, and the
focal / smooth-L1 alternatives.

Class logits carry a background column at index 0; labels use 0 for
background and ``class_id + 1`` for objects.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .anchors import decode
from .geometry import elementwise_iou

EPS = 1e-7


@dataclass
class LossBreakdown:
    classification: torch.Tensor
    localization: torch.Tensor
    total: torch.Tensor
    n_pos: int
    n_neg_selected: int
    fallback: bool = False

    def as_floats(self) -> dict:
        return {
            "cls_loss": float(self.classification.detach()),
            "loc_loss": float(self.localization.detach()),
            "total": float(self.total.detach()),
            "n_pos": self.n_pos,
            "n_neg": self.n_neg_selected,
        }


def _log_probs(logits: torch.Tensor) -> torch.Tensor:
    # probabilities clamped to [EPS, 1 - EPS]
    return F.log_softmax(logits, dim=-1).clamp(min=torch.log(torch.tensor(EPS)).item(),
                                              max=torch.log1p(torch.tensor(-EPS)).item())


def hard_negative_mask(background_loss: torch.Tensor, labels: torch.Tensor, pos_neg_ratio: float = 6.0) -> torch.Tensor:
    """Top ``min(ratio * max(N_pos, 1), N_neg)`` negatives by background loss.

    Operates on one row (1-D) of anchors; ties resolve to the lower index.
    """
    neg = labels == 0
    n_pos = int((labels > 0).sum())
    n_neg = int(neg.sum())
    k = min(int(pos_neg_ratio * max(n_pos, 1)), n_neg)
    mask = torch.zeros_like(neg)
    if k == 0:
        return mask
    score = torch.where(neg, background_loss.detach(), torch.full_like(background_loss, -float("inf")))
    order = torch.sort(score, descending=True, stable=True).indices
    mask[order[:k]] = True
    return mask


def classification_loss(cls_logits, labels, pos_neg_ratio=6.0, negative_coefficient=0.5,
                        mining_scope="image", return_mask=False):
    """Summed cross-entropy over positives plus weighted mined negatives.

    ``cls_logits`` is ``(B, N, K+1)`` or ``(N, K+1)``; ``labels`` matches the
    leading dims. The result is not normalised (division by N happens once in
    :func:`total_loss`).
    """
    if cls_logits.dim() == 2:
        cls_logits, labels = cls_logits[None], labels[None]
    logp = _log_probs(cls_logits)
    nll = -logp.gather(-1, labels.clamp(min=0)[..., None]).squeeze(-1)
    background = -logp[..., 0]
    if mining_scope == "batch":
        neg_mask = hard_negative_mask(background.reshape(-1), labels.reshape(-1), pos_neg_ratio).reshape(labels.shape)
    else:
        neg_mask = torch.stack([hard_negative_mask(background[i], labels[i], pos_neg_ratio)
                                for i in range(labels.shape[0])])
    pos_mask = labels > 0
    loss = nll[pos_mask].sum() + negative_coefficient * background[neg_mask].sum()
    if return_mask:
        return loss, neg_mask
    return loss


def focal_loss(cls_logits, labels, alpha=0.25, gamma=2.0):
    """Softmax focal loss over every anchor, no mining: sum of -alpha (1-p)^gamma log p."""
    logp = _log_probs(cls_logits)
    logp_t = logp.gather(-1, labels.clamp(min=0)[..., None]).squeeze(-1)
    p_t = logp_t.exp()
    return (-alpha * (1 - p_t).pow(gamma) * logp_t).sum()


def diou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Elementwise ``1 - IoU + center_dist^2 / enclosing_diag^2`` for xyxy boxes."""
    iou = elementwise_iou(pred, gt)
    pc = (pred[..., :2] + pred[..., 2:]) / 2
    gc = (gt[..., :2] + gt[..., 2:]) / 2
    rho2 = ((pc - gc) ** 2).sum(-1)
    lt = torch.minimum(pred[..., :2], gt[..., :2])
    rb = torch.maximum(pred[..., 2:], gt[..., 2:])
    c2 = ((rb - lt) ** 2).sum(-1)
    safe = torch.where(c2 > 0, c2, torch.ones_like(c2))
    penalty = torch.where(c2 > 0, rho2 / safe, torch.zeros_like(rho2))
    return 1 - iou + penalty


def smooth_l1_loss(pred_offsets: torch.Tensor, target_offsets: torch.Tensor) -> torch.Tensor:
    return F.smooth_l1_loss(pred_offsets, target_offsets, beta=1.0, reduction="sum")


def total_loss(cls_logits, box_offsets, anchor_boxes, labels, gt_boxes, targets=None, a=1.0,
               cls_loss="ce_hnm", loc_loss="diou", pos_neg_ratio=6.0, negative_coefficient=0.5,
               mining_scope="image", focal_alpha=0.25, focal_gamma=2.0) -> LossBreakdown:
    """``(CE + a * LOC) / N`` with N the batch positive count (1 when there are none).

    ``labels`` is ``(B, N)``; ``gt_boxes`` / ``targets`` are ``(B, N, 4)``
    matched boxes / encoded offsets (only positive rows are read).
    """
    if cls_logits.dim() == 2:
        cls_logits, box_offsets, labels, gt_boxes = cls_logits[None], box_offsets[None], labels[None], gt_boxes[None]
        targets = targets[None] if targets is not None else None
    pos = labels > 0
    n_pos = int(pos.sum())
    if cls_loss == "focal":
        ce = focal_loss(cls_logits, labels, focal_alpha, focal_gamma)
        n_neg = int((labels == 0).sum())
    else:
        ce, neg_mask = classification_loss(cls_logits, labels, pos_neg_ratio, negative_coefficient,
                                           mining_scope, return_mask=True)
        n_neg = int(neg_mask.sum())
    if n_pos == 0:
        loc = box_offsets.sum() * 0.0
    elif loc_loss == "smooth_l1":
        loc = smooth_l1_loss(box_offsets[pos], targets[pos])
    else:
        anchors = anchor_boxes.to(box_offsets.dtype).expand(box_offsets.shape[0], -1, -1)
        pred_boxes = decode(box_offsets[pos], anchors[pos])
        loc = diou_loss(pred_boxes, gt_boxes[pos].to(box_offsets.dtype)).sum()
    n = max(n_pos, 1)
    total = (ce + a * loc) / n
    return LossBreakdown(ce, loc, total, n_pos, n_neg, fallback=n_pos == 0)
