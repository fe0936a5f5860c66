"""Axis-aligned box geometry.

Boxes are rows of (x1, y1, x2, y2) in continuous pixel coordinates with
x2 > x1 and y2 > y1, kept in plain float arrays of shape [N,4]. Area is
(x2-x1)*(y2-y1) with no +1 convention, used consistently by IoU, the
box encoding, and evaluation.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

# Decoded log-size deltas are clamped here so a wild regression output
# cannot inflate a box past ~1000/16 times its anchor.
LOG_DELTA_CLAMP = float(np.log(1000.0 / 16.0))


def as_boxes(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64)
    if b.ndim == 1 and b.size == 4:
        b = b[None, :]
    if b.ndim != 2 or b.shape[1] != 4:
        raise ContractError(f"expected [N,4] boxes, got shape {b.shape}")
    return b


def validate(boxes: np.ndarray, what: str = "box"):
    b = as_boxes(boxes)
    if b.size and ((b[:, 2] <= b[:, 0]).any() or (b[:, 3] <= b[:, 1]).any()):
        raise ContractError(f"degenerate {what}: x2 <= x1 or y2 <= y1")
    return b


def area(boxes: np.ndarray) -> np.ndarray:
    b = as_boxes(boxes)
    return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])


def iou(a, b) -> float:
    """Intersection-over-union of two single boxes."""
    a = validate(a)[0]
    b = validate(b)[0]
    return float(pairwise_iou(a[None], b[None])[0, 0])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix [len(a), len(b)]; disjoint pairs give 0."""
    a = as_boxes(a)
    b = as_boxes(b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = area(a)[:, None] + area(b)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def encode_boxes(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row regression deltas (dx/wa, dy/ha, log(w/wa), log(h/ha))."""
    a = validate(anchors, "anchor")
    t = validate(targets, "target")
    if a.shape != t.shape:
        raise ContractError(f"anchor/target count mismatch: {a.shape} vs {t.shape}")
    wa, ha = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    wt, ht = t[:, 2] - t[:, 0], t[:, 3] - t[:, 1]
    dx = ((t[:, 0] + t[:, 2]) - (a[:, 0] + a[:, 2])) / 2 / wa
    dy = ((t[:, 1] + t[:, 3]) - (a[:, 1] + a[:, 3])) / 2 / ha
    return np.stack([dx, dy, np.log(wt / wa), np.log(ht / ha)], axis=1)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Invert encode_boxes; log-size deltas are clamped (see LOG_DELTA_CLAMP)."""
    a = validate(anchors, "anchor")
    d = np.asarray(deltas, dtype=np.float64)
    if d.shape != a.shape:
        raise ContractError(f"anchor/delta shape mismatch: {a.shape} vs {d.shape}")
    wa, ha = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
    cx = (a[:, 0] + a[:, 2]) / 2 + d[:, 0] * wa
    cy = (a[:, 1] + a[:, 3]) / 2 + d[:, 1] * ha
    w = wa * np.exp(np.clip(d[:, 2], -LOG_DELTA_CLAMP, LOG_DELTA_CLAMP))
    h = ha * np.exp(np.clip(d[:, 3], -LOG_DELTA_CLAMP, LOG_DELTA_CLAMP))
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def clip_boxes(boxes: np.ndarray, height: float, width: float) -> np.ndarray:
    b = as_boxes(boxes).copy()
    b[:, 0::2] = np.clip(b[:, 0::2], 0, width)
    b[:, 1::2] = np.clip(b[:, 1::2], 0, height)
    return b


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Greedy non-maximum suppression.

    Returns indices of kept boxes in descending score order; a box is
    suppressed when its IoU with an already-kept box exceeds iou_thresh.
    Equal scores are broken by lower original index, which makes the
    result deterministic.
    """
    b = as_boxes(boxes)
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (b.shape[0],):
        raise ContractError(f"scores shape {s.shape} does not match {b.shape[0]} boxes")
    order = np.argsort(-s, kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        if order.size == 1:
            break
        rest = order[1:]
        ious = pairwise_iou(b[i][None], b[rest])[0]
        order = rest[ious <= iou_thresh]
    return np.asarray(keep, dtype=np.intp)
