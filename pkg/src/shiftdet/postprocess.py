"""From head outputs to final detections.

Scores are softmaxed, the background column dropped, and each class
independently thresholded and suppressed; the survivors across classes
are cut to a per-frame budget by score. Regression is class-agnostic,
so every class shares the same decoded box per proposal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as bx
from .errors import ContractError
from .nn import softmax

SCORE_THRESH_EVAL = 0.05
SCORE_THRESH_DEMO = 0.5
NMS_IOU = 0.5
MAX_PER_FRAME = 20


@dataclass(frozen=True)
class Detection:
    """One detected actor on one frame. class_id is 1-based; 0 would be
    background and never appears here. score is the softmax probability
    of class_id."""

    frame_index: int
    box: tuple  # (x1, y1, x2, y2)
    class_id: int
    score: float


def decode_detections(scores: np.ndarray, deltas: np.ndarray, proposals: np.ndarray,
                      frame_index: int, image_hw: tuple,
                      score_thresh: float = SCORE_THRESH_EVAL,
                      nms_iou: float = NMS_IOU,
                      max_per_frame: int = MAX_PER_FRAME) -> list:
    """Turn one frame's head outputs into a score-sorted Detection list.

    scores: [R, C+1] raw logits; deltas: [R, 4]; proposals: [R, 4].
    """
    scores = np.asarray(scores, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] < 2:
        raise ContractError(f"scores must be [R, C+1] with C >= 1, got {scores.shape}")
    R, width = scores.shape
    if R == 0:
        return []
    if deltas.shape != (R, 4):
        raise ContractError(f"deltas shape {deltas.shape}, expected ({R}, 4)")
    props = bx.as_boxes(proposals)
    if props.shape[0] != R:
        raise ContractError(f"{props.shape[0]} proposals for {R} score rows")

    probs = softmax(scores)[:, 1:]  # drop background column
    boxes = bx.clip_boxes(bx.decode_boxes(props, deltas), *image_hw)
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])

    picked = []
    for c in range(probs.shape[1]):
        p = probs[:, c]
        sel = np.flatnonzero((p >= score_thresh) & valid)
        if sel.size == 0:
            continue
        keep = bx.nms(boxes[sel], p[sel], nms_iou)
        for i in sel[keep]:
            picked.append(Detection(frame_index, tuple(boxes[i]), c + 1, float(p[i])))
    picked.sort(key=lambda d: -d.score)
    return picked[:max_per_frame]


def top_detection(detections: list):
    """Highest-scoring detection of one frame; None when empty.

    Exact score ties go to the earliest detection in list order, which
    decode_detections makes deterministic.
    """
    best = None
    for d in detections:
        if best is None or d.score > best.score:
            best = d
    return best
