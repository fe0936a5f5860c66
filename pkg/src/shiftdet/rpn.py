"""Region proposal stage.

A dense grid of anchor boxes is scored for "contains an actor" and
regressed toward the nearest ground-truth box. Anchors are laid out in
a fixed flattened order — cell-major, (i*Wf + j)*A + a — which the head
outputs, the loss, and proposal selection all share.

The head is a 3x3 conv over the backbone features followed by two 1x1
sibling convs: 2 logits (background/action) and 4 box deltas per anchor.
Channel layout per cell is anchor-major: anchor a's logits live in
channels [2a, 2a+2) and its deltas in [4a, 4a+4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as bx
from . import nn
from .errors import ContractError
from .nn import ParamStore, Tensor

# Anchor assignment thresholds: above the first an anchor is positive,
# below the second it is negative, in between it is ignored.
POSITIVE_IOU = 0.7
NEGATIVE_IOU = 0.3
ARGMAX_TIE_TOL = 1e-9

PRE_NMS_POOL = 2000
NMS_IOU = 0.7
MIN_SIDE = 1.0
PROPOSAL_CAP = {"train": 256, "infer": 300}


@dataclass(frozen=True)
class AnchorGrid:
    """All anchors for one feature-map geometry."""

    boxes: np.ndarray  # [Hf*Wf*A, 4], flattened (i*Wf + j)*A + a
    scales: tuple
    ratios: tuple
    stride: int
    height: int  # Hf
    width: int  # Wf

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)

    def __len__(self):
        return self.boxes.shape[0]


def generate_anchors(height: int, width: int, stride: int,
                     scales=(2, 4, 8), ratios=(0.5, 1.0, 2.0)) -> AnchorGrid:
    """One anchor per (cell, scale, ratio).

    The anchor for cell (i,j) is centered at ((j+0.5)*stride,
    (i+0.5)*stride) with area (scale*stride)^2; the aspect ratio r
    reshapes it at constant area so width/height == r.
    """
    if height <= 0 or width <= 0 or stride <= 0:
        raise ContractError(f"invalid grid geometry {height}x{width}, stride {stride}")
    shapes = []
    for s in scales:
        size = float(s * stride)
        for r in ratios:
            w = size * np.sqrt(r)
            h = size / np.sqrt(r)
            shapes.append((w, h))
    shapes = np.asarray(shapes)  # [A,2]
    cy = (np.arange(height) + 0.5) * stride
    cx = (np.arange(width) + 0.5) * stride
    centers = np.stack(
        [np.repeat(cx[None, :], height, 0), np.repeat(cy[:, None], width, 1)], axis=-1
    ).reshape(-1, 1, 2)  # [Hf*Wf, 1, (x,y)]
    half = shapes[None, :, :] / 2  # [1, A, (w,h)]
    out = np.concatenate([centers - half, centers + half], axis=-1).reshape(-1, 4)
    return AnchorGrid(out, tuple(scales), tuple(ratios), int(stride),
                      int(height), int(width))


@dataclass
class AnchorLabels:
    """Assignment of one frame's anchors to its ground-truth boxes.

    labels: 1 positive, 0 negative, -1 ignored; matched_gt: index of the
    best-overlapping gt for positives (-1 elsewhere); targets: encoded
    regression deltas, zero rows for non-positives.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    targets: np.ndarray

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)


def assign_anchors(grid: AnchorGrid, gt_boxes) -> AnchorLabels:
    """Label anchors against one frame's ground truth.

    Positive: the best-overlapping anchor of some gt (ties within 1e-9
    share the honour, provided the overlap is nonzero), or any anchor
    with IoU above POSITIVE_IOU. Negative: every overlap below
    NEGATIVE_IOU. Anything else is ignored. With no gt at all, every
    anchor is negative.
    """
    n = len(grid)
    gt = bx.as_boxes(gt_boxes) if gt_boxes is not None and len(gt_boxes) else None
    labels = np.zeros(n, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.intp)
    targets = np.zeros((n, 4))
    if gt is None:
        return AnchorLabels(labels, matched, targets)

    ious = bx.pairwise_iou(grid.boxes, gt)  # [n, G]
    best_iou = ious.max(axis=1)
    best_gt = ious.argmax(axis=1)

    labels[:] = -1
    labels[best_iou < NEGATIVE_IOU] = 0
    positive = best_iou > POSITIVE_IOU
    gt_best = ious.max(axis=0)  # [G]
    for g in range(gt.shape[0]):
        if gt_best[g] > 0:
            positive |= (ious[:, g] >= gt_best[g] - ARGMAX_TIE_TOL) & (ious[:, g] > 0)
    labels[positive] = 1
    matched[positive] = best_gt[positive]
    if positive.any():
        targets[positive] = bx.encode_boxes(grid.boxes[positive], gt[best_gt[positive]])
    return AnchorLabels(labels, matched, targets)


def param_specs(feat_channels: int, anchors_per_cell: int) -> list:
    a = anchors_per_cell
    return [
        ("rpn.conv.w", (feat_channels, feat_channels, 3, 3), "conv_w"),
        ("rpn.conv.b", (feat_channels,), "bias"),
        ("rpn.cls.w", (2 * a, feat_channels, 1, 1), "cls_w"),
        ("rpn.cls.b", (2 * a,), "rpn_cls_b"),
        ("rpn.reg.w", (4 * a, feat_channels, 1, 1), "reg_w"),
        ("rpn.reg.b", (4 * a,), "bias"),
    ]


def rpn_forward(features: Tensor, store: ParamStore) -> tuple:
    """[K,C,Hf,Wf] -> logits [K,2A,Hf,Wf], deltas [K,4A,Hf,Wf]."""
    h = nn.relu(nn.conv2d(features, store["rpn.conv.w"], store["rpn.conv.b"],
                          stride=1, padding=1))
    logits = nn.conv2d(h, store["rpn.cls.w"], store["rpn.cls.b"])
    deltas = nn.conv2d(h, store["rpn.reg.w"], store["rpn.reg.b"])
    return logits, deltas


def flatten_head(t: Tensor, per_anchor: int) -> Tensor:
    """[K, A*per_anchor, Hf, Wf] -> [K*Hf*Wf*A, per_anchor] in grid order."""
    K, C, H, W = t.shape
    a = C // per_anchor
    t = nn.reshape(t, (K, a, per_anchor, H, W))
    t = nn.transpose(t, (0, 3, 4, 1, 2))  # K, H, W, A, per_anchor
    return nn.reshape(t, (K * H * W * a, per_anchor))


def sample_anchor_minibatch(labels: AnchorLabels, sample_size: int,
                            rng: np.random.Generator) -> tuple:
    """Pick up to sample_size anchors for the loss, at most half positive.

    Returns (sampled positive indices, sampled negative indices); either
    may be empty. Selection order is rng-driven but deterministic for a
    given generator state.
    """
    pos = labels.positive_indices
    neg = labels.negative_indices
    n_pos = min(len(pos), sample_size // 2)
    if len(pos) > n_pos:
        pos = rng.choice(pos, size=n_pos, replace=False)
        pos.sort()
    n_neg = min(len(neg), sample_size - n_pos)
    if len(neg) > n_neg:
        neg = rng.choice(neg, size=n_neg, replace=False)
        neg.sort()
    return pos, neg


def rpn_loss(logits: Tensor, deltas: Tensor, frame_labels: list,
             sample_size: int, rng: np.random.Generator,
             parts: dict | None = None) -> Tensor:
    """Actionness + box loss, averaged over frames.

    Per frame: mean cross-entropy over a sampled anchor minibatch plus
    mean smooth-L1 over the sampled positives (zero when there are none,
    so regression is inactive exactly when no anchor is positive).
    When given, `parts` receives the frame-averaged "cls"/"reg"
    components as plain floats for logging.
    """
    K = logits.shape[0]
    if len(frame_labels) != K:
        raise ContractError(f"{len(frame_labels)} label sets for {K} frames")
    n = len(frame_labels[0].labels)
    flat_logits = flatten_head(logits, 2)
    flat_deltas = flatten_head(deltas, 4)

    terms = []
    cls_sum = reg_sum = 0.0
    for f, labels in enumerate(frame_labels):
        pos, neg = sample_anchor_minibatch(labels, sample_size, rng)
        sampled = np.concatenate([pos, neg]).astype(np.intp)
        if sampled.size == 0:
            continue
        cls_targets = np.concatenate([np.ones(len(pos), dtype=np.intp),
                                      np.zeros(len(neg), dtype=np.intp)])
        picked = nn.take(flat_logits, f * n + sampled)
        term = nn.softmax_cross_entropy(picked, cls_targets)
        cls_sum += float(term.data)
        if len(pos):
            pred = nn.take(flat_deltas, f * n + pos)
            tgt = Tensor(labels.targets[pos].astype(flat_deltas.dtype))
            reg = nn.smooth_l1(pred, tgt)
            reg_sum += float(reg.data)
            term = nn.add(term, reg)
        terms.append(term)
    if parts is not None:
        parts["cls"] = cls_sum / K
        parts["reg"] = reg_sum / K
    if not terms:
        return Tensor(np.zeros((), dtype=logits.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = nn.add(total, t)
    return nn.scale(total, 1.0 / K)


def select_proposals(logits: np.ndarray, deltas: np.ndarray, grid: AnchorGrid,
                     mode: str, image_hw: tuple) -> list:
    """Decode, filter, and NMS each frame's anchors into proposals.

    logits/deltas are plain arrays shaped [K,2A,Hf,Wf] / [K,4A,Hf,Wf]
    (proposals do not carry gradient). Returns one (boxes [M,4],
    scores [M]) pair per frame, score-descending, M <= the mode's cap.
    """
    if mode not in PROPOSAL_CAP:
        raise ContractError(f"mode must be train|infer, got {mode!r}")
    cap = PROPOSAL_CAP[mode]
    K = logits.shape[0]
    a = grid.anchors_per_cell
    H, W = image_hw
    out = []
    for f in range(K):
        lg = logits[f].reshape(a, 2, grid.height, grid.width)
        lg = lg.transpose(2, 3, 0, 1).reshape(-1, 2)
        scores = nn.softmax(lg.astype(np.float64))[:, 1]
        dl = deltas[f].reshape(a, 4, grid.height, grid.width)
        dl = dl.transpose(2, 3, 0, 1).reshape(-1, 4)

        order = np.argsort(-scores, kind="stable")[:PRE_NMS_POOL]
        decoded = bx.decode_boxes(grid.boxes[order], dl[order])
        decoded = bx.clip_boxes(decoded, H, W)
        wide = ((decoded[:, 2] - decoded[:, 0]) >= MIN_SIDE) & (
            (decoded[:, 3] - decoded[:, 1]) >= MIN_SIDE
        )
        decoded = decoded[wide]
        kept_scores = scores[order][wide]
        keep = bx.nms(decoded, kept_scores, NMS_IOU)[:cap]
        out.append((decoded[keep], kept_scores[keep]))
    return out
