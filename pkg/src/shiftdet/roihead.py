"""Per-region classification stage.

Proposals from the RPN are aligned to fixed 7x7 feature patches by
bilinear sampling (no coordinate rounding), flattened through two fully
connected layers, and split into action scores over C+1 classes
(index 0 = background) and four class-agnostic box deltas.

Box regression is gated on foreground: background rois have no target
box, so only rois matched to a ground-truth actor contribute to the
smooth-L1 term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import boxes as bx
from . import nn
from .errors import ContractError, NumericError
from .nn import ParamStore, Tensor

ALIGN_SIZE = 7
SAMPLING_RATIO = 2

FG_IOU = 0.5
ROIS_PER_FRAME = 64
FG_FRACTION = 0.25


def roi_align(features: Tensor, rois: np.ndarray, spatial_scale: float,
              out_size: int = ALIGN_SIZE, sampling_ratio: int = SAMPLING_RATIO) -> Tensor:
    """Crop each roi from a [1,C,Hf,Wf] map into [R,C,out,out].

    Rois are pixel-coordinate boxes; multiplying by spatial_scale maps
    them onto the feature grid. Every output bin averages
    sampling_ratio^2 bilinear samples taken at regular offsets inside
    the bin. Sample points outside the grid clamp to the border.
    Differentiable w.r.t. features (rois are constants).
    """
    if features.data.ndim != 4 or features.data.shape[0] != 1:
        raise ContractError(f"roi_align expects [1,C,Hf,Wf], got {features.data.shape}")
    r = bx.as_boxes(rois)
    if r.shape[0] == 0:
        _, C = features.data.shape[:2]
        return Tensor(np.zeros((0, C, out_size, out_size), dtype=features.data.dtype))
    if ((r[:, 2] - r[:, 0]) <= 0).any() or ((r[:, 3] - r[:, 1]) <= 0).any():
        raise ContractError("degenerate roi (zero area)")
    _, C, Hf, Wf = features.data.shape
    R = r.shape[0]
    s = sampling_ratio

    fx1, fy1 = r[:, 0] * spatial_scale, r[:, 1] * spatial_scale
    bw = (r[:, 2] - r[:, 0]) * spatial_scale / out_size
    bh = (r[:, 3] - r[:, 1]) * spatial_scale / out_size
    # sample center offsets within a bin, as fractions of the bin
    frac = (np.arange(s) + 0.5) / s
    # y coords: [R, out, s] -> broadcast later
    by = fy1[:, None, None] + (np.arange(out_size)[None, :, None] + frac[None, None, :]) * bh[:, None, None]
    bxs = fx1[:, None, None] + (np.arange(out_size)[None, :, None] + frac[None, None, :]) * bw[:, None, None]
    # full grids [R, out, s, out, s] for (y, x)
    ys = np.broadcast_to(by[:, :, :, None, None], (R, out_size, s, out_size, s))
    xs = np.broadcast_to(bxs[:, None, None, :, :], (R, out_size, s, out_size, s))

    yc = np.clip(ys, 0.0, Hf - 1.0)
    xc = np.clip(xs, 0.0, Wf - 1.0)
    y0 = np.floor(yc).astype(np.intp)
    x0 = np.floor(xc).astype(np.intp)
    y1 = np.minimum(y0 + 1, Hf - 1)
    x1 = np.minimum(x0 + 1, Wf - 1)
    ly = (yc - y0).astype(features.data.dtype)
    lx = (xc - x0).astype(features.data.dtype)
    corners = (
        (y0, x0, (1 - ly) * (1 - lx)),
        (y0, x1, (1 - ly) * lx),
        (y1, x0, ly * (1 - lx)),
        (y1, x1, ly * lx),
    )

    flat = features.data[0].reshape(C, Hf * Wf)
    acc = np.zeros((R, out_size, s, out_size, s, C), dtype=features.data.dtype)
    for yi, xi, w in corners:
        acc += flat[:, (yi * Wf + xi).ravel()].T.reshape(w.shape + (C,)) * w[..., None]
    out_data = acc.mean(axis=(2, 4))  # average the s*s samples per bin
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))  # [R,C,out,out]

    def backward(g):
        if not features.requires_grad:
            return
        # scatter as a dense matmul: the feature grid is small, so an
        # interpolation matrix [cells, samples] beats indexed adds
        n = R * out_size * out_size * s * s
        m = np.zeros((Hf * Wf, n), dtype=features.data.dtype)
        sample_ids = np.arange(n)
        for yi, xi, w in corners:
            np.add.at(m.ravel(), (yi * Wf + xi).ravel() * n + sample_ids,
                      w.ravel())
        gs = g.transpose(0, 2, 3, 1)[:, :, None, :, None, :] / (s * s)
        gs_rows = np.broadcast_to(
            gs, (R, out_size, s, out_size, s, C)).reshape(n, C)
        dflat = m @ gs_rows
        features._accumulate(dflat.T.reshape(1, C, Hf, Wf))

    return nn._make(out_data, (features,), backward)


def param_specs(feat_channels: int, num_classes: int, hidden: int = 256) -> list:
    d = feat_channels * ALIGN_SIZE * ALIGN_SIZE
    return [
        ("head.fc1.w", (hidden, d), "linear_w"),
        ("head.fc1.b", (hidden,), "bias"),
        ("head.fc2.w", (hidden, hidden), "linear_w"),
        ("head.fc2.b", (hidden,), "bias"),
        ("head.cls.w", (num_classes + 1, hidden), "cls_w"),
        ("head.cls.b", (num_classes + 1,), "head_cls_b"),
        ("head.reg.w", (4, hidden), "reg_w"),
        ("head.reg.b", (4,), "bias"),
    ]


def rcnn_forward(aligned: Tensor, store: ParamStore) -> tuple:
    """[R,C,7,7] -> (class scores [R,C_cls+1], box deltas [R,4])."""
    R = aligned.shape[0]
    if R < 1:
        raise ContractError("rcnn_forward needs at least one roi")
    x = nn.reshape(aligned, (R, int(np.prod(aligned.shape[1:]))))
    x = nn.relu(nn.linear(x, store["head.fc1.w"], store["head.fc1.b"]))
    x = nn.relu(nn.linear(x, store["head.fc2.w"], store["head.fc2.b"]))
    scores = nn.linear(x, store["head.cls.w"], store["head.cls.b"])
    deltas = nn.linear(x, store["head.reg.w"], store["head.reg.b"])
    return scores, deltas


@dataclass
class RoiSample:
    """One frame's sampled training rois.

    labels: class index per roi, 0 for background; targets: encoded box
    deltas, zero rows for background.
    """

    rois: np.ndarray
    labels: np.ndarray
    targets: np.ndarray

    @property
    def fg_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels > 0)

    def __len__(self):
        return self.rois.shape[0]


def sample_rois(proposals: np.ndarray, gt_boxes: np.ndarray, gt_classes: np.ndarray,
                rng: np.random.Generator, batch_size: int = ROIS_PER_FRAME,
                fg_fraction: float = FG_FRACTION, fg_iou: float = FG_IOU) -> RoiSample:
    """Pick a stage-two minibatch for one frame.

    Ground-truth boxes join the proposal pool first, so foreground can
    never be empty when the frame has actors. Rois with best IoU >=
    fg_iou take their matched gt's class and encoded box; the rest are
    background (class 0, no box target).
    """
    props = bx.as_boxes(proposals) if len(proposals) else np.zeros((0, 4))
    gt = bx.as_boxes(gt_boxes) if len(gt_boxes) else np.zeros((0, 4))
    classes = np.asarray(gt_classes, dtype=np.intp)
    if gt.shape[0] != classes.shape[0]:
        raise ContractError(f"{gt.shape[0]} gt boxes vs {classes.shape[0]} labels")
    if classes.size and (classes < 1).any():
        raise ContractError("gt classes must be >= 1 (0 is background)")

    pool = np.vstack([props, gt]) if gt.size else props
    n = pool.shape[0]
    if n == 0:
        return RoiSample(np.zeros((0, 4)), np.zeros(0, dtype=np.intp), np.zeros((0, 4)))

    if gt.size:
        ious = bx.pairwise_iou(pool, gt)
        best = ious.max(axis=1)
        match = ious.argmax(axis=1)
    else:
        best = np.zeros(n)
        match = np.zeros(n, dtype=np.intp)

    fg_pool = np.flatnonzero(best >= fg_iou)
    bg_pool = np.flatnonzero(best < fg_iou)
    n_fg = min(len(fg_pool), int(round(batch_size * fg_fraction)))
    if len(fg_pool) > n_fg:
        fg_pool = np.sort(rng.choice(fg_pool, size=n_fg, replace=False))
    n_bg = min(len(bg_pool), batch_size - n_fg)
    if len(bg_pool) > n_bg:
        bg_pool = np.sort(rng.choice(bg_pool, size=n_bg, replace=False))

    picked = np.concatenate([fg_pool, bg_pool])
    rois = pool[picked]
    labels = np.zeros(len(picked), dtype=np.intp)
    targets = np.zeros((len(picked), 4))
    nf = len(fg_pool)
    if nf:
        matched = match[fg_pool]
        labels[:nf] = classes[matched]
        targets[:nf] = bx.encode_boxes(rois[:nf], gt[matched])
    return RoiSample(rois, labels, targets)


def rcnn_loss(scores: Tensor, deltas: Tensor, frame_samples: list,
              parts: dict | None = None) -> Tensor:
    """Mean class cross-entropy plus foreground box loss, frame-averaged.

    scores/deltas hold the concatenation of all frames' rois in
    frame_samples order; empty frames contribute zero. When given,
    `parts` receives the frame-averaged "cls"/"reg" floats for logging.
    """
    K = len(frame_samples)
    if K == 0:
        raise ContractError("rcnn_loss needs at least one frame")
    total_rois = sum(len(s) for s in frame_samples)
    if scores.shape[0] != total_rois:
        raise ContractError(
            f"{scores.shape[0]} score rows for {total_rois} sampled rois"
        )
    terms = []
    cls_sum = reg_sum = 0.0
    offset = 0
    for sample in frame_samples:
        R = len(sample)
        if R == 0:
            continue
        rows = np.arange(offset, offset + R)
        term = nn.softmax_cross_entropy(nn.take(scores, rows), sample.labels)
        cls_sum += float(term.data)
        fg = sample.fg_indices
        if fg.size:
            pred = nn.take(deltas, offset + fg)
            tgt = Tensor(sample.targets[fg].astype(deltas.dtype))
            reg = nn.smooth_l1(pred, tgt)
            reg_sum += float(reg.data)
            term = nn.add(term, reg)
        terms.append(term)
        offset += R
    if parts is not None:
        parts["cls"] = cls_sum / K
        parts["reg"] = reg_sum / K
    if not terms:
        return Tensor(np.zeros((), dtype=scores.dtype))
    total = terms[0]
    for t in terms[1:]:
        total = nn.add(total, t)
    return nn.scale(total, 1.0 / K)


def total_loss(rpn_term: Tensor, rcnn_term: Tensor) -> Tensor:
    """Unweighted sum of the two stage losses."""
    for name, t in (("rpn", rpn_term), ("rcnn", rcnn_term)):
        if not np.isfinite(t.data).all():
            raise NumericError(f"non-finite {name} loss")
    return nn.add(rpn_term, rcnn_term)
