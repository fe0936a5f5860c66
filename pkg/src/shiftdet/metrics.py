"""Detection quality metrics.

Frame-level evaluation in the PASCAL VOC style: detections are matched
greedily per class in descending score order, each consuming at most one
ground-truth box; average precision is the all-points area under the
interpolated precision-recall curve. On top of that sit an IoU-gated
confusion matrix (one row per class, final column = missed) and the
frame-level fall screening rates (sensitivity / specificity / accuracy
as percentages).

Matching for mAP uses IoU >= iou_thresh; the confusion matrix follows
the stricter convention that a detection only counts as hitting a region
when IoU > 0.5, with ties at exactly 0.5 falling to the missed column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import boxes as bx
from .errors import ContractError

MATCH_IOU = 0.5


@dataclass
class FallMetrics:
    """Frame-level binary screening counts and rates (percent).

    A frame counts TP when a fall frame is predicted fall, TN when a
    non-fall frame is predicted non-fall; rates are None when their
    denominator is empty.
    """

    tp: int
    tn: int
    fp: int
    fn: int
    sensitivity: float | None
    specificity: float | None
    accuracy: float | None


@dataclass
class MetricsReport:
    per_class_ap: dict
    mean_ap: float
    pr_curves: dict  # class id -> (recalls, precisions)
    confusion: np.ndarray  # [C, C+1], last column = missed
    gt_counts: dict
    fall: FallMetrics | None = None


def match_detections(frame_dets: list, frame_gts: list, num_classes: int,
                     iou_thresh: float = MATCH_IOU) -> tuple:
    """Greedy VOC matching.

    frame_dets: per frame, a list of Detection objects. frame_gts: per
    frame, a (boxes [G,4], labels [G]) pair. Returns
    ({class -> (scores desc, tp flags)}, {class -> gt count}).

    Per class, detections across all frames are sorted by descending
    score (ties broken by frame then by within-frame order, so the
    result is order-independent); each one matches the highest-IoU
    unmatched ground truth of its class on its frame if that IoU clears
    iou_thresh, else it is a false positive.
    """
    if len(frame_dets) != len(frame_gts):
        raise ContractError(
            f"{len(frame_dets)} detection frames vs {len(frame_gts)} gt frames"
        )
    per_class = {}
    gt_counts = {c: 0 for c in range(1, num_classes + 1)}
    entries = {c: [] for c in range(1, num_classes + 1)}  # (score, frame, pos, det)
    for f, dets in enumerate(frame_dets):
        for pos, d in enumerate(dets):
            if not (1 <= d.class_id <= num_classes):
                raise ContractError(f"detection class {d.class_id} out of range")
            entries[d.class_id].append((d.score, f, pos, d))
    for f, (gtb, gtl) in enumerate(frame_gts):
        for lab in np.asarray(gtl, dtype=np.intp):
            if not (1 <= lab <= num_classes):
                raise ContractError(f"gt class {lab} out of range")
            gt_counts[int(lab)] += 1

    for c in range(1, num_classes + 1):
        rows = sorted(entries[c], key=lambda e: (-e[0], e[1], e[2]))
        matched = {}  # frame -> bool array over that frame's class-c gts
        scores = np.array([e[0] for e in rows])
        tp = np.zeros(len(rows), dtype=bool)
        for i, (_, f, _, d) in enumerate(rows):
            gtb, gtl = frame_gts[f]
            gtb = bx.as_boxes(gtb) if len(gtb) else np.zeros((0, 4))
            sel = np.flatnonzero(np.asarray(gtl, dtype=np.intp) == c)
            if sel.size == 0:
                continue
            if f not in matched:
                matched[f] = np.zeros(sel.size, dtype=bool)
            ious = bx.pairwise_iou(np.asarray(d.box)[None], gtb[sel])[0]
            ious = np.where(matched[f], -1.0, ious)
            j = int(ious.argmax())
            if ious[j] >= iou_thresh:
                tp[i] = True
                matched[f][j] = True
        per_class[c] = (scores, tp)
    return per_class, gt_counts


def pr_curve(tp_flags: np.ndarray, num_gt: int) -> tuple:
    """Cumulative (recalls, precisions) along the score-sorted flags."""
    tp_flags = np.asarray(tp_flags, dtype=bool)
    n = len(tp_flags)
    if n == 0:
        return np.zeros(0), np.zeros(0)
    cum_tp = np.cumsum(tp_flags)
    precisions = cum_tp / np.arange(1, n + 1)
    recalls = cum_tp / num_gt if num_gt > 0 else np.zeros(n)
    return recalls, precisions


def average_precision(tp_flags, num_gt: int, eleven_point: bool = False):
    """Area under the interpolated precision-recall curve.

    tp_flags must already be in descending-score order. Returns 0.0 when
    there are detections but no ground truth, and None when the class has
    neither (nothing to measure). eleven_point switches to the older
    11-recall-point average.
    """
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if num_gt < 0:
        raise ContractError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return 0.0 if len(tp_flags) else None
    rec, prec = pr_curve(tp_flags, num_gt)
    if eleven_point:
        if len(rec) == 0:
            return 0.0
        total = 0.0
        for r in np.linspace(0.0, 1.0, 11):
            mask = rec >= r - 1e-12
            total += prec[mask].max() if mask.any() else 0.0
        return float(total / 11)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def frame_map(frame_dets: list, frame_gts: list, num_classes: int,
              iou_thresh: float = MATCH_IOU) -> MetricsReport:
    """Per-class AP and their mean over classes present in ground truth."""
    per_class, gt_counts = match_detections(frame_dets, frame_gts, num_classes,
                                            iou_thresh)
    per_class_ap = {}
    curves = {}
    present = []
    for c, (scores, tp) in per_class.items():
        ap = average_precision(tp, gt_counts[c])
        per_class_ap[c] = ap
        curves[c] = pr_curve(tp, gt_counts[c])
        if gt_counts[c] > 0:
            present.append(ap)
    mean_ap = float(np.mean(present)) if present else 0.0
    confusion = confusion_matrix(frame_dets, frame_gts, num_classes)
    return MetricsReport(per_class_ap, mean_ap, curves, confusion, gt_counts)


def confusion_matrix(frame_dets: list, frame_gts: list, num_classes: int) -> np.ndarray:
    """[C, C+1] counts: rows = gt class, columns = predicted class with a
    final column for misses.

    Each ground truth looks at its best-IoU detection on the frame
    (any class). Strictly above 0.5 IoU it lands in that detection's
    class column; otherwise (including no detections) in the last
    column.
    """
    cm = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
    for dets, (gtb, gtl) in zip(frame_dets, frame_gts):
        gtb = bx.as_boxes(gtb) if len(gtb) else np.zeros((0, 4))
        gtl = np.asarray(gtl, dtype=np.intp)
        det_boxes = np.array([d.box for d in dets]) if dets else np.zeros((0, 4))
        for g in range(gtb.shape[0]):
            row = gtl[g] - 1
            if det_boxes.shape[0] == 0:
                cm[row, num_classes] += 1
                continue
            ious = bx.pairwise_iou(gtb[g][None], det_boxes)[0]
            j = int(ious.argmax())
            if ious[j] > 0.5:
                cm[row, dets[j].class_id - 1] += 1
            else:
                cm[row, num_classes] += 1
    return cm


def fall_metrics(predicted: list, actual: list, positive_class: int) -> FallMetrics:
    """Frame-level screening rates for one positive ("fall") class.

    predicted: per frame, the top detection's class id or None for no
    detection (None counts as predicting non-fall). actual: per frame,
    the true class id. Rates are percentages; a rate with an empty
    denominator is None.
    """
    if len(predicted) != len(actual):
        raise ContractError(f"{len(predicted)} predictions vs {len(actual)} labels")
    tp = tn = fp = fn = 0
    for p, a in zip(predicted, actual):
        is_fall = a == positive_class
        said_fall = p == positive_class
        if is_fall and said_fall:
            tp += 1
        elif is_fall:
            fn += 1
        elif said_fall:
            fp += 1
        else:
            tn += 1
    sens = 100.0 * tp / (tp + fn) if tp + fn else None
    spec = 100.0 * tn / (tn + fp) if tn + fp else None
    total = tp + tn + fp + fn
    acc = 100.0 * (tp + tn) / total if total else None
    return FallMetrics(tp, tn, fp, fn, sens, spec, acc)
