"""Report rendering: PR curves, confusion matrix, training loss curve,
stage latency — all written straight to image files (headless backend),
plus box burn-in for annotated frame dumps.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ContractError

# one distinct RGB per class id (1-based), reused cyclically
PALETTE = (
    (230, 60, 50),
    (60, 180, 80),
    (60, 100, 230),
    (240, 190, 40),
    (180, 70, 200),
    (70, 210, 210),
)


def class_color(class_id: int) -> tuple:
    return PALETTE[(class_id - 1) % len(PALETTE)]


def save_pr_curves(path, report, class_names) -> None:
    """One precision-recall line per class that has ground truth."""
    fig, ax = plt.subplots(figsize=(6, 5))
    for c in sorted(report.pr_curves):
        if report.gt_counts.get(c, 0) == 0:
            continue
        recalls, precisions = report.pr_curves[c]
        ap = report.per_class_ap[c]
        label = f"{class_names[c - 1]} (AP {ap:.3f})"
        color = np.array(class_color(c)) / 255.0
        ax.plot(np.concatenate([[0.0], recalls]),
                np.concatenate([[1.0], precisions]),
                drawstyle="steps-post", label=label, color=color)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    title = "precision-recall"
    if report.mean_ap is not None:
        title += f" (mAP {report.mean_ap:.3f})"
    ax.set_title(title)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_matrix(path, confusion: np.ndarray, class_names) -> None:
    """Row-normalized heat map with raw counts overlaid; the extra final
    column counts ground truth with no matching detection."""
    confusion = np.asarray(confusion)
    c = confusion.shape[0]
    if confusion.shape != (c, c + 1):
        raise ContractError(f"confusion must be [C, C+1], got {confusion.shape}")
    row_sums = confusion.sum(axis=1, keepdims=True)
    shade = confusion / np.maximum(row_sums, 1)

    fig, ax = plt.subplots(figsize=(1.1 * (c + 1) + 2, 1.1 * c + 1.5))
    ax.imshow(shade, cmap="Blues", vmin=0.0, vmax=1.0)
    for i in range(c):
        for j in range(c + 1):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    color="white" if shade[i, j] > 0.5 else "black", fontsize=9)
    ax.set_xticks(range(c + 1))
    ax.set_xticklabels(list(class_names) + ["missed"], rotation=30,
                       ha="right", fontsize=8)
    ax.set_yticks(range(c))
    ax.set_yticklabels(class_names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title("confusion (rows are ground-truth classes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curve(path, log_records: list) -> None:
    """Per-step total and component losses on a log-scaled y axis."""
    if not log_records:
        raise ContractError("empty training log")
    steps = [r["step"] for r in log_records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(steps, [r["total"] for r in log_records], color="black",
            label="total", linewidth=1.6)
    for key, color in (("rpn_cls", "#d4613e"), ("rpn_reg", "#e0a23b"),
                       ("rcnn_cls", "#3e7bd4"), ("rcnn_reg", "#44a06b")):
        ax.plot(steps, [r[key] for r in log_records], color=color,
                label=key, linewidth=0.9, alpha=0.8)
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_stage_latency(path, stage_seconds: dict, clips: int) -> None:
    """Mean per-clip latency of each inference stage."""
    if not stage_seconds or clips < 1:
        raise ContractError("need stage timings for at least one clip")
    names = list(stage_seconds)
    ms = [1000.0 * stage_seconds[n] / clips for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(names, ms, color="#3e7bd4")
    ax.bar_label(bars, fmt="%.2f")
    ax.set_ylabel("ms per clip")
    ax.set_title("inference stage latency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def burn_boxes(frames: np.ndarray, frame_detections: list,
               thickness: int = 1) -> np.ndarray:
    """Draw detection rectangles into uint8 [T,H,W,3] frames (a copy).

    Each box edge is painted in its class color, clipped to the image.
    """
    frames = np.array(frames, copy=True)
    T, H, W, _ = frames.shape
    if len(frame_detections) != T:
        raise ContractError(f"{len(frame_detections)} detection lists "
                            f"for {T} frames")
    for t, dets in enumerate(frame_detections):
        for det in dets:
            x1, y1, x2, y2 = (int(round(v)) for v in det.box)
            x1, x2 = max(x1, 0), min(x2, W)
            y1, y2 = max(y1, 0), min(y2, H)
            if x2 <= x1 or y2 <= y1:
                continue
            color = class_color(det.class_id)
            k = thickness
            frames[t, y1:min(y1 + k, y2), x1:x2] = color
            frames[t, max(y2 - k, y1):y2, x1:x2] = color
            frames[t, y1:y2, x1:min(x1 + k, x2)] = color
            frames[t, y1:y2, max(x2 - k, x1):x2] = color
    return frames
