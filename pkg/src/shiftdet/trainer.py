"""Training loop: stepped learning-rate schedule, gradient accumulation
over micro-batches, periodic evaluation, and best-checkpoint retention.

Determinism contract: given (dataset seed, train seed, configs) the
final parameters are bit-reproducible. The loop draws from exactly two
RNG streams — `default_rng([seed, 1])` for epoch shuffles and
`default_rng([seed, 2])` for frame/anchor/roi sampling — consumed in
clip order, so any reimplementation of the same discipline lands on the
same trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats, metrics, model, nn, postprocess, synthvid
from .errors import ConfigError, DataError, NumericError

MOMENTUM = 0.9

LOG_COLUMNS = ("step", "epoch", "lr", "rpn_cls", "rpn_reg",
               "rcnn_cls", "rcnn_reg", "total")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    base_lr: float = 0.01
    decay_factor: float = 0.1
    decay_every: int = 12
    batch_size: int = 4
    accum_steps: int = 3
    seed: int = 0
    eval_every: int = 5

    def __post_init__(self):
        for name in ("epochs", "decay_every", "batch_size", "accum_steps",
                     "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be positive")
        if self.base_lr <= 0 or self.decay_factor <= 0:
            raise ConfigError("train.base_lr and train.decay_factor must be positive")

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.accum_steps

    @classmethod
    def from_config(cls, cfg: dict):
        g = formats.config_get
        return cls(
            epochs=g(cfg, "train.epochs", int, cls.epochs),
            base_lr=g(cfg, "train.base_lr", float, cls.base_lr),
            decay_factor=g(cfg, "train.decay_factor", float, cls.decay_factor),
            decay_every=g(cfg, "train.decay_every", int, cls.decay_every),
            batch_size=g(cfg, "train.batch_size", int, cls.batch_size),
            accum_steps=g(cfg, "train.accum_steps", int, cls.accum_steps),
            seed=g(cfg, "train.seed", int, cls.seed),
            eval_every=g(cfg, "train.eval_every", int, cls.eval_every),
        )


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: base_lr · decay_factor^floor(epoch / decay_every)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return cfg.base_lr * cfg.decay_factor ** (epoch // cfg.decay_every)


# ---------------------------------------------------------------------------
# clip preparation


def prepare_clip(root, record, model_cfg: model.ModelConfig, mode: str,
                 rng=None) -> tuple:
    """Load, frame-sample, and size one clip for the model.

    Returns (frames float32 [K,3,H,W], per-frame gt boxes, per-frame gt
    labels) in model coordinates.
    """
    frames_u8, boxes, labels = synthvid.load_clip(root, record)
    idx = synthvid.sample_frames(frames_u8.shape[0], model_cfg.num_frames,
                                 mode, rng)
    picked = frames_u8[idx]
    target = (model_cfg.image_height, model_cfg.image_width)
    picked, (sx, sy) = synthvid.resize_frames(picked, target)
    frames = formats.frames_to_float(picked)
    scale = np.array([sx, sy, sx, sy])
    gt_boxes = [boxes[:, t] * scale for t in idx]
    gt_labels = [labels for _ in idx]
    return frames, gt_boxes, gt_labels


def _check_vocabulary(classes, model_cfg: model.ModelConfig):
    if tuple(classes) != model_cfg.class_names:
        raise DataError(
            f"dataset classes {tuple(classes)} do not match "
            f"model classes {model_cfg.class_names}"
        )


# ---------------------------------------------------------------------------
# evaluation


def evaluate(root, detector: model.Detector, split: str = "test",
             score_thresh: float = postprocess.SCORE_THRESH_EVAL,
             iou_thresh: float = metrics.MATCH_IOU,
             nms_iou: float = postprocess.NMS_IOU) -> metrics.MetricsReport:
    """Frame-level detection metrics over one dataset split.

    Deterministic: inference frame sampling is fixed and detection is
    seed-free. When the vocabulary contains a "fall" class, frame-level
    screening rates are filled in from each frame's top detection
    (single-actor frames only — screening is per subject).
    """
    classes, records = synthvid.load_dataset(root)
    _check_vocabulary(classes, detector.cfg)
    records = [r for r in records if r["split"] == split]
    if not records:
        raise DataError(f"dataset has no {split!r} split")

    frame_dets, frame_gts = [], []
    for rec in records:
        frames, gt_boxes, gt_labels = prepare_clip(root, rec, detector.cfg,
                                                   "infer")
        frame_dets.extend(detector.detect(frames, score_thresh=score_thresh,
                                          nms_iou=nms_iou))
        frame_gts.extend(zip(gt_boxes, gt_labels))

    report = metrics.frame_map(frame_dets, frame_gts,
                               detector.cfg.num_classes, iou_thresh)
    if "fall" in detector.cfg.class_names:
        positive = detector.cfg.class_names.index("fall") + 1
        predicted, actual = [], []
        for dets, (_, labels) in zip(frame_dets, frame_gts):
            if len(labels) != 1:
                continue
            top = postprocess.top_detection(dets)
            predicted.append(top.class_id if top is not None else None)
            actual.append(int(labels[0]))
        report.fall = metrics.fall_metrics(predicted, actual, positive)
    return report


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    detector: model.Detector  # carrying the best-mAP parameters
    best_epoch: int
    best_map: float
    log_records: list  # one dict per optimizer step, LOG_COLUMNS keys
    eval_history: list  # (epoch, MetricsReport) at each cadence point


def train(root, model_cfg: model.ModelConfig, train_cfg: TrainConfig,
          progress=None) -> TrainResult:
    """Run the full loop over a dataset directory.

    One optimizer step covers accum_steps micro-batches of batch_size
    clips; per-clip gradients accumulate in the parameter buffers and
    are averaged over the clips actually seen (the trailing batch of an
    epoch may be short). A non-finite loss aborts with a diagnostic
    naming the step, learning rate, and loss parts.
    """
    classes, records = synthvid.load_dataset(root)
    _check_vocabulary(classes, model_cfg)
    train_recs = [r for r in records if r["split"] == "train"]
    if not train_recs:
        raise DataError("dataset has no 'train' split")

    detector = model.Detector.new(model_cfg)
    store = detector.store
    shuffle_rng = np.random.default_rng([train_cfg.seed, 1])
    sample_rng = np.random.default_rng([train_cfg.seed, 2])

    log_records = []
    eval_history = []
    best_arrays, best_map, best_epoch = None, -1.0, -1
    step = 0

    for epoch in range(train_cfg.epochs):
        lr = lr_schedule(epoch, train_cfg)
        order = shuffle_rng.permutation(len(train_recs))
        for start in range(0, len(order), train_cfg.effective_batch):
            batch = order[start : start + train_cfg.effective_batch]
            sums = dict.fromkeys(("rpn_cls", "rpn_reg", "rcnn_cls",
                                  "rcnn_reg", "total"), 0.0)
            for clip_id in batch:
                frames, gt_boxes, gt_labels = prepare_clip(
                    root, train_recs[clip_id], model_cfg, "train", sample_rng)
                parts = {}
                try:
                    loss = detector.training_losses(frames, gt_boxes, gt_labels,
                                                    sample_rng, parts=parts)
                except NumericError as e:
                    raise NumericError(
                        f"training aborted at step {step} (epoch {epoch}, "
                        f"lr {lr:.6g}, parts {parts}): {e}"
                    ) from e
                loss.backward()
                for key in parts:
                    sums[key] += parts[key]
                sums["total"] += float(loss.data)
            store.scale_grads(1.0 / len(batch))
            nn.sgd_step(store, lr, MOMENTUM)
            step += 1
            record = {"step": step, "epoch": epoch, "lr": lr}
            record.update({k: sums[k] / len(batch) for k in
                           ("rpn_cls", "rpn_reg", "rcnn_cls", "rcnn_reg",
                            "total")})
            log_records.append(record)

        last = epoch == train_cfg.epochs - 1
        if (epoch + 1) % train_cfg.eval_every == 0 or last:
            report = evaluate(root, detector)
            eval_history.append((epoch, report))
            if report.mean_ap >= best_map:
                best_map = report.mean_ap
                best_epoch = epoch
                best_arrays = {name: store[name].data.copy()
                               for name in store.names()}
            if progress is not None:
                progress(epoch, report)

    best = model.Detector(model_cfg, model.store_from_arrays(model_cfg,
                                                             best_arrays))
    return TrainResult(best, best_epoch, best_map, log_records, eval_history)
