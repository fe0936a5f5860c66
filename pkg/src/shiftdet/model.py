"""Model assembly: configuration, parameter registry, and the Detector
that wires backbone -> proposal stage -> region head -> detections.

A model is fully described by its ModelConfig (serialized as flat
key=value text and embedded in every checkpoint) plus the parameter
payload. Parameter order is fixed by param_specs, so checkpoints are
byte-reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import backbone as bb
from . import formats, nn, postprocess, roihead, rpn
from .errors import ConfigError, DataError
from .nn import ParamStore, Tensor
from .shift import ShiftConfig


@dataclass(frozen=True)
class ModelConfig:
    class_names: tuple
    image_height: int = 64
    image_width: int = 64
    num_frames: int = 8
    shift_fraction: Fraction = Fraction(1, 8)
    shift_on_residual: bool = True
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (1, 1, 1)
    anchor_scales: tuple = (1, 2, 3, 4)
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    rpn_sample_size: int = 256
    head_hidden: int = 256
    init_seed: int = 0

    def __post_init__(self):
        for name in ("class_names", "stage_channels", "blocks_per_stage",
                     "anchor_scales", "anchor_ratios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.class_names:
            raise ConfigError("model.classes must name at least one class")
        if self.image_height < 16 or self.image_width < 16:
            raise ConfigError("model.image size must be at least 16x16")
        object.__setattr__(self, "shift_fraction", Fraction(self.shift_fraction))

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def shift(self) -> ShiftConfig:
        return ShiftConfig(self.num_frames, self.shift_fraction,
                           self.shift_on_residual)

    @property
    def backbone(self) -> bb.BackboneConfig:
        return bb.BackboneConfig(stage_channels=self.stage_channels,
                                 blocks_per_stage=self.blocks_per_stage,
                                 shift=self.shift)

    @property
    def stride(self) -> int:
        return self.backbone.total_stride

    @property
    def feature_hw(self) -> tuple:
        s = self.stride
        return (-(-self.image_height // s), -(-self.image_width // s))

    def to_entries(self) -> dict:
        return {
            "model.classes": ",".join(self.class_names),
            "model.image_height": str(self.image_height),
            "model.image_width": str(self.image_width),
            "model.num_frames": str(self.num_frames),
            "model.shift_fraction": str(self.shift_fraction),
            "model.shift_on_residual": "true" if self.shift_on_residual else "false",
            "model.stage_channels": ",".join(map(str, self.stage_channels)),
            "model.blocks_per_stage": ",".join(map(str, self.blocks_per_stage)),
            "model.anchor_scales": ",".join(map(str, self.anchor_scales)),
            "model.anchor_ratios": ",".join(map(str, self.anchor_ratios)),
            "model.rpn_sample_size": str(self.rpn_sample_size),
            "model.head_hidden": str(self.head_hidden),
            "model.init_seed": str(self.init_seed),
        }

    def to_text(self) -> str:
        return formats.format_config(self.to_entries())

    @classmethod
    def from_config(cls, cfg: dict, class_names=None):
        g = formats.config_get

        def names(s):
            return tuple(x.strip() for x in s.split(",") if x.strip())

        def ints(s):
            return tuple(int(x) for x in s.split(","))

        def floats(s):
            return tuple(float(x) for x in s.split(","))

        if class_names is None:
            class_names = names(g(cfg, "model.classes", str))
        return cls(
            class_names=tuple(class_names),
            image_height=g(cfg, "model.image_height", int, cls.image_height),
            image_width=g(cfg, "model.image_width", int, cls.image_width),
            num_frames=g(cfg, "model.num_frames", int, cls.num_frames),
            shift_fraction=g(cfg, "model.shift_fraction", Fraction, cls.shift_fraction),
            shift_on_residual=g(cfg, "model.shift_on_residual", formats.parse_bool,
                                cls.shift_on_residual),
            stage_channels=g(cfg, "model.stage_channels", ints, cls.stage_channels),
            blocks_per_stage=g(cfg, "model.blocks_per_stage", ints, cls.blocks_per_stage),
            anchor_scales=g(cfg, "model.anchor_scales", ints, cls.anchor_scales),
            anchor_ratios=g(cfg, "model.anchor_ratios", floats, cls.anchor_ratios),
            rpn_sample_size=g(cfg, "model.rpn_sample_size", int, cls.rpn_sample_size),
            head_hidden=g(cfg, "model.head_hidden", int, cls.head_hidden),
            init_seed=g(cfg, "model.init_seed", int, cls.init_seed),
        )

    @classmethod
    def from_text(cls, text: str, class_names=None):
        return cls.from_config(formats.parse_config(text), class_names)


def param_specs(cfg: ModelConfig) -> list:
    feat_c = cfg.backbone.out_channels
    a = len(cfg.anchor_scales) * len(cfg.anchor_ratios)
    return (
        bb.param_specs(cfg.backbone)
        + rpn.param_specs(feat_c, a)
        + roihead.param_specs(feat_c, cfg.num_classes, cfg.head_hidden)
    )


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter count; equals the checkpoint element count."""
    return int(sum(np.prod(shape, dtype=np.int64) for _, shape, _ in param_specs(cfg)))


def init_params(cfg: ModelConfig) -> ParamStore:
    rng = np.random.default_rng([cfg.init_seed, 0xC0DE])
    store = ParamStore()
    for name, shape, kind in param_specs(cfg):
        store.add(name, bb.init_param(shape, kind, rng, dtype=np.float32))
    return store


def store_from_arrays(cfg: ModelConfig, arrays: dict) -> ParamStore:
    """Rebuild a ParamStore from {name: array}, restoring trainability."""
    specs = param_specs(cfg)
    if len(arrays) != len(specs):
        raise DataError(f"have {len(arrays)} tensors, config implies {len(specs)}")
    store = ParamStore()
    for name, shape, kind in specs:
        if name not in arrays:
            raise DataError(f"missing parameter {name!r}")
        arr = arrays[name]
        if arr.shape != tuple(shape):
            raise DataError(
                f"parameter {name!r} has shape {arr.shape}, "
                f"config implies {tuple(shape)}"
            )
        trainable = kind not in ("affine_scale", "affine_shift")
        store.add(name, Tensor(arr, requires_grad=trainable))
    if store.num_elements() != count_params(cfg):
        raise DataError(
            f"element count {store.num_elements()} != {count_params(cfg)}"
        )
    return store


class Detector:
    """The assembled two-stage clip detector."""

    def __init__(self, cfg: ModelConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store
        fh, fw = cfg.feature_hw
        self.grid = rpn.generate_anchors(fh, fw, cfg.stride,
                                         cfg.anchor_scales, cfg.anchor_ratios)

    @classmethod
    def new(cls, cfg: ModelConfig):
        return cls(cfg, init_params(cfg))

    # -- persistence --------------------------------------------------------

    def save(self, path):
        payload = {name: self.store[name].data for name, _, _ in param_specs(self.cfg)}
        formats.save_checkpoint(path, self.cfg.to_text(), payload)

    @classmethod
    def load(cls, path):
        text, payload = formats.load_checkpoint(path)
        cfg = ModelConfig.from_text(text)
        try:
            store = store_from_arrays(cfg, payload)
        except DataError as e:
            raise DataError(f"{path}: {e}") from e
        return cls(cfg, store)

    # -- forward paths ------------------------------------------------------

    def _check_frames(self, frames: np.ndarray):
        cfg = self.cfg
        want = (cfg.num_frames, 3, cfg.image_height, cfg.image_width)
        if frames.shape != want:
            raise DataError(f"clip shape {frames.shape}, model expects {want}")

    def training_losses(self, frames: np.ndarray, gt_boxes: list, gt_labels: list,
                        rng: np.random.Generator, parts: dict | None = None) -> Tensor:
        """Total two-stage loss for one clip.

        frames: float32 [K,3,H,W] in [0,1]; gt_boxes/gt_labels: per
        sampled frame. Proposal boxes flow to stage two as fixed values
        (no gradient through box coordinates), as in standard two-stage
        training.
        """
        self._check_frames(frames)
        cfg = self.cfg
        x = Tensor(frames)
        feats = bb.extract_features(x, self.store, cfg.backbone)
        logits, deltas = rpn.rpn_forward(feats, self.store)

        frame_labels = [rpn.assign_anchors(self.grid, gt_boxes[f])
                        for f in range(cfg.num_frames)]
        rpn_parts = {} if parts is not None else None
        rpn_term = rpn.rpn_loss(logits, deltas, frame_labels,
                                cfg.rpn_sample_size, rng, parts=rpn_parts)

        proposals = rpn.select_proposals(logits.data, deltas.data, self.grid,
                                         "train", (cfg.image_height, cfg.image_width))
        samples = []
        aligned_parts = []
        for f in range(cfg.num_frames):
            sample = roihead.sample_rois(proposals[f][0], gt_boxes[f],
                                         gt_labels[f], rng)
            samples.append(sample)
            if len(sample):
                frame_feat = nn.take(feats, [f])
                aligned_parts.append(
                    roihead.roi_align(frame_feat, sample.rois, 1.0 / cfg.stride)
                )
        if aligned_parts:
            aligned = aligned_parts[0] if len(aligned_parts) == 1 else nn.concat(aligned_parts)
            scores, box_deltas = roihead.rcnn_forward(aligned, self.store)
            rcnn_parts = {} if parts is not None else None
            rcnn_term = roihead.rcnn_loss(scores, box_deltas, samples,
                                          parts=rcnn_parts)
        else:
            rcnn_term = Tensor(np.zeros((), dtype=np.float32))
            rcnn_parts = {"cls": 0.0, "reg": 0.0} if parts is not None else None
        if parts is not None:
            parts["rpn_cls"] = rpn_parts.get("cls", 0.0)
            parts["rpn_reg"] = rpn_parts.get("reg", 0.0)
            parts["rcnn_cls"] = rcnn_parts.get("cls", 0.0)
            parts["rcnn_reg"] = rcnn_parts.get("reg", 0.0)
        return roihead.total_loss(rpn_term, rcnn_term)

    def detect(self, frames: np.ndarray,
               score_thresh: float = postprocess.SCORE_THRESH_EVAL,
               nms_iou: float = postprocess.NMS_IOU,
               timings: dict | None = None) -> list:
        """Run inference on one clip -> per-frame Detection lists.

        When `timings` is given, per-stage wall time in seconds is
        accumulated into it under backbone/rpn/roi_head/postprocess.
        """
        self._check_frames(frames)
        cfg = self.cfg
        marks = [time.perf_counter()]

        feats = bb.extract_features(Tensor(frames), self.store, cfg.backbone)
        marks.append(time.perf_counter())

        logits, deltas = rpn.rpn_forward(feats, self.store)
        proposals = rpn.select_proposals(logits.data, deltas.data, self.grid,
                                         "infer", (cfg.image_height, cfg.image_width))
        marks.append(time.perf_counter())

        per_frame_counts = []
        aligned_parts = []
        for f in range(cfg.num_frames):
            boxes_f = proposals[f][0]
            per_frame_counts.append(len(boxes_f))
            if len(boxes_f):
                aligned_parts.append(
                    roihead.roi_align(nn.take(feats, [f]), boxes_f, 1.0 / cfg.stride)
                )
        if aligned_parts:
            aligned = aligned_parts[0] if len(aligned_parts) == 1 else nn.concat(aligned_parts)
            scores, box_deltas = roihead.rcnn_forward(aligned, self.store)
            score_rows, delta_rows = scores.data, box_deltas.data
        else:
            score_rows = np.zeros((0, cfg.num_classes + 1), dtype=np.float32)
            delta_rows = np.zeros((0, 4), dtype=np.float32)
        marks.append(time.perf_counter())

        detections = []
        offset = 0
        for f in range(cfg.num_frames):
            n = per_frame_counts[f]
            detections.append(postprocess.decode_detections(
                score_rows[offset : offset + n], delta_rows[offset : offset + n],
                proposals[f][0], f, (cfg.image_height, cfg.image_width),
                score_thresh=score_thresh, nms_iou=nms_iou,
            ))
            offset += n
        marks.append(time.perf_counter())

        if timings is not None:
            for name, dt in zip(("backbone", "rpn", "roi_head", "postprocess"),
                                np.diff(marks)):
                timings[name] = timings.get(name, 0.0) + float(dt)
        return detections
