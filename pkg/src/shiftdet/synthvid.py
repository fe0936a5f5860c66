"""Synthetic action clips.

Actions are defined purely by box motion — appearance carries no class
signal. Each actor is a checkerboard-textured rectangle with randomly
drawn shades moving over a static textured background. Rendering is
luminance-only (every channel carries the same value, like a grayscale
monitor feed): with a single underlying intensity field, frame-to-frame
comparisons are not entangled with color, which keeps the temporal cues
that define the classes as plain as possible:

* move-right / move-left — constant velocity; a move-left trajectory is
  the exact mirror of a move-right draw, so the two classes have
  identical single-frame pixel statistics and only temporal context can
  separate them.
* grow / shrink — isotropic linear scaling about a fixed center.
* fall — downward acceleration while the box turns from tall to wide.
* still — no motion.

Every clip is generated from its own seed sequence, so datasets are
byte-identical across runs. Annotations are continuous boxes; rendering
rounds them to the pixel grid (within half a pixel).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import boxes as bx
from . import formats
from .errors import ConfigError, DataError

CLASS_MOTIONS = ("move-right", "move-left", "grow", "shrink", "fall", "still")

MIN_SIDE = 8.0
MAX_ACTOR_IOU = 0.3
_PLACEMENT_TRIES = 120


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple = ("move-right", "move-left", "grow", "shrink")
    num_clips: int = 100
    actors_per_clip: int = 2
    frames_per_clip: int = 16
    height: int = 64
    width: int = 64
    noise_std: float = 0.02
    seed: int = 42
    train_fraction: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        unknown = [c for c in self.classes if c not in CLASS_MOTIONS]
        if unknown:
            raise ConfigError(
                f"synth.classes: unknown class name(s) {unknown}; "
                f"choose from {list(CLASS_MOTIONS)}"
            )
        if not self.classes:
            raise ConfigError("synth.classes: need at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigError("synth.classes: duplicate class names")
        if not (1 <= self.actors_per_clip <= 4):
            raise ConfigError("synth.actors_per_clip must be in 1..4")
        if self.frames_per_clip < 8:
            raise ConfigError("synth.frames_per_clip must be >= 8")
        if self.height < 48 or self.width < 48:
            raise ConfigError("synth.height/width must be >= 48")
        if self.noise_std < 0:
            raise ConfigError("synth.noise_std must be >= 0")
        if not (0 < self.train_fraction < 1):
            raise ConfigError("synth.train_fraction must be in (0,1)")
        if self.num_clips < 2:
            raise ConfigError("synth.num_clips must be >= 2")

    @classmethod
    def from_config(cls, cfg: dict):
        g = formats.config_get
        return cls(
            classes=tuple(
                s.strip() for s in g(cfg, "synth.classes", str,
                                     ",".join(cls.classes)).split(",") if s.strip()
            ),
            num_clips=g(cfg, "synth.num_clips", int, cls.num_clips),
            actors_per_clip=g(cfg, "synth.actors_per_clip", int, cls.actors_per_clip),
            frames_per_clip=g(cfg, "synth.frames_per_clip", int, cls.frames_per_clip),
            height=g(cfg, "synth.height", int, cls.height),
            width=g(cfg, "synth.width", int, cls.width),
            noise_std=g(cfg, "synth.noise_std", float, cls.noise_std),
            seed=g(cfg, "synth.seed", int, cls.seed),
            train_fraction=g(cfg, "synth.train_fraction", float, cls.train_fraction),
        )


# ---------------------------------------------------------------------------
# trajectories


def _track_from_params(cls: str, cx0, cy0, w0, h0, rate, T, width):
    """Continuous [T,4] box track for one actor; move-left mirrors the
    move-right track it would have produced."""
    t = np.arange(T, dtype=np.float64)
    w = np.full(T, w0)
    h = np.full(T, h0)
    cx = np.full(T, cx0)
    cy = np.full(T, cy0)
    if cls in ("move-right", "move-left"):
        cx = cx0 + rate * t
    elif cls == "grow":
        scale = 1.0 + rate * t
        w, h = w0 * scale, h0 * scale
    elif cls == "shrink":
        scale = 1.0 - rate * t
        w, h = w0 * scale, h0 * scale
    elif cls == "fall":
        cy = cy0 + 0.5 * rate * t * t
        frac = t / max(T - 1, 1)
        w = w0 + (h0 - w0) * frac  # tall -> wide: sides swap linearly
        h = h0 + (w0 - h0) * frac
    elif cls != "still":
        raise ConfigError(f"unknown class {cls!r}")
    track = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    if cls == "move-left":
        track = track[:, [2, 1, 0, 3]] * np.array([-1, 1, -1, 1]) + np.array([width, 0, width, 0])
    return track


def _sample_track(cls: str, spec: SynthSpec, rng: np.random.Generator):
    """Draw trajectory parameters until the track stays in bounds."""
    T, H, W = spec.frames_per_clip, spec.height, spec.width
    for _ in range(_PLACEMENT_TRIES):
        if cls == "fall":
            h0 = rng.uniform(16, 24)
            w0 = h0 * rng.uniform(0.55, 0.7)
            rate = rng.uniform(0.06, 0.12)
        elif cls == "grow":
            w0 = h0 = rng.uniform(13, 15)
            rate = rng.uniform(0.012, 0.018)
        elif cls == "shrink":
            w0 = h0 = rng.uniform(26, 30)
            rate = rng.uniform(0.012, 0.018)
        else:
            w0 = rng.uniform(17, 24)
            h0 = rng.uniform(17, 24)
            rate = rng.uniform(1.7, 2.4) if cls in ("move-right", "move-left") else 0.0
        cx0 = rng.uniform(w0 / 2 + 1, W - w0 / 2 - 1)
        cy0 = rng.uniform(h0 / 2 + 1, H - h0 / 2 - 1)
        track = _track_from_params(cls, cx0, cy0, w0, h0, rate, T, W)
        sides_ok = ((track[:, 2] - track[:, 0]) >= MIN_SIDE).all() and (
            (track[:, 3] - track[:, 1]) >= MIN_SIDE
        ).all()
        inside = (track[:, 0] >= 0).all() and (track[:, 1] >= 0).all() and (
            track[:, 2] <= W
        ).all() and (track[:, 3] <= H).all()
        if sides_ok and inside:
            return track
    return None


def _tracks_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    for t in range(a.shape[0]):
        if bx.pairwise_iou(a[t][None], b[t][None])[0, 0] >= MAX_ACTOR_IOU:
            return True
    return False


# ---------------------------------------------------------------------------
# rendering


def _background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    tile = 8
    th = -(-spec.height // tile)
    tw = -(-spec.width // tile)
    tiles = np.repeat(rng.uniform(0.35, 0.65, size=(th, tw, 1)), 3, axis=2)
    return np.kron(tiles, np.ones((tile, tile, 1)))[: spec.height, : spec.width]


RAMP_SPAN = 0.24


def _paint_actor(img: np.ndarray, box, colors, cell: int = 8):
    """Draw a checkerboard rectangle shaded brighter toward its own +x
    side, as if lit from the right. Pattern and shading are anchored to
    the box so they ride along with the actor.

    Both choices are about keeping motion readable rather than looks:
    the cell is large relative to per-frame motion (a step near half the
    checker period would make leftward and rightward interior motion
    pixel-identical), and the shading gives the interior a brightness
    gradient whose frame-to-frame change has a single sign determined by
    the motion direction. Every class shares the same shading, so a
    single frame still carries no class information.
    """
    H, W = img.shape[:2]
    x1 = int(np.round(box[0]))
    y1 = int(np.round(box[1]))
    x2 = int(np.round(box[2]))
    y2 = int(np.round(box[3]))
    x1c, y1c = max(x1, 0), max(y1, 0)
    x2c, y2c = min(x2, W), min(y2, H)
    if x2c <= x1c or y2c <= y1c:
        return
    yy, xx = np.mgrid[y1c:y2c, x1c:x2c]
    checker = ((yy - y1) // cell + (xx - x1) // cell) % 2
    base = np.where(checker[..., None] == 0, colors[0], colors[1])
    shade = RAMP_SPAN * ((xx - x1 + 0.5) / max(x2 - x1, 1) - 0.5)
    img[y1c:y2c, x1c:x2c] = base + shade[..., None]


def generate_clip(spec: SynthSpec, clip_index: int) -> tuple:
    """Render one clip. Returns (frames uint8 [T,H,W,3], boxes [A,T,4],
    labels [A] of 1-based class ids)."""
    rng = np.random.default_rng([spec.seed, clip_index])
    T, H, W = spec.frames_per_clip, spec.height, spec.width
    bg = _background(spec, rng)

    # translation classes leave the fewest per-frame footprints, so they
    # get a mild sampling boost over classes a single frame can hint at
    weights = np.array([1.5 if c in ("move-right", "move-left") else 1.0
                        for c in spec.classes])
    weights /= weights.sum()

    tracks, labels, palettes = [], [], []
    for a in range(spec.actors_per_clip):
        # two-tone checker, one shade well below the mid-band background
        # and one well above it: every actor shows strong edges against
        # any background tile. The palette distribution is identical
        # across classes so appearance never encodes class.
        colors = np.stack([np.full(3, rng.uniform(0.0, 0.2)),
                           np.full(3, rng.uniform(0.8, 1.0))])
        colors = colors[rng.permutation(2)]
        placed = False
        for _ in range(_PLACEMENT_TRIES):
            # the class is redrawn per attempt: classes differ in footprint,
            # so a crowded frame that cannot fit one more large actor may
            # still take a small one
            cls_id = int(rng.choice(len(spec.classes), p=weights))
            track = _sample_track(spec.classes[cls_id], spec, rng)
            if track is None:
                continue
            if all(not _tracks_overlap(track, other) for other in tracks):
                placed = True
                break
        if not placed:
            raise DataError(
                f"clip {clip_index}: could not place actor {a} without overlap"
            )
        tracks.append(track)
        labels.append(cls_id + 1)
        palettes.append(colors)

    frames = np.empty((T, H, W, 3), dtype=np.uint8)
    for t in range(T):
        img = bg.copy()
        for track, colors in zip(tracks, palettes):
            _paint_actor(img, track[t], colors)
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
        frames[t] = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return frames, np.stack(tracks), np.asarray(labels, dtype=np.intp)


# ---------------------------------------------------------------------------
# dataset on disk


def generate_dataset(spec: SynthSpec, out_dir) -> list:
    """Write the full dataset under out_dir; returns the manifest records."""
    root = Path(out_dir)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    formats.save_classes(root / "classes.txt", list(spec.classes))

    split_rng = np.random.default_rng([spec.seed, 0x5B117])
    order = split_rng.permutation(spec.num_clips)
    n_train = int(round(spec.num_clips * spec.train_fraction))
    train_ids = set(order[:n_train].tolist())

    records = []
    for i in range(spec.num_clips):
        frames, boxes, labels = generate_clip(spec, i)
        rel = f"clips/clip_{i:05d}.srvf"
        formats.save_video(root / rel, frames)
        records.append({
            "id": i,
            "frames": spec.frames_per_clip,
            "height": spec.height,
            "width": spec.width,
            "video": rel,
            "split": "train" if i in train_ids else "test",
            "labels": [int(l) for l in labels],
            "boxes": [[[float(v) for v in row] for row in track] for track in boxes],
        })
    formats.save_manifest(root / "manifest.jsonl", records)
    return records


def load_dataset(root) -> tuple:
    """Returns (class names, manifest records)."""
    root = Path(root)
    classes = formats.load_classes(root / "classes.txt")
    records = formats.load_manifest(root / "manifest.jsonl")
    for r in records:
        for key in ("id", "frames", "video", "split", "labels", "boxes"):
            if key not in r:
                raise DataError(f"manifest record {r.get('id', '?')} missing {key!r}")
    return classes, records


def load_clip(root, record) -> tuple:
    """Returns (frames uint8 [T,H,W,3], boxes [A,T,4], labels [A])."""
    frames = formats.load_video(Path(root) / record["video"])
    boxes = np.asarray(record["boxes"], dtype=np.float64)
    labels = np.asarray(record["labels"], dtype=np.intp)
    if frames.shape[0] != record["frames"]:
        raise DataError(f"clip {record['id']}: frame count mismatch")
    if boxes.ndim != 3 or boxes.shape[0] != labels.shape[0] or boxes.shape[1] != frames.shape[0]:
        raise DataError(f"clip {record['id']}: annotation shape mismatch")
    return frames, boxes, labels


# ---------------------------------------------------------------------------
# temporal sampling / resizing


def sample_frames(total: int, num: int, mode: str, rng=None) -> np.ndarray:
    """Pick `num` frame indices from a clip of `total` frames.

    Inference takes each segment's midpoint, floor((s+0.5)*T/N); training
    draws uniformly inside each segment. Indices are non-decreasing and
    hit every segment exactly once.
    """
    if total < 1:
        raise DataError(f"clip has {total} frames")
    if mode == "infer":
        return ((np.arange(num) + 0.5) * total / num).astype(np.intp)
    if mode == "train":
        if rng is None:
            raise ConfigError("train-mode frame sampling needs an rng")
        lo = (np.arange(num) * total) // num
        hi = np.maximum(lo, ((np.arange(num) + 1) * total) // num - 1)
        return (lo + (rng.random(num) * (hi - lo + 1)).astype(np.intp)).clip(max=total - 1)
    raise ConfigError(f"mode must be train|infer, got {mode!r}")


def resize_frames(frames: np.ndarray, target_hw: tuple) -> tuple:
    """Bilinear resize of uint8 [T,H,W,C] frames.

    Returns (resized frames, (sx, sy)) where box coordinates map as
    x*sx, y*sy.
    """
    T, H, W, C = frames.shape
    th, tw = target_hw
    if th <= 0 or tw <= 0:
        raise ConfigError(f"target size must be positive, got {target_hw}")
    if (th, tw) == (H, W):
        return frames.copy(), (1.0, 1.0)
    ys = (np.arange(th) + 0.5) * H / th - 0.5
    xs = (np.arange(tw) + 0.5) * W / tw - 0.5
    y0 = np.clip(np.floor(ys), 0, H - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, W - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    ly = np.clip(ys - y0, 0.0, 1.0)[None, :, None, None]
    lx = np.clip(xs - x0, 0.0, 1.0)[None, None, :, None]
    f = frames.astype(np.float64)
    top = f[:, y0][:, :, x0] * (1 - lx) + f[:, y0][:, :, x1] * lx
    bot = f[:, y1][:, :, x0] * (1 - lx) + f[:, y1][:, :, x1] * lx
    out = top * (1 - ly) + bot * ly
    return np.clip(np.round(out), 0, 255).astype(np.uint8), (tw / W, th / H)
