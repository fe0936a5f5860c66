"""Temporal channel shift.

Frames live in the leading dim of a [K,C,H,W] tensor. The shift swaps a
small slice of channels with the neighbouring frames: the first `fold`
channels of frame t are taken from frame t-1 (the past reaches forward),
the next `fold` from frame t+1 (the future reaches back), and the rest
pass through. Boundary frames receive zeros in the shifted slices, which
keeps the op linear; its adjoint is simply the shift with the two
directions swapped.

Stacking d such blocks (between per-frame convolutions) lets frame t see
frames t-d .. t+d, so the temporal receptive field grows by two frames
per block until it covers the whole clip.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ContractError
from .nn import Tensor, _make


@dataclass(frozen=True)
class ShiftConfig:
    """Shift hyper-parameters.

    num_frames: frames per clip (K); shift_fraction: fraction of channels
    moved per direction; on_residual: apply the shift on the residual
    branch of each block rather than the trunk, so the identity path
    keeps unshifted spatial detail.
    """

    num_frames: int = 8
    shift_fraction: Fraction = Fraction(1, 8)
    on_residual: bool = True

    def __post_init__(self):
        if self.num_frames < 2:
            raise ContractError(f"num_frames must be >= 2, got {self.num_frames}")
        f = Fraction(self.shift_fraction)
        if f < 0 or f > Fraction(1, 2):
            raise ContractError(f"shift_fraction must lie in [0, 1/2], got {f}")
        object.__setattr__(self, "shift_fraction", f)

    def fold(self, channels: int) -> int:
        """Channels shifted per direction; must divide evenly."""
        f = self.shift_fraction * channels
        if f.denominator != 1:
            raise ContractError(
                f"shift_fraction {self.shift_fraction} of {channels} channels "
                f"is not an integer"
            )
        return int(f)


def _shift_data(x: np.ndarray, fold: int, swap: bool) -> np.ndarray:
    """Apply the shift to a plain [K,C,H,W] array.

    swap=False: ch[0:fold] from t-1, ch[fold:2fold] from t+1.
    swap=True reverses the two directions (the adjoint).
    """
    out = x.copy()
    past, future = (slice(0, fold), slice(fold, 2 * fold))
    if swap:
        past, future = future, past
    out[1:, past] = x[:-1, past]
    out[0, past] = 0.0
    out[:-1, future] = x[1:, future]
    out[-1, future] = 0.0
    return out


def temporal_shift(features: Tensor, cfg: ShiftConfig) -> Tensor:
    """Shift `fold` channels one frame forward and `fold` backward in time.

    features: [K,C,H,W] with K == cfg.num_frames. shift_fraction == 0 is
    the identity. Gradients flow back to the frame each value came from;
    slices that shifted out over the clip boundary get no gradient.
    """
    if features.data.ndim != 4:
        raise ContractError(f"temporal_shift expects [K,C,H,W], got {features.data.shape}")
    K, C = features.data.shape[:2]
    if K != cfg.num_frames:
        raise ContractError(f"clip has {K} frames but config expects {cfg.num_frames}")
    fold = cfg.fold(C)
    if fold == 0:
        return features
    if 2 * fold > C:
        raise ContractError(f"2*fold = {2 * fold} exceeds {C} channels")
    out_data = _shift_data(features.data, fold, swap=False)

    def backward(g):
        if features.requires_grad:
            features._accumulate(_shift_data(g, fold, swap=True))

    return _make(out_data, (features,), backward)


def receptive_field(depth: int, num_frames: int = 8) -> int:
    """Temporal extent, in frames, reachable after `depth` shift blocks."""
    if depth < 0:
        raise ContractError(f"depth must be >= 0, got {depth}")
    return min(1 + 2 * depth, num_frames)
