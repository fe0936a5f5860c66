"""Temporal shift: hand-derived oracle, boundary behaviour, conservation,
impulse propagation, adjoint correctness."""

from fractions import Fraction

import numpy as np
import pytest

from shiftdet import nn
from shiftdet.errors import ContractError
from shiftdet.nn import Tensor
from shiftdet.shift import ShiftConfig, _shift_data, receptive_field, temporal_shift


def constant_clip(K=3, C=8, H=2, W=2):
    """Frame t holds the constant value t+1 on every channel."""
    x = np.zeros((K, C, H, W))
    for t in range(K):
        x[t] = t + 1
    return x


class TestShiftRule:
    def test_hand_oracle(self):
        """K=3, C=8, fold=1, frame t == t+1 everywhere."""
        cfg = ShiftConfig(num_frames=3, shift_fraction=Fraction(1, 8))
        out = temporal_shift(Tensor(constant_clip()), cfg).data
        # frame 1: ch0 from frame 0 (=1), ch1 from frame 2 (=3), rest stay 2
        assert (out[1, 0] == 1).all()
        assert (out[1, 1] == 3).all()
        assert (out[1, 2:] == 2).all()
        # frame 0: no past -> ch0 zero; ch1 from frame 1 (=2)
        assert (out[0, 0] == 0).all()
        assert (out[0, 1] == 2).all()
        assert (out[0, 2:] == 1).all()
        # frame 2: ch0 from frame 1 (=2); no future -> ch1 zero
        assert (out[2, 0] == 2).all()
        assert (out[2, 1] == 0).all()
        assert (out[2, 2:] == 3).all()

    def test_zero_fraction_is_identity(self):
        cfg = ShiftConfig(num_frames=4, shift_fraction=Fraction(0))
        x = Tensor(np.random.default_rng(0).normal(size=(4, 8, 3, 3)))
        out = temporal_shift(x, cfg)
        assert out is x

    def test_time_constant_input(self):
        """Constant-in-time input: only the two boundary slices change (to 0)."""
        cfg = ShiftConfig(num_frames=4, shift_fraction=Fraction(1, 8))
        x = np.tile(np.random.default_rng(1).normal(size=(1, 8, 2, 2)), (4, 1, 1, 1))
        out = temporal_shift(Tensor(x), cfg).data
        assert (out[0, 0] == 0).all()
        assert (out[-1, 1] == 0).all()
        mask = np.ones_like(x, dtype=bool)
        mask[0, 0] = mask[-1, 1] = False
        np.testing.assert_array_equal(out[mask], x[mask])

    def test_conservation(self):
        """Total mass drops by exactly the two slices that shifted out."""
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 16, 4, 4))
        cfg = ShiftConfig(num_frames=8, shift_fraction=Fraction(1, 8))
        fold = cfg.fold(16)
        out = temporal_shift(Tensor(x), cfg).data
        lost = x[-1, :fold].sum() + x[0, fold : 2 * fold].sum()
        np.testing.assert_allclose(out.sum(), x.sum() - lost, rtol=1e-10)

    def test_swapped_composition_identity_interior(self):
        """Forward shift then direction-swapped shift restores interior
        frames' shifted channels."""
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 8, 2, 2))
        fold = 1
        y = _shift_data(_shift_data(x, fold, swap=False), fold, swap=True)
        np.testing.assert_array_equal(y[1:-1, : 2 * fold], x[1:-1, : 2 * fold])
        np.testing.assert_array_equal(y[:, 2 * fold :], x[:, 2 * fold :])

    def test_impulse_moves_one_frame(self):
        """A voxel in a forward-shifted channel of frame t lands in frame t+1."""
        cfg = ShiftConfig(num_frames=5, shift_fraction=Fraction(1, 8))
        x = np.zeros((5, 8, 2, 2))
        x[2, 0, 1, 1] = 7.0
        out = temporal_shift(Tensor(x), cfg).data
        assert out[3, 0, 1, 1] == 7.0
        assert out[2, 0, 1, 1] == 0.0
        assert np.count_nonzero(out) == 1


class TestShiftErrors:
    def test_frame_count_mismatch(self):
        cfg = ShiftConfig(num_frames=8)
        with pytest.raises(ContractError):
            temporal_shift(Tensor(np.zeros((4, 8, 2, 2))), cfg)

    def test_non_integer_fold(self):
        cfg = ShiftConfig(num_frames=2, shift_fraction=Fraction(1, 8))
        with pytest.raises(ContractError):
            temporal_shift(Tensor(np.zeros((2, 12, 2, 2))), cfg)

    def test_bad_num_frames(self):
        with pytest.raises(ContractError):
            ShiftConfig(num_frames=1)

    def test_bad_fraction(self):
        with pytest.raises(ContractError):
            ShiftConfig(shift_fraction=Fraction(3, 4))


class TestShiftGradient:
    def test_adjoint_matches_finite_differences(self):
        cfg = ShiftConfig(num_frames=4, shift_fraction=Fraction(1, 4))
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(4, 8, 2, 2)), requires_grad=True)
        proj = rng.normal(size=(4, 8, 2, 2))

        def f(x_):
            return nn.inner(temporal_shift(x_, cfg), proj)

        assert nn.grad_check(f, {"x": x}, eps=1e-6)["x"] < 1e-6

    def test_boundary_gradient_drops(self):
        """Slices that shifted out of the clip receive zero gradient."""
        cfg = ShiftConfig(num_frames=3, shift_fraction=Fraction(1, 8))
        x = Tensor(np.ones((3, 8, 1, 1)), requires_grad=True)
        out = temporal_shift(x, cfg)
        out.backward(np.ones(out.shape))
        assert (x.grad[-1, 0] == 0).all()  # last frame's forward slice went nowhere
        assert (x.grad[0, 1] == 0).all()  # first frame's backward slice went nowhere
        assert (x.grad[:, 2:] == 1).all()


class TestReceptiveField:
    def test_growth_law(self):
        assert receptive_field(0) == 1
        assert receptive_field(1) == 3
        assert receptive_field(2) == 5

    def test_cap_at_clip_length(self):
        assert receptive_field(4, num_frames=8) == 8
        assert receptive_field(100, num_frames=8) == 8

    def test_negative_depth_rejected(self):
        with pytest.raises(ContractError):
            receptive_field(-1)
