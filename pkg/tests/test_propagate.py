import numpy as np
import pytest

from conftest import make_sample
from voin import propagate
from voin.data import FlowSequence, MaskSequence, VideoClip
from voin.propagate import (cycle_consistency_mask, fill_fraction,
                            init_state, propagate_pixels,
                            remaining_hole_mask, warp_bilinear)


def test_warp_zero_flow_identity(rng):
    img = rng.random((5, 6, 3)).astype(np.float32)
    valid = (rng.random((5, 6)) > 0.3).astype(np.uint8)
    out, ok = warp_bilinear(img, np.zeros((5, 6, 2), np.float32), valid)
    assert (out == img).all()
    assert (ok == valid).all()


def test_warp_integer_shift_on_ramp():
    # flow (1, 0): sample from one column to the right
    img = np.tile(np.arange(6, dtype=np.float32)[None, :, None], (4, 1, 1))
    flow = np.zeros((4, 6, 2), np.float32)
    flow[..., 0] = 1.0
    out, ok = warp_bilinear(img, flow)
    assert (out[:, :-1, 0] == img[:, 1:, 0]).all()
    assert ok[:, :-1].all()
    assert not ok[:, -1].any()


def test_warp_bilinear_midpoint():
    img = np.array([[[0.0], [1.0]]], np.float32)
    flow = np.zeros((1, 2, 2), np.float32)
    flow[0, 0, 0] = 0.5
    out, ok = warp_bilinear(img, flow)
    assert out[0, 0, 0] == pytest.approx(0.5)
    assert ok[0, 0] == 1


def test_warp_invalid_neighbor_blocks():
    img = np.ones((2, 3, 1), np.float32)
    valid = np.ones((2, 3), np.uint8)
    valid[0, 2] = 0
    flow = np.zeros((2, 3, 2), np.float32)
    flow[0, 1, 0] = 0.5  # straddles columns 1 and 2; col 2 invalid
    _, ok = warp_bilinear(img, flow, valid)
    assert ok[0, 1] == 0
    flow[0, 1, 0] = 1.0  # lands exactly on col 2
    _, ok = warp_bilinear(img, flow, valid)
    assert ok[0, 1] == 0


def test_cycle_exact_inverse_pair():
    fwd = np.zeros((16, 16, 2), np.float32)
    fwd[..., 0], fwd[..., 1] = 3.0, 4.0
    ok = cycle_consistency_mask(fwd, -fwd)
    assert ok.all()


def test_cycle_error_six_all_invalid():
    fwd = np.zeros((16, 16, 2), np.float32)
    fwd[..., 0] = 6.0
    ok = cycle_consistency_mask(fwd, np.zeros_like(fwd))
    assert not ok.any()


def test_cycle_zero_all_valid():
    z = np.zeros((16, 16, 2), np.float32)
    assert cycle_consistency_mask(z, z).all()


def _three_frame_case():
    """Object strip visible in frames 0 and 2, occluded center in frame 1."""
    t, h, w = 3, 6, 8
    frames = np.zeros((t, h, w, 3), np.float32)
    colors = np.linspace(0.1, 0.9, w, dtype=np.float32)
    amodal = np.zeros((t, h, w), np.uint8)
    for ti in range(t):
        amodal[ti, 2:4, 1 + ti:5 + ti] = 1
        for c in range(3):
            frames[ti, 2:4, 1 + ti:5 + ti, c] = colors[:4]
    occluded = np.zeros_like(amodal)
    occluded[1, 2:4, 3:5] = 1
    corrupted = frames.copy()
    corrupted[occluded > 0] = 0.5
    fwd = np.zeros((t - 1, h, w, 2), np.float32)
    bwd = np.zeros((t - 1, h, w, 2), np.float32)
    for ti in range(t - 1):
        fwd[ti, amodal[ti] > 0] = (1.0, 0.0)
        bwd[ti, amodal[ti + 1] > 0] = (-1.0, 0.0)
    return (VideoClip(frames), VideoClip(corrupted),
            MaskSequence(amodal, "amodal"), MaskSequence(occluded, "occluded"),
            FlowSequence(fwd, "forward"), FlowSequence(bwd, "backward"))


def test_three_frame_fill_exact():
    gt, corrupted, amodal, occluded, fwd, bwd = _three_frame_case()
    state = init_state(corrupted, occluded, amodal)
    state = propagate_pixels(state, fwd, bwd, amodal)
    assert (remaining_hole_mask(state).masks == 0).all()
    assert np.array_equal(state.frames, gt.frames)
    assert fill_fraction(state, occluded) == 1.0


def test_zero_flow_same_pixels_never_fills():
    t, h, w = 3, 6, 6
    corrupted = VideoClip(np.zeros((t, h, w, 3), np.float32))
    amodal = np.zeros((t, h, w), np.uint8)
    amodal[:, 2:4, 2:4] = 1
    occluded = np.zeros_like(amodal)
    occluded[:, 2:4, 2:4] = 1
    zf = FlowSequence(np.zeros((t - 1, h, w, 2), np.float32), "forward")
    zb = FlowSequence(np.zeros((t - 1, h, w, 2), np.float32), "backward")
    am = MaskSequence(amodal, "amodal")
    state = init_state(corrupted, MaskSequence(occluded, "occluded"), am)
    state = propagate_pixels(state, zf, zb, am)
    assert (remaining_hole_mask(state).masks == occluded).all()
    assert fill_fraction(state, MaskSequence(occluded, "occluded")) == 0.0


def test_known_monotone_and_idempotent():
    _, corrupted, amodal, occluded, fwd, bwd = _three_frame_case()
    state = init_state(corrupted, occluded, amodal)
    before = state.known.copy()
    state = propagate_pixels(state, fwd, bwd, amodal, max_sweeps=1)
    assert (state.known >= before).all()
    mid = state.known.copy()
    state = propagate_pixels(state, fwd, bwd, amodal)
    assert (state.known >= mid).all()
    done_frames = state.frames.copy()
    again = propagate_pixels(state, fwd, bwd, amodal)
    assert np.array_equal(again.frames, done_frames)
    assert np.array_equal(again.known, state.known)


def test_direction_order_insensitive_at_fixpoint():
    _, corrupted, amodal, occluded, fwd, bwd = _three_frame_case()
    a = propagate_pixels(init_state(corrupted, occluded, amodal),
                         fwd, bwd, amodal, first_direction="forward")
    b = propagate_pixels(init_state(corrupted, occluded, amodal),
                         fwd, bwd, amodal, first_direction="backward")
    assert np.array_equal(a.known, b.known)
    assert np.array_equal(a.frames, b.frames)


def test_no_background_leakage():
    _, corrupted, amodal, occluded, fwd, bwd = _three_frame_case()
    state = init_state(corrupted, occluded, amodal)
    state = propagate_pixels(state, fwd, bwd, amodal)
    filled = state.filled_by_flow
    assert not (filled & ~amodal.masks.astype(bool)).any()


def test_synthetic_scene_bit_exact():
    sample = make_sample(seed=21, t=5, occ_vel=(2.0, 0.0))
    state = init_state(sample.corrupted_clip, sample.occluded, sample.amodal)
    state = propagate_pixels(state, sample.flow_fwd, sample.flow_bwd,
                             sample.amodal)
    filled = state.filled_by_flow & (sample.occluded.masks > 0)
    assert filled.any()
    got = state.frames[filled]
    want = sample.gt_clip.frames[filled]
    assert np.array_equal(got, want)
