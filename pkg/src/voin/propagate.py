"""Flow-guided pixel propagation.

Occluded object pixels pull colors along completed flow from adjacent frames,
in alternating forward and backward sweeps. Only flow vectors that survive a
forward-backward cycle check are trusted, a pull must land inside the amodal
mask of the adjacent frame, and every contributing bilinear neighbor must be
a known object pixel, so exact flows reproduce ground truth exactly. Each
sweep reads only the previous sweep's state (double-buffered), which makes
frames within a sweep independent.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import MaskSequence


def warp_bilinear(image, flow, valid=None):
    """Sample image at p + flow(p); returns (warped, warped_valid).

    image: (H, W) or (H, W, C); flow: (H, W, 2) with u along x. A warped
    pixel is valid when its target is in bounds and every source neighbor
    that carries positive bilinear weight is valid; zero-weight neighbors do
    not gate validity, so exact integer hits at the border stay usable.
    Out-of-bounds targets sample the clamped border but are marked invalid.
    """
    H, W = image.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    qx = xs + flow[..., 0]
    qy = ys + flow[..., 1]
    inside = (qx >= 0.0) & (qx <= W - 1.0) & (qy >= 0.0) & (qy <= H - 1.0)
    cqx = np.clip(qx, 0.0, W - 1.0)
    cqy = np.clip(qy, 0.0, H - 1.0)
    x0 = np.floor(cqx).astype(np.int64)
    y0 = np.floor(cqy).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = cqx - x0
    wy = cqy - y0
    w00 = (1 - wx) * (1 - wy)
    w10 = wx * (1 - wy)
    w01 = (1 - wx) * wy
    w11 = wx * wy
    img = image.astype(np.float64)
    parts = ((w00, y0, x0), (w10, y0, x1), (w01, y1, x0), (w11, y1, x1))
    if img.ndim == 3:
        warped = sum(img[yy, xx] * wgt[..., None] for wgt, yy, xx in parts)
    else:
        warped = sum(img[yy, xx] * wgt for wgt, yy, xx in parts)
    ok = inside
    if valid is not None:
        v = np.asarray(valid) > 0
        for wgt, yy, xx in parts:
            ok = ok & ((wgt == 0.0) | v[yy, xx])
    return warped, ok


def cycle_consistency_mask(flow_ab, flow_ba, tau=5.0):
    """True where ||flow_ab(p) + flow_ba(p + flow_ab(p))||_2 < tau."""
    back, _ = warp_bilinear(flow_ba, flow_ab)
    err = np.hypot(flow_ab[..., 0] + back[..., 0],
                   flow_ab[..., 1] + back[..., 1])
    return err < tau


@dataclass
class PropagationState:
    """Working frames plus the growing set of trusted pixels.

    known starts as everything that is not occluded (background plus visible
    object) and never shrinks; filled_by_flow records which pixels
    propagation itself wrote.
    """

    frames: np.ndarray  # (T, H, W, 3) float64 working copy
    known: np.ndarray  # (T, H, W) bool
    filled_by_flow: np.ndarray  # (T, H, W) bool
    amodal: np.ndarray  # (T, H, W) uint8
    sweeps: int = 0
    fills: list = field(default_factory=list)


def init_state(clip, occluded, amodal):
    return PropagationState(
        frames=clip.frames.astype(np.float64).copy(),
        known=occluded.masks == 0,
        filled_by_flow=np.zeros(occluded.masks.shape, bool),
        amodal=amodal.masks.copy())


def propagate_pixels(state, flow_fwd, flow_bwd, amodal,
                     tau=5.0, max_sweeps=8, first_direction="forward"):
    """Alternate sweeps until fixpoint or max_sweeps; returns the state.

    A forward sweep fills frame t from frame t+1 through the forward flow;
    a backward sweep fills frame t+1 from frame t through the backward flow.
    Each sweep is computed against a snapshot of the previous sweep, then
    committed, so results do not depend on frame visiting order.
    """
    if first_direction not in ("forward", "backward"):
        raise ValueError("first_direction must be forward or backward")
    am = amodal.masks > 0
    T = am.shape[0]
    fwd = flow_fwd.flows.astype(np.float64)
    bwd = flow_bwd.flows.astype(np.float64)
    valid_fwd = np.stack([cycle_consistency_mask(fwd[t], bwd[t], tau)
                          for t in range(T - 1)])
    valid_bwd = np.stack([cycle_consistency_mask(bwd[t], fwd[t], tau)
                          for t in range(T - 1)])
    state.amodal = amodal.masks.copy()
    offset = 0 if first_direction == "forward" else 1
    idle = 0
    for sweep in range(max_sweeps):
        forward = (sweep + offset) % 2 == 0
        snap_frames = state.frames.copy()
        snap_known = state.known.copy()
        filled = 0
        targets = range(T - 1) if forward else range(1, T)
        for t in targets:
            if forward:
                src, flow, trust = t + 1, fwd[t], valid_fwd[t]
            else:
                src, flow, trust = t - 1, bwd[t - 1], valid_bwd[t - 1]
            need = am[t] & ~snap_known[t] & trust
            if not need.any():
                continue
            ok_src = snap_known[src] & am[src]
            vals, ok = warp_bilinear(snap_frames[src], flow, ok_src)
            take = need & ok
            if take.any():
                state.frames[t][take] = vals[take]
                state.known[t][take] = True
                state.filled_by_flow[t][take] = True
                filled += int(take.sum())
        state.sweeps += 1
        state.fills.append(filled)
        idle = idle + 1 if filled == 0 else 0
        if idle >= 2:
            break
    return state


def remaining_hole_mask(state):
    """Object pixels still unknown after propagation ("unseen" region)."""
    hole = ((state.amodal > 0) & ~state.known).astype(np.uint8)
    return MaskSequence(hole, "occluded")


def fill_fraction(state, occluded):
    """Share of originally occluded pixels that propagation resolved."""
    occ = occluded.masks > 0
    total = int(occ.sum())
    if total == 0:
        return 1.0
    return float((occ & state.known).sum()) / total
