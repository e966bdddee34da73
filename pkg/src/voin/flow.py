"""Residual flow completion.

The initial flow is the reference flow with its occluded region zeroed (the
desk-scale stand-in for an external estimator). A UNet sees both frames, the
corrupted flow, the visible/amodal masks and the amodal contour, and predicts
a residue that is added back only inside the amodal mask, so background flow
passes through bit-exact.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import FlowSequence, HyperParams, ValidationError


def contour_mask(mask):
    """1-px inner boundary: mask minus its 4-neighborhood erosion."""
    m = np.asarray(mask) > 0
    p = np.pad(m, [(0, 0)] * (m.ndim - 2) + [(1, 1), (1, 1)])
    er = (p[..., 1:-1, 1:-1] & p[..., :-2, 1:-1] & p[..., 2:, 1:-1]
          & p[..., 1:-1, :-2] & p[..., 1:-1, 2:])
    return (m & ~er).astype(np.uint8)


def initial_flow(sample, direction="forward"):
    """Reference flow with the occluded region zeroed out.

    Forward pair t lives on frame t, so it loses the pixels occluded at t;
    backward pair t lives on frame t+1.
    """
    if direction == "forward":
        flows = sample.flow_fwd.flows.copy()
        occ_of = lambda t: sample.occluded.masks[t]
    elif direction == "backward":
        flows = sample.flow_bwd.flows.copy()
        occ_of = lambda t: sample.occluded.masks[t + 1]
    else:
        raise ValueError("direction must be forward or backward")
    for t in range(flows.shape[0]):
        flows[t][occ_of(t) > 0] = 0.0
    return FlowSequence(flows, direction)


@dataclass
class FlowCondition:
    """Everything one flow-completion pass needs, all on the source frame."""

    frame_a: np.ndarray  # (H, W, 3) frame the flow starts from
    frame_b: np.ndarray  # (H, W, 3) frame the flow points into
    init_flow: np.ndarray  # (H, W, 2) corrupted flow
    visible: np.ndarray  # (H, W) uint8
    amodal: np.ndarray  # (H, W) uint8
    contour: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        hw = self.frame_a.shape[:2]
        for name in ("frame_b", "init_flow", "visible", "amodal", "contour"):
            if getattr(self, name).shape[:2] != hw:
                raise ValidationError("%s shaped %r, expected %r"
                                      % (name, getattr(self, name).shape[:2], hw))
        if (np.asarray(self.contour) & ~(np.asarray(self.amodal) > 0)).any():
            raise ValidationError("contour leaves the amodal mask")


def build_conditions(sample, direction="forward", init=None, amodal=None):
    """One FlowCondition per frame pair of the sample.

    amodal overrides the sample's ground-truth masks (predicted masks at
    evaluation time); accepts a MaskSequence or a (T, H, W) array.
    """
    if init is None:
        init = initial_flow(sample, direction)
    am = sample.amodal.masks if amodal is None else \
        (amodal.masks if hasattr(amodal, "masks") else amodal)
    frames = sample.corrupted_clip.frames
    conds = []
    for t in range(init.flows.shape[0]):
        s = t if direction == "forward" else t + 1
        d = t + 1 if direction == "forward" else t
        conds.append(FlowCondition(
            frame_a=frames[s], frame_b=frames[d], init_flow=init.flows[t],
            visible=sample.visible.masks[s], amodal=am[s],
            contour=contour_mask(am[s])))
    return conds


class _DoubleConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(cout, cout, 3, 1, 1), nn.ReLU())

    def forward(self, x):
        return self.net(x)


class FlowUNet(nn.Module):
    """4-down/4-up encoder-decoder over the 11-channel conditioning stack."""

    def __init__(self, base=16):
        super().__init__()
        b = base
        self.inc = _DoubleConv(11, b)
        self.down = nn.ModuleList([
            _DoubleConv(b, 2 * b), _DoubleConv(2 * b, 4 * b),
            _DoubleConv(4 * b, 8 * b), _DoubleConv(8 * b, 8 * b)])
        self.up = nn.ModuleList([
            _DoubleConv(16 * b, 4 * b), _DoubleConv(8 * b, 2 * b),
            _DoubleConv(4 * b, b), _DoubleConv(2 * b, b)])
        self.outc = nn.Conv2d(b, 2, 1)

    def forward(self, x):
        feats = [self.inc(x)]
        for blk in self.down:
            feats.append(blk(F.max_pool2d(feats[-1], 2)))
        y = feats[-1]
        for blk, skip in zip(self.up, feats[-2::-1]):
            y = F.interpolate(y, scale_factor=2, mode="bilinear",
                              align_corners=False)
            y = blk(torch.cat([y, skip], dim=1))
        return self.outc(y)


def condition_tensor(cond, use_amodal=True):
    """Stack a FlowCondition into the (11, H, W) network input."""
    am = cond.amodal.astype(np.float32)
    ct = cond.contour.astype(np.float32)
    if not use_amodal:
        am = np.zeros_like(am)
        ct = np.zeros_like(ct)
    chans = [cond.frame_a.transpose(2, 0, 1).astype(np.float32),
             cond.frame_b.transpose(2, 0, 1).astype(np.float32),
             cond.init_flow.transpose(2, 0, 1).astype(np.float32),
             cond.visible.astype(np.float32)[None],
             am[None], ct[None]]
    return torch.from_numpy(np.concatenate(chans, axis=0))


def residual_forward(net, x, init_flow, amodal):
    """Differentiable completion: init + amodal * residue.

    x: (B, 11, H, W); init_flow: (B, 2, H, W); amodal: (B, 1, H, W).
    """
    return init_flow + amodal * net(x)


def complete_flow(net, cond, use_amodal=True):
    """Run one condition through the net; returns (H, W, 2) float32.

    Outside the amodal mask the output is the initial flow, bit for bit.
    """
    x = condition_tensor(cond, use_amodal).unsqueeze(0)
    with torch.no_grad():
        res = net(x)[0].numpy().transpose(1, 2, 0)
    out = cond.init_flow.astype(np.float32) + res * (cond.amodal > 0)[..., None]
    return np.where((cond.amodal > 0)[..., None], out,
                    cond.init_flow.astype(np.float32))


def complete_flow_sequence(net, sample, direction="forward", use_amodal=True,
                           amodal=None):
    conds = build_conditions(sample, direction, amodal=amodal)
    return FlowSequence(np.stack([complete_flow(net, c, use_amodal)
                                  for c in conds]), direction)


def _forward_diffs(f):
    # forward differences with replicate padding: last column/row diff is 0
    gx = f[..., :, 1:] - f[..., :, :-1]
    gy = f[..., 1:, :] - f[..., :-1, :]
    gx = F.pad(gx, (0, 1, 0, 0))
    gy = F.pad(gy, (0, 0, 0, 1))
    return gx, gy


def flow_gradient_loss(pred, target, amodal, contour, lam3=1.0, lam4=0.1):
    """Match flow gradients inside the mask; smooth them off the contour.

    pred, target: (B, 2, H, W); amodal, contour: (B, H, W). The total is
    averaged over amodal pixels.
    """
    if lam3 < 0 or lam4 < 0:
        raise ValueError("gradient loss weights must be nonnegative")
    gx_p, gy_p = _forward_diffs(pred)
    gx_t, gy_t = _forward_diffs(target)
    match = (gx_t - gx_p).abs().sum(1) + (gy_t - gy_p).abs().sum(1)
    smooth = gx_p.abs().sum(1) + gy_p.abs().sum(1)
    m = amodal.to(pred.dtype)
    off_edge = 1.0 - contour.to(pred.dtype)
    num = (m * (lam3 * match + lam4 * off_edge * smooth)).sum()
    return num / m.sum().clamp(min=1.0)


def _binomial_kernel(dtype, device):
    k = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=dtype, device=device)
    return k / k.sum()


def _blur(x, gain=1.0):
    k = _binomial_kernel(x.dtype, x.device) * gain
    c = x.shape[1]
    kx = k.view(1, 1, 1, 5).expand(c, 1, 1, 5)
    ky = k.view(1, 1, 5, 1).expand(c, 1, 5, 1)
    x = F.pad(x, (2, 2, 0, 0), mode="replicate")
    x = F.conv2d(x, kx, groups=c)
    x = F.pad(x, (0, 0, 2, 2), mode="replicate")
    return F.conv2d(x, ky, groups=c)


def _upsample2(x, size):
    # zero-stuff then blur with doubled per-axis gain to keep magnitudes
    B, C, H, W = x.shape
    up = x.new_zeros(B, C, H * 2, W * 2)
    up[..., ::2, ::2] = x
    return _blur(up, gain=2.0)[..., :size[0], :size[1]]


def laplacian_pyramid(x, levels=3):
    """Bandpass stack; the final entry is the lowpass residual."""
    if x.shape[-2] % (1 << (levels - 1)) or x.shape[-1] % (1 << (levels - 1)):
        raise ValueError("spatial dims must divide by 2^(levels-1)")
    bands = []
    g = x
    for _ in range(levels - 1):
        g1 = _blur(g)[..., ::2, ::2]
        bands.append(g - _upsample2(g1, g.shape[-2:]))
        g = g1
    bands.append(g)
    return bands


def laplacian_pyramid_loss(pred, target, levels=3):
    """Sum of 2^j-weighted mean absolute band differences."""
    bp = laplacian_pyramid(pred, levels)
    bt = laplacian_pyramid(target, levels)
    total = pred.new_zeros(())
    for j, (a, b) in enumerate(zip(bp, bt)):
        total = total + (2.0 ** j) * (a - b).abs().mean()
    return total


def torch_warp(img, flow):
    """Bilinear warp of img by flow, clamped at borders; grads flow to flow.

    img: (B, C, H, W); flow: (B, 2, H, W) with u along x.
    """
    B, C, H, W = img.shape
    ys, xs = torch.meshgrid(torch.arange(H, dtype=img.dtype, device=img.device),
                            torch.arange(W, dtype=img.dtype, device=img.device),
                            indexing="ij")
    qx = (xs + flow[:, 0]).clamp(0.0, W - 1.0)
    qy = (ys + flow[:, 1]).clamp(0.0, H - 1.0)
    x0 = qx.floor().long()
    y0 = qy.floor().long()
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)
    wx = (qx - x0).unsqueeze(1)
    wy = (qy - y0).unsqueeze(1)
    bi = torch.arange(B, device=img.device).view(B, 1, 1)
    g = lambda yy, xx: img[bi, :, yy, xx].permute(0, 3, 1, 2)
    top = g(y0, x0) * (1 - wx) + g(y0, x1) * wx
    bot = g(y1, x0) * (1 - wx) + g(y1, x1) * wx
    return top * (1 - wy) + bot * wy


def warp_loss(pred, frame_a, frame_b, amodal):
    """Mean over amodal pixels of the color L1 between frame_a and warped frame_b.

    pred: (B, 2, H, W); frames: (B, 3, H, W); amodal: (B, H, W).
    """
    warped = torch_warp(frame_b, pred)
    l1 = (frame_a - warped).abs().sum(1)
    m = amodal.to(pred.dtype)
    return (m * l1).sum() / m.sum().clamp(min=1.0)


def flow_loss(pred, target, amodal, contour, hp=None, frames=None):
    """Weighted L1 + pyramid + gradient terms, plus warping when frames given.

    pred, target: (B, 2, H, W); amodal, contour: (B, H, W); frames, when
    supervision frames are available, is the pair (frame_a, frame_b) each
    (B, 3, H, W).
    """
    if hp is None:
        hp = HyperParams()
    w = (1.0 + amodal.to(pred.dtype)).unsqueeze(1)
    l1 = (w * (pred - target).abs()).mean()
    lap = laplacian_pyramid_loss(pred, target)
    grad = flow_gradient_loss(pred, target, amodal, contour, hp.lam3, hp.lam4)
    total = l1 + hp.lam2 * lap + grad
    if frames is not None:
        total = total + warp_loss(pred, frames[0], frames[1], amodal)
    return total
