"""Occlusion-aware gated inpainting generator.

Every spatial convolution is a gated block whose feature path runs over
temporally shifted channels and whose gate path fuses the occlusion and
amodal masks, so the network can treat occluded, visible and background
areas differently. The generator fills only the residual hole left by
propagation; the composite keeps known pixels untouched.
"""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def temporal_shift(features, n):
    """Shift channel slices across frames, (B, T, C, H, W).

    Slice size s = max(1, C // (2n+1)); slice j in [1, n] reads from frame
    t-j, slice n+j from frame t+j, zero padded at clip ends; the remaining
    channels stay put.
    """
    if n == 0:
        return features
    B, T, C, H, W = features.shape
    s = max(1, C // (2 * n + 1))
    if C < 2 * n * s:
        raise ValueError("C=%d too small for temporal field n=%d" % (C, n))
    out = features.clone()
    for j in range(1, n + 1):
        past = slice((j - 1) * s, j * s)
        out[:, j:, past] = features[:, :-j, past]
        out[:, :j, past] = 0.0
        future = slice((n + j - 1) * s, (n + j) * s)
        out[:, :-j, future] = features[:, j:, future]
        out[:, -j:, future] = 0.0
    return out


class GatedTSMBlock(nn.Module):
    """sigmoid(W_g I + mask fusion) * relu(W_f TSM(I)).

    With occlusion_gate off the mask-fusion convolutions do not exist and
    the gate is the plain feature gate.
    """

    def __init__(self, cin, cout, stride=1, n=2, occlusion_gate=True):
        super().__init__()
        self.n = n
        self.occlusion_gate = occlusion_gate
        self.feat = nn.Conv2d(cin, cout, 3, stride, 1)
        self.gate = nn.Conv2d(cin, cout, 3, stride, 1)
        if occlusion_gate:
            self.fuse = nn.Sequential(
                nn.Conv2d(2, 16, 3, 1, 1), nn.ReLU(),
                nn.Conv2d(16, cout, 3, stride, 1))

    def gate_preactivation(self, x, occ, amodal):
        """Pre-sigmoid gate: gate conv on the raw features plus mask fusion.

        x: (B, T, C, H, W); occ, amodal: (B, T, H, W) at the same resolution.
        """
        B, T = x.shape[:2]
        g = self.gate(x.reshape(B * T, *x.shape[2:]))
        if self.occlusion_gate:
            if occ.shape[-2:] != x.shape[-2:]:
                raise ValueError("mask resolution %r does not match features %r"
                                 % (tuple(occ.shape[-2:]), tuple(x.shape[-2:])))
            m = torch.stack([occ, amodal], dim=2).reshape(B * T, 2, *occ.shape[-2:])
            g = g + self.fuse(m.to(x.dtype))
        return g.view(B, T, *g.shape[1:])

    def forward(self, x, occ, amodal):
        B, T = x.shape[:2]
        shifted = temporal_shift(x, self.n)
        s = self.feat(shifted.reshape(B * T, *shifted.shape[2:]))
        s = s.view(B, T, *s.shape[1:])
        g = self.gate_preactivation(x, occ, amodal)
        return torch.sigmoid(g) * F.relu(s)


def _resize_mask(mask, size):
    # nearest-neighbor resampling of a (B, T, H, W) mask stack
    B, T = mask.shape[:2]
    m = mask.reshape(B * T, 1, *mask.shape[2:]).float()
    m = F.interpolate(m, size=size, mode="nearest")
    return m.view(B, T, *size)


class InpaintGenerator(nn.Module):
    """Encoder-decoder of gated TSM blocks over (propagated frames, hole)."""

    def __init__(self, n=2, occlusion_gate=True, base=32):
        super().__init__()
        og = occlusion_gate
        self.enc1 = GatedTSMBlock(4, base, 1, n, og)
        self.enc2 = GatedTSMBlock(base, 2 * base, 2, n, og)
        self.enc3 = GatedTSMBlock(2 * base, 2 * base, 2, n, og)
        self.mid1 = GatedTSMBlock(2 * base, 2 * base, 1, n, og)
        self.mid2 = GatedTSMBlock(2 * base, 2 * base, 1, n, og)
        self.dec1 = GatedTSMBlock(2 * base, 2 * base, 1, n, og)
        self.dec2 = GatedTSMBlock(2 * base, base, 1, n, og)
        self.head = nn.Conv2d(base, 3, 3, 1, 1)

    def forward(self, frames, hole, amodal, occ):
        """frames (B,T,3,H,W), masks (B,T,H,W) -> clip (B,T,3,H,W) in (0,1)."""
        B, T, _, H, W = frames.shape
        x = torch.cat([frames, hole.unsqueeze(2).to(frames.dtype)], dim=2)

        def masks_at(h, w):
            if (h, w) == (H, W):
                return occ.to(frames.dtype), amodal.to(frames.dtype)
            return _resize_mask(occ, (h, w)), _resize_mask(amodal, (h, w))

        m_full = masks_at(H, W)
        x = self.enc1(x, *m_full)
        x = self.enc2(x, *masks_at(*x.shape[-2:]))
        x = self.enc3(x, *masks_at(*x.shape[-2:]))
        x = self.mid1(x, *masks_at(*x.shape[-2:]))
        x = self.mid2(x, *masks_at(*x.shape[-2:]))
        x = x.reshape(B * T, *x.shape[2:])
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = x.view(B, T, *x.shape[1:])
        x = self.dec1(x, *masks_at(*x.shape[-2:]))
        x = x.reshape(B * T, *x.shape[2:])
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = x.view(B, T, *x.shape[1:])
        x = self.dec2(x, *m_full)
        out = torch.sigmoid(self.head(x.reshape(B * T, *x.shape[2:])))
        return out.view(B, T, 3, H, W)


def composite_output(generated, propagated, hole):
    """hole * generated + (1 - hole) * propagated; works on arrays or tensors."""
    return hole * generated + (1 - hole) * propagated


def inpaint_forward(net, frames, hole, amodal, occ):
    """Numpy wrapper: (T,H,W,3) clips and (T,H,W) masks in and out."""
    f = torch.from_numpy(frames.astype(np.float32)).permute(0, 3, 1, 2).unsqueeze(0)
    h = torch.from_numpy(hole.astype(np.float32)).unsqueeze(0)
    a = torch.from_numpy(amodal.astype(np.float32)).unsqueeze(0)
    o = torch.from_numpy(occ.astype(np.float32)).unsqueeze(0)
    with torch.no_grad():
        out = net(f, h, a, o)
    return out[0].permute(0, 2, 3, 1).numpy()
