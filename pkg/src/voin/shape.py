"""Amodal shape completion.

A strided frame encoder brings the clip to quarter resolution, a stack of
transformer layers attends over multi-scale spatio-temporal patches (each
head owns one patch scale), and a decoder upsamples back. The class
embedding, multiplied by the visible mask, joins the decoder features in a
small fusion head that emits per-pixel amodal logits.
"""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def patch_embed(features, r1, r2):
    """(T, C, H, W) -> (T*(H/r1)*(W/r2), C*r1*r2) patch rows, row-major."""
    T, C, H, W = features.shape
    if H % r1 or W % r2:
        raise ValueError("patch size (%d, %d) does not divide (%d, %d)"
                         % (r1, r2, H, W))
    x = features.view(T, C, H // r1, r1, W // r2, r2)
    x = x.permute(0, 2, 4, 1, 3, 5).contiguous()
    return x.view(T * (H // r1) * (W // r2), C * r1 * r2)


def patch_unembed(patches, r1, r2, T, C, H, W):
    """Inverse of patch_embed."""
    x = patches.view(T, H // r1, W // r2, C, r1, r2)
    x = x.permute(0, 3, 1, 4, 2, 5).contiguous()
    return x.view(T, C, H, W)


def scaled_dot_product_attention(q, k, v):
    """softmax(q k^T / sqrt(d_k)) v over the leading row dimension."""
    if not (torch.isfinite(q).all() and torch.isfinite(k).all()
            and torch.isfinite(v).all()):
        raise ValueError("attention inputs must be finite")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


def sinusoidal_positions(T, H, W, C, device=None, dtype=torch.float32):
    """Fixed (t, y, x) encoding, (T, C, H, W); channels split across axes."""
    per = C // 3
    counts = (C - 2 * per, per, per)
    out = torch.zeros(T, C, H, W, dtype=dtype, device=device)
    c0 = 0
    for axis, (n_ch, size) in enumerate(zip(counts, (T, H, W))):
        pos = torch.arange(size, dtype=dtype, device=device)
        half = max((n_ch + 1) // 2, 1)
        freq = torch.exp(-math.log(10000.0)
                         * torch.arange(half, dtype=dtype, device=device) / half)
        ang = pos[:, None] * freq[None, :]
        enc = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)[:, :n_ch]
        if axis == 0:
            out[:, c0:c0 + n_ch] += enc.view(T, n_ch, 1, 1)
        elif axis == 1:
            out[:, c0:c0 + n_ch] += enc.t().contiguous().view(1, n_ch, H, 1)
        else:
            out[:, c0:c0 + n_ch] += enc.t().contiguous().view(1, n_ch, 1, W)
        c0 += n_ch
    return out


class MultiScaleAttention(nn.Module):
    """One attention layer; each head attends over its own patch scale."""

    def __init__(self, channels, heads, patch_scales, d_k):
        super().__init__()
        if channels % heads:
            raise ValueError("channels must divide evenly across heads")
        if len(patch_scales) != heads:
            raise ValueError("need one patch scale per head")
        self.scales = tuple(tuple(s) for s in patch_scales)
        self.d_k = d_k
        self.query = nn.ModuleList(nn.Conv2d(channels, d_k, 1) for _ in range(heads))
        self.key = nn.ModuleList(nn.Conv2d(channels, d_k, 1) for _ in range(heads))
        self.value = nn.ModuleList(nn.Conv2d(channels, channels // heads, 1)
                                   for _ in range(heads))
        self.merge = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        # x: (B, T, C, H, W)
        B, T, C, H, W = x.shape
        flat = x.reshape(B * T, C, H, W)
        heads_out = []
        for q_proj, k_proj, v_proj, (r1, r2) in zip(
                self.query, self.key, self.value, self.scales):
            q = q_proj(flat).view(B, T, self.d_k, H, W)
            k = k_proj(flat).view(B, T, self.d_k, H, W)
            v = v_proj(flat)
            cv = v.shape[1]
            v = v.view(B, T, cv, H, W)
            outs = []
            for b in range(B):
                qb = patch_embed(q[b], r1, r2)
                kb = patch_embed(k[b], r1, r2)
                vb = patch_embed(v[b], r1, r2)
                ob = scaled_dot_product_attention(qb, kb, vb)
                outs.append(patch_unembed(ob, r1, r2, T, cv, H, W))
            heads_out.append(torch.stack(outs))
        merged = torch.cat(heads_out, dim=2).reshape(B * T, C, H, W)
        return self.merge(merged).view(B, T, C, H, W)


class TransformerLayer(nn.Module):
    def __init__(self, channels, heads, patch_scales, d_k):
        super().__init__()
        self.attn = MultiScaleAttention(channels, heads, patch_scales, d_k)
        self.norm1 = nn.LayerNorm(channels)
        self.norm2 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(nn.Conv2d(channels, channels * 2, 1), nn.ReLU(),
                                nn.Conv2d(channels * 2, channels, 1))

    def _norm(self, x, norm):
        # LayerNorm over channels at every (t, y, x) location
        return norm(x.permute(0, 1, 3, 4, 2)).permute(0, 1, 4, 2, 3)

    def forward(self, x):
        x = x + self.attn(self._norm(x, self.norm1))
        B, T, C, H, W = x.shape
        y = self._norm(x, self.norm2).reshape(B * T, C, H, W)
        return x + self.ff(y).view(B, T, C, H, W)


class ShapeNet(nn.Module):
    """Corrupted frames + visible masks + class id -> amodal logits."""

    def __init__(self, classes=4, channels=32, layers=8, heads=4,
                 patch_scales=((1, 1), (2, 2), (4, 4), (8, 8)), d_k=16, d_e=16):
        super().__init__()
        self.classes = classes
        half = channels // 2
        self.encoder = nn.Sequential(
            nn.Conv2d(4, half, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(half, channels, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, 2, 1), nn.ReLU())
        self.layers = nn.ModuleList(
            TransformerLayer(channels, heads, patch_scales, d_k)
            for _ in range(layers))
        self.dec1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.dec2 = nn.Conv2d(channels, half, 3, 1, 1)
        self.embed = nn.Embedding(classes, d_e)
        self.fuse = nn.Sequential(
            nn.Conv2d(half + d_e, 16, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(16, 1, 3, 1, 1))

    def forward(self, frames, visible, class_id, use_class=True, use_pos=True):
        """frames (B,T,3,H,W), visible (B,T,H,W), class_id (B,) -> logits (B,T,H,W)."""
        B, T, _, H, W = frames.shape
        x = torch.cat([frames, visible.unsqueeze(2)], dim=2)
        f = self.encoder(x.reshape(B * T, 4, H, W))
        c, h, w = f.shape[1:]
        f = f.view(B, T, c, h, w)
        if use_pos:
            f = f + sinusoidal_positions(T, h, w, c, device=f.device,
                                         dtype=f.dtype)
        for layer in self.layers:
            f = layer(f)
        d = f.reshape(B * T, c, h, w)
        d = F.relu(self.dec1(F.interpolate(d, scale_factor=2, mode="nearest")))
        d = F.relu(self.dec2(F.interpolate(d, scale_factor=2, mode="nearest")))
        if use_class:
            emb = self.embed(class_id)
        else:
            emb = frames.new_zeros(B, self.embed.embedding_dim)
        # semantics enter as an embedding map gated by the visible shape prior
        emb_map = emb[:, None, :, None, None] * visible[:, :, None, :, :]
        d = d.view(B, T, -1, H, W)
        fused = torch.cat([d, emb_map.to(d.dtype)], dim=2)
        out = self.fuse(fused.reshape(B * T, -1, H, W))
        return out.view(B, T, H, W)


def complete_shape(net, clip, visible, class_id, use_class=True):
    """Run the network on one sample; returns (T, H, W) probabilities."""
    if not (0 <= class_id < net.classes):
        raise ValueError("class_id %d outside [0, %d)" % (class_id, net.classes))
    frames = torch.from_numpy(clip.frames).permute(0, 3, 1, 2).unsqueeze(0)
    vis = torch.from_numpy(visible.masks.astype(np.float32)).unsqueeze(0)
    cid = torch.tensor([class_id])
    with torch.no_grad():
        logits = net(frames, vis, cid, use_class=use_class)
    return torch.sigmoid(logits)[0].numpy()


def binarize(prob_maps, threshold=0.5):
    """Probability maps to binary masks; ties at the threshold map to 1."""
    return (np.asarray(prob_maps) >= threshold).astype(np.uint8)


def dice_loss(pred, target, eps=1.0):
    """1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)."""
    if pred.shape != target.shape:
        raise ValueError("dice shape mismatch %r vs %r"
                         % (tuple(pred.shape), tuple(target.shape)))
    inter = (pred * target).sum()
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + target.sum() + eps)


def shape_loss(pred_maps, amodal_gt, occluded_gt, lam1=1.0):
    """BCE against the amodal mask plus weighted dice on the occluded part.

    pred_maps are probabilities. The occluded-region prediction is the map
    masked to the complement of the visible region (amodal AND NOT occluded
    being visible).
    """
    if lam1 < 0:
        raise ValueError("lam1 must be nonnegative")
    p = pred_maps.clamp(1e-7, 1.0 - 1e-7)
    bce = -(amodal_gt * torch.log(p)
            + (1.0 - amodal_gt) * torch.log(1.0 - p)).mean()
    visible = amodal_gt * (1.0 - occluded_gt)
    dice = dice_loss(pred_maps * (1.0 - visible), occluded_gt)
    return bce + lam1 * dice
