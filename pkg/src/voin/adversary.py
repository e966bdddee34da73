"""Discriminators and adversarial losses.

Two discriminators regularize the generator: a temporal PatchGAN scoring
spatio-temporal patches with a hinge objective, and a multi-class
discriminator that must name the object's texture class for real clips and
an extra fake class for generated ones. A spatio-temporal attention module
(STAM) after the fourth conv layer lets the classifier reweight frames and
regions. Both use spectral-normalized weights, one power iteration per step.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils import spectral_norm


class TPatchDiscriminator(nn.Module):
    """3D-conv stack emitting a patch score map, (B,3,T,H,W) -> (B,1,T,H',W')."""

    def __init__(self, base=16):
        super().__init__()
        b = base
        self.net = nn.Sequential(
            spectral_norm(nn.Conv3d(3, b, (3, 5, 5), (1, 2, 2), (1, 2, 2))),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv3d(b, 2 * b, (3, 5, 5), (1, 2, 2), (1, 2, 2))),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv3d(2 * b, 4 * b, (3, 5, 5), (1, 2, 2), (1, 2, 2))),
            nn.LeakyReLU(0.2),
            spectral_norm(nn.Conv3d(4 * b, 1, (3, 5, 5), (1, 1, 1), (1, 2, 2))))

    def forward(self, clip):
        return self.net(clip)


class STAM(nn.Module):
    """out = x + w_t(x) * w_s(x) * x on (B, C, T, H, W) features.

    The temporal branch pools space away and projects each frame's channel
    vector to one weight; the spatial branch pools channels and time to
    mean/max maps and runs a 7x7 convolution. Both squash to (0,1), so the
    module is a gated residual.
    """

    def __init__(self, channels):
        super().__init__()
        hidden = max(channels // 4, 1)
        self.t_proj = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(),
                                    nn.Linear(hidden, 1))
        self.s_conv = nn.Conv2d(2, 1, 7, 1, 3)

    def forward(self, x):
        B, C, T, H, W = x.shape
        t_in = x.mean(dim=(3, 4)).permute(0, 2, 1)  # (B, T, C)
        w_t = torch.sigmoid(self.t_proj(t_in)).permute(0, 2, 1)  # (B, 1, T)
        w_t = w_t.view(B, 1, T, 1, 1)
        s_in = torch.stack([x.mean(dim=(1, 2)), x.amax(dim=(1, 2))], dim=1)
        w_s = torch.sigmoid(self.s_conv(s_in)).view(B, 1, 1, H, W)
        return x + w_t * w_s * x


class MultiClassDiscriminator(nn.Module):
    """Six 3x5x5 conv layers, STAM above the fourth, K+1 class logits."""

    def __init__(self, classes=4, base=16, use_stam=True):
        super().__init__()
        b = base
        chans = [3, b, 2 * b, 4 * b, 4 * b, 4 * b, 4 * b]
        strides = [(1, 2, 2)] * 4 + [(1, 1, 1)] * 2
        self.convs = nn.ModuleList(
            spectral_norm(nn.Conv3d(chans[i], chans[i + 1], (3, 5, 5),
                                    strides[i], (1, 2, 2)))
            for i in range(6))
        self.stam = STAM(chans[4]) if use_stam else None
        self.head = spectral_norm(nn.Linear(chans[-1], classes + 1))

    def forward(self, clip):
        x = clip
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            if i == 3 and self.stam is not None:
                x = self.stam(x)
        return self.head(x.mean(dim=(2, 3, 4)))


def _clip_to_3d(clip):
    # (B, T, 3, H, W) -> (B, 3, T, H, W) for 3D convolution
    return clip.permute(0, 2, 1, 3, 4)


def discriminator_loss(tpatch, md, real, fake, class_id,
                       use_tp=True, use_md=True):
    """Hinge terms for the patch discriminator plus class cross-entropies.

    real, fake: (B, T, 3, H, W); class_id: (B,) true classes. The fake clip
    is detached, so only discriminator parameters see gradients.
    """
    fake = fake.detach()
    total = real.new_zeros(())
    if use_tp:
        total = total + F.relu(1.0 - tpatch(_clip_to_3d(real))).mean()
        total = total + F.relu(1.0 + tpatch(_clip_to_3d(fake))).mean()
    if use_md:
        k = md.head.out_features - 1
        if (class_id < 0).any() or (class_id >= k).any():
            raise ValueError("class id outside [0, %d)" % k)
        fake_cls = torch.full_like(class_id, k)
        total = total + F.cross_entropy(md(_clip_to_3d(real)), class_id)
        total = total + F.cross_entropy(md(_clip_to_3d(fake)), fake_cls)
    return total


def generator_adversarial_loss(tpatch, md, fake, class_id,
                               use_tp=True, use_md=True):
    """-mean patch score plus cross-entropy toward the clip's true class.

    Gradients reach the generator through fake; discriminator parameters are
    excluded from the graph while this loss is built, so they receive none.
    """
    dparams = []
    if use_tp:
        dparams += list(tpatch.parameters())
    if use_md:
        dparams += list(md.parameters())
    flags = [p.requires_grad for p in dparams]
    for p in dparams:
        p.requires_grad_(False)
    try:
        total = fake.new_zeros(())
        if use_tp:
            total = total - tpatch(_clip_to_3d(fake)).mean()
        if use_md:
            total = total + F.cross_entropy(md(_clip_to_3d(fake)), class_id)
    finally:
        for p, f in zip(dparams, flags):
            p.requires_grad_(f)
    return total
