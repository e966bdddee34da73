import math

import pytest
import torch
import torch.nn as nn

from voin.adversary import (MultiClassDiscriminator, STAM,
                            TPatchDiscriminator, discriminator_loss,
                            generator_adversarial_loss)


def _zero_params(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class ScriptedScores(nn.Module):
    """Returns the queued scalar as a patch map, one per call."""

    def __init__(self, values):
        super().__init__()
        self.values = list(values)

    def forward(self, clip):
        v = self.values.pop(0)
        return torch.full((clip.shape[0], 1, 2, 2, 2), float(v))


class UniformLogits(nn.Module):
    def __init__(self, classes):
        super().__init__()
        self.head = nn.Linear(4, classes + 1)

    def forward(self, clip):
        return torch.zeros(clip.shape[0], self.head.out_features)


def test_stam_zero_weights_scale_by_1_25(rng):
    stam = STAM(8)
    _zero_params(stam)
    x = torch.tensor(rng.normal(size=(2, 8, 3, 4, 4)), dtype=torch.float32)
    # both gates sit at sigmoid(0) = 0.5, so the residual adds x/4
    assert torch.allclose(stam(x), 1.25 * x, atol=1e-6)


def test_stam_hand_weights():
    stam = STAM(4)
    _zero_params(stam)
    with torch.no_grad():
        stam.t_proj[0].weight.fill_(1.0)
        stam.t_proj[2].weight.fill_(0.5)
    x = torch.zeros(1, 4, 2, 1, 1)
    x[:, :, 1] = 1.0
    out = stam(x)
    # frame 0 carries no signal; frame 1 gains sigmoid(2) * 0.5
    want1 = 1.0 + 0.5 / (1.0 + math.exp(-2.0))
    assert torch.equal(out[:, :, 0], torch.zeros(1, 4, 1, 1))
    assert torch.allclose(out[:, :, 1],
                          torch.full((1, 4, 1, 1), want1), atol=1e-6)


def test_stam_is_bounded_residual(rng):
    torch.manual_seed(5)
    stam = STAM(6)
    x = torch.tensor(rng.normal(size=(1, 6, 4, 5, 5)), dtype=torch.float32)
    out = stam(x)
    gain = out - x
    assert gain.abs().le(x.abs() + 1e-6).all()
    assert (gain * x).ge(-1e-8).all()


def test_stam_only_affects_later_layers(rng):
    torch.manual_seed(2)
    d1 = MultiClassDiscriminator(classes=3, base=4, use_stam=True)
    torch.manual_seed(2)
    d2 = MultiClassDiscriminator(classes=3, base=4, use_stam=False)
    d2.head.load_state_dict(d1.head.state_dict())
    d1.eval()
    d2.eval()
    assert d2.stam is None
    x = torch.tensor(rng.random((1, 3, 2, 32, 32)), dtype=torch.float32)
    with torch.no_grad():
        h1, h2 = x, x
        for i in range(4):
            h1 = torch.nn.functional.leaky_relu(d1.convs[i](h1), 0.2)
            h2 = torch.nn.functional.leaky_relu(d2.convs[i](h2), 0.2)
        assert torch.equal(h1, h2)
        y1 = d1(x)
        y2 = d2(x)
    assert y1.shape == (1, 4)
    assert not torch.allclose(y1, y2)
    extra = (sum(p.numel() for p in d1.parameters())
             - sum(p.numel() for p in d2.parameters()))
    assert extra == sum(p.numel() for p in d1.stam.parameters())


def test_hinge_saturates_on_confident_scores(rng):
    clip = torch.tensor(rng.random((1, 2, 3, 8, 8)), dtype=torch.float32)
    perfect = discriminator_loss(ScriptedScores([20.0, -20.0]), None,
                                 clip, clip.clone(),
                                 torch.tensor([0]), use_md=False)
    assert perfect.item() == 0.0
    fooled = discriminator_loss(ScriptedScores([-20.0, 20.0]), None,
                                clip, clip.clone(),
                                torch.tensor([0]), use_md=False)
    assert fooled.item() == pytest.approx(42.0)
    gen = generator_adversarial_loss(ScriptedScores([20.0]), None,
                                     clip, torch.tensor([0]), use_md=False)
    assert gen.item() == pytest.approx(-20.0)


def test_cross_entropy_at_uniform_logits(rng):
    clip = torch.tensor(rng.random((1, 2, 3, 8, 8)), dtype=torch.float32)
    md = UniformLogits(classes=4)
    loss = discriminator_loss(None, md, clip, clip.clone(),
                              torch.tensor([1]), use_tp=False)
    assert loss.item() == pytest.approx(2.0 * math.log(5.0), abs=1e-6)
    gen = generator_adversarial_loss(None, md, clip,
                                     torch.tensor([1]), use_tp=False)
    assert gen.item() == pytest.approx(math.log(5.0), abs=1e-6)


def test_class_id_out_of_range(rng):
    clip = torch.tensor(rng.random((1, 2, 3, 8, 8)), dtype=torch.float32)
    md = UniformLogits(classes=4)
    with pytest.raises(ValueError):
        discriminator_loss(None, md, clip, clip.clone(),
                           torch.tensor([4]), use_tp=False)
    with pytest.raises(ValueError):
        discriminator_loss(None, md, clip, clip.clone(),
                           torch.tensor([-1]), use_tp=False)


def test_discriminator_loss_compositional(rng):
    torch.manual_seed(7)
    tp = TPatchDiscriminator(base=4).eval()
    md = MultiClassDiscriminator(classes=3, base=4).eval()
    real = torch.tensor(rng.random((1, 2, 3, 16, 16)), dtype=torch.float32)
    fake = torch.tensor(rng.random((1, 2, 3, 16, 16)), dtype=torch.float32)
    cls = torch.tensor([2])
    both = discriminator_loss(tp, md, real, fake, cls)
    tp_only = discriminator_loss(tp, None, real, fake, cls, use_md=False)
    md_only = discriminator_loss(None, md, real, fake, cls, use_tp=False)
    assert both.item() == pytest.approx(tp_only.item() + md_only.item(),
                                        rel=1e-5)


def test_gradient_separation(rng):
    torch.manual_seed(9)
    tp = TPatchDiscriminator(base=4)
    md = MultiClassDiscriminator(classes=3, base=4)
    base_clip = torch.tensor(rng.random((1, 2, 3, 16, 16)),
                             dtype=torch.float32)
    gen_w = nn.Parameter(torch.tensor(0.9))
    cls = torch.tensor([1])

    fake = base_clip * gen_w
    d_loss = discriminator_loss(tp, md, base_clip, fake, cls)
    d_loss.backward()
    assert gen_w.grad is None
    assert any(p.grad is not None and p.grad.abs().sum() > 0
               for p in tp.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0
               for p in md.parameters())

    for p in list(tp.parameters()) + list(md.parameters()):
        p.grad = None
    fake = base_clip * gen_w
    g_loss = generator_adversarial_loss(tp, md, fake, cls)
    g_loss.backward()
    assert gen_w.grad is not None and gen_w.grad.abs() > 0
    assert all(p.grad is None for p in tp.parameters())
    assert all(p.grad is None for p in md.parameters())
    assert all(p.requires_grad for p in tp.parameters())
    assert all(p.requires_grad for p in md.parameters())
