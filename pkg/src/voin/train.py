"""Joint training: shape + flow + generator with alternating adversaries.

Each step runs one discriminator update (hinge + class terms) and one
generator-side update on the weighted multi-task objective. Shape and flow
warm-start for a configurable fraction of steps before the adversarial terms
engage. Downstream modules consume ground-truth masks during training
(teacher forcing); predicted masks flow through the pipeline at evaluation.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import adversary, flow, generator, propagate, shape
from .checkpoint import save_checkpoint
from .data import HyperParams


def content_loss(pred, target, amodal, lam5=1.0):
    """Hole-weighted L1: both terms normalized by the full element count.

    pred, target: (B, T, 3, H, W); amodal: (B, T, H, W). lam5 = 1 collapses
    to plain mean L1.
    """
    if lam5 < 0:
        raise ValueError("lam5 must be nonnegative")
    diff = (pred - target).abs()
    m = amodal.to(pred.dtype).unsqueeze(2)
    total = (m * diff).sum() + lam5 * ((1.0 - m) * diff).sum()
    return total / diff.numel()


def appearance_loss(disc_term, gen_adv_term, content_term, lam6=10.0):
    """Eq-style sum; the discriminator term is logged here but only ever
    optimized by the discriminator step."""
    return disc_term + gen_adv_term + lam6 * content_term


def total_loss(shape_term, flow_term, app_term, hp=None):
    if hp is None:
        hp = HyperParams()
    return shape_term + hp.lam_flow * flow_term + hp.lam_app * app_term


def build_models(cfg):
    """Deterministic construction of all networks for a run config."""
    torch.manual_seed(cfg.seed)
    nets = {}
    nets["shape"] = shape.ShapeNet(
        classes=cfg.classes, channels=cfg.shape_channels, layers=cfg.layers,
        heads=len(cfg.patch_scales), patch_scales=cfg.patch_scales,
        d_k=cfg.d_k, d_e=cfg.d_e)
    nets["flow"] = flow.FlowUNet(base=cfg.flow_base)
    nets["gen"] = generator.InpaintGenerator(
        n=cfg.temporal_field, occlusion_gate=cfg.og, base=cfg.gen_base)
    nets["tpatch"] = adversary.TPatchDiscriminator(base=cfg.disc_base) \
        if cfg.tp else None
    nets["md"] = adversary.MultiClassDiscriminator(
        classes=cfg.classes, base=cfg.disc_base, use_stam=cfg.stam) \
        if cfg.md else None
    return nets


def prepare_batch_item(sample, cfg):
    """Precompute everything train_step needs for one sample, as tensors."""
    to_t = lambda a: torch.from_numpy(np.ascontiguousarray(a, np.float32))
    item = {
        "corrupted": to_t(sample.corrupted_clip.frames).permute(0, 3, 1, 2),
        "gt": to_t(sample.gt_clip.frames).permute(0, 3, 1, 2),
        "visible": to_t(sample.visible.masks),
        "amodal": to_t(sample.amodal.masks),
        "occ": to_t(sample.occluded.masks),
        "class_id": int(sample.object_class),
    }
    if cfg.f:
        state = propagate.init_state(sample.corrupted_clip, sample.occluded,
                                     sample.amodal)
        state = propagate.propagate_pixels(
            state, sample.flow_fwd, sample.flow_bwd, sample.amodal,
            tau=cfg.tau, max_sweeps=cfg.max_sweeps)
        hole = propagate.remaining_hole_mask(state)
        item["gen_frames"] = to_t(np.clip(state.frames, 0.0, 1.0)).permute(0, 3, 1, 2)
        item["hole"] = to_t(hole.masks)
    else:
        item["gen_frames"] = item["corrupted"]
        item["hole"] = item["occ"]
    pairs = []
    for direction in ("forward", "backward"):
        init = flow.initial_flow(sample, direction)
        conds = flow.build_conditions(sample, direction, init)
        gt_flows = (sample.flow_fwd if direction == "forward"
                    else sample.flow_bwd).flows
        for t, cond in enumerate(conds):
            s = t if direction == "forward" else t + 1
            d = t + 1 if direction == "forward" else t
            pairs.append({
                "x": flow.condition_tensor(cond, use_amodal=cfg.use_amodal),
                "init": to_t(cond.init_flow).permute(2, 0, 1),
                "gt": to_t(gt_flows[t]).permute(2, 0, 1),
                "amodal": to_t(cond.amodal),
                "contour": to_t(cond.contour),
                "frame_a": to_t(sample.gt_clip.frames[s]).permute(2, 0, 1),
                "frame_b": to_t(sample.gt_clip.frames[d]).permute(2, 0, 1),
            })
    item["flow_pairs"] = pairs
    return item


def _stack(items, key):
    return torch.stack([it[key] for it in items])


@dataclass
class TrainState:
    cfg: object
    nets: dict
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer  # None when both discriminators are off
    hp: HyperParams
    step: int = 0
    history: list = field(default_factory=list)


def init_train(cfg):
    nets = build_models(cfg)
    g_params = (list(nets["shape"].parameters())
                + list(nets["flow"].parameters())
                + list(nets["gen"].parameters()))
    opt_g = torch.optim.Adam(g_params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    d_params = []
    if nets["tpatch"] is not None:
        d_params += list(nets["tpatch"].parameters())
    if nets["md"] is not None:
        d_params += list(nets["md"].parameters())
    opt_d = torch.optim.Adam(d_params, lr=cfg.lr,
                             betas=(cfg.beta1, cfg.beta2)) if d_params else None
    return TrainState(cfg=cfg, nets=nets, opt_g=opt_g, opt_d=opt_d,
                      hp=cfg.hyper())


def train_step(state, items):
    """One alternating update over a list of prepared samples."""
    cfg, nets, hp = state.cfg, state.nets, state.hp
    warm_steps = int(cfg.warm_frac * cfg.steps)
    warm = state.step < warm_steps
    adversarial = (not warm) and (nets["tpatch"] is not None
                                  or nets["md"] is not None)

    corrupted = _stack(items, "corrupted")
    gt = _stack(items, "gt")
    visible = _stack(items, "visible")
    amodal = _stack(items, "amodal")
    occ = _stack(items, "occ")
    gen_frames = _stack(items, "gen_frames")
    hole = _stack(items, "hole")
    class_id = torch.tensor([it["class_id"] for it in items])

    logits = nets["shape"](corrupted, visible, class_id,
                           use_class=cfg.use_class, use_pos=cfg.use_pos)
    probs = torch.sigmoid(logits)
    l_shape = shape.shape_loss(probs, amodal, occ, hp.lam1)

    flow_terms = []
    for it in items:
        for pair in it["flow_pairs"]:
            pred = flow.residual_forward(
                nets["flow"], pair["x"].unsqueeze(0),
                pair["init"].unsqueeze(0),
                pair["amodal"].unsqueeze(0).unsqueeze(0))
            flow_terms.append(flow.flow_loss(
                pred, pair["gt"].unsqueeze(0), pair["amodal"].unsqueeze(0),
                pair["contour"].unsqueeze(0), hp,
                frames=(pair["frame_a"].unsqueeze(0),
                        pair["frame_b"].unsqueeze(0))))
    l_flow = torch.stack(flow_terms).mean()

    fake = nets["gen"](gen_frames, hole, amodal, occ)
    composite = generator.composite_output(fake, gen_frames,
                                           hole.unsqueeze(2))
    l_content = content_loss(composite, gt, amodal, hp.lam5)

    d_val = 0.0
    g_adv = composite.new_zeros(())
    if adversarial:
        d_loss = adversary.discriminator_loss(
            nets["tpatch"], nets["md"], gt, composite, class_id,
            use_tp=nets["tpatch"] is not None,
            use_md=nets["md"] is not None)
        state.opt_d.zero_grad()
        d_loss.backward()
        state.opt_d.step()
        d_val = float(d_loss.detach())
        g_adv = adversary.generator_adversarial_loss(
            nets["tpatch"], nets["md"], composite, class_id,
            use_tp=nets["tpatch"] is not None,
            use_md=nets["md"] is not None)

    l_app = g_adv + hp.lam6 * l_content
    total = total_loss(l_shape, l_flow, l_app, hp)

    terms = {"shape": float(l_shape.detach()), "flow": float(l_flow.detach()),
             "content": float(l_content.detach()),
             "gen_adv": float(g_adv.detach()), "disc": d_val,
             "total": float(total.detach())}
    bad = [k for k, v in terms.items() if not np.isfinite(v)]
    if bad:
        raise RuntimeError(
            "non-finite loss at step %d (%s); all terms: %s"
            % (state.step, ", ".join(bad),
               ", ".join("%s=%r" % kv for kv in sorted(terms.items()))))

    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()
    state.step += 1
    state.history.append(terms)
    return terms


CKPT_FILES = ("shape", "flow", "gen", "tpatch", "md")


def save_run(state, out_dir):
    ckpt_dir = os.path.join(out_dir, "ckpt")
    os.makedirs(ckpt_dir, exist_ok=True)
    meta = {"step": state.step, "seed": state.cfg.seed}
    for name in CKPT_FILES:
        if state.nets.get(name) is not None:
            save_checkpoint(os.path.join(ckpt_dir, name + ".ckpt"),
                            {name: state.nets[name]}, meta=meta)
    with open(os.path.join(out_dir, "losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss_total", "loss_shape", "loss_flow",
                    "loss_content", "loss_gen_adv", "loss_disc"])
        for i, t in enumerate(state.history):
            w.writerow([i, repr(t["total"]), repr(t["shape"]),
                        repr(t["flow"]), repr(t["content"]),
                        repr(t["gen_adv"]), repr(t["disc"])])


def train(cfg, samples):
    """Run cfg.steps alternating updates over prepared samples; save artifacts."""
    state = init_train(cfg)
    prepared = [prepare_batch_item(s, cfg) for s in samples]
    n = len(prepared)
    for step in range(cfg.steps):
        idx = [(step * cfg.batch + j) % n for j in range(cfg.batch)]
        train_step(state, [prepared[i] for i in idx])
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        save_run(state, cfg.out_dir)
    return state
