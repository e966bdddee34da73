"""Full-pipeline evaluation and the component ablation harness.

Per sample: shape completion -> flow completion -> flow-guided propagation
-> inpainting -> composite, then metrics in the occluded region and
globally. Oracle mode swaps every prediction for ground truth and skips the
networks entirely; it pins down what the propagation stage alone achieves.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import flow, generator, metrics, propagate, shape, train
from .checkpoint import CheckpointError, load_into
from .data import FlowSequence, MaskSequence, save_ppm
from .synth import load_dataset_index, load_sample

REPORT_HEADER = ("sample_id", "psnr_occ", "ssim", "epe_occ", "miou",
                 "degree", "class")


@dataclass
class PipelineResult:
    final: np.ndarray          # (T, H, W, 3) composited frames
    propagated: np.ndarray     # (T, H, W, 3) after flow-guided fill
    amodal_pred: np.ndarray    # (T, H, W) uint8
    occ_pred: np.ndarray       # (T, H, W) uint8
    flow_fwd: FlowSequence
    flow_bwd: FlowSequence
    fill: float                # fraction of occluded pixels propagation filled


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)


def load_nets(cfg, ckpt_dir):
    """Build networks per config and fill them from per-stage checkpoints."""
    nets = train.build_models(cfg)
    for name in train.CKPT_FILES:
        if nets.get(name) is None:
            continue
        path = os.path.join(ckpt_dir, name + ".ckpt")
        if not os.path.exists(path):
            raise CheckpointError("missing checkpoint for stage '%s': %s"
                                  % (name, path))
        load_into(path, {name: nets[name]})
    for net in nets.values():
        if net is not None:
            net.eval()
    return nets


def run_pipeline(sample, nets, cfg, oracle=False):
    if oracle:
        amodal_pred = sample.amodal.masks.copy()
        occ_pred = sample.occluded.masks.copy()
        fwd, bwd = sample.flow_fwd, sample.flow_bwd
    else:
        probs = shape.complete_shape(nets["shape"], sample.corrupted_clip,
                                     sample.visible, sample.object_class,
                                     use_class=cfg.use_class)
        amodal_pred = shape.binarize(probs)
        occ_pred = (amodal_pred & ~(sample.visible.masks > 0)).astype(np.uint8)
        fwd = flow.complete_flow_sequence(nets["flow"], sample, "forward",
                                          use_amodal=cfg.use_amodal,
                                          amodal=amodal_pred)
        bwd = flow.complete_flow_sequence(nets["flow"], sample, "backward",
                                          use_amodal=cfg.use_amodal,
                                          amodal=amodal_pred)

    amodal_seq = MaskSequence(amodal_pred, "amodal")
    occ_seq = MaskSequence(occ_pred, "occluded")
    state = propagate.init_state(sample.corrupted_clip, occ_seq, amodal_seq)
    state = propagate.propagate_pixels(state, fwd, bwd, amodal_seq,
                                       tau=cfg.tau, max_sweeps=cfg.max_sweeps)
    propagated = np.clip(state.frames, 0.0, 1.0).astype(np.float32)
    fill = propagate.fill_fraction(state, occ_seq)

    if oracle:
        final = propagated
    else:
        hole = propagate.remaining_hole_mask(state)
        with torch.no_grad():
            final = generator.inpaint_forward(
                nets["gen"], propagated, hole.masks, amodal_pred, occ_pred)
        keep = (hole.masks > 0)[..., None]
        final = np.where(keep, final, propagated).astype(np.float32)
    return PipelineResult(final=final, propagated=propagated,
                          amodal_pred=amodal_pred, occ_pred=occ_pred,
                          flow_fwd=fwd, flow_bwd=bwd, fill=fill)


def sample_metrics(sample, result):
    gt = sample.gt_clip.frames
    occ = sample.occluded.masks
    row = {
        "sample_id": "",
        "psnr_occ": metrics.psnr(gt, result.final, mask=occ),
        "ssim": metrics.ssim_clip(gt, result.final),
        "epe_occ": metrics.epe(sample.flow_fwd.flows, result.flow_fwd.flows,
                               mask=occ[:-1]),
        "miou": metrics.miou(result.amodal_pred, sample.amodal.masks),
        "degree": sample.mean_degree,
        "class": sample.object_class,
    }
    return row


def save_grid(path, gt, corrupted, propagated, final):
    """One PPM per sample: versions left to right, frames top to bottom."""
    panels = [np.concatenate([g, c, p, f], axis=1)
              for g, c, p, f in zip(gt, corrupted, propagated, final)]
    save_ppm(path, np.concatenate(panels, axis=0))


def _aggregate(rows):
    agg = {"count": len(rows)}
    for key in ("psnr_occ", "ssim", "epe_occ", "miou", "degree"):
        agg["mean_" + key] = float(np.mean([r[key] for r in rows])) \
            if rows else 0.0
    return agg


def write_report(report, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in report.rows:
            w.writerow([r["sample_id"], repr(float(r["psnr_occ"])),
                        repr(float(r["ssim"])), repr(float(r["epe_occ"])),
                        repr(float(r["miou"])), repr(float(r["degree"])),
                        int(r["class"])])
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.aggregates, fh, sort_keys=True, indent=2)
        fh.write("\n")


def evaluate(cfg, ckpt_dir=None, oracle=False, samples=None, out_dir=None):
    """Evaluate a dataset; returns MetricsReport and writes report + grids.

    samples: list of (sample_id, SynthSample); defaults to cfg.data_dir.
    """
    nets = None
    if not oracle:
        if ckpt_dir is None:
            raise ValueError("ckpt_dir is required unless oracle=True")
        nets = load_nets(cfg, ckpt_dir)
    if samples is None:
        if not cfg.data_dir:
            raise ValueError("no samples given and cfg.data_dir is empty")
        index = load_dataset_index(cfg.data_dir)
        samples = [(row["sample_id"],
                    load_sample(os.path.join(cfg.data_dir, row["sample_id"])))
                   for row in index]
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    report = MetricsReport()
    for sample_id, sample in samples:
        result = run_pipeline(sample, nets, cfg, oracle=oracle)
        row = sample_metrics(sample, result)
        row["sample_id"] = sample_id
        report.rows.append(row)
        if out_dir:
            grid_dir = os.path.join(out_dir, "grids")
            os.makedirs(grid_dir, exist_ok=True)
            save_grid(os.path.join(grid_dir, sample_id + ".ppm"),
                      sample.gt_clip.frames, sample.corrupted_clip.frames,
                      result.propagated, result.final)
    report.aggregates = _aggregate(report.rows)
    if out_dir:
        write_report(report, out_dir)
    return report


def _param_count(net):
    return 0 if net is None else sum(p.numel() for p in net.parameters())


def structural_summary(cfg):
    """Parameter counts and input wiring for one toggle row."""
    nets = train.build_models(cfg)
    return {
        "og": int(cfg.og), "tp": int(cfg.tp), "md": int(cfg.md),
        "stam": int(cfg.stam), "f": int(cfg.f),
        "params_shape": _param_count(nets["shape"]),
        "params_flow": _param_count(nets["flow"]),
        "params_gen": _param_count(nets["gen"]),
        "params_tpatch": _param_count(nets["tpatch"]),
        "params_md": _param_count(nets["md"]),
        "gen_input": "propagated" if cfg.f else "corrupted",
    }


ABLATION_ROWS = (
    ("base", dict(og=False, tp=False, md=False, stam=False, f=False)),
    ("og", dict(og=True, tp=False, md=False, stam=False, f=False)),
    ("og_tp", dict(og=True, tp=True, md=False, stam=False, f=False)),
    ("og_tp_md", dict(og=True, tp=True, md=True, stam=False, f=False)),
    ("og_tp_md_stam", dict(og=True, tp=True, md=True, stam=True, f=False)),
    ("full", dict(og=True, tp=True, md=True, stam=True, f=True)),
)


def ablate(base_cfg, samples, rows=ABLATION_ROWS, out_dir=None):
    """Train and evaluate each toggle row with shared seed and data."""
    from dataclasses import replace

    out_dir = out_dir if out_dir is not None else base_cfg.out_dir
    results = []
    for name, toggles in rows:
        row_out = os.path.join(out_dir, name) if out_dir else ""
        cfg = replace(base_cfg, out_dir=row_out, **toggles)
        state = train.train(cfg, [s for _, s in samples])
        report = evaluate(cfg, ckpt_dir=os.path.join(row_out, "ckpt"),
                          samples=samples, out_dir=row_out) if row_out else \
            _evaluate_in_memory(cfg, state, samples)
        results.append((name, report, structural_summary(cfg)))
    if out_dir:
        _write_ablation_csv(os.path.join(out_dir, "ablation.csv"), results)
    return results


def _evaluate_in_memory(cfg, state, samples):
    for net in state.nets.values():
        if net is not None:
            net.eval()
    report = MetricsReport()
    for sample_id, sample in samples:
        result = run_pipeline(sample, state.nets, cfg)
        row = sample_metrics(sample, result)
        row["sample_id"] = sample_id
        report.rows.append(row)
    report.aggregates = _aggregate(report.rows)
    return report


def _write_ablation_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "og", "tp", "md", "stam", "f", "params_total",
                    "psnr_occ", "ssim", "epe_occ", "miou"])
        for name, report, summary in results:
            total = sum(v for k, v in summary.items()
                        if k.startswith("params_"))
            agg = report.aggregates
            w.writerow([name, summary["og"], summary["tp"], summary["md"],
                        summary["stam"], summary["f"], total,
                        repr(agg["mean_psnr_occ"]), repr(agg["mean_ssim"]),
                        repr(agg["mean_epe_occ"]), repr(agg["mean_miou"])])
