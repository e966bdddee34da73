"""Command line entry points.

Subcommands cover the whole pipeline: dataset synthesis, training,
evaluation, the ablation harness, and the three standalone stage tools
(flow completion, flow-guided propagation, inpainting).
"""

import argparse
import os
import sys

import numpy as np
import torch

from . import data, evaluate, flow, generator, propagate, synth, train
from .checkpoint import load_checkpoint, load_into
from .config import RunConfig, build_config, load_config, parse_kv


def _load_samples(data_dir):
    index = synth.load_dataset_index(data_dir)
    return [(row["sample_id"],
             synth.load_sample(os.path.join(data_dir, row["sample_id"])))
            for row in index]


def cmd_synth(args):
    mapping = parse_kv(args.config) if args.config else {}
    overrides = {}
    if args.num is not None:
        overrides["num"] = args.num
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.degree_min is not None:
        overrides["degree_min"] = args.degree_min
    if args.degree_max is not None:
        overrides["degree_max"] = args.degree_max
    cfg = build_config(synth.SynthConfig, mapping, overrides)
    index = synth.synth_dataset(cfg, args.out)
    print("wrote %d samples to %s" % (len(index), args.out))


def cmd_train(args):
    cfg = load_config(RunConfig, args.config)
    if not cfg.data_dir:
        raise SystemExit("config must set data_dir")
    samples = _load_samples(cfg.data_dir)
    state = train.train(cfg, [s for _, s in samples])
    last = state.history[-1] if state.history else {}
    print("trained %d steps; final total loss %r" %
          (state.step, last.get("total")))


def cmd_eval(args):
    cfg = load_config(RunConfig, args.config)
    report = evaluate.evaluate(cfg, ckpt_dir=args.ckpt_dir,
                               oracle=args.oracle)
    for key in sorted(report.aggregates):
        print("%s = %r" % (key, report.aggregates[key]))


def cmd_ablate(args):
    mapping = parse_kv(args.matrix)
    row_names = None
    if "rows" in mapping:
        row_names = [r.strip() for r in mapping.pop("rows").split(",")]
    cfg = build_config(RunConfig, mapping)
    if not cfg.data_dir:
        raise SystemExit("matrix must set data_dir")
    rows = evaluate.ABLATION_ROWS
    if row_names is not None:
        byname = dict(evaluate.ABLATION_ROWS)
        missing = [n for n in row_names if n not in byname]
        if missing:
            raise SystemExit("unknown ablation rows: %s (known: %s)"
                             % (", ".join(missing),
                                ", ".join(n for n, _ in evaluate.ABLATION_ROWS)))
        rows = tuple((n, byname[n]) for n in row_names)
    samples = _load_samples(cfg.data_dir)
    results = evaluate.ablate(cfg, samples, rows=rows)
    for name, report, summary in results:
        print("%s: miou=%.2f psnr_occ=%.2f params=%d"
              % (name, report.aggregates["mean_miou"],
                 report.aggregates["mean_psnr_occ"],
                 sum(v for k, v in summary.items()
                     if k.startswith("params_"))))


def _infer_flow_net(ckpt_path):
    arrays, _ = load_checkpoint(ckpt_path)
    key = "flow.inc.net.0.weight"
    if key not in arrays:
        raise SystemExit("%s does not look like a flow checkpoint (no %s)"
                         % (ckpt_path, key))
    net = flow.FlowUNet(base=arrays[key].shape[0])
    load_into(ckpt_path, {"flow": net})
    net.eval()
    return net


def cmd_flow_complete(args):
    sample = synth.load_sample(args.sample)
    net = _infer_flow_net(args.ckpt)
    for direction, sub in (("forward", data.FLOW_FWD_DIR),
                           ("backward", data.FLOW_BWD_DIR)):
        seq = flow.complete_flow_sequence(net, sample, direction)
        data.save_flow_sequence(seq, os.path.join(args.out, sub))
    print("wrote completed flow to %s" % args.out)


def cmd_propagate(args):
    sample = synth.load_sample(args.sample)
    fwd = data.load_flow_sequence(os.path.join(args.flow, data.FLOW_FWD_DIR),
                                  "forward")
    bwd = data.load_flow_sequence(os.path.join(args.flow, data.FLOW_BWD_DIR),
                                  "backward")
    state = propagate.init_state(sample.corrupted_clip, sample.occluded,
                                 sample.amodal)
    state = propagate.propagate_pixels(state, fwd, bwd, sample.amodal,
                                       tau=args.tau)
    frames = np.clip(state.frames, 0.0, 1.0).astype(np.float32)
    data.save_clip(data.VideoClip(frames), os.path.join(args.out, "frames"))
    holes = propagate.remaining_hole_mask(state)
    data.save_masks(holes, os.path.join(args.out, "holes"))
    print("filled %.1f%% of occluded pixels; outputs in %s"
          % (100.0 * propagate.fill_fraction(state, sample.occluded),
             args.out))


def _infer_generator(ckpt_path):
    arrays, _ = load_checkpoint(ckpt_path)
    key = "gen.enc1.feat.weight"
    if key not in arrays:
        raise SystemExit("%s does not look like a generator checkpoint "
                         "(no %s)" % (ckpt_path, key))
    og = any(k.startswith("gen.enc1.fuse.") for k in arrays)
    net = generator.InpaintGenerator(occlusion_gate=og,
                                     base=arrays[key].shape[0])
    load_into(ckpt_path, {"gen": net})
    net.eval()
    return net


def cmd_inpaint(args):
    sample = synth.load_sample(args.sample)
    net = _infer_generator(args.ckpt)
    if args.frames:
        clip = data.load_clip(args.frames)
        frames = clip.frames
    else:
        frames = sample.corrupted_clip.frames
    if args.holes:
        holes = data.load_masks(args.holes, "occluded").masks
    else:
        holes = sample.occluded.masks
    with torch.no_grad():
        out = generator.inpaint_forward(net, frames, holes,
                                        sample.amodal.masks,
                                        sample.occluded.masks)
    final = np.where((holes > 0)[..., None], out, frames).astype(np.float32)
    data.save_clip(data.VideoClip(np.clip(final, 0.0, 1.0)),
                   os.path.join(args.out, "frames"))
    print("wrote inpainted frames to %s" % args.out)


def build_parser():
    p = argparse.ArgumentParser(
        prog="voin", description="occlusion-aware video object inpainting")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config", help="flat key = value synthesis config")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--num", type=int, help="number of samples")
    s.add_argument("--seed", type=int, help="base RNG seed")
    s.add_argument("--degree-min", type=float, dest="degree_min")
    s.add_argument("--degree-max", type=float, dest="degree_max")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train all stages jointly")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="run the full pipeline and report")
    s.add_argument("--config", required=True)
    s.add_argument("--ckpt-dir", dest="ckpt_dir",
                   help="directory with per-stage .ckpt files")
    s.add_argument("--oracle", action="store_true",
                   help="bypass networks; ground-truth masks and flow")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run the component toggle matrix")
    s.add_argument("--matrix", required=True,
                   help="flat config; optional rows = comma list")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("flow-complete", help="complete flow for one sample")
    s.add_argument("--sample", required=True, help="sample directory")
    s.add_argument("--ckpt", required=True, help="flow stage checkpoint")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_flow_complete)

    s = sub.add_parser("propagate", help="flow-guided pixel propagation")
    s.add_argument("--sample", required=True)
    s.add_argument("--flow", required=True,
                   help="directory with forward/backward .flo subdirs")
    s.add_argument("--tau", type=float, default=5.0,
                   help="cycle consistency threshold in pixels")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_propagate)

    s = sub.add_parser("inpaint", help="inpaint remaining holes")
    s.add_argument("--sample", required=True)
    s.add_argument("--ckpt", required=True, help="generator checkpoint")
    s.add_argument("--frames", help="optional propagated frames directory")
    s.add_argument("--holes", help="optional hole mask directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inpaint)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
