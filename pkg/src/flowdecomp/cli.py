"""Command-line surface: synth, decompose, odometry, motion, eval-flow, eval-odom."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np
import torch

from . import codecs, viz
from .errors import DivergenceError, ValidationError
from .geometry import (
    compose_transforms,
    invert_transform,
    pose_to_transform,
    transform_to_pose,
)
from .metrics import Trajectory, ate, epe
from .motion import RansacConfig, estimate_instance_motion, format_motion_line, instances_from_labels
from .optim import PipelineConfig, SceneInputs, decompose, load_config, run_phase1
from .synth import SceneSpec, render_scene, spec_from_json, standard_suite, write_bundle


def _load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return load_config(path)


def _cmd_synth(args) -> int:
    if (args.suite is None) == (args.spec is None):
        raise ValidationError("pass exactly one of --suite or --spec")
    if args.suite is not None:
        for name, spec in standard_suite().items():
            write_bundle(render_scene(spec), os.path.join(args.out, name))
    else:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = spec_from_json(json.load(fh))
        write_bundle(render_scene(spec), args.out)
    return 0


def _scene_inputs_from_files(args) -> SceneInputs:
    rig = codecs.read_calib(args.calib)
    return SceneInputs(
        codecs.read_image_png(args.left_t),
        codecs.read_image_png(args.left_t1),
        codecs.read_depth_png(args.depth_t),
        codecs.read_depth_png(args.depth_t1),
        rig.intrinsics,
    )


def _cmd_decompose(args) -> int:
    inputs = _scene_inputs_from_files(args)
    cfg = _load_pipeline_config(args.config)
    result = decompose(inputs, cfg)
    os.makedirs(args.out, exist_ok=True)

    step = invert_transform(pose_to_transform(result.pose))  # camera-to-world
    codecs.write_pose_txt(
        os.path.join(args.out, "pose.txt"), [type(step).identity(), step]
    )
    codecs.write_flow_png(os.path.join(args.out, "flow_rig.png"), result.flow_rig)
    codecs.write_flow_png(os.path.join(args.out, "flow_res.png"), result.flow_res)
    codecs.write_flow_png(os.path.join(args.out, "flow_tot.png"), result.flow_tot)
    codecs.write_mask_png(os.path.join(args.out, "mask_rig.png"), result.mask_rig)
    codecs.write_mask_png(os.path.join(args.out, "mask_tot.png"), result.mask_tot)
    codecs._write_png(
        os.path.join(args.out, "err_rig.png"), viz.error_to_gray(result.err_rig)
    )
    codecs._write_png(
        os.path.join(args.out, "err_tot.png"), viz.error_to_gray(result.err_tot)
    )
    codecs._write_png(
        os.path.join(args.out, "flow_tot_color.png"), viz.flow_to_color(result.flow_tot)
    )
    return 0


def _cmd_odometry(args) -> int:
    rig = codecs.read_calib(args.calib)
    cfg = _load_pipeline_config(args.config)
    names = sorted(n for n in os.listdir(args.images) if n.endswith(".png"))
    if len(names) < 2:
        raise ValidationError("odometry needs at least two frames")
    poses = []
    for left, right in zip(names[:-1], names[1:]):
        inputs = SceneInputs(
            codecs.read_image_png(os.path.join(args.images, left)),
            codecs.read_image_png(os.path.join(args.images, right)),
            codecs.read_depth_png(os.path.join(args.depths, left)),
            codecs.read_depth_png(os.path.join(args.depths, right)),
            rig.intrinsics,
        )
        poses.append(run_phase1(inputs, cfg).pose_fwd)
    traj = Trajectory.from_point_transforms(poses)
    codecs.write_pose_txt(args.out, traj.globals_)
    return 0


def _cmd_motion(args) -> int:
    rig = codecs.read_calib(args.calib)
    depth_t = codecs.read_depth_png(args.depth_t)
    depth_t1 = codecs.read_depth_png(args.depth_t1)
    flow = codecs.read_flow_png(args.flow)
    globals_ = codecs.read_pose_txt(args.pose)
    if len(globals_) < 2:
        raise ValidationError("pose file must hold at least two frames")
    step = compose_transforms(invert_transform(globals_[0]), globals_[1])
    pose = transform_to_pose(invert_transform(step))  # point transform t -> t+1
    masks = instances_from_labels(codecs.read_labels_png(args.instances))
    if not masks:
        raise ValidationError("no instances in label image")
    cfg = RansacConfig(threshold=args.threshold, iterations=args.iterations, seed=args.seed)
    lines = []
    for mask in masks:
        m = estimate_instance_motion(
            depth_t, depth_t1, flow, pose, mask, rig.intrinsics, cfg, args.frame_interval
        )
        lines.append(format_motion_line(m))
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_eval_flow(args) -> int:
    est = codecs.read_flow_png(args.est)
    gt = codecs.read_flow_png(args.gt)
    noc = None
    if args.occ:
        noc = ~codecs.read_mask_png(args.occ)
    result = epe(est, gt, noc=noc)
    print(f"EPE-All {result.epe_all:.2f}")
    if noc is not None:
        print(f"EPE-Noc {result.epe_noc:.2f}")
    print(f"F1-All {result.f1_all:.2f}")
    return 0


def _cmd_eval_odom(args) -> int:
    traj_est = Trajectory.from_global_transforms(codecs.read_pose_txt(args.est))
    traj_gt = Trajectory.from_global_transforms(codecs.read_pose_txt(args.gt))
    result = ate(traj_est, traj_gt, snippet_len=args.snippet)
    print(f"ATE-mean {result.ate_mean:.6f}")
    print(f"ATE-std {result.ate_std:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowdecomp",
        description="Scene-flow decomposition: rigid/residual flow, pose, and object motion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic ground-truth bundles")
    p.add_argument("--suite", action="store_const", const=True, default=None,
                   help="render the standard scene suite")
    p.add_argument("--spec", help="JSON scene specification file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("decompose", help="decompose one frame pair")
    p.add_argument("--left-t", required=True)
    p.add_argument("--left-t1", required=True)
    p.add_argument("--depth-t", required=True)
    p.add_argument("--depth-t1", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("odometry", help="phase-1 pose over an image sequence")
    p.add_argument("--images", required=True, help="directory of frame PNGs")
    p.add_argument("--depths", required=True, help="directory of matching depth PNGs")
    p.add_argument("--calib", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_odometry)

    p = sub.add_parser("motion", help="per-instance 3-D motion table")
    p.add_argument("--instances", required=True, help="8-bit instance label PNG")
    p.add_argument("--depth-t", required=True)
    p.add_argument("--depth-t1", required=True)
    p.add_argument("--flow", required=True, help="total flow PNG")
    p.add_argument("--pose", required=True, help="camera-to-world pose text file")
    p.add_argument("--calib", required=True)
    p.add_argument("--frame-interval", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_motion)

    p = sub.add_parser("eval-flow", help="EPE / F1 between two flow PNGs")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--occ", help="occlusion mask PNG (white = occluded)")
    p.set_defaults(func=_cmd_eval_flow)

    p = sub.add_parser("eval-odom", help="snippet ATE between two pose files")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--snippet", type=int, default=5)
    p.set_defaults(func=_cmd_eval_odom)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValidationError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
