"""
Command-line surface: one subcommand per pipeline step, files in, files and
JSON out.

Usage:
    python -m app.cli.main synth --preset kitti --out runs/pair
    python -m app.cli.main depth-from-flow --pose runs/pair/pose.json \\
        --flowscale runs/pair/flowscale.pfm --out runs/pair/depth_pp.pfm
    python -m app.cli.main evaluate --pred runs/pair/depth_pp.pfm --gt runs/pair/depth.pfm

Every subcommand takes --threads N and --camera FILE | --preset NAME.
Artifacts and JSON go to standard output or the named files, log lines go to
standard error. Exit codes: 0 success, 2 invalid input, 3 I/O failure.
"""

from __future__ import annotations
import argparse
import sys
import time
from pathlib import Path
from typing import Callable

from pydantic import ValidationError

from app.config.settings import PRESETS, CameraConfig, RunConfig, load_camera, load_scene
from app.errors import ConfigError, ParallaxError
from app.evaluation.metrics import evaluate, format_table
from app.geometry.core import GroundPlane, RigidPose, epipole, invert_pose, plane_homography
from app.geometry.fields import require_same_shape
from app.io import formats
from app.parallax.engine import (bin_flowscale, certainty_mask, depth_from_gamma, flow_from_depth,
                                 flowscale_from_residual_flow, gamma_from_depth, gamma_from_flowscale)
from app.photometric.losses import auto_mask, parse_stage, stage_for_epoch, static_mask
from app.pipeline.graph import run_pipeline
from app.sampling.warp import synthesize_from_depth, warp_by_homography
from app.scale.recovery import camera_height_from_depth, estimate_scale, recover_and_apply_scale
from app.surface.normals import flat_mask, road_flat_mask, surface_normals, trapezoid_road_mask
from app.synth.scenes import forward_poses, make_pair
from app.utils.log import log

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3

POSE_HELP = "Pose JSON (source-to-target + plane); defaults to the camera config's pose."


def _camera(args) -> CameraConfig:
    return load_camera(args.camera, args.preset)


def _run_config(args, **overrides) -> RunConfig:
    return RunConfig.from_env(threads=args.threads, **overrides)


def _pose(args, cam: CameraConfig) -> tuple[RigidPose, GroundPlane]:
    """--pose file, else the camera config's pose with its plane."""
    if args.pose:
        return formats.read_pose(args.pose)
    pose = cam.relative_pose()
    if pose is None:
        raise ConfigError("pose", "no --pose file given and the camera config has no pose")
    return pose, cam.plane()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> dict:
    cam = _camera(args)
    cfg = _run_config(args, baseline=args.baseline, supersample=args.supersample)
    K = cam.intrinsics()
    scene = load_scene(args.scene).spec()
    pose_t, pose_s = forward_poses(cam.cam_height_m, cfg.baseline, cam.pitch_deg, args.yaw)
    pair = make_pair(scene, pose_t, pose_s, K, cfg.supersample, cfg.threads)
    e = pair.epipole
    gamma, S, flow = flow_from_depth(pair.target.depth, K, pair.pose_s_to_t, pair.plane, e, cfg.f_min, cfg.f_max)

    out = _out_dir(args.out)
    formats.write_image(out / "target.png", pair.target.image)
    formats.write_image(out / "source.png", pair.source.image)
    formats.write_field(out / "depth.pfm", pair.target.depth)
    formats.write_field(out / "gamma.pfm", gamma)
    formats.write_field(out / "flowscale.pfm", S)
    formats.write_flow(out / "flow.pfm", flow)
    formats.write_mask(out / "visibility.pgm", pair.visibility)
    formats.write_pose(out / "pose.json", pair.pose_s_to_t, pair.plane)
    log("SYNTH", "pair rendered", icon="🎬", out=str(out), boxes=len(scene.boxes),
        valid_depth=pair.target.depth.count)
    return {
        "out": str(out),
        "files": ["target.png", "source.png", "depth.pfm", "gamma.pfm", "flowscale.pfm",
                  "flow.pfm", "visibility.pgm", "pose.json"],
        "epipole": [e.u, e.v],
        "valid_depth": pair.target.depth.count,
        "visible": int(pair.visibility.sum()),
    }


def cmd_warp(args) -> dict:
    cam = _camera(args)
    K = cam.intrinsics()
    pose, plane = _pose(args, cam)
    source = formats.read_image(args.source)
    require_same_shape("source image vs camera", source.shape, K.shape)
    cfg = _run_config(args)
    H = plane_homography(K, pose, plane)
    warped, valid = warp_by_homography(source, H, threads=cfg.threads)
    formats.write_image(args.out, warped)
    if args.valid_out:
        formats.write_mask(args.valid_out, valid)
    log("WARP", "source aligned on the road plane", icon="📐", valid=int(valid.sum()))
    return {"out": args.out, "homography": H.normalized().tolist(), "valid_pixels": int(valid.sum())}


def cmd_flow(args) -> dict:
    cam = _camera(args)
    K = cam.intrinsics()
    pose, plane = _pose(args, cam)
    depth = formats.read_depth(args.depth)
    cfg = _run_config(args)
    e = epipole(K, pose)
    gamma, S, flow = flow_from_depth(depth, K, pose, plane, e, cfg.f_min, cfg.f_max)
    out = _out_dir(args.out_dir)
    formats.write_field(out / "gamma.pfm", gamma)
    formats.write_field(out / "flowscale.pfm", S)
    formats.write_flow(out / "flow.pfm", flow)
    log("FLOW", "depth → structure → flowscale → residual flow", icon="🧭", valid=S.count)
    return {"out": str(out), "epipole": [e.u, e.v], "valid_pixels": S.count}


def cmd_depth_from_flow(args) -> dict:
    cam = _camera(args)
    K = cam.intrinsics()
    pose, plane = _pose(args, cam)
    cfg = _run_config(args)
    e = epipole(K, pose)
    if args.flowscale:
        if args.binned:
            S = bin_flowscale(formats.read_structure(args.flowscale), cfg.f_min, cfg.f_max)
        else:
            S = formats.read_flowscale(args.flowscale, cfg.f_min, cfg.f_max)
    else:
        S = flowscale_from_residual_flow(formats.read_flow(args.flow), e, cfg.epipole_radius, cfg.f_min, cfg.f_max)
    require_same_shape("flowscale vs camera", S.shape, K.shape)
    gamma = gamma_from_flowscale(S, float(pose.translation[2]), plane)
    depth = depth_from_gamma(gamma, K, plane)
    formats.write_field(args.out, depth)
    log("DEPTH", "planar-parallax depth written", icon="📏", out=args.out, valid=depth.count)
    return {"out": args.out, "valid_pixels": depth.count}


def cmd_masks(args) -> dict:
    cam = _camera(args)
    K = cam.intrinsics()
    pose, plane = _pose(args, cam)
    cfg = _run_config(args)
    target, source = formats.read_image(args.target), formats.read_image(args.source)
    depth_mono, depth_pp = formats.read_depth(args.depth_mono), formats.read_depth(args.depth_pp)
    flow = formats.read_flow(args.flow)
    require_same_shape("target vs camera", target.shape, K.shape)

    pose_t_to_s = invert_pose(pose)
    normals = surface_normals(depth_mono, K, cfg.neighbor_offset, cfg.threads)
    mono_img, mono_ok = synthesize_from_depth(source, depth_mono, K, pose_t_to_s, cfg.threads)
    masks = {
        "flat": road_flat_mask(normals, plane.normal, gamma_from_depth(depth_pp, K, plane), cfg.tau, cfg.gamma_tol),
        "auto": auto_mask(target, [mono_img], [source], cfg.photometric, [mono_ok], depth_pp.valid),
        "certainty": certainty_mask(flow, depth_pp, K, pose_t_to_s, plane, cfg.epsilon),
        "static": static_mask(depth_mono, depth_pp, cfg.delta),
    }
    out = _out_dir(args.out_dir)
    for name, mask in masks.items():
        formats.write_mask(out / f"{name}.pgm", mask)
    formats.write_vectors(out / "normals.pfm", normals.values, normals.valid)
    counts = {name: int(m.sum()) for name, m in masks.items()}
    log("MASKS", "masks written", icon="🎭", out=str(out), **counts)
    return {"out": str(out), "pixels": counts, "normals": int(normals.valid.sum())}


def cmd_losses(args) -> dict:
    cam = _camera(args)
    K = cam.intrinsics()
    pose, plane = _pose(args, cam)
    cfg = _run_config(args, scales=args.scales)
    stage = stage_for_epoch(args.epoch) if args.epoch is not None else parse_stage(args.stage)
    if args.binned:
        S = bin_flowscale(formats.read_structure(args.flowscale), cfg.f_min, cfg.f_max)
    else:
        S = formats.read_flowscale(args.flowscale, cfg.f_min, cfg.f_max)
    final = run_pipeline(K=K, pose_s_to_t=pose, plane=plane,
                         target=formats.read_image(args.target), source=formats.read_image(args.source),
                         depth_mono=formats.read_depth(args.depth_mono), flowscale=S,
                         stage=stage, config=cfg)
    report = {
        "stage": stage.value,
        "total": final["total"].value,
        "breakdown": final["total"].breakdown,
        "components": {name: r.to_dict() for name, r in sorted(final["losses"].items())},
    }
    if args.maps_dir:
        out = _out_dir(args.maps_dir)
        written = []
        for name, r in sorted(final["losses"].items()):
            if r.contribution is not None:
                formats.write_pfm(out / f"{name}.pfm", r.contribution)
                written.append(f"{name}.pfm")
        log("LOSSES", "contribution maps written", icon="🗺️", out=str(out), maps=len(written))
        report["maps"] = written
    return report


def cmd_scale_recover(args) -> dict:
    cam = _camera(args)
    K, plane = cam.intrinsics(), cam.plane()
    cfg = _run_config(args)
    depth = formats.read_depth(args.depth)
    require_same_shape("depth vs camera", depth.shape, K.shape)
    if args.mask:
        mask = formats.read_mask(args.mask)
    else:
        normals = surface_normals(depth, K, cfg.neighbor_offset, cfg.threads)
        mask = flat_mask(normals, plane.normal, cfg.tau) & trapezoid_road_mask(K.width, K.height)
    if args.h_true is None:
        if args.out:
            raise ConfigError("h_true", "--out needs --h-true to rescale the depth")
        h = camera_height_from_depth(depth, K, mask, args.method, plane.normal, cfg.ransac_iters, seed=cfg.seed)
        log("SCALE", "camera height measured", icon="📏", method=args.method, h_pred=h, road=int(mask.sum()))
        return {"method": args.method, "h_pred": h, "road_pixels": int(mask.sum())}
    est = estimate_scale(depth, K, mask, args.h_true, args.method, plane.normal, cfg.ransac_iters, seed=cfg.seed)
    log("SCALE", "scale recovered", icon="📏", method=est.method, scale=est.scale, road=int(mask.sum()))
    report = est.to_dict()
    report["road_pixels"] = int(mask.sum())
    if args.out:
        formats.write_field(args.out, recover_and_apply_scale(depth, est.h_pred, est.h_true))
        report["out"] = args.out
    return report


def cmd_evaluate(args) -> dict | str:
    pred, gt = formats.read_depth(args.pred), formats.read_depth(args.gt)
    mask = formats.read_mask(args.mask) if args.mask else None
    cfg = _run_config(args, cap=args.cap)
    m = evaluate(pred, gt, cfg.cap, args.median_scale, mask)
    log("EVAL", "metrics computed", icon="📊", abs_rel=m.abs_rel, rmse=m.rmse, pixels=m.count)
    if args.format == "table":
        return format_table([(Path(args.pred).stem, m)])
    return m.to_dict()


def cmd_pointcloud(args) -> dict:
    K = _camera(args).intrinsics()
    depth = formats.read_depth(args.depth)
    image = formats.read_image(args.image) if args.image else None
    require_same_shape("depth vs camera", depth.shape, K.shape)
    if image is not None:
        require_same_shape("image vs depth", image.shape, depth.shape)
    points, colors = formats.depth_to_points(depth, K, image)
    formats.write_ply(args.out, points, colors)
    log("PLY", "point cloud written", icon="☁️", out=args.out, points=len(points))
    return {"out": args.out, "points": int(len(points))}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="Row-parallel worker threads (default 1).")
    cam = common.add_mutually_exclusive_group()
    cam.add_argument("--camera", default=None, help="Camera config file (KEY=value).")
    cam.add_argument("--preset", default=None, choices=sorted(PRESETS), help="Built-in camera (default kitti).")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parallax", description="Planar-parallax geometry tools")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    def add(name: str, fn: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "Render a synthetic forward-motion pair with oracle fields.")
    p.add_argument("--scene", default=None, help="Scene config file (default: three boxes on a road).")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline", type=float, default=None, help="Forward baseline in metres (default 0.8).")
    p.add_argument("--supersample", type=int, default=None)
    p.add_argument("--yaw", type=float, default=0.0, help="Source camera heading in degrees (turning pair).")

    p = add("warp", cmd_warp, "Warp a source image onto the target by the road-plane homography.")
    p.add_argument("--source", required=True)
    p.add_argument("--pose", default=None, help=POSE_HELP)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-out", default=None)

    p = add("flow", cmd_flow, "Oracle structure, flowscale and residual flow from a depth map.")
    p.add_argument("--depth", required=True)
    p.add_argument("--pose", default=None, help=POSE_HELP)
    p.add_argument("--out-dir", required=True)

    p = add("depth-from-flow", cmd_depth_from_flow, "Depth from a flowscale or residual-flow field.")
    p.add_argument("--pose", default=None, help=POSE_HELP)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--flowscale", default=None)
    src.add_argument("--flow", default=None)
    p.add_argument("--binned", action="store_true", help="--flowscale holds raw [0, 1] outputs.")
    p.add_argument("--out", required=True)

    p = add("masks", cmd_masks, "Flat, auto, certainty and static masks.")
    for flag in ("--target", "--source", "--depth-mono", "--depth-pp", "--flow", "--out-dir"):
        p.add_argument(flag, required=True)
    p.add_argument("--pose", default=None, help=POSE_HELP)

    p = add("losses", cmd_losses, "Run the loss pipeline for one stage and report every term.")
    for flag in ("--target", "--source", "--depth-mono", "--flowscale"):
        p.add_argument(flag, required=True)
    p.add_argument("--pose", default=None, help=POSE_HELP)
    p.add_argument("--stage", default="homo", help="early | homo | distill")
    p.add_argument("--epoch", type=int, default=None, help="Pick the stage for this training epoch (overrides --stage).")
    p.add_argument("--maps-dir", default=None, help="Write each term's per-pixel contribution map as PFM.")
    p.add_argument("--binned", action="store_true")
    p.add_argument("--scales", type=int, default=None, help="Pyramid levels for the mono loss (default 1).")

    p = add("scale-recover", cmd_scale_recover, "Metric scale from the known camera height.")
    p.add_argument("--depth", required=True)
    p.add_argument("--h-true", type=float, default=None,
                   help="Known camera height in metres; without it only the implied height is reported.")
    p.add_argument("--method", choices=("median", "ransac"), default="median")
    p.add_argument("--mask", default=None, help="Road mask PGM (default: flat ∩ trapezoid).")
    p.add_argument("--out", default=None, help="Write the rescaled depth here.")

    p = add("evaluate", cmd_evaluate, "Depth metrics against ground truth.")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--cap", type=float, default=None)
    p.add_argument("--median-scale", action="store_true")
    p.add_argument("--mask", default=None)
    p.add_argument("--format", choices=("json", "table"), default="json")

    p = add("pointcloud", cmd_pointcloud, "Export a depth map as a binary PLY point cloud.")
    p.add_argument("--depth", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        result = args.func(args)
    except (ParallaxError, ValidationError, ValueError) as exc:
        print(f"❌ [CLI] {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"❌ [CLI] {exc}", file=sys.stderr)
        return EXIT_IO
    if isinstance(result, str):
        sys.stdout.write(result + "\n")
    else:
        formats.write_json(None, result)
    log("CLI", f"{args.command} done", icon="✅", ms=round((time.perf_counter() - t0) * 1000.0, 1))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
