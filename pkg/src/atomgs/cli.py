"""Command-line entry points: train, export-points, eval, render."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .export import chamfer_distance, export_ply, fuse_views, load_checkpoint, load_point_cloud, psnr
from .fileio import load_png, save_float_map, save_png
from .geometry import curvature_map, normal_map, unproject_depth
from .rasterizer import RenderSettings, render
from .scene import load_cameras, load_scene
from .trainer import ABLATIONS, config_from_dict, prepare, read_toml, train

MAPS = ("rgb", "depth", "normal", "curvature")


def cmd_train(args) -> int:
    doc = read_toml(args.config)
    data = doc.pop("data", None)
    if not data or "points" not in data or "cameras" not in data:
        raise SystemExit(f"{args.config}: a [data] table with 'points' and 'cameras' is required")
    base = Path(args.config).resolve().parent
    cfg = config_from_dict(doc)
    for what in args.ablate or []:
        cfg.ablate(what)
    points, cams_path = base / data["points"], base / data["cameras"]
    cloud, cams = load_scene(points, cams_path, convention=data.get("convention", "opengl"))
    missing = [c.image_path for c in cams if not c.image_path or not Path(c.image_path).exists()]
    if missing:
        raise SystemExit(f"missing training images: {missing[:3]}")
    images = [load_png(c.image_path) for c in cams]
    out_dir = Path(args.out) if args.out else base / data.get("output", "output")
    scene, s0, radius = prepare(cloud, cams, cfg)
    result = train(scene, cams, images, cfg, s0, radius, out_dir=out_dir)
    last = result.metrics[-1] if result.metrics else {}
    print(f"trained {cfg.iterations} iterations: {result.scene.count} Gaussians "
          f"({int(result.scene.is_atom.sum())} atoms), last PSNR {last.get('psnr', float('nan')):.2f} dB")
    print(f"outputs in {out_dir}")
    return 0


def cmd_export_points(args) -> int:
    scene, _ = load_checkpoint(args.checkpoint)
    cams = load_cameras(args.cameras, convention=args.convention)
    cloud = fuse_views(scene, cams, min_accum=args.min_accum, voxel_size=args.voxel)
    export_ply(cloud, args.out)
    print(f"wrote {len(cloud)} oriented points to {args.out}")
    return 0


def cmd_eval(args) -> int:
    if Path(args.pred).suffix.lower() == ".png":
        value = psnr(load_png(args.pred), load_png(args.gt))
        print(f"psnr {value:.6f}")
    else:
        value = chamfer_distance(load_point_cloud(args.pred), load_point_cloud(args.gt))
        print(f"chamfer {value:.9g}")
    return 0


def cmd_render(args) -> int:
    scene, _ = load_checkpoint(args.checkpoint)
    cams = load_cameras(args.cameras, convention=args.convention)
    if not 0 <= args.camera < len(cams):
        raise SystemExit(f"camera index {args.camera} out of range (0..{len(cams) - 1})")
    cam = cams[args.camera]
    maps = [m.strip() for m in args.maps.split(",") if m.strip()]
    bad = [m for m in maps if m not in MAPS]
    if bad:
        raise SystemExit(f"unknown maps {bad}; choose from {MAPS}")
    out = render(scene, cam, RenderSettings())
    pos, valid = unproject_depth(out.median_depth, cam)
    valid &= out.accum >= 0.5
    normals, nvalid = normal_map(pos, valid, cam.center)
    curv, _ = curvature_map(normals, nvalid)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    stem = f"view{args.camera:03d}"
    for m in maps:
        if m == "rgb":
            save_png(dest / f"{stem}_rgb.png", out.rgb)
            save_float_map(dest / f"{stem}_rgb.afm", out.rgb)
        elif m == "depth":
            save_float_map(dest / f"{stem}_depth.afm", out.median_depth)
            save_float_map(dest / f"{stem}_mean_depth.afm", out.mean_depth)
        elif m == "normal":
            save_float_map(dest / f"{stem}_normal.afm", normals)
            save_png(dest / f"{stem}_normal.png", np.where(nvalid[..., None], 0.5 * (normals + 1.0), 0.0))
        elif m == "curvature":
            save_float_map(dest / f"{stem}_curvature.afm", curv)
            save_png(dest / f"{stem}_curvature.png", np.repeat(curv[..., None], 3, axis=2))
    print(f"wrote {', '.join(maps)} for camera {args.camera} to {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atomgs", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="optimise a scene from SfM points and posed images")
    t.add_argument("--config", required=True)
    t.add_argument("--ablate", action="append", choices=ABLATIONS)
    t.add_argument("--out", help="output directory (default: [data].output next to the config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export-points", help="fuse an oriented point cloud from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--cameras", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--convention", default="opengl", choices=("opengl", "opencv"))
    e.add_argument("--min-accum", type=float, default=0.5)
    e.add_argument("--voxel", type=float, default=None, help="voxel cell size for decimation")
    e.set_defaults(func=cmd_export_points)

    v = sub.add_parser("eval", help="chamfer distance between two PLY clouds (or PSNR of two PNGs)")
    v.add_argument("--pred", required=True)
    v.add_argument("--gt", required=True)
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render RGB and geometry maps of one camera")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--cameras", required=True)
    r.add_argument("--camera", type=int, required=True)
    r.add_argument("--maps", default="rgb,depth,normal,curvature")
    r.add_argument("--out", default=".")
    r.add_argument("--convention", default="opengl", choices=("opengl", "opencv"))
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
