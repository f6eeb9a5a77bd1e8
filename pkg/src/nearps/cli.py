"""Command-line interface: render, calibrate, solve, eval.

Exit codes: 0 on success, 2 on usage errors (argparse), 1 on numeric or file
failures.  Every command writes a manifest with the inputs, flags, seed and
package version needed to re-run it.  Linear-algebra thread counts follow the
usual BLAS environment variables (OMP_NUM_THREADS / OPENBLAS_NUM_THREADS).
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import metadata

import numpy as np

from . import arls, calibrate, io, metrics, ratios, scenes
from .alternating import AlternatingConfig, solve_alternating
from .camera import CameraIntrinsics, LogDepthMap, PixelMask, normal_from_depth
from .errors import NearpsError
from .estimators import ShadowOperator, make_estimator
from .render import ImageStack, SceneTruth, prefilter_robust, render, render_noisy


def _version() -> str:
    try:
        return metadata.version("nearps")
    except metadata.PackageNotFoundError:
        return "unknown"


def _manifest(kind: str, args: argparse.Namespace, extra: dict) -> dict:
    doc = {"kind": kind, "version": _version(),
           "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"}}
    doc.update(extra)
    return doc


def _load_scene(args, cam) -> SceneTruth:
    if args.scene == "pfm":
        if not args.depth:
            raise ValueError("--scene pfm needs --depth")
        grid = io.read_pfm(args.depth).astype(np.float64)
        mask = PixelMask(grid > 0)
        zmap = LogDepthMap.from_depth(mask, grid[mask.rows, mask.cols])
        if args.albedo_map:
            agrid = io.read_pfm(args.albedo_map).astype(np.float64)
            albedo = agrid[mask.rows, mask.cols]
        else:
            albedo = np.ones(mask.n)
        return SceneTruth(zmap, albedo)
    channels = 3 if args.rgb else 1
    return scenes.make_scene(args.scene, cam, z0=args.z0, radius=args.radius,
                             albedo=args.albedo, channels=channels)


def cmd_render(args) -> int:
    if args.rig:
        cam, rig = io.rig_from_dict(io.load_json(args.rig))
    else:
        cam = scenes.default_camera(size=args.size, f=args.f)
        psi_rgb = (0.8e6, 1.44e6, 1.04e6) if args.rgb else None
        rig = scenes.ring_rig(m=args.m, mu=args.mu, psi=args.psi,
                              psi_rgb=psi_rgb, aim=(0.0, 0.0, args.z0))
    scene = _load_scene(args, cam)
    stack = render_noisy(scene, rig, cam, args.noise, args.seed) \
        if args.noise > 0 else render(scene, rig, cam)

    os.makedirs(args.out, exist_ok=True)
    names = io.write_stack(args.out, stack)
    mask = scene.zmap.mask
    io.write_pgm_mask(os.path.join(args.out, "mask.pgm"), mask.inside)
    io.write_pfm(os.path.join(args.out, "depth_true.pfm"),
                 mask.to_grid(scene.zmap.depth, fill=0.0))
    albedo = scene.albedo[:, 0] if scene.albedo.shape[1] == 1 else scene.albedo
    io.write_pfm(os.path.join(args.out, "albedo_true.pfm"),
                 mask.to_grid(albedo, fill=0.0))
    io.write_pfm(os.path.join(args.out, "normals_true.pfm"),
                 mask.to_grid(normal_from_depth(cam, scene.zmap).vectors, fill=0.0))
    io.save_json(os.path.join(args.out, "manifest.json"), _manifest(
        "render", args,
        {"seed": args.seed, "images": names, "mask": "mask.pgm",
         "truth": {"depth": "depth_true.pfm", "albedo": "albedo_true.pfm",
                   "normals": "normals_true.pfm"},
         "rig": io.rig_to_dict(cam, rig)}))
    print(f"wrote {stack.m} images to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    spec = io.load_json(args.config)
    cam = io.camera_from_dict(spec["camera"])
    base = os.path.dirname(os.path.abspath(args.config))
    sources = []
    report = []
    for entry in spec["sources"]:
        name = entry.get("name", f"source{len(sources)}")
        for key in ("rays", "poses"):
            if key not in entry or not os.path.exists(os.path.join(base, entry[key])):
                raise NearpsError(f"source {name!r}: missing {key} file")
        mu = float(entry["mu"])
        bundle = io.load_ray_bundle(os.path.join(base, entry["rays"]))
        x_s, resid = calibrate.triangulate_source(bundle)
        observations = io.load_pose_observations(os.path.join(base, entry["poses"]))
        if args.rgb:
            result = calibrate.calibrate_rgb(observations, x_s, mu)
            sources.append({"x_s": list(map(float, x_s)),
                            "n_s": list(map(float, result.fused_direction)),
                            "mu": mu, "psi_rgb": list(map(float, result.psis))})
        elif mu > 0:
            n_s, psi = calibrate.calibrate_anisotropic(observations, x_s, mu)
            sources.append({"x_s": list(map(float, x_s)),
                            "n_s": list(map(float, n_s)), "mu": mu, "psi": psi})
        else:
            psi = calibrate.calibrate_isotropic(observations, x_s)
            sources.append({"x_s": list(map(float, x_s)), "n_s": [0.0, 0.0, 1.0],
                            "mu": mu, "psi": psi})
        report.append((name, resid))
        print(f"{name}: position {np.round(x_s, 6).tolist()}, "
              f"triangulation RMS {resid:.3e}")
    rig_doc = {"camera": io.camera_to_dict(cam), "sources": sources}
    io.rig_from_dict(rig_doc)  # validate before writing
    io.save_json(args.out, rig_doc)
    print(f"wrote rig config to {args.out}")
    return 0


def _read_inputs(args):
    manifest = io.load_json(os.path.join(args.images, "manifest.json"))
    mask = PixelMask(io.read_pgm_mask(os.path.join(args.images, manifest["mask"])))
    stack = io.read_stack(args.images, manifest["images"], mask)
    rig_doc = io.load_json(args.rig) if args.rig else manifest["rig"]
    cam, rig = io.rig_from_dict(rig_doc)
    return manifest, stack, cam, rig


def cmd_solve(args) -> int:
    _, stack, cam, rig = _read_inputs(args)
    if args.method != "arls" and stack.channels != 1:
        raise NearpsError(f"method {args.method} works on single-channel stacks")
    if args.method == "arls" and not args.rgb and stack.channels != 1:
        raise NearpsError("3-channel stack: pass --rgb to run the RGB solver")

    discard = None
    if args.method in ("alternating", "ratio-fixed-point", "ratio-admm") \
            and not args.no_prefilter and stack.m >= 4:
        discard = prefilter_robust(stack).discarded

    init = LogDepthMap(stack.mask, np.full(stack.mask.n, np.log(args.init_z0)))
    if args.method == "alternating":
        cfg = AlternatingConfig(z0=args.init_z0, k_max=args.max_iter,
                                prefilter=False)
        estimate = solve_alternating(
            ImageStack(stack.mask, stack.data), rig, cam, cfg) \
            if discard is None else _solve_alternating_filtered(stack, rig, cam, args)
    elif args.method == "ratio-fixed-point":
        estimate = ratios.solve_fixed_point(stack, rig, cam, init,
                                            iters=args.max_iter, discard=discard)
    elif args.method == "ratio-admm":
        cfg = ratios.AdmmConfig(max_outer=args.max_iter)
        estimate = ratios.solve_admm(stack, rig, cam, init, cfg, discard=discard)
    elif args.method == "arls":
        cfg = arls.ArlsConfig(
            z0=args.init_z0, estimator=make_estimator(args.estimator, args.lam),
            shadow=ShadowOperator("positive_part" if args.shadows == "clamp"
                                  else "identity"),
            max_outer=args.max_iter)
        estimate = arls.solve_arls(stack, rig, cam, cfg)
    else:  # pragma: no cover - argparse restricts choices
        raise NearpsError(f"unknown method {args.method}")

    mask = stack.mask
    os.makedirs(args.out, exist_ok=True)
    io.write_pfm(os.path.join(args.out, "depth.pfm"),
                 mask.to_grid(estimate.zmap.depth, fill=0.0))
    if estimate.albedo is not None:
        io.write_pfm(os.path.join(args.out, "albedo.pfm"),
                     mask.to_grid(estimate.albedo, fill=0.0))
    io.write_pfm(os.path.join(args.out, "normals.pfm"),
                 mask.to_grid(estimate.normals.vectors, fill=0.0))
    io.write_energy_csv(os.path.join(args.out, "energy.csv"),
                        estimate.energy_trace, estimate.info.get("elapsed_s"))
    io.save_json(os.path.join(args.out, "manifest.json"), _manifest(
        "solve", args, {"seed": None, "iterations": estimate.iterations}))
    print(f"{args.method}: {estimate.iterations} iterations, "
          f"final energy {estimate.energy_trace[-1]:.6e}")
    return 0


def _solve_alternating_filtered(stack, rig, cam, args):
    cfg = AlternatingConfig(z0=args.init_z0, k_max=args.max_iter, prefilter=True)
    return solve_alternating(stack, rig, cam, cfg)


def cmd_eval(args) -> int:
    mask = PixelMask(io.read_pgm_mask(args.mask))
    est_grid = io.read_pfm(args.estimate).astype(np.float64)
    true_grid = io.read_pfm(args.truth).astype(np.float64)
    if est_grid.shape != true_grid.shape or est_grid.shape != mask.inside.shape:
        raise NearpsError("mask mismatch: estimate, truth and mask sizes differ")
    cam, _ = io.rig_from_dict(io.load_json(args.rig))
    est = LogDepthMap.from_depth(mask, est_grid[mask.rows, mask.cols])
    true = LogDepthMap.from_depth(mask, true_grid[mask.rows, mask.cols])
    dist = metrics.point_distances(est, true, cam)
    summary = metrics.summarize(dist)
    edges, counts = metrics.histogram(dist, args.bin_width)
    os.makedirs(args.out, exist_ok=True)
    io.save_json(os.path.join(args.out, "metrics.json"), summary)
    rows = ["bin_low,bin_high,count"]
    rows += [f"{lo!r},{hi!r},{c}" for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    io._atomic_write(os.path.join(args.out, "histogram.csv"),
                     ("\n".join(rows) + "\n").encode())
    print(f"median {summary['median']:.6g}  mean {summary['mean']:.6g}  "
          f"rmse {summary['rmse']:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearps",
        description="Photometric stereo under calibrated nearby LED illumination")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="synthesize images of a built-in or PFM scene")
    p.add_argument("--rig", help="rig config JSON (default: built-in ring rig)")
    p.add_argument("--scene", choices=("plane", "hemisphere", "pfm"),
                   default="hemisphere")
    p.add_argument("--z0", type=float, default=700.0)
    p.add_argument("--radius", type=float, default=80.0)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--psi", type=float, default=1e6)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--f", type=float, default=200.0)
    p.add_argument("--albedo", choices=("checker", "uniform"), default="checker")
    p.add_argument("--depth", help="depth PFM for --scene pfm")
    p.add_argument("--albedo-map", help="albedo PFM for --scene pfm")
    p.add_argument("--rgb", action="store_true")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("calibrate", help="estimate a rig config from ray and pose files")
    p.add_argument("config", help="JSON listing the camera and per-source data files")
    p.add_argument("--rgb", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", help="reconstruct depth/albedo from rendered images")
    p.add_argument("--images", required=True, help="directory with a render manifest")
    p.add_argument("--rig", help="rig config JSON (default: from the manifest)")
    p.add_argument("--method", required=True,
                   choices=("alternating", "ratio-fixed-point", "ratio-admm", "arls"))
    p.add_argument("--init-z0", type=float, default=700.0)
    p.add_argument("--estimator", choices=("ls", "cauchy"), default="ls")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--shadows", choices=("identity", "clamp"), default="identity")
    p.add_argument("--rgb", action="store_true")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--no-prefilter", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="compare a depth estimate against ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--rig", required=True, help="rig config carrying the camera")
    p.add_argument("--bin-width", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NearpsError, ValueError, OSError, KeyError) as exc:
        print(f"nearps: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
