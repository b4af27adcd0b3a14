"""Command-line pipelines: file in, file out.

Subcommands: sample-route, make-mask, plucker, demo-forward, eval-pose,
eval-image.  Every command that writes an output also writes a JSON manifest
next to it (command, inputs, parameters, seed, version); re-running with the
same manifest reproduces the output byte for byte.

Exit codes: 0 success, 2 usage error, 3 data error, 4 sampling exhaustion.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__, _kernels
from . import block as blk
from . import mask as msk
from . import metrics as mtr
from . import plucker as plk
from . import routes as rts
from .geometry import ErpGrid, EulerAngles, Rotation3, rotation_matrix

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_EXHAUSTED = 4


def _write_manifest(args, command: str, inputs: dict, params: dict, seed) -> None:
    path = args.manifest or (getattr(args, "out", None) and args.out + ".manifest.json")
    if path is None:
        return
    manifest = {
        "command": command,
        "inputs": inputs,
        "params": params,
        "seed": seed,
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _data_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_DATA


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_sample_route(args) -> int:
    try:
        scene = rts.read_scene(args.scene)
    except FileNotFoundError:
        return _data_error(f"scene file not found: {args.scene}")
    except json.JSONDecodeError as exc:
        return _data_error(
            f"scene file {args.scene} is not valid JSON "
            f"(line {exc.lineno}, column {exc.colno}): {exc.msg}"
        )
    except ValueError as exc:
        return _data_error(str(exc))
    heading = args.heading
    fixed = None
    if heading == "fixed":
        fixed = EulerAngles(args.yaw, args.pitch, args.roll)
    try:
        route, stats = rts.sample_route(
            scene,
            seed=args.seed,
            min_length=args.min_length,
            max_attempts=args.max_attempts,
            stride=args.stride,
            heading=heading,
            fixed_orientation=fixed,
        )
    except rts.RouteSamplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"rejections: {json.dumps(exc.stats.rejections)}", file=sys.stderr)
        return EXIT_EXHAUSTED
    rts.write_route(route, args.out)
    _write_manifest(
        args,
        "sample-route",
        {"scene": args.scene},
        {
            "min_length": args.min_length,
            "stride": args.stride,
            "heading": heading,
            "max_attempts": args.max_attempts,
        },
        args.seed,
    )
    print(
        f"attempts: {stats.attempts}  rejections: {json.dumps(stats.rejections)}",
        file=sys.stderr,
    )
    print(f"route: {len(route.frames)} frames, {route.length:.2f} m")
    return EXIT_OK


def _relative_rotations(poses) -> list[Rotation3]:
    """Per-frame rotation relative to frame 0 (identity frame 0 passes through)."""
    mats = [rotation_matrix(p.orientation) for p in poses]
    if mats[0].is_identity:
        return mats
    inv0 = mats[0].matrix.T
    return [Rotation3(m.matrix @ inv0) for m in mats]


def _cmd_make_mask(args) -> int:
    try:
        poses = rts.read_route(args.route)
    except (FileNotFoundError, ValueError) as exc:
        return _data_error(str(exc))
    if len(poses) < args.frames:
        return _data_error(
            f"route has {len(poses)} frames but {args.frames} are required"
        )
    try:
        grid = msk.TokenGrid(
            args.frames, args.rows, args.cols, ErpGrid(args.source_width, args.source_height)
        )
    except ValueError as exc:
        return _data_error(str(exc))
    rotations = _relative_rotations(poses[: args.frames])
    mask = msk.build_mask(grid, rotations, args.tau)
    msk.write_mask(mask, args.out)
    _write_manifest(
        args,
        "make-mask",
        {"route": args.route},
        {
            "frames": args.frames,
            "rows": args.rows,
            "cols": args.cols,
            "source_width": args.source_width,
            "source_height": args.source_height,
            "tau": args.tau,
        },
        args.seed,
    )
    print(f"density: {mask.density:.6f}")
    if args.verify:
        if mask.n > 512:
            return _data_error(
                f"--verify supports up to 512 tokens, mask has {mask.n}"
            )
        reread = msk.read_mask(args.out)
        expected = msk.brute_force_pairs(grid, rotations, args.tau)
        if reread.pair_set() != expected:
            return _data_error("mask verification failed against the pairwise loop")
        print("verify: ok")
    return EXIT_OK


def _cmd_plucker(args) -> int:
    try:
        poses = rts.read_route(args.route)
    except (FileNotFoundError, ValueError) as exc:
        return _data_error(str(exc))
    if args.model == "pinhole":
        if None in (args.fx, args.fy, args.cx, args.cy):
            print(
                "error: --model pinhole requires --fx --fy --cx --cy",
                file=sys.stderr,
            )
            return EXIT_USAGE
        intrinsics = plk.PinholeIntrinsics(args.fx, args.fy, args.cx, args.cy)
    else:
        intrinsics = None
    try:
        grid = ErpGrid(args.width, args.height)
        fld = plk.build_plucker_field(
            poses,
            grid,
            model=args.model,
            intrinsics=intrinsics,
            add_translation=args.add_translation,
        )
    except ValueError as exc:
        return _data_error(str(exc))
    plk.write_field(fld, args.out)
    _write_manifest(
        args,
        "plucker",
        {"route": args.route},
        {
            "width": args.width,
            "height": args.height,
            "model": args.model,
            "add_translation": args.add_translation,
        },
        args.seed,
    )
    dots = np.abs(
        np.einsum("thwc,thwc->thw", fld.moments, fld.directions)
    ).max(axis=(1, 2))
    for t, worst in enumerate(dots):
        print(f"frame {t}: max |m.d| = {worst:.3e}")
    return EXIT_OK


def _cmd_demo_forward(args) -> int:
    try:
        mask = msk.read_mask(args.mask)
        fld = plk.read_field(args.field)
    except (FileNotFoundError, ValueError) as exc:
        return _data_error(str(exc))
    try:
        grid = msk.TokenGrid(
            args.frames, args.rows, args.cols, ErpGrid(fld.width, fld.height)
        )
    except ValueError as exc:
        return _data_error(str(exc))
    if mask.n != grid.n:
        return _data_error(
            f"mask has {mask.n} tokens but the grid implies {grid.n}"
        )
    config = blk.BlockConfig(args.d_model, args.heads, grid, tau=mask.tau)
    weights = blk.init_weights(config, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    x = rng.standard_normal((config.n, config.d_model))
    try:
        condition = blk.encode_condition(fld, config, weights)
    except ValueError as exc:
        return _data_error(str(exc))

    t0 = time.perf_counter()
    out = blk.forward_block(x, condition, mask, weights, config)
    forward_s = time.perf_counter() - t0
    reference = blk.global_branch(x, weights, config)
    zero_init_ok = bool(np.array_equal(out, reference))

    perturbed = weights.copy()
    perturbed.exp_zero += 0.05 * rng.standard_normal(perturbed.exp_zero.shape)
    perturbed.sph_zero += 0.05 * rng.standard_normal(perturbed.sph_zero.shape)
    t0 = time.perf_counter()
    err = blk.grad_check(
        perturbed, config, x, fld, mask,
        epsilon=args.epsilon, sample=args.grad_samples, seed=args.seed,
    )
    grad_s = time.perf_counter() - t0

    print(f"backend: {_kernels.BACKEND_NAME}")
    print(f"tokens: {config.n}  d_model: {config.d_model}  heads: {config.heads}")
    print(f"zero-init equivalence: {'PASS' if zero_init_ok else 'FAIL'}")
    print(f"grad check max relative error: {err:.3e}")
    print(
        f"timing: forward {forward_s * 1e3:.1f} ms, grad check {grad_s:.2f} s",
        file=sys.stderr,
    )
    if args.manifest:
        _write_manifest(
            args,
            "demo-forward",
            {"mask": args.mask, "field": args.field},
            {
                "frames": args.frames,
                "rows": args.rows,
                "cols": args.cols,
                "d_model": args.d_model,
                "heads": args.heads,
                "epsilon": args.epsilon,
                "grad_samples": args.grad_samples,
            },
            args.seed,
        )
    return EXIT_OK if zero_init_ok else EXIT_DATA


def _cmd_eval_pose(args) -> int:
    try:
        gt = mtr.poses_from_route(rts.read_route(args.gt))
        est = mtr.poses_from_route(rts.read_route(args.est))
    except (FileNotFoundError, ValueError) as exc:
        return _data_error(str(exc))
    try:
        r_err = mtr.rotation_error(gt, est)
        t_err = mtr.translation_error(gt, est, normalize=args.normalize_translation)
    except ValueError as exc:
        return _data_error(str(exc))
    print(f"R_err {r_err:.9f}")
    print(f"T_err {t_err:.9f}")
    if args.manifest:
        _write_manifest(
            args,
            "eval-pose",
            {"gt": args.gt, "est": args.est},
            {"normalize_translation": args.normalize_translation},
            args.seed,
        )
    return EXIT_OK


def _cmd_eval_image(args) -> int:
    try:
        ref, ref_max = mtr.load_image(args.ref)
        test, test_max = mtr.load_image(args.test)
    except (FileNotFoundError, ValueError) as exc:
        return _data_error(str(exc))
    if ref_max != test_max:
        return _data_error(
            f"images declare different ranges: {ref_max} vs {test_max}"
        )
    try:
        if args.metric in ("psnr", "both"):
            print(f"PSNR {mtr.psnr(ref, test, max_value=ref_max):.6f}")
        if args.metric in ("ssim", "both"):
            print(f"SSIM {mtr.ssim(ref, test, max_value=ref_max):.6f}")
    except ValueError as exc:
        return _data_error(str(exc))
    if args.manifest:
        _write_manifest(
            args,
            "eval-image",
            {"ref": args.ref, "test": args.test},
            {"metric": args.metric},
            args.seed,
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, needs_out: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0)
    if needs_out:
        p.add_argument("--out", required=True, help="output file path")
    p.add_argument(
        "--manifest",
        default=None,
        help="manifest path (default: <out>.manifest.json)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panosphere",
        description="Spherical panorama geometry, routes, masks, and metrics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-route", help="sample a walkable route from a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--min-length", type=float, default=18.0)
    p.add_argument("--stride", type=float, default=0.10)
    p.add_argument("--heading", choices=["tangent", "fixed"], default="tangent")
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--roll", type=float, default=0.0)
    p.add_argument("--max-attempts", type=int, default=200)
    _add_common(p)
    p.set_defaults(func=_cmd_sample_route)

    p = sub.add_parser("make-mask", help="build a sparse spherical attention mask")
    p.add_argument("--route", required=True)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--rows", type=int, default=12)
    p.add_argument("--cols", type=int, default=24)
    p.add_argument("--source-width", type=int, default=960)
    p.add_argument("--source-height", type=int, default=480)
    p.add_argument("--tau", type=float, default=0.35)
    p.add_argument(
        "--verify",
        action="store_true",
        help="re-read the output and compare against a pairwise loop (n <= 512)",
    )
    _add_common(p)
    p.set_defaults(func=_cmd_make_mask)

    p = sub.add_parser("plucker", help="build a per-pixel ray field from a route")
    p.add_argument("--route", required=True)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--model", choices=["erp", "pinhole"], default="erp")
    p.add_argument("--fx", type=float, default=None)
    p.add_argument("--fy", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--add-translation", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_plucker)

    p = sub.add_parser(
        "demo-forward", help="run the reference block on seeded random tokens"
    )
    p.add_argument("--mask", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--rows", type=int, default=12)
    p.add_argument("--cols", type=int, default=24)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument(
        "--grad-samples",
        type=int,
        default=2,
        help="finite-difference probes per parameter array; each probe costs "
        "two forward passes, so large token grids take tens of seconds",
    )
    _add_common(p, needs_out=False)
    p.set_defaults(func=_cmd_demo_forward)

    p = sub.add_parser("eval-pose", help="rotation/translation error of two routes")
    p.add_argument("--gt", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--normalize-translation", action="store_true")
    _add_common(p, needs_out=False)
    p.set_defaults(func=_cmd_eval_pose)

    p = sub.add_parser("eval-image", help="PSNR/SSIM between two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=["psnr", "ssim", "both"], default="both")
    _add_common(p, needs_out=False)
    p.set_defaults(func=_cmd_eval_image)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
