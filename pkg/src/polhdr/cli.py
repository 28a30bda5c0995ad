"""Command-line driver: simulate, demosaic, stokes, fuse, merge, tonemap, crf-solve, evaluate.

JSON results go to stdout, logs to stderr. Failures print one JSON line
``{"error": ..., "kind": ...}`` on stderr; exit code 2 for usage errors and 1
for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import hdrops, metrics
from .crf import Crf, CrfError, invert_crf, round_half_away, solve_crf
from .fusion import FLAG_ALL_SATURATED, FLAG_DEGENERATE, FLAG_OK, FusionConfig, fuse_ideb, saturation_mask
from .imgcore import (ANGLE_KEYS, ANGLES, CaptureStack, ImageIOError, LdrImage, load_stack,
                      read_pfm, read_png, save_stack, write_pfm, write_pfm_array, write_png)
from .polar import DEFAULT_PATTERN, demosaic_quad, mosaic_quad, parse_pattern, pol_state_from_stokes, stokes_from_quad
from .synth import BRACKET_EXPOSURES_MS, SceneSpec, generate_scene, simulate_stack

log = logging.getLogger("polhdr")

MASK_CODES = {FLAG_OK: 255, FLAG_DEGENERATE: 128, FLAG_ALL_SATURATED: 0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _rho_range(text: str) -> tuple:
    lo, sep, hi = text.partition(":")
    try:
        return (float(lo), float(hi)) if sep else (float(lo), float(lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None


def _pattern(text: str):
    try:
        return parse_pattern(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(obj) -> None:
    def fix(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        if isinstance(v, dict):
            return {k: fix(x) for k, x in v.items()}
        return v
    print(json.dumps(fix(obj), sort_keys=True))


def _load_crf(path) -> Crf:
    try:
        return Crf.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise ImageIOError(f"CRF file not found: {path}") from None


def _stack_and_crf(args) -> tuple[CaptureStack, Crf]:
    stack = load_stack(args.manifest)
    crf = _load_crf(args.crf) if getattr(args, "crf", None) else stack.crf
    if crf is None:
        raise CrfError("no CRF: the manifest has none and --crf was not given")
    return stack, crf


def _fusion_cfg(args) -> FusionConfig:
    return FusionConfig(sigma=args.sigma, saturation_level=args.sat_level)


def _mask_image(flags: np.ndarray) -> LdrImage:
    flags = flags if flags.ndim == 2 else flags.max(axis=2)
    out = np.zeros(flags.shape, dtype=np.uint8)
    for flag, code in MASK_CODES.items():
        out[flags == flag] = code
    return LdrImage(out, 8)


def _flags_from_mask(img: LdrImage) -> np.ndarray:
    data = img.data[:, :, 0]
    flags = np.full(data.shape, FLAG_DEGENERATE, dtype=np.uint8)
    flags[data == 255] = FLAG_OK
    flags[data == 0] = FLAG_ALL_SATURATED
    return flags


def _mask_path(out: Path) -> Path:
    return out.with_name(out.stem + "_mask.png")


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> dict:
    spec = SceneSpec(width=args.width, height=args.height, dynamic_range_stops=args.stops,
                     rho_range=args.rho, theta_field=args.theta, radiance_pattern=args.scene,
                     seed=args.seed, peak_radiance=args.peak, texture=args.texture, channels=args.channels)
    crf = _load_crf(args.crf) if args.crf else Crf()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = generate_scene(spec)
    write_pfm(gt.radiance, out / "gt_radiance.pfm")
    write_pfm_array(gt.rho, out / "gt_rho.pfm")
    write_pfm_array(gt.theta, out / "gt_theta.pfm")
    stack = simulate_stack(gt, args.exposures, crf, args.noise, args.seed, args.threads)
    manifest = save_stack(stack, out)
    if args.mosaic:
        for k, quad in enumerate(stack.quads):
            write_png(mosaic_quad(quad, args.pattern), out / f"q{k:02d}_mosaic.png")
    log.info("wrote %d quads to %s", len(stack), out)
    r = gt.radiance.data
    return {"manifest": str(manifest), "quads": len(stack),
            "stops": float(np.log2(r.max() / r[r > 0].min()))}


def cmd_demosaic(args) -> dict:
    mosaic = read_png(args.input)
    quad = demosaic_quad(mosaic, args.pattern, args.mode, t0=args.t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for key, angle in ANGLE_KEYS.items():
        path = out / f"{key}.png"
        write_png(quad[angle], path)
        files[key] = str(path)
    return {"images": files, "width": quad.shape[1], "height": quad.shape[0]}


def cmd_stokes(args) -> dict:
    stack, crf = _stack_and_crf(args)
    quad = stack[args.quad]
    irr = [invert_crf(crf, lv) / quad.t0 for lv in quad.levels()]
    s0, s1, s2 = stokes_from_quad(*irr)
    degenerate = s0 <= 0
    state, stats = pol_state_from_stokes(np.where(degenerate, 1.0, s0), np.where(degenerate, 0.0, s1),
                                         np.where(degenerate, 0.0, s2), return_stats=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in (("s0", s0), ("s1", s1), ("s2", s2), ("rho", state.rho), ("theta", state.theta)):
        write_pfm_array(arr, out / f"{name}.pfm")
    return {"clamped": stats["clamped"], "degenerate": int(np.count_nonzero(degenerate)),
            "undefined_theta": int(np.count_nonzero(stats["undefined_theta"] & ~degenerate))}


def cmd_fuse(args) -> dict:
    stack, crf = _stack_and_crf(args)
    cfg = _fusion_cfg(args)
    out = Path(args.out)
    if args.quad == "all":
        out.mkdir(parents=True, exist_ok=True)
        targets = [(k, out / f"ideb_{k:02d}.pfm") for k in range(len(stack))]
    else:
        k = int(args.quad)
        if not -len(stack) <= k < len(stack):
            raise IndexError(f"--quad {k} out of range for a stack of {len(stack)}")
        targets = [(k, out)]
    results = []
    for k, path in targets:
        fused = fuse_ideb(stack[k], crf, cfg, args.threads)
        write_pfm(fused.ideb, path)
        mask = Path(args.mask) if args.mask and len(targets) == 1 else _mask_path(path)
        write_png(_mask_image(fused.flags), mask)
        results.append({"t0_ms": stack[k].t0, "ideb": str(path), "mask": str(mask),
                        "recoverable_fraction": float(saturation_mask(stack[k], cfg).mean())})
    return results[0] if len(results) == 1 else {"fused": results}


def cmd_merge(args) -> dict:
    stack, crf = _stack_and_crf(args)
    if args.ideb:
        paths = [Path(p) for p in args.ideb.split(",") if p]
        if len(paths) != len(stack):
            raise ValueError(f"--ideb lists {len(paths)} maps but the stack has {len(stack)} exposures")
        maps = [read_pfm(p).data for p in paths]
        flags = [_flags_from_mask(read_png(_mask_path(p))) for p in paths]
    else:
        fused = [fuse_ideb(q, crf, _fusion_cfg(args), args.threads) for q in stack.quads]
        maps = [f.ideb.data for f in fused]
        flags = [f.flags for f in fused]
    merged = hdrops.merge_irradiance(maps, flags, stack.exposures, crf.white_level)
    out = Path(args.out)
    write_pfm(merged.radiance, out)
    mask = Path(args.mask) if args.mask else _mask_path(out)
    write_png(LdrImage(np.where(merged.ok, 255, 0).astype(np.uint8), 8), mask)
    r = merged.radiance.data[merged.ok]
    pos = r[r > 0]
    stops = float(np.log2(pos.max() / pos.min())) if pos.size else 0.0
    return {"hdr": str(out), "mask": str(mask), "stops": stops, "ok_fraction": float(merged.ok.mean())}


def cmd_tonemap(args) -> dict:
    hdr = read_pfm(args.input)
    cfg = hdrops.ReinhardConfig(key_a=args.key, white_point=args.white)
    ldr = hdrops.reinhard_tonemap(hdr, cfg)
    levels = np.clip(round_half_away(255.0 * ldr), 0, 255).astype(np.uint8)
    write_png(LdrImage(levels, 8), args.out)
    return {"ldr": str(args.out)}


def cmd_crf_solve(args) -> dict:
    stack = load_stack(args.manifest)
    pairs = []
    for quad in stack.quads:
        side = np.concatenate([quad[a].data for a in ANGLES], axis=1)
        pairs.append((LdrImage(side, quad.bit_depth), quad.t0))
    crf = solve_crf(pairs, lam=args.lam, samples=args.samples, seed=args.seed)
    Path(args.out).write_text(json.dumps(crf.to_dict()))
    return {"crf": str(args.out), "kind": crf.kind, "levels": crf.max_level + 1}


def cmd_evaluate(args) -> dict:
    ref = read_pfm(args.ref).data
    test = read_pfm(args.test).data
    if args.mask:
        mask = read_png(args.mask).data[:, :, 0] > 0
        p = metrics.hdr_psnr(test, ref, mask)
        s = metrics.hdr_ssim(test, ref, mask)
        frac = float(mask.mean())
    else:
        p = metrics.hdr_psnr(test, ref)
        s = metrics.hdr_ssim(test, ref)
        frac = 1.0
    return {"psnr_db": p, "ssim": s, "recoverable_fraction": frac}


# --- parser -------------------------------------------------------------------


def _common(p, *, manifest=False, fusion=False):
    if manifest:
        p.add_argument("--manifest", required=True, help="capture-stack manifest JSON")
        p.add_argument("--crf", help="CRF JSON overriding the manifest's curve")
    if fusion:
        p.add_argument("--sigma", type=float, default=0.2, help="fusion Gaussian width (default 0.2)")
        p.add_argument("--sat-level", type=int, default=None,
                       help="saturation threshold in digital levels (default max_level - 1)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polhdr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic scene and its bracketed captures")
    p.add_argument("--scene", default="hdr-checker", choices=["hdr-checker", "radial-spots", "gradient-ramp"])
    p.add_argument("--stops", type=float, default=14.0, help="scene dynamic range in stops")
    p.add_argument("--rho", type=_rho_range, default=(0.0, 1.0), help="degree-of-polarization range LO:HI")
    p.add_argument("--theta", default="random-smooth",
                   help="angle field: random-smooth | smooth-gradient | constant:DEG")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--channels", type=int, default=1, choices=[1, 3])
    p.add_argument("--peak", type=float, default=25.0, help="peak scene radiance")
    p.add_argument("--texture", type=float, default=0.3, help="in-tile texture amplitude")
    p.add_argument("--exposures", type=_float_list, default=list(BRACKET_EXPOSURES_MS),
                   help="comma-separated t0 list in ms (default: the 17-exposure bracket)")
    p.add_argument("--crf", help="CRF JSON (default gamma 2.2, white level 1, 8-bit)")
    p.add_argument("--noise", type=float, default=0.0, help="read-noise sigma in digital levels")
    p.add_argument("--mosaic", action="store_true", help="also write micro-polarizer mosaics")
    p.add_argument("--pattern", type=_pattern, default=DEFAULT_PATTERN, help="mosaic layout, e.g. 90,45,135,0")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demosaic", help="split a micro-polarizer mosaic into four orientation images")
    p.add_argument("--input", required=True, help="mosaic PNG")
    p.add_argument("--pattern", type=_pattern, default=DEFAULT_PATTERN, help="mosaic layout, e.g. 90,45,135,0")
    p.add_argument("--mode", choices=["split", "bilinear"], default="split")
    p.add_argument("--t0", type=float, default=1.0, help="exposure time in ms")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("stokes", help="Stokes, DoP and AoP maps of one quad")
    _common(p, manifest=True)
    p.add_argument("--quad", type=int, default=0, help="index into the stack (ascending t0)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_stokes)

    p = sub.add_parser("fuse", help="weighted fusion of one quad into an irradiance map")
    _common(p, manifest=True, fusion=True)
    p.add_argument("--quad", default="0", help="index into the stack, or 'all'")
    p.add_argument("--mask", help="flag-mask PNG path (default <out>_mask.png)")
    p.add_argument("--out", required=True, help="output PFM (directory with --quad all)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("merge", help="merge a bracketed stack into a reference HDR")
    _common(p, manifest=True, fusion=True)
    p.add_argument("--ideb", help="comma-separated fused PFMs, one per exposure (default: fuse internally)")
    p.add_argument("--mask", help="ok-mask PNG path (default <out>_mask.png)")
    p.add_argument("--out", required=True, help="output PFM")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("tonemap", help="global photographic tone mapping to an 8-bit PNG")
    p.add_argument("--input", required=True, help="HDR PFM")
    p.add_argument("--key", type=float, default=0.18)
    p.add_argument("--white", type=float, default=None, help="white point (default: max scaled luminance)")
    p.add_argument("--out", required=True, help="output PNG")
    _common(p)
    p.set_defaults(func=cmd_tonemap)

    p = sub.add_parser("crf-solve", help="recover a lut CRF from a bracketed stack")
    p.add_argument("--manifest", required=True, help="capture-stack manifest JSON")
    p.add_argument("--lambda", dest="lam", type=float, default=50.0, help="smoothness weight (default 50)")
    p.add_argument("--samples", type=int, default=500, help="sampled pixel locations (default 500)")
    p.add_argument("--out", required=True, help="output CRF JSON")
    _common(p)
    p.set_defaults(func=cmd_crf_solve)

    p = sub.add_parser("evaluate", help="log-domain PSNR and tone-mapped SSIM of an HDR against a reference")
    p.add_argument("--ref", required=True, help="reference PFM")
    p.add_argument("--test", required=True, help="test PFM")
    p.add_argument("--mask", help="PNG; nonzero pixels are evaluated")
    _common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": message.replace("\n", " "), "kind": kind}) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (ValueError, IndexError, KeyError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    _emit(result)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
