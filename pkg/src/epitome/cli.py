"""Command-line entry point: ``epitome <subcommand> ...``.

Failures print a single tab-separated line ``error<TAB>kind<TAB>message``
to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .core import EpitomeGeometry, GeometryError, PatchShape, load_epitome, save_epitome
from .denoise import DenoiseConfig, NoiseModel, add_gaussian_noise, denoise_image, psnr
from .imageio import ImageFormatError, read_image, render_epitome, write_image
from .learning import LearnConfig
from .multiscale import ScaleSchedule, multiscale_learn
from .solvers import set_threads


class CLIError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_path, command, config, inputs, outputs) -> Path:
    """Record everything needed to rerun: config, seeds, input/output digests."""
    manifest = {
        "tool": "epitome",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": {str(p): _digest(p) for p in outputs},
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _schedule(args) -> ScaleSchedule:
    iters = tuple(args.iters) if args.iters else ()
    return ScaleSchedule(args.scales, args.ratio, iters)


def _add_learning_args(p, lam_required):
    p.add_argument("--epitomes", type=int, default=20)
    p.add_argument("--epi-size", type=int, nargs=2, metavar=("H", "W"), default=(15, 15))
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--lambda", dest="lam", type=float, required=lam_required, default=None)
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--ratio", type=float, default=2.0)
    p.add_argument("--iters", type=int, nargs="+", default=None,
                   help="outer iterations per scale (default 20 then 5)")
    p.add_argument("--fista-iters", type=int, default=20)
    p.add_argument("--stride", type=int, default=2, help="training patch stride")
    p.add_argument("--scale-patches", action="store_true",
                   help="shrink the patch with the image at coarse scales")
    p.add_argument("--seed", type=int, default=0)


def cmd_train(args):
    img = read_image(args.image)
    patch = PatchShape.square(args.patch)
    geom = EpitomeGeometry(args.epitomes, *args.epi_size)
    if geom.height < patch.height or geom.width < patch.width:
        raise GeometryError(f"patch {args.patch} larger than epitome {geom.height}x{geom.width}")
    sched = _schedule(args)
    cfg = LearnConfig(lam=args.lam, patch=patch, geometry=geom, fista_iters=args.fista_iters, seed=args.seed)
    E = multiscale_learn(img / 255.0, sched, cfg, stride=args.stride, scale_patches=args.scale_patches)
    meta = {"lambda": args.lam, "scales": sched.n_scales, "ratio": sched.ratio,
            "iters": ",".join(map(str, sched.iters)), "seed": args.seed, "stride": args.stride,
            "intensity_scale": "1/255"}
    save_epitome(E, args.out, patch, meta)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(args.out, "train", config, [args.image], [args.out, str(args.out) + ".meta"])
    print(f"model\t{args.out}\t{geom.count}x{geom.height}x{geom.width}\tpatch={patch.height}x{patch.width}")


def cmd_denoise(args):
    if (args.model is None) == (not args.train_on_input):
        raise CLIError("usage", "give exactly one of --model or --train-on-input")
    src = read_image(args.image)
    clean = None
    if args.add_noise:
        clean = src
        noisy = add_gaussian_noise(src, NoiseModel(args.sigma, args.seed))
    else:
        noisy = src
        if args.clean:
            clean = read_image(args.clean)
    epitome = None
    if args.model:
        epitome, patch = load_epitome(args.model)
        geom = epitome.geometry
    else:
        patch = PatchShape.square(args.patch)
        geom = EpitomeGeometry(args.epitomes, *args.epi_size)
    cfg = DenoiseConfig(C=args.C, patch=patch, geometry=geom, schedule=_schedule(args), lam=args.lam,
                        fista_iters=args.fista_iters, stride=args.stride, seed=args.seed,
                        blend=args.blend, scale_patches=args.scale_patches)
    res = denoise_image(noisy, cfg, args.sigma, epitome=epitome)
    write_image(res.image, args.out)
    outputs = [args.out]
    if clean is not None:
        p_noisy, p_den = psnr(clean, noisy), psnr(clean, res.image)
    else:
        p_noisy = p_den = math.nan
    row = (f"{Path(args.image).name}\t{args.sigma:g}\t{res.lam:.6g}\t{args.C:g}"
           f"\t{p_noisy:.4f}\t{p_den:.4f}\t{res.seconds:.2f}")
    if args.report:
        rp = Path(args.report)
        header = "image\tsigma\tlambda\tC\tpsnr_noisy\tpsnr_denoised\tseconds\n"
        with open(rp, "a") as fh:
            if rp.stat().st_size == 0:
                fh.write(header)
            fh.write(row + "\n")
    config = {k: v for k, v in vars(args).items() if k not in ("func", "report")}
    config["lambda_used"] = res.lam
    inputs = [args.image] + ([args.model] if args.model else []) + ([args.clean] if args.clean else [])
    write_manifest(args.out, "denoise", config, inputs, outputs)
    print(row)


def cmd_noise(args):
    img = read_image(args.image)
    write_image(add_gaussian_noise(img, NoiseModel(args.sigma, args.seed)), args.out)
    write_manifest(args.out, "noise", {"sigma": args.sigma, "seed": args.seed}, [args.image], [args.out])


def cmd_psnr(args):
    value = psnr(read_image(args.a), read_image(args.b))
    print("inf" if math.isinf(value) else f"{value:.4f}")


def cmd_render(args):
    E, _ = load_epitome(args.model)
    write_image(render_epitome(E), args.out)
    write_manifest(args.out, "render", {}, [args.model], [args.out])


def cmd_check(args):
    from .selfcheck import run_checks

    failed = 0
    for name, ok, detail in run_checks(args.seed):
        print(f"{'PASS' if ok else 'FAIL'}\t{name}\t{detail}")
        failed += not ok
    if failed:
        raise CLIError("check", f"{failed} self-test(s) failed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epitome", description="Epitome learning and patch-based denoising.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $EPITOME_THREADS or all cores)")
    parser.add_argument("--log", default=None, help="write the training progress log here")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="learn an epitome from an image")
    p.add_argument("image")
    _add_learning_args(p, lam_required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise an image with a known noise level")
    p.add_argument("image")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--train-on-input", action="store_true")
    p.add_argument("--C", type=float, default=1.15)
    p.add_argument("--blend", type=float, default=0.0)
    p.add_argument("--add-noise", action="store_true",
                   help="treat IMAGE as clean: add seeded noise first and report PSNR against it")
    p.add_argument("--clean", default=None, help="clean reference for the PSNR report")
    _add_learning_args(p, lam_required=False)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="append a TSV row here")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("noise", help="add seeded white Gaussian noise")
    p.add_argument("image")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("psnr", help="PSNR between two images")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_psnr)

    p = sub.add_parser("render", help="render a model as an image")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("check", help="run numerical self-tests")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        set_threads(args.threads)
        if args.log:
            handler = logging.FileHandler(args.log, mode="w")
            handler.setFormatter(logging.Formatter("%(message)s"))
            lg = logging.getLogger("epitome")
            lg.addHandler(handler)
            lg.setLevel(logging.INFO)
        args.func(args)
    except CLIError as exc:
        print(f"error\t{exc.kind}\t{exc}", file=sys.stderr)
        return 2
    except GeometryError as exc:
        print(f"error\tgeometry\t{exc}", file=sys.stderr)
        return 1
    except ImageFormatError as exc:
        print(f"error\tformat\t{exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error\tmissing-file\t{exc.filename}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError) as exc:
        print(f"error\tvalue\t{' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
