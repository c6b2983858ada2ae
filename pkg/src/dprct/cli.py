"""Command-line front end.

Subcommands cover the full pipeline: phantom generation, projection, noise
simulation, reconstruction (analytic, algebraic, and diffusion-prior
methods), evaluation, prior training, schedule inspection, and timing
aggregation. Binary artifacts pass through files or stdin/stdout ('-'), so
stages compose as a shell pipeline.

Exit codes: 0 success, 1 usage/config error, 2 I/O or file-format error,
3 numerical failure mid-run (the manifest then records the failing timestep).
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import config as cfgmod
from .diffusion import make_linear_schedule
from .dpr import VARIANTS, DprConfig, RunTrace
from .errors import FormatError, NumericalFailure
from .fbp import fbp_reconstruct
from .fidelity import SartConfig, SartSolver
from .grid import ImageGrid, make_shepp_logan, window_display
from .io import open_output, read_image, read_sinogram, write_image, write_pgm, write_sinogram
from .metrics import psnr, rmse, ssim
from .projector import forward_project, geometry_for_image, geometry_for_sinogram, project_array
from .score import GaussianAnalyticModel, load_weights, save_weights, train_affine
from .simulate import NoiseConfig, add_ct_noise, downsample_views

__all__ = ["main"]

METHODS = ("fbp", "sart", "mcg-gd", "dpr1", "dpr2", "dpr3", "dpr4", "dpr5")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _load_effective_config(args, flag_map: dict[str, str]) -> dict:
    layers = []
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            layers.append(cfgmod.parse_config_text(f.read()))
    flags = {}
    for key, attr in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            flags[key] = val
    layers.append(flags)
    cfg = cfgmod.apply_overrides(cfgmod.DEFAULTS, *layers)
    explicit = set()
    for layer in layers:
        explicit.update(layer)
    # the stock subsequence length only makes sense for the stock T; when the
    # user shortens the schedule without choosing S, follow T down
    if "diffusion.steps" not in explicit and cfg["diffusion.steps"] > cfg["diffusion.T"]:
        cfg["diffusion.steps"] = cfg["diffusion.T"]
    cfgmod.validate_config(cfg)
    return cfg, explicit


def _build_parser() -> _Parser:
    p = _Parser(prog="dprct", description="Fan-beam CT simulation and reconstruction toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("phantom", help="write a Shepp-Logan phantom image")
    sp.add_argument("--n", type=int, default=128, help="image size in pixels")
    sp.add_argument("--scale", type=float, default=None, help="intensity scale (1/mm per unit)")
    sp.add_argument("--config", help="config file")
    sp.add_argument("-o", "--output", default="-", help="output image path or -")

    sp = sub.add_parser("project", help="forward-project an image to a sinogram")
    sp.add_argument("-i", "--input", default="-", help="input image path or -")
    sp.add_argument("-o", "--output", default="-", help="output sinogram path or -")
    sp.add_argument("--views", type=int, default=None, help="number of views over 360 degrees")
    sp.add_argument("--config", help="config file")

    sp = sub.add_parser("simulate", help="decimate views and/or add photon noise")
    sp.add_argument("-i", "--input", default="-")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--views", type=int, default=None, help="keep this many uniformly spaced views")
    sp.add_argument("--i0", type=float, default=None,
                    help="incident photons per ray; photon noise only applied when set")
    sp.add_argument("--sigma-e2", type=float, default=None, help="electronic noise variance")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--config", help="config file")

    sp = sub.add_parser("reconstruct", help="reconstruct an image from a sinogram")
    sp.add_argument("-i", "--input", default="-")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--method", required=True, choices=METHODS)
    sp.add_argument("--n", type=int, default=None, help="image size (default: inferred)")
    sp.add_argument("--steps", type=int, default=None, help="subsequence length S (dpr2-dpr5)")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--eta", type=float, default=None)
    sp.add_argument("--sigma", default=None, help="per-step noise rule: sqrt-beta|posterior|zero")
    sp.add_argument("--T", type=int, default=None, dest="T")
    sp.add_argument("--beta1", type=float, default=None)
    sp.add_argument("--betaT", type=float, default=None, dest="betaT")
    sp.add_argument("--subsets", type=int, default=None)
    sp.add_argument("--relaxation", type=float, default=None)
    sp.add_argument("--passes", type=int, default=None)
    sp.add_argument("--nonneg", default=None, choices=("true", "false"))
    sp.add_argument("--tv-weight-rel", type=float, default=None)
    sp.add_argument("--tv-iters", type=int, default=None)
    sp.add_argument("--gd-step", type=float, default=None)
    sp.add_argument("--filter", default=None, choices=("ram-lak", "hann"))
    sp.add_argument("--weights", default=None, help="trained prior weights file")
    sp.add_argument("--manifest", default=None, help="manifest path (default <output>.manifest)")
    sp.add_argument("--config", help="config file")

    sp = sub.add_parser("metrics", help="compare an image against a reference")
    sp.add_argument("test", help="image to evaluate")
    sp.add_argument("ref", help="reference image")
    sp.add_argument("--range", type=float, default=None, help="evaluation range (default max(ref))")
    sp.add_argument("--csv", default="-", help="output CSV path or -")

    sp = sub.add_parser("train-affine", help="fit the per-bin affine prior on images")
    sp.add_argument("images", nargs="+", help="training image files")
    sp.add_argument("-o", "--output", required=True, help="weights output path")
    sp.add_argument("--bins", type=int, default=10)
    sp.add_argument("--samples", type=int, default=10000, help="training pairs per bin")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--T", type=int, default=None, dest="T")
    sp.add_argument("--beta1", type=float, default=None)
    sp.add_argument("--betaT", type=float, default=None, dest="betaT")
    sp.add_argument("--config", help="config file")

    sp = sub.add_parser("schedule-dump", help="print a variance schedule as text")
    sp.add_argument("--T", type=int, default=None, dest="T")
    sp.add_argument("--beta1", type=float, default=None)
    sp.add_argument("--betaT", type=float, default=None, dest="betaT")
    sp.add_argument("--sigma", default=None)
    sp.add_argument("--config", help="config file")

    sp = sub.add_parser("timing-report", help="aggregate run manifests into CSV")
    sp.add_argument("manifests", nargs="+")
    sp.add_argument("--csv", default="-")

    sp = sub.add_parser("window", help="export an image as 8-bit PGM with an HU window")
    sp.add_argument("-i", "--input", default="-")
    sp.add_argument("-o", "--output", default="-")
    sp.add_argument("--lo", type=float, default=-160.0, help="window low, HU")
    sp.add_argument("--hi", type=float, default=240.0, help="window high, HU")
    sp.add_argument("--mu-water", type=float, default=None)
    sp.add_argument("--config", help="config file")
    return p


_SCHED_FLAGS = {
    "diffusion.T": "T",
    "diffusion.beta1": "beta1",
    "diffusion.betaT": "betaT",
    "diffusion.sigma": "sigma",
}


def cmd_phantom(args) -> int:
    cfg, _ = _load_effective_config(args, {"geometry.n": "n", "phantom.scale": "scale"})
    n = cfg["geometry.n"]
    px = 0.6641 * 512 / n
    img = make_shepp_logan(n, px, cfg["phantom.scale"])
    write_image(args.output, img)
    return 0


def cmd_project(args) -> int:
    cfg, _ = _load_effective_config(args, {"geometry.views": "views"})
    img = read_image(args.input)
    g = geometry_for_image(img, cfg["geometry.views"])
    write_sinogram(args.output, forward_project(img, g))
    return 0


def cmd_simulate(args) -> int:
    cfg, explicit = _load_effective_config(
        args, {"noise.i0": "i0", "noise.sigma_e2": "sigma_e2", "run.seed": "seed"}
    )
    sino = read_sinogram(args.input)
    if args.views is not None:
        sino = downsample_views(sino, args.views)
    if args.i0 is not None or "noise.i0" in explicit:
        nc = NoiseConfig(cfg["noise.i0"], cfg["noise.sigma_e2"], cfg["run.seed"])
        sino = add_ct_noise(sino, nc)
    write_sinogram(args.output, sino)
    return 0


def _make_model(args, cfg, sched, shape):
    if args.weights:
        model = load_weights(args.weights, T=cfg["diffusion.T"])
        if hasattr(model, "T") and model.T != cfg["diffusion.T"]:
            raise UsageError(
                f"weights were trained for T={model.T} but diffusion.T={cfg['diffusion.T']}"
            )
        return model
    mean = np.full(shape, cfg["prior.mean"])
    return GaussianAnalyticModel(mean, cfg["prior.var"], sched)


def cmd_reconstruct(args) -> int:
    flag_map = {
        "geometry.n": "n",
        "diffusion.steps": "steps",
        "diffusion.eta": "eta",
        "run.seed": "seed",
        "sart.subsets": "subsets",
        "sart.relaxation": "relaxation",
        "sart.passes": "passes",
        "sart.nonneg": "nonneg",
        "tv.weight_rel": "tv_weight_rel",
        "tv.iters": "tv_iters",
        "mcg.step": "gd_step",
        "fbp.filter": "filter",
        **_SCHED_FLAGS,
    }
    cfg, explicit = _load_effective_config(args, flag_map)
    sino = read_sinogram(args.input)
    n = cfg["geometry.n"] if "geometry.n" in explicit else None
    g = geometry_for_sinogram(sino, n)
    manifest = args.manifest or (
        args.output + ".manifest" if args.output != "-" else "dprct-run.manifest"
    )
    sart_cfg = SartConfig(
        cfg["sart.subsets"], cfg["sart.relaxation"], cfg["sart.passes"], cfg["sart.nonneg"]
    )
    residuals: list[tuple[int, float]] = []
    trace = None
    t0 = time.perf_counter()
    try:
        if args.method == "fbp":
            out = fbp_reconstruct(sino, g, cfg["fbp.filter"])
            steps = 1
        elif args.method == "sart":
            solver = SartSolver(g, sart_cfg)
            x = np.zeros((g.height, g.width))
            for p in range(sart_cfg.n_passes):
                x = solver.sweep(x, sino.data)
                residuals.append((p + 1, float(np.linalg.norm(project_array(x, g) - sino.data))))
            out = ImageGrid(g.width, g.height, g.pixel_size, x)
            steps = sart_cfg.n_passes
        else:
            sched = make_linear_schedule(
                cfg["diffusion.T"], cfg["diffusion.beta1"], cfg["diffusion.betaT"],
                cfg["diffusion.sigma"],
            )
            model = _make_model(args, cfg, sched, (g.height, g.width))
            dcfg = DprConfig(
                seed=cfg["run.seed"],
                steps=cfg["diffusion.steps"],
                eta=cfg["diffusion.eta"],
                sart=sart_cfg,
                tv_weight_rel=cfg["tv.weight_rel"],
                tv_iters=cfg["tv.iters"],
                gd_step=cfg["mcg.step"],
            )
            trace = RunTrace(record_residuals=True)
            if args.method in ("dpr1", "mcg-gd"):
                out = VARIANTS[args.method](sino, g, model, sched, cfg=dcfg, trace=trace)
                steps = cfg["diffusion.T"]
            else:
                out = VARIANTS[args.method](sino, g, model, sched, cfg=dcfg, trace=trace)
                steps = cfg["diffusion.steps"]
            residuals = list(zip(trace.timesteps, trace.residuals))
    except NumericalFailure as e:
        wall = time.perf_counter() - t0
        if trace is not None:
            residuals = list(zip(trace.timesteps, trace.residuals))
        cfgmod.write_manifest(
            manifest, args.method, cfg, wall, steps=0, residuals=residuals,
            status="numerical-failure", failed_timestep=e.timestep,
        )
        raise
    wall = time.perf_counter() - t0
    write_image(args.output, out)
    cfgmod.write_manifest(manifest, args.method, cfg, wall, steps, residuals)
    return 0


def cmd_metrics(args) -> int:
    test = read_image(args.test)
    ref = read_image(args.ref)
    p = psnr(test, ref, args.range)
    s = ssim(test, ref, args.range)
    r = rmse(test, ref, args.range)
    name = args.test.rsplit("/", 1)[-1]
    body = f"name,psnr,ssim,rmse\r\n{name},{p!r},{s!r},{r!r}\r\n"
    with open_output(args.csv) as f:
        f.write(body.encode())
    return 0


def cmd_train_affine(args) -> int:
    cfg, _ = _load_effective_config(args, {"run.seed": "seed", **_SCHED_FLAGS})
    dataset = [read_image(p) for p in args.images]
    sched = make_linear_schedule(
        cfg["diffusion.T"], cfg["diffusion.beta1"], cfg["diffusion.betaT"]
    )
    model = train_affine(dataset, sched, n_bins=args.bins, n_samples=args.samples,
                         seed=cfg["run.seed"])
    save_weights(args.output, model)
    return 0


def cmd_schedule_dump(args) -> int:
    cfg, _ = _load_effective_config(args, _SCHED_FLAGS)
    sched = make_linear_schedule(
        cfg["diffusion.T"], cfg["diffusion.beta1"], cfg["diffusion.betaT"], cfg["diffusion.sigma"]
    )
    for t in range(1, sched.T + 1):
        sys.stdout.write(
            f"t={t} beta={sched.beta(t)!r} alpha={sched.alpha(t)!r} "
            f"alpha_bar={sched.alpha_bar(t)!r} sigma={sched.sigma(t)!r}\n"
        )
    return 0


def cmd_timing_report(args) -> int:
    rows: dict[str, list[tuple[float, int]]] = {}
    for path in args.manifests:
        m = cfgmod.parse_manifest(path)
        if "method" not in m or "wall-seconds" not in m:
            raise FormatError(f"{path}: not a run manifest")
        rows.setdefault(m["method"], []).append(
            (float(m["wall-seconds"]), int(m.get("steps", "0")))
        )
    means = {meth: sum(w for w, _ in v) / len(v) for meth, v in rows.items()}
    fastest = min(means.values())
    lines = ["method,runs,steps,mean_seconds,ratio"]
    for meth in sorted(rows):
        runs = rows[meth]
        steps = round(sum(s for _, s in runs) / len(runs))
        ratio = means[meth] / fastest if fastest > 0 else float("nan")
        lines.append(f"{meth},{len(runs)},{steps},{means[meth]:.6f},{ratio:.3f}")
    with open_output(args.csv) as f:
        f.write(("\r\n".join(lines) + "\r\n").encode())
    return 0


def cmd_window(args) -> int:
    cfg, _ = _load_effective_config(args, {"display.mu_water": "mu_water"})
    img = read_image(args.input)
    if not args.hi > args.lo:
        raise UsageError(f"window [{args.lo}, {args.hi}] is empty")
    write_pgm(args.output, window_display(img, args.lo, args.hi, cfg["display.mu_water"]))
    return 0


_COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
    "train-affine": cmd_train_affine,
    "schedule-dump": cmd_schedule_dump,
    "timing-report": cmd_timing_report,
    "window": cmd_window,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except FormatError as e:
        print(f"dprct: file format error: {e}", file=sys.stderr)
        return 2
    except NumericalFailure as e:
        print(f"dprct: numerical failure: {e}", file=sys.stderr)
        return 3
    except (UsageError, ValueError) as e:
        print(f"dprct: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"dprct: i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
