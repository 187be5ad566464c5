"""voxpose command line: build-scene, render, estimate, plot.

Exit codes: 0 success, 2 bad input, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import BACKEND, __version__
from .camera import Intrinsics
from .errors import VoxposeError
from .grid import load_grid, save_grid
from .harness import ExperimentSpec, run_experiment
from .lie import Pose
from .render import RenderConfig, render_image, save_png
from .scenes import SceneSpec, build_scene

EXIT_OK, EXIT_BAD_INPUT, EXIT_IO = 0, 2, 3


class BadInput(Exception):
    pass


def _read_json(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise BadInput(f"{path}: invalid JSON ({exc})") from exc
    # a manifest from an earlier run can stand in for its config
    if isinstance(obj, dict) and "subcommand" in obj and "config" in obj:
        obj = obj["config"]
    return obj


def _write_manifest(path, args, config, **params):
    manifest = {"subcommand": args.command, "config_path": getattr(args, "config", None),
                "config": config, "out": args.out, "seed": getattr(args, "seed", None),
                "params": params, "version": __version__, "backend": BACKEND}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jobs(args):
    env = os.environ.get("VOXPOSE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise BadInput(f"VOXPOSE_THREADS={env!r} is not an integer") from exc
    else:
        n = args.jobs
    if n < 1:
        raise BadInput("job count must be >= 1")
    return n


def cmd_build_scene(args):
    cfg = _read_json(args.config) if args.config else {}
    spec = SceneSpec.from_dict(cfg)
    if args.resolution is not None:
        spec = replace(spec, resolution=args.resolution)
    grid = build_scene(spec)
    save_grid(grid, args.out)
    _write_manifest(args.out + ".manifest.json", args, spec.to_dict())
    print(f"wrote {args.out}: N={grid.resolution} extent={grid.extent:g} "
          f"occupancy={grid.occupancy_fraction():.4f}")


def cmd_render(args):
    cfg = _read_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise BadInput("render config must be a JSON object")
    if args.grid:
        grid = load_grid(args.grid)
    elif "scene" in cfg:
        grid = build_scene(SceneSpec.from_dict(cfg["scene"]))
    else:
        raise BadInput("render needs --grid or a 'scene' entry in the config")
    if "pose" not in cfg:
        raise BadInput("render config needs a 'pose' entry")
    pose = Pose.from_dict(cfg["pose"])
    intr = Intrinsics.from_dict(cfg.get("intrinsics", {"width": 128, "height": 128, "focal": 177.8}))
    rcfg = RenderConfig.from_dict(cfg.get("render", {}))
    image = render_image(grid, pose, intr, rcfg)
    save_png(args.out, image)
    _write_manifest(args.out + ".manifest.json", args, cfg, grid=args.grid)
    print(f"wrote {args.out}: {intr.width}x{intr.height}")


def cmd_estimate(args):
    cfg = _read_json(args.config) if args.config else {}
    spec = ExperimentSpec.from_dict(cfg)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.poses is not None:
        spec = replace(spec, n_poses=args.poses)
    grid = None
    if args.grid:
        if spec.ablation == "resolution":
            raise BadInput("--grid cannot be combined with a resolution ablation")
        grid = load_grid(args.grid)
    jobs = _jobs(args)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(os.path.join(args.out, "manifest.json"), args, spec.to_dict(),
                    grid=args.grid, jobs=jobs, frames=args.frames)

    def progress(rec):
        status = "ok" if rec.success else "FAIL"
        print(f"[{rec.arm}] pose {rec.pose_index:3d}: RE {rec.re_deg:6.2f} deg  "
              f"TE {rec.te_units:.4f}  epochs {rec.epochs:4d}  {rec.runtime_s:6.1f}s  {status}",
              flush=True)

    report = run_experiment(spec, out_dir=args.out, jobs=jobs, frames=args.frames, grid=grid,
                            progress=None if args.quiet else progress)
    for s in report.summaries:
        print(f"{s.arm}: RE<{spec.re_max:g} {s.pct_re_lt_cutoff:.2f}  "
              f"TE<{spec.te_cutoff:g} {s.pct_te_lt_cutoff:.2f}  both {s.pct_success:.2f}  "
              f"avg RE {s.avg_re_deg:.2f}  avg TE {s.avg_te_units:.4f}  "
              f"runtime {s.avg_runtime_s:.1f}s")


def _read_curves(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def cmd_plot(args):
    try:
        import matplotlib
    except ImportError as exc:
        raise BadInput("plot needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = sorted(glob.glob(os.path.join(args.run, "curves_*.csv")))
    if not files:
        raise FileNotFoundError(f"no curves_*.csv under {args.run}")
    fig, axes = plt.subplots(2, 3, figsize=(13, 7), sharex=True)
    for path in files:
        label = os.path.basename(path)[len("curves_"):-len(".csv")]
        c = _read_curves(path)
        for row, key in enumerate(("re", "te")):
            axes[row, 0].plot(c["epoch"], c[f"mean_{key}"], label=label)
            axes[row, 1].plot(c["epoch"], c[f"median_{key}"], label=label)
            axes[row, 2].plot(c["epoch"], 100.0 * c[f"fail_{key}"], label=label)
    for row, (name, unit) in enumerate((("rotation error", "deg"), ("translation error", "units"))):
        axes[row, 0].set_ylabel(f"average {name} ({unit})")
        axes[row, 1].set_ylabel(f"median {name} ({unit})")
        axes[row, 2].set_ylabel(f"% failures ({name})")
    for ax in axes[1]:
        ax.set_xlabel("epoch")
    axes[0, 0].legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="voxpose", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-scene", help="build a procedural voxel grid file")
    b.add_argument("--config", help="scene spec JSON (defaults to a 64^3 checker sphere)")
    b.add_argument("--out", required=True, help="output grid file")
    b.add_argument("--resolution", type=int, help="override the scene's grid resolution")
    b.set_defaults(func=cmd_build_scene)

    r = sub.add_parser("render", help="render one view to PNG")
    r.add_argument("--config", required=True,
                   help="JSON with 'pose', optional 'intrinsics', 'render' and 'scene'")
    r.add_argument("--grid", help="grid file (otherwise built from the config's scene)")
    r.add_argument("--out", required=True, help="output PNG")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("estimate", help="run a perturb-and-recover experiment")
    e.add_argument("--config", help="experiment spec JSON or a previous run's manifest.json")
    e.add_argument("--grid", help="search this grid file instead of building the scene")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--seed", type=int, help="master seed (overrides the config)")
    e.add_argument("--poses", type=int, help="number of poses (overrides the config)")
    e.add_argument("--jobs", type=int, default=1, help="parallel poses (VOXPOSE_THREADS wins)")
    e.add_argument("--frames", action="store_true", help="write per-epoch overlay PNGs")
    e.add_argument("--quiet", action="store_true")
    e.set_defaults(func=cmd_estimate)

    q = sub.add_parser("plot", help="plot per-epoch error curves of an estimate run")
    q.add_argument("run", help="output directory of an estimate run")
    q.add_argument("--out", required=True, help="output PNG")
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (BadInput, VoxposeError, ValueError, KeyError, TypeError) as exc:
        print(f"voxpose {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as exc:
        print(f"voxpose {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
