"""Time the compiled ray marcher against the numpy fallback.

    python benchmarks/bench_render.py --size 128 --repeats 5
"""
import argparse
import json
import time

import numpy as np

from voxpose import _backend
from voxpose.camera import Intrinsics
from voxpose.render import render_image
from voxpose.scenes import SceneSpec, build_scene, view_poses


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128, help="square image side in pixels")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--kind", default="checker_sphere")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--json", help="also write results here")
    args = p.parse_args(argv)

    grid = build_scene(SceneSpec(kind=args.kind, resolution=args.resolution))
    intr = Intrinsics(args.size, args.size, args.size * 177.8 / 128.0)
    pose = view_poses(1, 4.0, seed=0)[0]

    results = {}
    reference = None
    for name, kernel in _backend.KERNELS.items():
        render_image(grid, pose, intr, kernel=kernel)  # warm caches
        secs, img = best_of(lambda: render_image(grid, pose, intr, kernel=kernel), args.repeats)
        if reference is None:
            reference = img
        results[name] = {"seconds": secs, "max_abs_diff": float(np.max(np.abs(img - reference)))}

    base = results["python"]["seconds"]
    print(f"{args.kind} N={args.resolution}, {args.size}x{args.size} image, best of {args.repeats}")
    for name, r in results.items():
        print(f"  {name:9s} {r['seconds'] * 1e3:9.2f} ms   x{base / r['seconds']:6.1f}   "
              f"max|diff| {r['max_abs_diff']:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
