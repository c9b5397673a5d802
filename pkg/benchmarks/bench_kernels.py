"""Time the compiled and pure-Python kernel backends on a rendered frame.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--width W --height H] [--json FILE]
"""
from __future__ import annotations

import argparse
import json
import statistics
import timeit
from contextlib import contextmanager

import numpy as np

from mavpick import kernels, vision
from mavpick.geometry import CameraIntrinsics, Pose

KERNEL_NAMES = ("lab_image", "lab_box_masks", "label8", "trace_contour")


@contextmanager
def use_backend(module):
    """Route the dispatch module to ``module`` for the duration of the block."""
    saved = {n: getattr(kernels, n) for n in KERNEL_NAMES}
    try:
        for n in KERNEL_NAMES:
            setattr(kernels, n, getattr(module, n))
        yield
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)


def scene(width: int, height: int):
    k = CameraIntrinsics.centered(0.78 * width, width, height)
    pose = Pose.downward((0.0, 0.0, 5.0))
    rng = np.random.default_rng(0)
    discs = [vision.Disc((float(x), float(y)), 0.3, vision.COLOR_RGB[c])
             for (x, y), c in zip(rng.uniform(-2.5, 2.5, (9, 2)), ["red", "blue", "yellow"] * 3)]
    img = vision.render_scene(discs, pose, k, vision.RenderParams(noise_sigma=2.0, seed=1))
    return img, pose, k


def cases(img, pose, k):
    bounds = np.array([c.lower + c.upper for c in vision.DEFAULT_CLASSES], dtype=float)
    masks = kernels.lab_box_masks(img, vision.SRGB_LUT, vision.SRGB_TO_XYZ, vision.D65_WHITE, bounds)
    mask = np.ascontiguousarray(masks[0], dtype=np.uint8)
    labels, _ = kernels.label8(mask)
    rows, cols = np.nonzero(labels == 1)
    start = (int(rows[0]), int(cols[0]))
    return {
        "lab_image": lambda: kernels.lab_image(img, vision.SRGB_LUT, vision.SRGB_TO_XYZ,
                                               vision.D65_WHITE),
        "lab_box_masks": lambda: kernels.lab_box_masks(img, vision.SRGB_LUT, vision.SRGB_TO_XYZ,
                                                       vision.D65_WHITE, bounds),
        "label8": lambda: kernels.label8(mask),
        "trace_contour": lambda: kernels.trace_contour(labels, 1, *start),
        "detect_objects": lambda: vision.detect_objects(img, pose, k, vision.DEFAULT_CLASSES,
                                                        0.3, 0.0),
    }


def measure(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 2
    return statistics.median(t / number for t in timeit.repeat(fn, number=number, repeat=repeat))


def main(argv=None) -> dict:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--height", type=int, default=480)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)

    img, pose, k = scene(args.width, args.height)
    available = kernels.backends()
    results = {}
    for name, module in sorted(available.items()):
        with use_backend(module):
            results[name] = {case: measure(fn, args.repeat) for case, fn in cases(img, pose, k).items()}

    names = sorted(results)
    print(f"frame {args.width}x{args.height}, median of {args.repeat} repeats (ms)")
    print(f"{'kernel':16s}" + "".join(f"{n:>12s}" for n in names)
          + ("     speed-up" if len(names) == 2 else ""))
    for case in results[names[0]]:
        vals = [results[n][case] for n in names]
        line = f"{case:16s}" + "".join(f"{1e3 * v:12.3f}" for v in vals)
        if "cython" in results and "python" in results:
            line += f"{results['python'][case] / results['cython'][case]:12.1f}x"
        print(line)
    if "cython" not in available:
        print("compiled backend not built; run `python setup.py build_ext --inplace`")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
