"""Compiled and fallback kernels must agree bit for bit."""
import importlib.util
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mavpick import kernels
from mavpick.vision import D65_WHITE, SRGB_LUT, SRGB_TO_XYZ


def _random_mask(rng, h=40, w=50, p=0.45):
    return (rng.random((h, w)) < p).astype(np.uint8)


def test_backend_selected():
    assert kernels.BACKEND in kernels.backends()


def test_label8_connectivity(backend):
    m = np.zeros((5, 5), np.uint8)
    m[0, 0] = m[1, 1] = 1  # diagonal neighbours join under 8-connectivity
    m[3, 3] = 1
    labels, n = backend.label8(m)
    assert n == 2
    assert labels[0, 0] == labels[1, 1] == 1 and labels[3, 3] == 2


def test_label8_numbering_by_first_raster_pixel(backend):
    m = np.zeros((4, 6), np.uint8)
    m[0, 4] = 1
    m[1, 0] = 1
    m[3, 5] = 1
    labels, n = backend.label8(m)
    assert n == 3
    assert (labels[0, 4], labels[1, 0], labels[3, 5]) == (1, 2, 3)


def test_trace_single_pixel(backend):
    m = np.zeros((3, 3), np.uint8)
    m[1, 1] = 1
    labels, _ = backend.label8(m)
    assert backend.trace_contour(labels, 1, 1, 1).tolist() == [[1, 1]]


def test_trace_square(backend):
    m = np.zeros((6, 6), np.uint8)
    m[1:4, 1:4] = 1
    labels, _ = backend.label8(m)
    c = backend.trace_contour(labels, 1, 1, 1)
    assert len(c) == 8
    assert {tuple(p) for p in c} == {(r, cc) for r in range(1, 4) for cc in range(1, 4)} - {(2, 2)}


def test_backends_agree_on_random_masks():
    bk = kernels.backends()
    if len(bk) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = _random_mask(rng)
        la, na = bk["cython"].label8(m)
        lb, nb = bk["python"].label8(m)
        assert na == nb and np.array_equal(la, lb)
        for lab in range(1, na + 1):
            r, c = map(int, np.argwhere(la == lab)[0])
            assert np.array_equal(bk["cython"].trace_contour(la, lab, r, c),
                                  bk["python"].trace_contour(lb, lab, r, c))


def test_backends_agree_on_lab():
    bk = kernels.backends()
    if len(bk) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (30, 40, 3), dtype=np.uint8)
    a = bk["cython"].lab_image(img, SRGB_LUT, SRGB_TO_XYZ, D65_WHITE)
    b = bk["python"].lab_image(img, SRGB_LUT, SRGB_TO_XYZ, D65_WHITE)
    assert np.allclose(a, b, atol=1e-9)
    bounds = np.array([[20, 35, 15, 80, 110, 95], [0, -128, -128, 50, 127, 127]], float)
    assert np.array_equal(bk["cython"].lab_box_masks(img, SRGB_LUT, SRGB_TO_XYZ, D65_WHITE, bounds),
                          bk["python"].lab_box_masks(img, SRGB_LUT, SRGB_TO_XYZ, D65_WHITE, bounds))


def test_env_forces_pure_python():
    code = "from mavpick import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, MAVPICK_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_benchmark_script_runs(tmp_path):
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    mod_spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(mod_spec)
    mod_spec.loader.exec_module(bench)
    res = bench.main(["--repeat", "1", "--width", "160", "--height", "120",
                      "--json", str(tmp_path / "b.json")])
    assert set(res) == set(kernels.backends())
    assert all(v > 0 for r in res.values() for v in r.values())
