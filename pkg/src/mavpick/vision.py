"""Colour-blob object detection and a synthetic nadir-camera renderer.

Images are ``uint8`` arrays of shape (height, width, 3) in RGB order.
"""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .geometry import (CameraIntrinsics, GeometryError, Pose, _invert_rays, camera_to_world,
                       normalize_pixel, object_center)

# sRGB primaries, D65 white
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def _srgb_linear_lut() -> np.ndarray:
    c = np.arange(256, dtype=float) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


SRGB_LUT = _srgb_linear_lut()


@dataclass(frozen=True)
class ColorClass:
    """Axis-aligned box in L*a*b* space."""

    name: str
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Lab bounds need three components")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"class {self.name!r}: lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def to_dict(self) -> dict:
        return {"name": self.name, "lower": list(self.lower), "upper": list(self.upper)}


# generous box around saturated red under moderate shading
RED = ColorClass("red", (20.0, 35.0, 15.0), (80.0, 110.0, 95.0))
BLUE = ColorClass("blue", (10.0, -20.0, -110.0), (70.0, 60.0, -30.0))
YELLOW = ColorClass("yellow", (60.0, -30.0, 50.0), (100.0, 20.0, 110.0))
DEFAULT_CLASSES = (RED, BLUE, YELLOW)
COLOR_RGB = {"red": (210, 25, 30), "blue": (30, 60, 200), "yellow": (235, 215, 30)}
BACKGROUND_RGB = (70, 120, 60)


@dataclass
class Blob:
    color: str
    area: int
    centroid: np.ndarray  # (u_x, u_y)
    contour: np.ndarray  # (n, 2) of (u_x, u_y)
    circularity: float
    endpoints: tuple  # two (u_x, u_y) arrays
    touches_border: bool = False
    bbox: tuple = (0, 0, 0, 0)  # rows [r0, r1), cols [c0, c1)
    cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))

    @property
    def axis_length(self) -> float:
        return float(np.linalg.norm(self.endpoints[0] - self.endpoints[1]))


@dataclass(frozen=True)
class Detection:
    t: float
    position: np.ndarray  # world frame (m)
    color: str
    area: int
    pixel: tuple = (float("nan"), float("nan"))


@dataclass(frozen=True)
class FilterParams:
    min_area: int = 20
    c_min: float = 0.6
    size_tol: float = 3.0


def rgb_to_lab(rgb) -> tuple:
    px = np.asarray(rgb, dtype=np.uint8).reshape(1, 1, 3)
    lab = kernels.lab_image(np.ascontiguousarray(px), SRGB_LUT, SRGB_TO_XYZ, D65_WHITE)
    return tuple(float(v) for v in lab[0, 0])


def lab_image(img: np.ndarray) -> np.ndarray:
    return kernels.lab_image(np.ascontiguousarray(img, dtype=np.uint8), SRGB_LUT, SRGB_TO_XYZ,
                             D65_WHITE)


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be a uint8 (height, width, 3) array")
    return img


def threshold(img: np.ndarray, classes: Sequence[ColorClass]) -> dict:
    """Binary mask per colour class, keyed by class name."""
    if not classes:
        raise ValueError("need at least one colour class")
    img = np.ascontiguousarray(check_image(img))
    bounds = np.array([c.lower + c.upper for c in classes], dtype=float)
    masks = kernels.lab_box_masks(img, SRGB_LUT, SRGB_TO_XYZ, D65_WHITE, bounds)
    return {c.name: masks[i].astype(bool) for i, c in enumerate(classes)}


def _perimeter(contour_rc: np.ndarray) -> float:
    if len(contour_rc) < 2:
        return 0.0
    steps = np.diff(np.vstack([contour_rc, contour_rc[:1]]), axis=0)
    return float(np.sum(np.where(np.abs(steps).sum(axis=1) == 2, math.sqrt(2.0), 1.0)))


def _hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of integer points."""
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)


def farthest_pair(points: np.ndarray) -> tuple:
    """Indices-free farthest pair; ties resolved by first occurrence."""
    pts = _hull(points) if len(points) > 64 else np.asarray(points, dtype=float)
    if len(pts) == 1:
        return pts[0].copy(), pts[0].copy()
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    i, j = np.unravel_index(int(np.argmax(d2)), d2.shape)
    a, b = pts[i], pts[j]
    # canonical order: smaller (u_y, u_x) first
    if (a[1], a[0]) > (b[1], b[0]):
        a, b = b, a
    return a.copy(), b.copy()


def extract_blobs(mask: np.ndarray, min_area: int = 20, color: str = "") -> list:
    """8-connected components of ``mask`` with at least ``min_area`` pixels.

    Endpoints are the farthest pair of contour pixels. Order is by descending
    area, then centroid row, then centroid column.
    """
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    h, w = m.shape
    labels, n = kernels.label8(m)
    if n == 0:
        return []
    r_fg, c_fg = np.nonzero(labels)
    lab_fg = labels[r_fg, c_fg]
    areas = np.bincount(lab_fg, minlength=n + 1)
    keep = [lab for lab in range(1, n + 1) if areas[lab] >= min_area]
    if not keep:
        return []
    # np.nonzero is raster ordered, so the first hit per label is its start pixel
    uniq, first_idx = np.unique(lab_fg, return_index=True)
    firsts = np.full(n + 1, -1, dtype=np.int64)
    firsts[uniq] = first_idx

    blobs = []
    for lab in keep:
        sel = lab_fg == lab
        xs = c_fg[sel].astype(float)
        ys = r_fg[sel].astype(float)
        area = int(areas[lab])
        r0, c0 = int(r_fg[firsts[lab]]), int(c_fg[firsts[lab]])
        contour_rc = kernels.trace_contour(labels, int(lab), r0, c0)
        per = _perimeter(contour_rc)
        circ = 1.0 if per == 0.0 else min(1.0, 4.0 * math.pi * area / per ** 2)
        contour = contour_rc[:, ::-1].astype(float)  # (u_x, u_y)
        ends = farthest_pair(contour)
        bbox = (int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1)
        border = bbox[0] == 0 or bbox[2] == 0 or bbox[1] == h or bbox[3] == w
        cov = np.cov(np.vstack([xs, ys]), bias=True) if area > 1 else np.zeros((2, 2))
        blobs.append(Blob(color, area, np.array([xs.mean(), ys.mean()]), contour, circ, ends,
                          bool(border), bbox, cov))
    blobs.sort(key=lambda bl: (-bl.area, bl.centroid[1], bl.centroid[0]))
    return blobs


def _grow(m: np.ndarray) -> np.ndarray:
    g = m.copy()
    g[1:] |= m[:-1]
    g[:-1] |= m[1:]
    g[:, 1:] |= g[:, :-1].copy()
    g[:, :-1] |= g[:, 1:].copy()
    return g


def _shrink(m: np.ndarray) -> np.ndarray:
    return ~_grow(~m)


def refine_blob(img: np.ndarray, mask: np.ndarray, blob: Blob, pad: int = 4) -> Blob:
    """Sub-pixel endpoints from partial pixel coverage along the blob edge.

    Each pixel near the blob gets a coverage fraction by projecting its colour
    onto the line between the mean background colour (a ring around the blob)
    and the mean object colour (the eroded interior). The summed coverage gives
    the area and the weighted mean the centre; the endpoints span the major
    axis of the ellipse with that area and the blob's axis ratio, oriented
    along the original endpoint direction. Blobs on the image border, or too
    thin to have an interior, are returned unchanged.
    """
    if blob.touches_border:
        return blob
    h, w = mask.shape
    r0, r1, c0, c1 = blob.bbox
    r0, r1 = max(r0 - pad, 0), min(r1 + pad, h)
    c0, c1 = max(c0 - pad, 0), min(c1 + pad, w)
    sub = np.asarray(mask[r0:r1, c0:c1], dtype=bool)
    near = _grow(_grow(sub))
    core = _shrink(sub)
    ring = _grow(_grow(near)) & ~near
    if core.sum() < 3 or ring.sum() < 3:
        return blob
    pix = img[r0:r1, c0:c1].astype(float)
    fg = pix[core].mean(axis=0)
    bg = pix[ring].mean(axis=0)
    axis = fg - bg
    span = float(axis @ axis)
    if span < 1e-6:
        return blob
    frac = np.clip(((pix - bg) @ axis) / span, -0.5, 1.5)
    frac = np.where(near, frac, 0.0)
    area = float(frac.sum())
    if area <= 0:
        return blob
    wts = np.clip(frac, 0.0, 1.0)
    ys, xs = np.mgrid[r0:r1, c0:c1]
    tw = float(wts.sum())
    centre = np.array([(wts * xs).sum() / tw, (wts * ys).sum() / tw])
    dx, dy = xs - centre[0], ys - centre[1]
    cov = np.array([[(wts * dx * dx).sum(), (wts * dx * dy).sum()],
                    [(wts * dx * dy).sum(), (wts * dy * dy).sum()]]) / tw
    ev = np.linalg.eigvalsh(cov + np.eye(2) / 12.0)
    ratio = math.sqrt(ev[1] / ev[0]) if ev[0] > 0 else 1.0
    half = math.sqrt(area / math.pi * ratio)
    d = blob.endpoints[1] - blob.endpoints[0]
    nd = float(np.linalg.norm(d))
    if nd == 0.0:
        return blob
    d /= nd
    ends = (centre - half * d, centre + half * d)
    return dataclasses.replace(blob, centroid=centre, endpoints=ends)


def expected_area(altitude: float, k: CameraIntrinsics, object_diameter: float) -> float:
    d_px = k.fx * object_diameter / altitude
    return math.pi * d_px * d_px / 4.0


def filter_outliers(blobs: Iterable[Blob], altitude: float, k: CameraIntrinsics,
                    object_diameter: float, params: FilterParams = FilterParams()) -> list:
    """Drop blobs that are not round enough or whose size contradicts the altitude."""
    if not altitude > 0:
        raise ValueError("altitude must be positive")
    expected = expected_area(altitude, k, object_diameter)
    lo, hi = expected / params.size_tol, expected * params.size_tol
    return [b for b in blobs if b.circularity >= params.c_min and lo <= b.area <= hi]


def detect_objects(img: np.ndarray, pose_WC: Pose, k: CameraIntrinsics,
                   classes: Sequence[ColorClass], object_diameter: float, t: float,
                   params: FilterParams = FilterParams(), diagnostics: dict | None = None,
                   ground_z: float = 0.0) -> list:
    """Run threshold -> blobs -> outlier gate -> inverse projection -> world frame.

    Blobs whose inverse projection fails are dropped; ``diagnostics`` (if
    given) counts them under ``"geometry_failures"``.
    """
    n_O = pose_WC.object_normal()
    if abs(float(n_O[2])) < 1e-9:
        raise ValueError("camera optical axis is parallel to the ground plane")
    altitude = float(pose_WC.translation[2]) - ground_z
    masks = threshold(img, classes)
    out = []
    for cls in classes:
        blobs = extract_blobs(masks[cls.name], params.min_area, cls.name)
        if diagnostics is not None:
            diagnostics["blobs"] = diagnostics.get("blobs", 0) + len(blobs)
        if altitude > 0:
            blobs = filter_outliers(blobs, altitude, k, object_diameter, params)
        for b in blobs:
            b = refine_blob(img, masks[cls.name], b)
            try:
                p1, p2 = _invert_rays(normalize_pixel(b.endpoints[0], k),
                                      normalize_pixel(b.endpoints[1], k), n_O, object_diameter)
            except GeometryError:
                if diagnostics is not None:
                    diagnostics["geometry_failures"] = diagnostics.get("geometry_failures", 0) + 1
                continue
            pos = camera_to_world(object_center(p1, p2), pose_WC)
            out.append(Detection(t, pos, cls.name, b.area, (float(b.centroid[0]), float(b.centroid[1]))))
    return out


# --------------------------------------------------------------------------- rendering


@dataclass(frozen=True)
class Disc:
    center: tuple  # world (x, y) on the ground plane
    diameter: float
    rgb: tuple


@dataclass(frozen=True)
class RenderParams:
    background: tuple = BACKGROUND_RGB
    vignetting: float = 0.0
    noise_sigma: float = 0.0
    supersample: int = 4
    seed: int = 0


@functools.lru_cache(maxsize=16)
def _vignette_gain(k: CameraIntrinsics, v: float) -> np.ndarray:
    ys, xs = np.mgrid[0:k.height, 0:k.width]
    r = np.hypot(xs - k.px, ys - k.py)
    corners = [(0, 0), (k.width - 1, 0), (0, k.height - 1), (k.width - 1, k.height - 1)]
    r_max = max(math.hypot(cx - k.px, cy - k.py) for cx, cy in corners)
    return (1.0 - v * (r / r_max) ** 2)[..., None]


def _disc_roi(disc: Disc, pose: Pose, k: CameraIntrinsics, ground_z: float):
    """Pixel bounding box (r0, r1, c0, c1) of the disc, or None if out of view."""
    rad = disc.diameter / 2.0
    cx, cy = disc.center
    ring = np.array([[cx + rad * math.cos(a), cy + rad * math.sin(a), ground_z]
                     for a in np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)])
    pc = (ring - pose.translation) @ pose.rotation  # rows are R^T (p - t)
    if np.any(pc[:, 2] <= 1e-6):
        return 0, k.height, 0, k.width
    ux = k.fx * pc[:, 0] / pc[:, 2] + k.px
    uy = k.fy * pc[:, 1] / pc[:, 2] + k.py
    # polygon through 16 rim points under-covers the circle; pad generously
    c0 = int(math.floor(ux.min())) - 2
    c1 = int(math.ceil(ux.max())) + 3
    r0 = int(math.floor(uy.min())) - 2
    r1 = int(math.ceil(uy.max())) + 3
    c0, c1 = max(c0, 0), min(c1, k.width)
    r0, r1 = max(r0, 0), min(r1, k.height)
    if c0 >= c1 or r0 >= r1:
        return None
    return r0, r1, c0, c1


def render_scene(discs: Sequence[Disc], pose_WC: Pose, k: CameraIntrinsics,
                 params: RenderParams = RenderParams(), rng: np.random.Generator | None = None,
                 ground_z: float = 0.0) -> np.ndarray:
    """Rasterize ground-plane discs seen from ``pose_WC``.

    Pixels are sampled on an ``supersample``-square grid inside each pixel and
    averaged, then vignetting gain and Gaussian noise are applied.
    """
    bg = np.asarray(params.background, dtype=float)
    plain = params.vignetting == 0.0 and params.noise_sigma == 0.0
    if plain:
        img = np.empty((k.height, k.width, 3), dtype=np.uint8)
        img[...] = np.clip(np.rint(bg), 0, 255).astype(np.uint8)
    else:
        img = np.empty((k.height, k.width, 3), dtype=float)
        img[...] = bg
    ss = max(1, int(params.supersample))
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    R, t = pose_WC.rotation, pose_WC.translation
    for disc in discs:
        roi = _disc_roi(disc, pose_WC, k, ground_z)
        if roi is None:
            continue
        r0, r1, c0, c1 = roi
        ys, xs = np.mgrid[r0:r1, c0:c1].astype(float)
        cover = np.zeros(ys.shape)
        rad2 = (disc.diameter / 2.0) ** 2
        for oy in offs:
            for ox in offs:
                d = np.stack([(xs + ox - k.px) / k.fx, (ys + oy - k.py) / k.fy,
                              np.ones_like(xs)], axis=-1) @ R.T
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = (ground_z - t[2]) / d[..., 2]
                gx = t[0] + s * d[..., 0] - disc.center[0]
                gy = t[1] + s * d[..., 1] - disc.center[1]
                cover += (s > 0) & (gx * gx + gy * gy <= rad2)
        cover /= ss * ss
        col = np.asarray(disc.rgb, dtype=float)
        patch = img[r0:r1, c0:c1].astype(float)
        patch += cover[..., None] * (col - patch)
        img[r0:r1, c0:c1] = np.clip(np.rint(patch), 0, 255) if plain else patch
    if plain:
        return img
    else:
        if params.vignetting:
            img *= _vignette_gain(k, float(params.vignetting))
        if params.noise_sigma:
            if rng is None:
                rng = np.random.default_rng(params.seed)
            img += rng.normal(0.0, params.noise_sigma, size=img.shape)
        return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------- PPM I/O


def write_ppm(path, img: np.ndarray) -> None:
    img = check_image(img)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    pos += 1  # single whitespace after maxval
    buf = np.frombuffer(data, dtype=np.uint8, count=3 * w * h, offset=pos)
    return buf.reshape(h, w, 3).copy()
