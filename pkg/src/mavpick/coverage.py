"""Zig-zag sweep planning over convex regions.

Sweep lines run along the heading; consecutive lines are offset sideways by at
most the camera-footprint-limited spacing from :func:`max_sweep_distance`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateSpacing(ValueError):
    pass


@dataclass(frozen=True)
class ConvexRegion:
    vertices: tuple  # ((x, y), ...) counter-clockwise, metres

    def __post_init__(self):
        v = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(v) < 3:
            raise ValueError("region needs at least 3 vertices")
        pts = np.array(v)
        if not np.all(np.isfinite(pts)):
            raise ValueError("region vertices must be finite")
        nxt = np.roll(pts, -1, axis=0)
        e1 = nxt - pts
        e2 = np.roll(e1, -1, axis=0)
        cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(cross < -1e-9):
            raise ValueError("region must be convex and counter-clockwise")
        if self._area(pts) <= 1e-12:
            raise ValueError("region has zero area")
        object.__setattr__(self, "vertices", v)

    @staticmethod
    def _area(pts: np.ndarray) -> float:
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "ConvexRegion":
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def points(self) -> np.ndarray:
        return np.array(self.vertices)

    @property
    def area(self) -> float:
        return self._area(self.points)

    def longest_edge_heading(self) -> float:
        pts = self.points
        e = np.roll(pts, -1, axis=0) - pts
        i = int(np.argmax(np.hypot(e[:, 0], e[:, 1])))
        return math.atan2(e[i, 1], e[i, 0])

    def contains(self, xy, margin: float = 0.0) -> np.ndarray:
        """Point-in-polygon test, optionally inflated by ``margin`` metres."""
        q = np.atleast_2d(np.asarray(xy, dtype=float))[:, :2]
        pts = self.points
        e = np.roll(pts, -1, axis=0) - pts
        lens = np.hypot(e[:, 0], e[:, 1])
        # signed distance to the left of each edge (inside for CCW)
        rel = q[:, None, :] - pts[None, :, :]
        side = (e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]) / lens[None, :]
        return np.all(side >= -margin - 1e-9, axis=1)


@dataclass(frozen=True)
class SweepParams:
    altitude: float
    fov: float
    overlap: float = 0.2
    heading: float | None = None

    def __post_init__(self):
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")
        if not 0 < self.fov < math.pi:
            raise ValueError("fov must lie in (0, pi)")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")


@dataclass
class SweepPlan:
    waypoints: np.ndarray  # (n, 3)
    region_id: int = 0
    spacing: float = 0.0
    lines: int = 0

    def __len__(self):
        return len(self.waypoints)


def max_sweep_distance(z: float, fov: float, overlap: float) -> float:
    """Largest spacing between adjacent sweep lines for a given view overlap."""
    return (1.0 - overlap) * 2.0 * z * math.tan(fov / 2.0)


def footprint_half_width(z: float, fov: float) -> float:
    return z * math.tan(fov / 2.0)


def camera_footprint(position, fov: float) -> tuple:
    """Axis-aligned ground square ``(cx, cy, half_width)`` under the camera."""
    x, y, z = (float(v) for v in position)
    if not z > 0:
        raise ValueError("camera must be above the ground")
    return x, y, footprint_half_width(z, fov)


def _chord(pts: np.ndarray, d: np.ndarray, nrm: np.ndarray, s: float):
    """Extent along ``d`` of the polygon slice ``nrm . p = s`` (None if empty)."""
    ts = []
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        sa, sb = float(nrm @ a), float(nrm @ b)
        if (sa - s) * (sb - s) > 0:
            continue
        if abs(sb - sa) < 1e-12:
            ts.extend([float(d @ a), float(d @ b)])
        else:
            w = (s - sa) / (sb - sa)
            ts.append(float(d @ (a + w * (b - a))))
    if not ts:
        return None
    return min(ts), max(ts)


def plan_sweep(region: ConvexRegion, params: SweepParams, region_id: int = 0,
               start=None) -> SweepPlan:
    """Boustrophedon path over ``region`` at the configured altitude.

    The sideways extent ``W`` is split into ``N = max(2, ceil(W / d_max))``
    equal strips with one line down the middle of each. If ``start`` is given,
    the traversal (line order and first direction) beginning nearest to it is
    chosen.
    """
    d_max = max_sweep_distance(params.altitude, params.fov, params.overlap)
    if d_max <= 0.0:
        raise DegenerateSpacing("full overlap leaves no room between sweep lines")
    theta = region.longest_edge_heading() if params.heading is None else params.heading
    d = np.array([math.cos(theta), math.sin(theta)])
    nrm = np.array([-d[1], d[0]])
    pts = region.points
    s_vals = pts @ nrm
    smin, smax = float(s_vals.min()), float(s_vals.max())
    width = smax - smin
    n_lines = max(2, int(math.ceil(width / d_max - 1e-12)))
    spacing = width / n_lines
    chords = []
    for k in range(n_lines):
        s = smin + (k + 0.5) * spacing
        c = _chord(pts, d, nrm, s)
        if c is not None:
            chords.append((s, c))

    def build(reverse_lines: bool, flip_first: bool) -> list:
        seq = chords[::-1] if reverse_lines else chords
        out = []
        for idx, (s, (t0, t1)) in enumerate(seq):
            ends = [t0, t1]
            if (idx % 2 == 1) != flip_first:
                ends = ends[::-1]
            for t in ends:
                xy = t * d + s * nrm
                p = (float(xy[0]), float(xy[1]), float(params.altitude))
                if not out or math.dist(out[-1], p) > 1e-9:
                    out.append(p)
        return out

    variants = [build(r, f) for r in (False, True) for f in (False, True)]
    best = variants[0]
    if start is not None:
        sx, sy = float(start[0]), float(start[1])
        best = min(variants, key=lambda w: math.hypot(w[0][0] - sx, w[0][1] - sy))
    return SweepPlan(np.array(best), region_id, spacing, len(chords))


def coverage_fraction(region: ConvexRegion, path: np.ndarray, fov: float,
                      resolution: float = 0.25) -> float:
    """Fraction of region grid cells inside the footprint swept along ``path``.

    The path is linearly interpolated at ``resolution / 2`` and the footprint
    half-width follows each sample's altitude.
    """
    path = np.asarray(path, dtype=float)
    pts = region.points
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    gx = np.arange(x0 + resolution / 2, x1, resolution)
    gy = np.arange(y0 + resolution / 2, y1, resolution)
    grid = np.stack(np.meshgrid(gx, gy), axis=-1).reshape(-1, 2)
    grid = grid[region.contains(grid)]
    if len(grid) == 0:
        return 0.0
    samples = [path[:1]]
    for a, b in zip(path[:-1], path[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b[:2] - a[:2]) / (resolution / 2))))
        w = np.linspace(0.0, 1.0, n + 1)[1:, None]
        samples.append(a + w * (b - a))
    samp = np.vstack(samples)
    samp = samp[samp[:, 2] > 0]
    half = samp[:, 2] * math.tan(fov / 2.0)
    covered = np.zeros(len(grid), dtype=bool)
    for i in range(0, len(samp), 256):
        s = samp[i:i + 256]
        h = half[i:i + 256]
        dx = np.abs(grid[:, None, 0] - s[None, :, 0])
        dy = np.abs(grid[:, None, 1] - s[None, :, 1])
        covered |= np.any(np.maximum(dx, dy) <= h[None, :], axis=1)
    return float(covered.mean())


def write_plan_csv(plan: SweepPlan, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "z"])
        for x, y, z in plan.waypoints:
            w.writerow([f"{x:.6f}", f"{y:.6f}", f"{z:.6f}"])
