import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mavpick.coverage import (ConvexRegion, DegenerateSpacing, SweepParams, camera_footprint,
                              coverage_fraction, max_sweep_distance, plan_sweep, write_plan_csv)


def line_offsets(plan, region, params):
    """Sideways coordinate of each sweep line (pairs of waypoints)."""
    theta = region.longest_edge_heading() if params.heading is None else params.heading
    nrm = np.array([-math.sin(theta), math.cos(theta)])
    s = plan.waypoints[:, :2] @ nrm
    return np.unique(np.round(s, 9))


def test_max_sweep_distance_examples():
    assert abs(max_sweep_distance(10, math.pi / 2, 0.5) - 10.0) <= 1e-12
    assert max_sweep_distance(10, math.pi / 2, 1.0) == 0.0
    assert abs(max_sweep_distance(5, math.radians(60), 0.0) - 10 * math.tan(math.radians(30))) < 1e-12


def test_square_two_lines():
    region = ConvexRegion.rectangle(0, 0, 10, 10)
    params = SweepParams(10.0, math.pi / 2, 0.5)
    plan = plan_sweep(region, params)
    offs = line_offsets(plan, region, params)
    assert plan.lines >= 2 and len(offs) >= 2
    assert offs.min() < 5.0 < offs.max()


def test_full_overlap_degenerate():
    with pytest.raises(DegenerateSpacing):
        plan_sweep(ConvexRegion.rectangle(0, 0, 10, 10), SweepParams(5.0, 1.0, 1.0))


def test_rectangle_coverage_oracle():
    region = ConvexRegion.rectangle(0, 0, 40, 30)
    params = SweepParams(7.5, math.pi / 2, 0.2)
    assert max_sweep_distance(7.5, math.pi / 2, 0.2) == pytest.approx(12.0)
    plan = plan_sweep(region, params)
    assert coverage_fraction(region, plan.waypoints, params.fov, 0.25) >= 0.99


def test_camera_footprint():
    assert camera_footprint((1, 2, 10), math.pi / 2) == pytest.approx((1, 2, 10))
    areas = [(2 * camera_footprint((0, 0, z), 1.0)[2]) ** 2 for z in (1.0, 1e-3, 1e-6)]
    assert areas[0] > areas[1] > areas[2] and areas[2] < 1e-11
    with pytest.raises(ValueError):
        camera_footprint((0, 0, 0), 1.0)


def test_waypoint_footprints_touch_region():
    region = ConvexRegion(((0, 0), (20, 0), (26, 12), (4, 15)))
    params = SweepParams(6.0, math.radians(70), 0.2)
    plan = plan_sweep(region, params)
    for wp in plan.waypoints:
        cx, cy, h = camera_footprint(wp, params.fov)
        xs = np.linspace(cx - h, cx + h, 21)
        ys = np.linspace(cy - h, cy + h, 21)
        grid = np.stack(np.meshgrid(xs, ys), -1).reshape(-1, 2)
        assert region.contains(grid).any()


def test_region_validation():
    with pytest.raises(ValueError):
        ConvexRegion(((0, 0), (0, 1), (1, 1), (1, 0)))  # clockwise
    with pytest.raises(ValueError):
        ConvexRegion(((0, 0), (2, 0), (1, 0.2), (2, 2), (0, 2)))  # reflex vertex
    with pytest.raises(ValueError):
        ConvexRegion(((0, 0), (1, 0)))
    with pytest.raises(ValueError):
        SweepParams(5.0, 1.0, 1.5)


def test_heading_defaults_to_longest_edge():
    region = ConvexRegion.rectangle(0, 0, 30, 10)
    plan = plan_sweep(region, SweepParams(5.0, 1.0, 0.2))
    seg = plan.waypoints[1] - plan.waypoints[0]
    assert abs(seg[1]) < 1e-9 and abs(seg[0]) == pytest.approx(30.0)


def test_start_selects_nearest_variant():
    region = ConvexRegion.rectangle(0, 0, 20, 20)
    params = SweepParams(5.0, 1.0, 0.2)
    for corner in [(0, 0), (20, 0), (0, 20), (20, 20)]:
        wp0 = plan_sweep(region, params, start=corner).waypoints[0]
        others = [plan_sweep(region, params, start=c).waypoints[0] for c in [(0, 0), (20, 20)]]
        assert math.dist(wp0[:2], corner) <= min(math.dist(o[:2], corner) for o in others) + 1e-9


def test_plan_csv(tmp_path):
    region = ConvexRegion.rectangle(0, 0, 10, 6)
    plan = plan_sweep(region, SweepParams(4.0, 1.0, 0.2))
    p = tmp_path / "plan.csv"
    write_plan_csv(plan, p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["x", "y", "z"] and len(rows) == len(plan) + 1
    assert np.allclose(np.array(rows[1:], float), plan.waypoints, atol=1e-6)


regions = st.builds(
    lambda w, h, a: ConvexRegion(tuple((float(x), float(y)) for x, y in
                                       np.array([[0, 0], [w, 0], [w, h], [0, h]]) @
                                       np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]]))),
    st.floats(3, 25), st.floats(3, 25), st.floats(0, math.pi))


@given(regions, st.floats(3, 10), st.floats(0.5, 1.6), st.floats(0.0, 0.9))
def test_spacing_bound_and_determinism(region, z, fov, overlap):
    params = SweepParams(z, fov, overlap)
    plan = plan_sweep(region, params)
    d_max = max_sweep_distance(z, fov, overlap)
    offs = line_offsets(plan, region, params)
    assert np.all(np.diff(offs) <= d_max + 1e-9)
    assert np.all(np.linalg.norm(np.diff(plan.waypoints, axis=0), axis=1) > 0)
    assert np.array_equal(plan.waypoints, plan_sweep(region, params).waypoints)
    assert np.all(region.contains(plan.waypoints, margin=d_max / 2 + 1e-6))


@settings(max_examples=15)
@given(regions, st.floats(4, 8), st.floats(0.1, 0.6))
def test_coverage_completeness(region, z, overlap):
    params = SweepParams(z, math.radians(60), overlap)
    plan = plan_sweep(region, params)
    assert coverage_fraction(region, plan.waypoints, params.fov, 0.25) >= 0.99


@given(regions, st.floats(0.0, 0.95), st.floats(0.0, 1.0))
def test_more_overlap_never_fewer_lines(region, overlap, t):
    more = overlap + t * (0.99 - overlap)
    a = plan_sweep(region, SweepParams(5.0, 1.0, overlap))
    b = plan_sweep(region, SweepParams(5.0, 1.0, more))
    assert b.lines >= a.lines
