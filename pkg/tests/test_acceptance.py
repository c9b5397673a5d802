"""Acceptance suite: one verdict line per criterion (see the summary section)."""
import hashlib
import itertools
import math
import time

import numpy as np

from mavpick import vision
from mavpick.coverage import ConvexRegion, SweepParams, coverage_fraction, max_sweep_distance, plan_sweep
from mavpick.geometry import (CameraIntrinsics, Pose, inverse_project_pair, project_point,
                              random_rotation, rot_x, world_to_camera)
from mavpick.sim import Simulation, load, run
from mavpick.sim.runner import detection_map
from mavpick.tracking import KfParams, assignment_cost, hungarian, kf_predict, kf_update, new_track


def test_1_inverse_projection_round_trips(accept):
    rng = np.random.default_rng(2024)
    K = CameraIntrinsics.centered(500.0, 640, 480)
    worst_rel = worst_res = 0.0
    t0 = time.perf_counter()
    done = 0
    while done < 1000:
        tilt = rot_x(math.pi + rng.uniform(-0.5, 0.5))
        R_WC = random_rotation(rng) if rng.random() < 0.2 else tilt
        pose = Pose(R_WC, (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(2, 15)))
        l = rng.uniform(0.05, 3.0)
        ray = R_WC @ np.array([rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), 1.0])
        if ray[2] > -0.1:
            continue
        c = pose.translation - pose.translation[2] / ray[2] * ray
        a = rng.uniform(0, 2 * math.pi)
        off = 0.5 * l * np.array([math.cos(a), math.sin(a), 0.0])
        q1, q2 = world_to_camera(c - off, pose), world_to_camera(c + off, pose)
        if min(q1[2], q2[2]) <= 0.1:
            continue
        p1, p2 = inverse_project_pair(project_point(q1, K), project_point(q2, K), pose.R_CW, l, K)
        n = pose.R_CW @ np.array([0.0, 0.0, 1.0])
        worst_rel = max(worst_rel, np.linalg.norm(p1 - q1) / np.linalg.norm(q1),
                        np.linalg.norm(p2 - q2) / np.linalg.norm(q2))
        worst_res = max(worst_res, abs(np.linalg.norm(p1 - p2) - l) / l, abs(n @ (p1 - p2)) / l)
        done += 1
    wall = time.perf_counter() - t0
    accept(1, "inverse projection round trips", worst_rel <= 1e-9 and worst_res <= 1e-9 and wall < 1.0,
           f"max rel err {worst_rel:.2e}, max residual/l {worst_res:.2e}, {wall:.3f} s")


def test_2_sweep_spacing(accept):
    a = max_sweep_distance(10.0, math.pi / 2, 0.5)
    b = max_sweep_distance(10.0, math.pi / 2, 1.0)
    region = ConvexRegion.rectangle(0, 0, 40, 30)
    params = SweepParams(7.5, math.pi / 2, 0.2)
    cov = coverage_fraction(region, plan_sweep(region, params).waypoints, params.fov, 0.25)
    ok = abs(a - 10.0) <= 1e-12 and abs(b) <= 1e-12 and cov >= 0.99
    accept(2, "sweep spacing and coverage", ok, f"d_max {a!r}, {b!r}; coverage {cov:.4f}")


def test_3_collision_scenario(accept):
    t0 = time.perf_counter()
    cfg = load("collision")
    sim = Simulation(cfg)
    m = sim.run()
    wall = time.perf_counter() - t0
    obj = sim.world.objects[0]
    ball = np.array([obj.position[0], obj.position[1], sim.slots[0].agent.cfg.servo.ball_height])
    first = float(np.linalg.norm(sim.slots[0].truth.position - ball))
    ok = m["min_pairwise_distance"] >= 0.95 and first <= 0.2 and wall < 10.0
    accept(3, "collision avoidance with priority", ok,
           f"min distance {m['min_pairwise_distance']:.3f} m, prioritized agent {first:.3f} m "
           f"from servo point, {wall:.2f} s")


def test_4_fusion_accuracy(accept):
    m, _ = run(load("fusion-eval"))
    med = m["fused_rmse_median"]
    ratio = m["odometry_over_fused_min"]
    ok = 0.10 <= med <= 0.20 and ratio >= 3.0 and m["runs"] == 20
    accept(4, "fusion accuracy", ok,
           f"median fused RMSE {med:.3f} m, odometry/fused >= {ratio:.2f}, "
           f"median odometry {m['odometry_rmse_median']:.3f} m")


def test_5_moving_pickup(accept):
    delivered, errors, world_errors = 0, [], []
    for seed in range(20):
        cfg = load("moving-pickup", seed)
        assert cfg["agents"][0]["gripper"]["p_grasp"] == 1.0
        m = Simulation(cfg).run()
        if m["objects_delivered"] == 1 and max(m["delivery_times"].values()) <= 120.0:
            delivered += 1
        errors += m["grasp_track_errors"]
        world_errors += m["grasp_track_errors_world"]
    radius = 0.15
    ok = delivered >= 18 and errors and max(errors) < radius
    accept(5, "moving pickup", ok,
           f"{delivered}/20 delivered, max grasp track error {max(errors):.3f} m "
           f"(world frame {max(world_errors):.3f} m)")


def test_6_detection_map(accept):
    k = CameraIntrinsics.centered(500.0, 640, 480)
    rows = detection_map(k, (5.0, 7.5, 10.0), (8, 6), vignetting=0.8)
    border = [r for r in rows if r[1] in (0, 5) or r[2] in (0, 7)]
    inner = [r for r in rows if r not in border]
    med_b = float(np.median([r[8] for r in border if r[8] is not None]))
    med_c = float(np.median([r[8] for r in inner if r[8] is not None]))
    blanks = sum(r[7] is None for r in border)
    centred = []
    for z in (5.0, 7.5, 10.0):
        # object exactly under the principal point
        pose = Pose.downward((0.0, 0.0, z))
        img = vision.render_scene([vision.Disc((0.0, 0.0), 0.3, vision.COLOR_RGB["red"])], pose, k,
                                  vision.RenderParams(vignetting=0.8, supersample=4))
        det = vision.detect_objects(img, pose, k, [c for c in vision.DEFAULT_CLASSES if c.name == "red"],
                                    0.3, 0.0)
        centred.append(100.0 * np.linalg.norm(det[0].position - (0, 0, 0)) / z if det else math.inf)
    ok = max(centred) < 0.5 and med_b > med_c and blanks >= 1
    accept(6, "detection map", ok,
           f"centred error max {max(centred):.3f}%, border median {med_b:.3f}% > centre "
           f"median {med_c:.3f}%, {blanks} blank border cells")


def test_7_hungarian_oracle(accept):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        C = rng.uniform(0, 10, (6, 6))
        brute = min(sum(C[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6)))
        if abs(assignment_cost(C, hungarian(C)) - brute) > 1e-9:
            mismatches += 1
    wall = time.perf_counter() - t0
    accept(7, "Hungarian vs exhaustive enumeration", mismatches == 0 and wall < 1.0,
           f"{mismatches} mismatches, {wall:.3f} s including enumeration")


def _digests(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_8_determinism(accept, tmp_path):
    run(load("full-arena"), tmp_path / "a")
    run(load("full-arena"), tmp_path / "b")
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    ok = a == b and "metrics.json" in a and "events.csv" in a
    accept(8, "full-arena determinism", ok, f"{len(a)} files compared")


def test_9_kf_velocity(accept):
    v = np.array([0.278, -0.15])
    ts = np.arange(0.0, 5.0, 0.1)
    xy = np.array([1.0, 2.0]) + ts[:, None] * v
    p = KfParams()
    tr = new_track(0, vision.Detection(ts[0], np.array([*xy[0], 0.0]), "red", 100), p)
    for t_prev, t, q in zip(ts[:-1], ts[1:], xy[1:]):
        tr = kf_update(kf_predict(tr, t - t_prev, p), vision.Detection(t, np.array([*q, 0.0]), "red", 100), p)
    ls = np.array([np.polyfit(ts, xy[:, i], 1)[0] for i in range(2)])
    err = float(np.max(np.abs(tr.state[3:5] - ls)))
    accept(9, "KF velocity vs least squares", err <= 1e-3, f"max deviation {err:.2e} m/s")
