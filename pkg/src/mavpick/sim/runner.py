"""Deterministic tick loop, CSV logs and the metrics summary.

Each tick runs, in this order: object motion; sensor simulation for every
agent; agent steps in ascending id; broadcast send; dynamics; broadcast
delivery; logging. Every random stream is seeded from the scenario seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import estimation, vision
from ..agent import Agent, Inputs, Mode
from ..control import AgentKinematics, step_dynamics
from ..coverage import coverage_fraction
from ..geometry import CameraIntrinsics, Pose, camera_to_world, normalize_pixel
from .bus import BroadcastBus, broadcast_deliver
from .scenario import ScenarioConfig, agent_config, build_world, camera, load, sensor_model
from .world import ObjectStatus, World, ferrous_distance, move_objects

LOG_HEADERS = {
    "poses": ["stamp", "agent", "x", "y", "z", "vx", "vy", "vz"],
    "estimates": ["stamp", "agent", "x", "y", "z", "bx", "by", "bz"],
    "references": ["stamp", "agent", "x", "y", "z", "vx", "vy", "vz", "state"],
    "tracks": ["stamp", "agent", "track", "color", "x", "y", "z", "vx", "vy", "confirmed"],
    "objects": ["stamp", "object", "status", "x", "y", "carrier"],
    "events": ["stamp", "agent", "event", "data"],
}


def _f(x: float) -> str:
    return f"{x:.6f}"


def _r(x):
    """Round floats for the metrics file so it is stable to print."""
    if isinstance(x, float):
        return None if not math.isfinite(x) else round(x, 6)
    if isinstance(x, dict):
        return {k: _r(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_r(v) for v in x]
    return x


class Logs:
    """In-memory CSV buffers, one per stream."""

    def __init__(self):
        self.rows = {name: [] for name in LOG_HEADERS}

    def add(self, stream: str, t: float, *fields) -> None:
        self.rows[stream].append(",".join([_f(t), *map(str, fields)]))

    def write(self, out: Path) -> dict:
        paths = {}
        for name, header in LOG_HEADERS.items():
            p = out / f"{name}.csv"
            with open(p, "w", newline="\n") as fh:
                fh.write(",".join(header) + "\n")
                if self.rows[name]:
                    fh.write("\n".join(self.rows[name]) + "\n")
            paths[name] = p
        return paths


@dataclass
class AgentSlot:
    agent: Agent
    truth: AgentKinematics
    sensors: estimation.SensorSimulator
    render_rng: np.random.Generator
    last_delta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inbox: list = field(default_factory=list)
    path: list = field(default_factory=list)
    servo_since: float | None = None


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        if cfg.kind != "mission":
            raise ValueError(f"scenario kind {cfg.kind!r} is not a closed-loop mission")
        self.cfg = cfg
        self.dt = float(cfg["dt"])
        self.world: World = build_world(cfg)
        self.camera: CameraIntrinsics = camera(cfg)
        self.render_params = vision.RenderParams(
            vignetting=cfg["render"]["vignetting"], noise_sigma=cfg["render"]["noise_sigma"],
            supersample=cfg["render"]["supersample"])
        model = sensor_model(cfg)
        self.bus = BroadcastBus(cfg["network"]["latency"], cfg["network"]["drop"])
        self.net_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.slots: list[AgentSlot] = []
        for a in sorted(cfg["agents"], key=lambda a: a["id"]):
            ss = np.random.SeedSequence([cfg.seed, 100 + a["id"]])
            s_agent, s_sens, s_render = ss.spawn(3)
            ac = agent_config(cfg, a)
            self.slots.append(AgentSlot(
                Agent(ac, seed=int(s_agent.generate_state(1)[0])),
                AgentKinematics.at(a["start"]),
                estimation.SensorSimulator(model, np.random.default_rng(s_sens), 0.0),
                np.random.default_rng(s_render)))
        self.tick = 0
        self.t = 0.0
        self.logs = Logs()
        self.broadcast_every = max(1, int(round(1.0 / (cfg["broadcast_rate"] * self.dt))))
        self.m = {"grasp_attempts": 0, "grasp_failures": 0, "pickup_durations": [],
                  "grasp_track_errors": [], "grasp_track_errors_world": [], "delivery_times": {}, "hover_ticks": 0,
                  "min_distance": math.inf, "bounces": 0, "geometry_failures": 0}

    # ------------------------------------------------------------------ helpers

    def _render(self, slot: AgentSlot) -> np.ndarray:
        cam_pos = slot.truth.position + np.array([0.0, 0.0, slot.agent.cfg.camera_offset])
        pose = Pose.downward(cam_pos, slot.agent.cfg.heading)
        discs = [vision.Disc(tuple(ob.position), ob.diameter, vision.COLOR_RGB[ob.color])
                 for ob in self.world.on_ground()]
        return vision.render_scene(discs, pose, self.camera, self.render_params, slot.render_rng)

    def _event(self, agent_id, name, *data) -> None:
        self.logs.add("events", self.t, agent_id, name, " ".join(
            _f(d) if isinstance(d, float) else str(d) for d in data))

    def _handle(self, slot: AgentSlot, events: list) -> None:
        aid = slot.agent.id
        for ev in events:
            kind = ev[0]
            self._event(aid, kind, *ev[1:])
            if kind == "fsm":
                if ev[2] == "Servo/ConeDescent" and not ev[1].startswith("Servo"):
                    slot.servo_since = self.t
            elif kind == "contact":
                self.m["grasp_attempts"] += 1
            elif kind == "grasp_failed":
                self.m["grasp_failures"] += 1
            elif kind == "grasp":
                ob = self.world.get(ev[1])
                ob.status, ob.carrier = ObjectStatus.ATTACHED, aid
                ob.velocity = np.zeros(2)
                if slot.servo_since is not None:
                    self.m["pickup_durations"].append(self.t - slot.servo_since)
                    slot.servo_since = None
            elif kind == "grasp_track":
                held = [o for o in self.world.objects if o.carrier == aid
                        and o.status is ObjectStatus.ATTACHED]
                if held:
                    ob = held[0]
                    self.m["grasp_track_errors_world"].append(
                        math.hypot(ev[2] - ob.position[0], ev[3] - ob.position[1]))
                    # the agent's own navigation error shifts track and agent alike;
                    # remove it to get the error that matters for the grasp
                    nav = np.array(ev[4:6]) - slot.truth.position[:2]
                    self.m["grasp_track_errors"].append(
                        float(np.linalg.norm(np.array(ev[2:4]) - ob.position - nav)))
            elif kind == "release":
                ob = self.world.get(ev[1])
                if ob is not None and ob.status is ObjectStatus.ATTACHED:
                    ob.carrier = None
                    if self.world.drop_zone.contains(ob.position):
                        ob.status = ObjectStatus.DELIVERED
                        self.m["delivery_times"][ob.id] = self.t
                        self._event(aid, "delivered", ob.id)
                    else:
                        ob.status = ObjectStatus.GROUND
                        self._event(aid, "dropped", ob.id)

    # ------------------------------------------------------------------ tick

    def step(self) -> None:
        dt, t = self.dt, self.t
        # (1) objects
        self.m["bounces"] += len(move_objects(self.world, dt))
        for ob in self.world.objects:
            if ob.status is ObjectStatus.ATTACHED:
                carrier = next(s for s in self.slots if s.agent.id == ob.carrier)
                ob.position = carrier.truth.position[:2].copy()
        # (2) sensors
        camera_tick = self.tick % self.cfg["camera_every"] == 0
        inputs = []
        for s in self.slots:
            odom = None
            if self.tick > 0:
                odom = s.sensors.odom(t, dt, s.last_delta, s.last_delta / dt)
            gps = s.sensors.gps(t, s.truth.position) if s.sensors.gps_due(t) else None
            img = self._render(s) if camera_tick else None
            inputs.append(Inputs(t, dt, odom, gps, img, s.last_accel.copy(),
                                 ferrous_distance(s.truth.position, self.world)))
        # (3) agents, ascending id
        outputs = []
        for s, inp in zip(self.slots, inputs):
            out = s.agent.step(inp, s.inbox)
            s.inbox = []
            self._handle(s, out.events)
            if out.hovering:
                self.m["hover_ticks"] += 1
            outputs.append(out)
        # (4) network send
        if self.tick % self.broadcast_every == 0:
            for out in outputs:
                if out.message is not None:
                    self.bus.send(out.message, t)
        # (5) dynamics
        for s, out in zip(self.slots, outputs):
            before = s.truth
            s.truth = step_dynamics(before, out.accel, self.world.wind, dt)
            s.last_delta = s.truth.position - before.position
            s.last_accel = (s.truth.velocity - before.velocity) / dt
        # (6) network delivery
        for msg in broadcast_deliver(self.bus, t, self.net_rng):
            for s in self.slots:
                if s.agent.id != msg.agent_id:
                    s.inbox.append(msg)
        # (7) logging
        self._log(outputs)
        self.tick += 1
        self.t = self.tick * dt

    def _log(self, outputs) -> None:
        t = self.t
        for i, s in enumerate(self.slots):
            for j in range(i + 1, len(self.slots)):
                d = float(np.linalg.norm(s.truth.position - self.slots[j].truth.position))
                self.m["min_distance"] = min(self.m["min_distance"], d)
        if self.tick % self.cfg["log_every"]:
            return
        for s, out in zip(self.slots, outputs):
            a = s.agent
            p, v = s.truth.position, s.truth.velocity
            self.logs.add("poses", t, a.id, *map(_f, p), *map(_f, v))
            if a.filter is not None:
                self.logs.add("estimates", t, a.id, *map(_f, a.filter.position), *map(_f, a.filter.bias))
            ref = out.reference
            if ref is not None:
                self.logs.add("references", t, a.id, *map(_f, ref.position), *map(_f, ref.velocity),
                              a.fsm.label)
            if self.tick % self.cfg["camera_every"] == 0:
                s.path.append(p.copy())
                for tr in a.tracker.tracks:
                    self.logs.add("tracks", t, a.id, tr.id, tr.color, *map(_f, tr.position),
                                  _f(tr.state[3]), _f(tr.state[4]), int(tr.confirmed))
        if self.tick % self.cfg["camera_every"] == 0:
            for ob in self.world.objects:
                self.logs.add("objects", t, ob.id, ob.status.value, _f(ob.position[0]),
                              _f(ob.position[1]), "" if ob.carrier is None else ob.carrier)

    # ------------------------------------------------------------------ run

    def finished(self) -> bool:
        objs = self.world.objects
        if self.cfg["end_on_delivery"] and objs and all(
                o.status is ObjectStatus.DELIVERED for o in objs):
            return True
        return bool(self.slots) and all(s.agent.fsm.mode is Mode.GROUNDED for s in self.slots) \
            and self.tick > 0

    def run(self) -> dict:
        n_ticks = int(round(self.cfg["duration"] / self.dt))
        while self.tick < n_ticks and not self.finished():
            self.step()
        return self.metrics()

    def metrics(self) -> dict:
        w = self.world
        agents = {}
        for s in self.slots:
            a = s.agent
            path = np.array(s.path) if s.path else np.zeros((0, 3))
            cov = coverage_fraction(a.cfg.region, path, self.camera.fov()) if len(path) > 1 else 0.0
            agents[str(a.id)] = {
                "state": a.fsm.label,
                "position": [float(x) for x in s.truth.position],
                "battery": float(a.battery.voltage),
                "coverage": cov,
                "confirmed_tracks": len(a.seen_confirmed),
                "geometry_failures": int(a.diagnostics.get("geometry_failures", 0)),
            }
        covs = [v["coverage"] for v in agents.values()]
        return _r({
            "scenario": self.cfg.name,
            "seed": self.cfg.seed,
            "sim_time": self.t,
            "ticks": self.tick,
            "object_count": len(w.objects),
            "objects_delivered": w.delivered(),
            "delivery_times": {str(k): v for k, v in sorted(self.m["delivery_times"].items())},
            "pickup_durations": self.m["pickup_durations"],
            "grasp_attempts": self.m["grasp_attempts"],
            "grasp_failures": self.m["grasp_failures"],
            "grasp_track_errors": self.m["grasp_track_errors"],
            "grasp_track_errors_world": self.m["grasp_track_errors_world"],
            "min_pairwise_distance": self.m["min_distance"] if len(self.slots) > 1 else None,
            "coverage_fraction": float(np.mean(covs)) if covs else 0.0,
            "detection_counts": {k: v["confirmed_tracks"] for k, v in agents.items()},
            "hover_ticks": self.m["hover_ticks"],
            "object_bounces": self.m["bounces"],
            "messages": {"sent": self.bus.sent, "delivered": self.bus.delivered,
                         "dropped": self.bus.dropped},
            "objects": {str(o.id): {"status": o.status.value,
                                    "position": [float(o.position[0]), float(o.position[1])]}
                        for o in w.objects},
            "agents": agents,
        })


# --------------------------------------------------------------------------- other kinds


def fusion_eval(cfg: ScenarioConfig, out: Path | None = None) -> dict:
    """Fused vs single-source accuracy on a closed square over several seeds."""
    fe = cfg["fusion_eval"]
    model = sensor_model(cfg)
    model = estimation.SensorModel(**{**model.__dict__, "odom_rate": 50.0})
    params = estimation.FusionParams(model.odom_density, model.bias_walk, model.gps_sigma)
    t, p = estimation.square_trajectory(fe["side"], fe["speed"], 50.0, fe["altitude"])
    fused, gps, odo, drop = [], [], [], []
    d0, d1 = fe["dropout"]
    for i in range(fe["runs"]):
        seed = cfg.seed + i
        od, fx = estimation.simulate_sensors(t, p, model, seed)
        ft, fp = estimation.run_fusion(od, fx, params)
        dt_, dp = estimation.dead_reckon(od, fx[0].position, t[0])
        gt = np.array([f.stamp for f in fx])
        gp = np.array([f.position for f in fx])
        fused.append(estimation.rmse_aligned(ft, fp, t, p))
        gps.append(estimation.rmse_aligned(gt, gp, t, p))
        odo.append(estimation.rmse_aligned(dt_, dp, t, p))
        # same seed with a dropout window
        dm = estimation.SensorModel(**{**model.__dict__, "dropouts": ((d0, d1),)})
        od2, fx2 = estimation.simulate_sensors(t, p, dm, seed)
        t2, p2 = estimation.run_fusion(od2, fx2, params)
        truth2 = np.stack([np.interp(t2, t, p[:, k]) for k in range(3)], axis=1)
        err = np.linalg.norm(p2 - truth2, axis=1)
        pre = err[(t2 >= 5.0) & (t2 < d0)]
        during = err[(t2 >= d0) & (t2 < d1)]
        pre_rmse = float(np.sqrt(np.mean(pre ** 2)))
        drop.append(float(during.max()) / pre_rmse)
        if out is not None and i == 0:
            estimation.write_trajectory_csv(out / "truth.csv", t, p)
            estimation.write_trajectory_csv(out / "fused.csv", ft, fp)
            estimation.write_trajectory_csv(out / "odometry.csv", dt_, dp)
            estimation.write_trajectory_csv(out / "gps.csv", gt, gp)
    fused_m = float(np.median(fused))
    return _r({
        "scenario": cfg.name, "seed": cfg.seed, "runs": fe["runs"],
        "path_length": 4 * fe["side"],
        "fused_rmse_median": fused_m,
        "gps_rmse_median": float(np.median(gps)),
        "odometry_rmse_median": float(np.median(odo)),
        "odometry_over_fused_min": float(min(o / f for o, f in zip(odo, fused))),
        "dropout_ratio_max": float(max(drop)),
        "fused_rmse": fused, "gps_rmse": gps, "odometry_rmse": odo, "dropout_ratio": drop,
    })


DETECTION_MAP_HEADER = ["altitude", "row", "col", "u", "v", "x", "y", "error", "error_pct"]


def detection_map(k: CameraIntrinsics, altitudes, grid, vignetting: float = 0.0,
                  diameter: float = 0.3, color: str = "red", supersample: int = 4) -> list:
    """Detection error for an object placed under each grid cell centre.

    Returns rows ``(altitude, row, col, u, v, x, y, error, error_pct)`` with
    ``error`` ``None`` where nothing was detected.
    """
    gx, gy = int(grid[0]), int(grid[1])
    params = vision.RenderParams(vignetting=vignetting, supersample=supersample)
    cls = [c for c in vision.DEFAULT_CLASSES if c.name == color]
    rows = []
    for z in altitudes:
        pose = Pose.downward((0.0, 0.0, float(z)))
        for i in range(gy):
            for j in range(gx):
                u = ((j + 0.5) * k.width / gx - 0.5, (i + 0.5) * k.height / gy - 0.5)
                ray = camera_to_world(normalize_pixel(u, k), pose) - pose.translation
                s = -pose.translation[2] / ray[2]
                truth = pose.translation + s * ray
                img = vision.render_scene([vision.Disc((truth[0], truth[1]), diameter,
                                                       vision.COLOR_RGB[color])], pose, k, params)
                dets = vision.detect_objects(img, pose, k, cls, diameter, 0.0)
                err = min((float(np.linalg.norm(d.position - truth)) for d in dets), default=None)
                rows.append((float(z), i, j, u[0], u[1], float(truth[0]), float(truth[1]), err,
                             None if err is None else 100.0 * err / float(z)))
    return rows


def write_detection_map(rows, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(DETECTION_MAP_HEADER) + "\n")
        for z, i, j, u, v, x, y, err, pct in rows:
            fh.write(",".join([_f(z), str(i), str(j), _f(u), _f(v), _f(x), _f(y),
                               "" if err is None else _f(err), "" if pct is None else _f(pct)]) + "\n")


def detection_map_summary(rows, grid) -> dict:
    gx, gy = int(grid[0]), int(grid[1])
    border = [r for r in rows if r[1] in (0, gy - 1) or r[2] in (0, gx - 1)]
    centre = [r for r in rows if r not in border]

    def med(rs):
        vals = [r[8] for r in rs if r[8] is not None]
        return float(np.median(vals)) if vals else None

    return {"cells": len(rows), "blank": sum(r[7] is None for r in rows),
            "blank_border": sum(r[7] is None for r in border),
            "median_border_error_pct": med(border), "median_center_error_pct": med(centre)}


# --------------------------------------------------------------------------- entry point


def run(cfg, out=None, seed: int | None = None) -> tuple:
    """Run any scenario kind; writes outputs under ``out`` when given.

    Returns ``(metrics, paths)``.
    """
    if not isinstance(cfg, ScenarioConfig):
        cfg = load(cfg, seed)
    elif seed is not None:
        cfg = load(cfg.data, seed)
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if cfg.kind == "mission":
        sim = Simulation(cfg)
        metrics = sim.run()
        if out is not None:
            paths = sim.logs.write(out)
    elif cfg.kind == "fusion-eval":
        metrics = fusion_eval(cfg, out)
        if out is not None:
            paths = {n: out / f"{n}.csv" for n in ("truth", "fused", "odometry", "gps")}
    else:
        dm = cfg["detection_map"]
        rows = detection_map(camera(cfg), dm["altitudes"], dm["grid"], dm["vignetting"],
                             dm["diameter"], dm["color"], cfg["render"]["supersample"])
        metrics = _r({"scenario": cfg.name, "seed": cfg.seed,
                      **detection_map_summary(rows, dm["grid"])})
        if out is not None:
            write_detection_map(rows, out / "detection_map.csv")
            paths = {"detection_map": out / "detection_map.csv"}
    if out is not None:
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        paths["metrics"] = out / "metrics.json"
    return metrics, paths
