"""Scenario files: JSON validated against ``scenario.schema.json``.

Unknown keys anywhere are rejected. Missing optional keys take the defaults
below; :func:`load` returns a :class:`ScenarioConfig` with every field filled.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .. import control, estimation, tracking
from ..agent import AgentConfig, Battery, GripperParams, ServoParams
from ..coverage import ConvexRegion, SweepParams, plan_sweep
from ..geometry import CameraIntrinsics
from .world import DropZone, World, WorldObject

BUILTINS = ("collision", "moving-pickup", "static-pickup", "fusion-eval", "detection-map",
            "full-arena")

DEFAULTS = {
    "kind": "mission",
    "seed": 0,
    "dt": 0.02,
    "duration": 120.0,
    "camera_every": 5,
    "broadcast_rate": 10.0,
    "end_on_delivery": True,
    "log_every": 1,
    "network": {"latency": 0.0, "drop": 0.0},
    "camera": {"f": 250.0, "width": 320, "height": 240, "offset": 0.3},
    "render": {"vignetting": 0.0, "noise_sigma": 0.0, "supersample": 2},
    "sensors": {},
    "agents": [],
    "fusion_eval": {"side": 22.5, "speed": 1.0, "altitude": 5.0, "runs": 20,
                    "dropout": [40.0, 50.0]},
    "detection_map": {"altitudes": [5.0, 7.5, 10.0], "grid": [8, 6], "vignetting": 0.8,
                      "diameter": 0.3, "color": "red"},
}

AGENT_DEFAULTS = {
    "altitude": 5.0,
    "overlap": 0.2,
    "heading": 0.0,
    "cruise_speed": 1.5,
    "deliver_altitude": 4.0,
    "claims": True,
    "engage_magnet": True,
    "pick_rule": "nearest",
    "observer": True,
}


class ConfigInvalid(ValueError):
    """Scenario failed validation; ``errors`` lists ``(field path, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.errors))


@dataclass
class ScenarioConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seed(self) -> int:
        return self.data["seed"]


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid([("<root>", "scenario must be a JSON object")])
    v = jsonschema.Draft202012Validator(schema())
    errs = sorted(v.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errs:
        raise ConfigInvalid([(_path(e), e.message) for e in errs])
    full = _merge(DEFAULTS, data)
    full["agents"] = [_merge(AGENT_DEFAULTS, a) for a in full["agents"]]
    problems = []
    ids = [a["id"] for a in full["agents"]]
    if len(set(ids)) != len(ids):
        problems.append(("agents", "agent ids must be unique"))
    for i, a in enumerate(full["agents"]):
        try:
            ConvexRegion(tuple(map(tuple, a["region"])))
        except ValueError as exc:
            problems.append((f"agents/{i}/region", str(exc)))
    if "world" in full:
        try:
            ConvexRegion(tuple(map(tuple, full["world"]["arena"])))
        except ValueError as exc:
            problems.append(("world/arena", str(exc)))
        oids = [o["id"] for o in full["world"].get("objects", [])]
        if len(set(oids)) != len(oids):
            problems.append(("world/objects", "object ids must be unique"))
    elif full["kind"] == "mission":
        problems.append(("world", "mission scenarios need a world"))
    if problems:
        raise ConfigInvalid(problems)
    cfg = ScenarioConfig(full)
    if full["kind"] == "mission":
        try:
            build_world(cfg)
        except ValueError as exc:
            raise ConfigInvalid([("world", str(exc))]) from exc
    return cfg


def load(source, seed: int | None = None) -> ScenarioConfig:
    """Load a built-in name or a JSON file path; ``seed`` overrides the file's."""
    if isinstance(source, dict):
        data = source
    elif str(source) in BUILTINS:
        text = resources.files(__package__).joinpath("scenarios", f"{source}.json").read_text()
        data = json.loads(text)
    else:
        p = Path(source)
        if not p.is_file():
            raise ConfigInvalid([("scenario", f"no built-in or file named {source!r}")])
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid([("<file>", f"invalid JSON: {exc}")]) from exc
    if seed is not None:
        if seed < 0:
            raise ConfigInvalid([("seed", "must be non-negative")])
        data = dict(data, seed=int(seed))
    return validate(data)


# --------------------------------------------------------------------------- builders


def camera(cfg: ScenarioConfig) -> CameraIntrinsics:
    c = cfg["camera"]
    return CameraIntrinsics.centered(c["f"], c["width"], c["height"])


def sensor_model(cfg: ScenarioConfig) -> estimation.SensorModel:
    s = dict(cfg["sensors"])
    if "bias0" in s:
        s["bias0"] = tuple(s["bias0"])
    if "dropouts" in s:
        s["dropouts"] = tuple(tuple(d) for d in s["dropouts"])
    s["odom_rate"] = 1.0 / cfg["dt"]
    return estimation.SensorModel(**s)


def build_world(cfg: ScenarioConfig) -> World:
    w = cfg["world"]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    objs = []
    for o in w.get("objects", []):
        if "velocity" in o:
            vel = np.array(o["velocity"], dtype=float)
        elif o.get("speed", 0.0) > 0:
            a = rng.uniform(0.0, 2.0 * math.pi)
            vel = o["speed"] * np.array([math.cos(a), math.sin(a)])
        else:
            vel = np.zeros(2)
        objs.append(WorldObject(o["id"], o["color"], o.get("diameter", 0.3),
                                np.array(o["position"], dtype=float), vel, o.get("ferrous", True)))
    dz = w["drop_zone"]
    return World(ConvexRegion(tuple(map(tuple, w["arena"]))),
                 DropZone(tuple(dz["center"]), dz["radius"]), objs,
                 np.array(w.get("wind", [0.0, 0.0, 0.0]), dtype=float))


def agent_config(cfg: ScenarioConfig, a: dict) -> AgentConfig:
    cam = camera(cfg)
    region = ConvexRegion(tuple(map(tuple, a["region"])))
    sweep = SweepParams(a["altitude"], cam.fov(), a["overlap"], a.get("sweep_heading"))
    plan = plan_sweep(region, sweep, a["id"], start=a["start"])
    sv = dict(a.get("servo", {}))
    if "cone_half_angle_deg" in sv:
        sv["cone_half_angle"] = math.radians(sv.pop("cone_half_angle_deg"))
    sm = sensor_model(cfg)
    kf = dict(tracking.KfParams().__dict__)
    kf.update(a.get("tracking", {}))
    dz = cfg["world"]["drop_zone"]
    return AgentConfig(
        agent_id=a["id"], start=tuple(a["start"]), region=region, plan=plan,
        drop_zone=tuple(dz["center"]), drop_radius=dz["radius"], camera=cam,
        cruise_speed=a["cruise_speed"], deliver_altitude=a["deliver_altitude"],
        gains=control.ControlGains(**a.get("control", {})),
        avoidance=control.AvoidanceParams(**a.get("avoidance", {})),
        observer_enabled=a["observer"], servo=ServoParams(**sv),
        gripper=GripperParams(**a.get("gripper", {})), battery=Battery(**a.get("battery", {})),
        kf=tracking.KfParams(**kf),
        fusion=estimation.FusionParams(sm.odom_density, sm.bias_walk, sm.gps_sigma),
        heading=a["heading"], claims_enabled=a["claims"], engage_magnet=a["engage_magnet"],
        pick_rule=a["pick_rule"], camera_offset=cfg["camera"]["offset"])
