"""Per-MAV mission logic: explore, servo onto an object, grasp, deliver, land.

An :class:`Agent` only sees its own sensor bundle and the broadcast messages
delivered to it; it never touches simulator state.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import control, estimation, tracking, vision
from .control import AgentKinematics, ObstacleState, ReferencePoint
from .coverage import ConvexRegion, SweepPlan
from .geometry import CameraIntrinsics, Pose


class Mode(str, enum.Enum):
    TAKE_OFF = "TakeOff"
    EXPLORE = "Explore"
    SERVO = "Servo"
    DELIVER = "Deliver"
    RETURN = "ReturnToSearch"
    LAND = "Land"
    GROUNDED = "Grounded"


class ServoPhase(str, enum.Enum):
    CONE_DESCENT = "ConeDescent"
    CENTER_BALL = "CenterBall"
    MAGNET_APPROACH = "MagnetApproach"
    GRASPED = "Grasped"


@dataclass(frozen=True)
class FsmState:
    mode: Mode = Mode.TAKE_OFF
    cursor: int = 0
    track_id: int | None = None
    phase: ServoPhase | None = None
    ball_reached: bool = False  # check_ball passed in this servo episode

    @property
    def label(self) -> str:
        if self.mode is Mode.SERVO:
            return f"Servo/{self.phase.value}"
        return self.mode.value


@dataclass(frozen=True)
class ServoParams:
    cone_half_angle: float = math.radians(25.0)
    ball_height: float = 1.2
    ball_radius: float = 0.25
    ball_speed: float = 0.3
    approach_speed: float = 0.4
    z_floor: float = 0.05
    remagnetize_period: float = 1.0
    max_descent_step: float = 1.0  # m of reference lead while descending
    abort_offset: float = 0.6  # horizontal drift that aborts the approach

    def __post_init__(self):
        if not 0 < self.cone_half_angle < math.pi / 2:
            raise ValueError("cone half-angle must lie in (0, pi/2)")
        for name in ("ball_height", "ball_radius", "ball_speed", "approach_speed",
                     "remagnetize_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class GripperParams:
    base: float = 0.1
    amplitude: float = 1.0
    d0: float = 0.05
    contact_threshold: float = 0.2
    contact_distance: float = 0.02
    contact_boost: float = 0.5  # flux step when the magnetic circuit closes
    decay_rate: float = 0.2  # 1/s loss of holding strength between pulses
    p_grasp: float = 0.9


@dataclass(frozen=True)
class GripperState:
    epm_on: bool = False
    flux: float = 0.1
    attached: int | None = None
    strength: float = 1.0
    since_pulse: float = 0.0
    in_contact: bool = False


@dataclass(frozen=True)
class Battery:
    voltage: float = 16.8
    rate: float = 0.01  # V/s at unit load
    threshold: float = 14.0

    def __post_init__(self):
        if self.threshold >= 16.8 and self.threshold >= self.voltage:
            raise ValueError("land threshold must be below full voltage")


def battery_step(b: Battery, dt: float, load: float = 1.0) -> Battery:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return replace(b, voltage=b.voltage - b.rate * max(load, 0.0) * dt)


def flux_reading(g: GripperState, distance: float, p: GripperParams) -> float:
    if not g.epm_on:
        return p.base
    x = max(distance, 0.0) / p.d0
    close = p.contact_boost if distance < p.contact_distance else 0.0
    return p.base + p.amplitude * g.strength * (1.0 / (1.0 + x ** 3) + close)


def gripper_update(g: GripperState, epm_on: bool, distance: float, remagnetize: bool,
                   dt: float, rng: np.random.Generator, params: GripperParams = GripperParams(),
                   object_id: int | None = None):
    """Advance the EPM gripper one step. Returns ``(state, events)``.

    Contact is a flux jump above ``contact_threshold`` while within
    ``contact_distance``; on contact the object attaches with ``p_grasp``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    events = []
    if not epm_on:
        attached = None
        if g.attached is not None:
            events.append(("release", g.attached))
        return GripperState(False, params.base, attached, 1.0, 0.0, False), events
    strength, since = g.strength, g.since_pulse + dt
    if not g.epm_on or remagnetize:
        strength, since = 1.0, 0.0
    else:
        strength = max(0.0, strength * (1.0 - params.decay_rate * dt))
    nxt = GripperState(True, g.flux, g.attached, strength, since, g.in_contact)
    flux = flux_reading(nxt, distance, params)
    jump = flux - g.flux if g.epm_on else 0.0
    in_contact = distance < params.contact_distance
    attached = g.attached
    if jump > params.contact_threshold and in_contact and attached is None:
        events.append(("contact", object_id))
        if rng.random() < params.p_grasp:
            attached = object_id
            events.append(("grasp", object_id))
        else:
            events.append(("grasp_failed", object_id))
    return GripperState(True, flux, attached, strength, since, in_contact), events


def servo_reference(track, kin: AgentKinematics, params: ServoParams = ServoParams(),
                    phase: ServoPhase = ServoPhase.CONE_DESCENT) -> ReferencePoint:
    """Reference that keeps the MAV above the tracked object.

    Horizontal: track position with its velocity as feed-forward. Vertical:
    descend towards the ball centre only while the horizontal offset is inside
    the cone of half-angle ``cone_half_angle`` above the object; outside it,
    hold height. In the magnet approach the reference sinks at
    ``approach_speed`` onto the object.
    """
    tp = np.asarray(track.position, dtype=float)
    tv = np.asarray(track.velocity, dtype=float)
    z_obj = float(tp[2])
    z = float(kin.position[2])
    offset = float(np.hypot(kin.position[0] - tp[0], kin.position[1] - tp[1]))
    vel = np.array([tv[0], tv[1], 0.0])
    if phase is ServoPhase.MAGNET_APPROACH:
        z_ref = max(z_obj - params.z_floor, z - params.approach_speed * 0.25)
        vel[2] = -params.approach_speed
        return ReferencePoint(np.array([tp[0], tp[1], z_ref]), vel)
    z_ball = z_obj + params.ball_height
    inside = offset <= math.tan(params.cone_half_angle) * (z - z_obj)
    if inside:
        z_cone = z_obj + offset / math.tan(params.cone_half_angle)
        z_ref = max(params.z_floor, z_ball, z_cone, z - params.max_descent_step)
        z_ref = min(z_ref, z) if z > z_ball else z_ball
    else:
        z_ref = max(z, z_ball, params.z_floor)
    return ReferencePoint(np.array([tp[0], tp[1], z_ref]), vel)


def check_ball(kin: AgentKinematics, track, params: ServoParams = ServoParams()) -> bool:
    tp = np.asarray(track.position, dtype=float)
    centre = np.array([tp[0], tp[1], tp[2] + params.ball_height])
    if np.linalg.norm(kin.position - centre) > params.ball_radius:
        return False
    rel = np.asarray(kin.velocity, dtype=float) - np.asarray(track.velocity, dtype=float)
    return float(np.linalg.norm(rel)) <= params.ball_speed


# --------------------------------------------------------------------------- agent


@dataclass(frozen=True)
class Message:
    agent_id: int
    position: tuple
    velocity: tuple
    claims: tuple  # ((x, y, colour), ...)
    stamp: float
    servoing: bool = False


@dataclass
class AgentConfig:
    agent_id: int
    start: tuple
    region: ConvexRegion
    plan: SweepPlan
    drop_zone: tuple
    drop_radius: float
    camera: CameraIntrinsics
    classes: tuple = vision.DEFAULT_CLASSES
    object_diameter: float = 0.3
    cruise_speed: float = 1.5
    deliver_altitude: float = 4.0
    waypoint_tolerance: float = 0.5
    gains: control.ControlGains = field(default_factory=control.ControlGains)
    avoidance: control.AvoidanceParams = field(default_factory=control.AvoidanceParams)
    observer_beta: float = 1.0
    observer_cap: float = 2.0
    observer_enabled: bool = True
    servo: ServoParams = field(default_factory=ServoParams)
    gripper: GripperParams = field(default_factory=GripperParams)
    battery: Battery = field(default_factory=Battery)
    kf: tracking.KfParams = field(default_factory=tracking.KfParams)
    fusion: estimation.FusionParams = field(default_factory=estimation.FusionParams)
    filter_params: vision.FilterParams = field(default_factory=vision.FilterParams)
    heading: float = 0.0
    claims_enabled: bool = True
    claim_radius: float = 1.5
    region_margin: float = 1.0
    pick_rule: str = "nearest"
    engage_magnet: bool = True  # False: hold over the ball without grasping
    camera_offset: float = 0.3  # camera height above the gripper (m)
    nav_sigmas: float = 2.0  # avoidance margin in position-error standard deviations


@dataclass
class Inputs:
    """Everything the agent senses in one tick."""

    t: float
    dt: float
    odom: estimation.OdomReading | None = None
    gps: estimation.GpsFix | None = None
    image: np.ndarray | None = None
    accel: np.ndarray | None = None  # IMU, world frame, gravity removed
    ferrous: tuple = (math.inf, None)  # (distance to nearest ferrous surface, object id)


@dataclass
class Output:
    accel: np.ndarray
    reference: ReferencePoint | None
    message: Message | None
    events: list
    gripper: GripperState
    hovering: bool = False


class Agent:
    """Decentralized controller for one MAV."""

    def __init__(self, config: AgentConfig, seed: int = 0):
        self.cfg = config
        self.id = config.agent_id
        self.rng = np.random.default_rng(seed)
        self.fsm = FsmState()
        self.filter: estimation.FusionFilter | None = None
        self.velocity = np.zeros(3)
        self.tracker = tracking.Tracker(config.kf)
        self.last_track_t: float | None = None
        self.observer = control.DisturbanceObserver(config.observer_beta, config.observer_cap,
                                                    enabled=config.observer_enabled)
        self.last_cmd = np.zeros(3)
        self.gripper = GripperState(flux=config.gripper.base)
        self.battery = config.battery
        self.neighbours: dict = {}
        self.claim: tuple | None = None
        self.seen_confirmed: set = set()
        self.diagnostics: dict = {}
        self.servo_started: float | None = None

    # -- estimation ---------------------------------------------------------

    @property
    def kinematics(self) -> AgentKinematics:
        if self.filter is None:
            return AgentKinematics.at(self.cfg.start)
        return AgentKinematics(self.filter.position.copy(), self.velocity.copy())

    def _estimate(self, inp: Inputs) -> None:
        if self.filter is None:
            if inp.gps is not None and inp.gps.valid:
                self.filter = estimation.init_filter(inp.gps, self.cfg.heading, self.cfg.fusion)
            return
        if inp.odom is not None:
            self.filter = estimation.propagate(self.filter, inp.odom)
            self.velocity = np.asarray(inp.odom.velocity, dtype=float) - self.filter.bias
        if inp.gps is not None and inp.gps.valid:
            self.filter = estimation.correct(self.filter, inp.gps)

    def nav_margin(self) -> float:
        """Keep-out inflation for navigation error of this agent and a neighbour.

        ``nav_sigmas`` standard deviations of the horizontal position error,
        scaled by sqrt(2) assuming the neighbour is equally uncertain.
        """
        if self.filter is None:
            return 0.0
        var = 0.5 * float(self.filter.P[0, 0] + self.filter.P[1, 1])
        return self.cfg.nav_sigmas * math.sqrt(2.0 * max(var, 0.0))

    # -- perception ---------------------------------------------------------

    def _perceive(self, inp: Inputs, events: list) -> None:
        if inp.image is None or self.filter is None:
            return
        pos = self.filter.position + np.array([0.0, 0.0, self.cfg.camera_offset])
        dets = []
        if pos[2] > 0.2:
            pose = Pose.downward(pos, self.cfg.heading)
            dets = vision.detect_objects(inp.image, pose, self.cfg.camera, self.cfg.classes,
                                         self.cfg.object_diameter, inp.t, self.cfg.filter_params,
                                         self.diagnostics)
        dt = 0.0 if self.last_track_t is None else inp.t - self.last_track_t
        self.tracker.step(dets, dt)
        self.last_track_t = inp.t
        for tr in self.tracker.confirmed():
            if tr.id not in self.seen_confirmed:
                self.seen_confirmed.add(tr.id)
                events.append(("detect", tr.id, tr.color, *map(float, tr.position[:2])))

    # -- communication ------------------------------------------------------

    def receive(self, messages) -> None:
        for m in messages:
            if m.agent_id == self.id:
                continue
            prev = self.neighbours.get(m.agent_id)
            if prev is None or m.stamp >= prev.stamp:
                self.neighbours[m.agent_id] = m

    def message(self, t: float) -> Message:
        kin = self.kinematics
        claims = (self.claim,) if self.claim is not None else ()
        return Message(self.id, tuple(map(float, kin.position)), tuple(map(float, kin.velocity)),
                       claims, t, self.fsm.mode is Mode.SERVO)

    def _claimed_by_others(self, xy) -> bool:
        if not self.cfg.claims_enabled:
            return False
        for m in self.neighbours.values():
            for cx, cy, _ in m.claims:
                if math.hypot(xy[0] - cx, xy[1] - cy) <= self.cfg.claim_radius:
                    return True
        return False

    # -- mission ------------------------------------------------------------

    def _candidates(self, kin: AgentKinematics) -> list:
        dz = self.cfg.drop_zone
        out = []
        for tr in self.tracker.confirmed():
            xy = tr.position[:2]
            if not self.cfg.region.contains(xy, self.cfg.region_margin)[0]:
                continue
            if math.hypot(xy[0] - dz[0], xy[1] - dz[1]) <= self.cfg.drop_radius + 0.5:
                continue
            if self._claimed_by_others(xy):
                continue
            out.append(tr)
        if self.cfg.pick_rule == "oldest":
            out.sort(key=lambda tr: tr.id)
        else:
            out.sort(key=lambda tr: (float(np.linalg.norm(tr.position[:2] - kin.position[:2])), tr.id))
        return out

    def _goto(self, kin: AgentKinematics, target, speed: float) -> ReferencePoint:
        target = np.asarray(target, dtype=float)
        diff = target - kin.position
        dist = float(np.linalg.norm(diff))
        lead = 0.5
        if dist <= lead or dist < 1e-9:
            return ReferencePoint.hold(target)
        u = diff / dist
        return ReferencePoint(kin.position + lead * u, speed * u)

    def _start_servo(self, tr, t, events) -> FsmState:
        self.servo_started = t
        if self.cfg.claims_enabled:
            self.claim = (float(tr.position[0]), float(tr.position[1]), tr.color)
            events.append(("claim", tr.id, self.claim[0], self.claim[1]))
        return FsmState(Mode.SERVO, self.fsm.cursor, tr.id, ServoPhase.CONE_DESCENT, False)

    def _end_servo(self) -> None:
        self.claim = None
        self.servo_started = None

    def fsm_step(self, kin: AgentKinematics, t: float, events: list):
        """Advance the mission state machine; returns ``(reference, epm, remagnetize)``."""
        cfg, s = self.cfg, self.fsm
        alt = float(cfg.plan.waypoints[0][2])
        epm, remag = self.gripper.epm_on, False
        low_battery = self.battery.voltage < self.battery.threshold
        if low_battery and s.mode not in (Mode.DELIVER, Mode.LAND, Mode.GROUNDED):
            events.append(("land", "battery", round(self.battery.voltage, 6)))
            self._end_servo()
            s = FsmState(Mode.LAND, s.cursor)
            epm = False

        if s.mode is Mode.TAKE_OFF:
            target = np.array([cfg.start[0], cfg.start[1], alt])
            if abs(kin.position[2] - alt) < 0.3:
                s = FsmState(Mode.EXPLORE, 0)
            ref = self._goto(kin, target, cfg.cruise_speed)

        if s.mode is Mode.EXPLORE:
            cands = self._candidates(kin)
            if cands:
                s = self._start_servo(cands[0], t, events)
            else:
                wps = cfg.plan.waypoints
                cursor = s.cursor % len(wps)
                if np.linalg.norm(kin.position - wps[cursor]) <= cfg.waypoint_tolerance:
                    cursor = (cursor + 1) % len(wps)
                s = replace(s, cursor=cursor)
                ref = self._goto(kin, wps[cursor], cfg.cruise_speed)

        if s.mode is Mode.SERVO:
            tr = self.tracker.get(s.track_id)
            if tr is None:
                # lost target: re-acquire a nearby confirmed track or resume search
                repl = None
                if self.claim is not None:
                    for c in self.tracker.confirmed():
                        if c.color == self.claim[2] and math.hypot(
                                c.position[0] - self.claim[0], c.position[1] - self.claim[1]) < 1.5:
                            repl = c
                            break
                if repl is not None and s.phase is not ServoPhase.GRASPED:
                    events.append(("track_lost", s.track_id, repl.id))
                    s = FsmState(Mode.SERVO, s.cursor, repl.id, ServoPhase.CONE_DESCENT, False)
                    tr = repl
                    epm = False
                elif s.phase is not ServoPhase.GRASPED:
                    events.append(("track_lost", s.track_id, -1))
                    self._end_servo()
                    s = FsmState(Mode.RETURN, s.cursor)
                    epm = False
            if s.mode is Mode.SERVO and s.phase is ServoPhase.GRASPED:
                s = FsmState(Mode.DELIVER, s.cursor)
            elif s.mode is Mode.SERVO:
                if self.claim is not None:
                    self.claim = (float(tr.position[0]), float(tr.position[1]), tr.color)
                phase = s.phase
                if phase is ServoPhase.CONE_DESCENT:
                    if kin.position[2] <= tr.position[2] + cfg.servo.ball_height + 0.3:
                        phase = ServoPhase.CENTER_BALL
                if (phase is ServoPhase.CENTER_BALL and cfg.engage_magnet
                        and check_ball(kin, tr, cfg.servo)):
                    phase = ServoPhase.MAGNET_APPROACH
                    s = replace(s, ball_reached=True)
                    epm, remag = True, True
                    events.append(("magnet_on", tr.id))
                if phase is ServoPhase.MAGNET_APPROACH:
                    off = math.hypot(kin.position[0] - tr.position[0], kin.position[1] - tr.position[1])
                    if off > cfg.servo.abort_offset:
                        events.append(("approach_abort", tr.id, round(off, 6)))
                        phase = ServoPhase.CENTER_BALL
                        epm = False
                    elif self.gripper.since_pulse + 1e-9 >= cfg.servo.remagnetize_period:
                        remag = True
                s = replace(s, phase=phase)
                ref = servo_reference(tr, kin, cfg.servo, phase)

        if s.mode is Mode.DELIVER:
            epm = True
            target = np.array([cfg.drop_zone[0], cfg.drop_zone[1], cfg.deliver_altitude])
            horiz = math.hypot(kin.position[0] - target[0], kin.position[1] - target[1])
            if horiz <= 0.5 * cfg.drop_radius and np.linalg.norm(kin.velocity) < 0.5:
                epm = False
                s = FsmState(Mode.RETURN, s.cursor)
            else:
                ref = self._goto(kin, target, cfg.cruise_speed)

        if s.mode is Mode.RETURN:
            wp = cfg.plan.waypoints[s.cursor % len(cfg.plan.waypoints)]
            if abs(kin.position[2] - alt) < 0.5:
                s = FsmState(Mode.EXPLORE, s.cursor)
            target = np.array([kin.position[0], kin.position[1], alt]) if kin.position[2] < alt - 0.5 else wp
            ref = self._goto(kin, target, cfg.cruise_speed)

        if s.mode is Mode.LAND:
            epm = False
            ref = ReferencePoint(np.array([kin.position[0], kin.position[1], max(kin.position[2] - 0.25, 0.0)]),
                                 np.array([0.0, 0.0, -0.5]))
            if kin.position[2] < 0.1 and abs(kin.velocity[2]) < 0.3:
                s = FsmState(Mode.GROUNDED, s.cursor)
                events.append(("landed",))

        if s.mode is Mode.GROUNDED:
            epm = False
            ref = None

        if s.label != self.fsm.label:
            events.append(("fsm", self.fsm.label, s.label))
        self.fsm = s
        return ref, epm, remag

    # -- main step ----------------------------------------------------------

    def step(self, inp: Inputs, inbox=()) -> Output:
        events: list = []
        self.receive(inbox)
        self._estimate(inp)
        self._perceive(inp, events)
        kin = self.kinematics
        if self.filter is None or self.fsm.mode is Mode.GROUNDED:
            self.battery = battery_step(self.battery, inp.dt, 0.0)
            g, gev = gripper_update(self.gripper, False, inp.ferrous[0], False, inp.dt, self.rng,
                                    self.cfg.gripper, inp.ferrous[1])
            self.gripper = g
            events.extend(gev)
            return Output(np.zeros(3), None, self.message(inp.t) if self.filter else None,
                          events, g)
        if inp.accel is not None:
            control.estimate_disturbance(self.observer, inp.accel, self.last_cmd, inp.dt)

        ref, epm, remag = self.fsm_step(kin, inp.t, events)

        g, gev = gripper_update(self.gripper, epm, inp.ferrous[0], remag, inp.dt, self.rng,
                                self.cfg.gripper, inp.ferrous[1])
        events.extend(gev)
        for ev in gev:
            if ev[0] == "grasp" and self.fsm.mode is Mode.SERVO:
                tr = self.tracker.get(self.fsm.track_id)
                self.fsm = replace(self.fsm, phase=ServoPhase.GRASPED)
                events.append(("fsm", "Servo/MagnetApproach", "Servo/Grasped"))
                self._end_servo()
                if tr is not None:
                    events.append(("grasp_track", tr.id, *map(float, tr.position[:2]),
                                   *map(float, kin.position[:2])))
            elif ev[0] == "grasp_failed" and self.fsm.mode is Mode.SERVO:
                self.fsm = replace(self.fsm, phase=ServoPhase.CENTER_BALL)
                epm = False
                g = replace(g, epm_on=False, flux=self.cfg.gripper.base)
        self.gripper = g

        if ref is None:  # touched down this step
            self.last_cmd = np.zeros(3)
            self.battery = battery_step(self.battery, inp.dt, 0.0)
            return Output(np.zeros(3), None, self.message(inp.t), events, g)
        a = control.track_reference(kin, ref, self.observer.estimate, self.cfg.gains)
        hovering = False
        own_pri = control.priority_key(self.fsm.mode is Mode.SERVO, self.id)
        obstacles = [ObstacleState(m.agent_id, np.array(m.position), np.array(m.velocity), m.stamp,
                                   control.priority_key(m.servoing, m.agent_id))
                     for _, m in sorted(self.neighbours.items())]
        try:
            a = control.avoid(a, kin, obstacles, self.cfg.avoidance, inp.t, inp.dt, own_pri,
                              self.nav_margin())
        except control.StaleObstacle:
            hovering = True
            a = control.clamp_norm(-self.cfg.gains.kv * kin.velocity - self.observer.estimate,
                                   self.cfg.gains.a_max)
        self.last_cmd = a
        load = 1.2 if g.attached is not None else 1.0
        self.battery = battery_step(self.battery, inp.dt, load)
        return Output(a, ref, self.message(inp.t), events, g, hovering)
