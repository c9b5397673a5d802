import math

import numpy as np
import pytest

from mavpick import agent as agent_mod
from mavpick.agent import (Agent, AgentConfig, Battery, FsmState, GripperParams, GripperState,
                           Mode, ServoParams, ServoPhase, battery_step, check_ball, flux_reading,
                           gripper_update, servo_reference)
from mavpick.control import AgentKinematics
from mavpick.coverage import ConvexRegion, SweepParams, plan_sweep
from mavpick.estimation import GpsFix, init_filter
from mavpick.geometry import CameraIntrinsics
from mavpick.sim import Simulation, load
from mavpick.tracking import Track


def track(xy, v=(0.0, 0.0), tid=0, color="red"):
    return Track(tid, np.array([xy[0], xy[1], 0.0, v[0], v[1]]), np.eye(5) * 0.01, color,
                 hits=5, confirmed=True)


def make_agent(position=(5.0, 2.0, 5.0)):
    region = ConvexRegion.rectangle(0, 0, 12, 12)
    cam = CameraIntrinsics.centered(250.0, 320, 240)
    plan = plan_sweep(region, SweepParams(5.0, cam.fov(), 0.2), start=(0, 0))
    cfg = AgentConfig(0, (0.0, 0.0, 0.0), region, plan, (30.0, 30.0), 1.5, cam)
    a = Agent(cfg)
    a.filter = init_filter(GpsFix(0.0, np.array(position), 0.1))
    return a


# ------------------------------------------------------------------ servo / ball


def test_servo_reference_examples():
    p = ServoParams(cone_half_angle=math.radians(30))
    above = servo_reference(track((1, 1)), AgentKinematics.at((1, 1, 5)), p)
    assert above.position[2] < 5.0
    blocked = servo_reference(track((0, 0)), AgentKinematics.at((3, 0, 2)), p)
    assert 3.0 > math.tan(p.cone_half_angle) * 2.0  # offset outside the 1.15 m cone
    assert blocked.position[2] >= 2.0
    assert np.allclose(blocked.position[:2], (0, 0))
    moving = servo_reference(track((0, 0), v=(0.278, 0)), AgentKinematics.at((0, 0, 4)), p)
    assert moving.velocity[0] == pytest.approx(0.278)


def test_servo_reference_cone_inequality_grid():
    p = ServoParams()
    tan = math.tan(p.cone_half_angle)
    for off in np.linspace(0, 5, 26):
        for z in np.linspace(0.3, 8, 32):
            for phase in (ServoPhase.CONE_DESCENT, ServoPhase.CENTER_BALL):
                ref = servo_reference(track((0, 0)), AgentKinematics.at((off, 0, z)), p, phase)
                if ref.position[2] < z - 1e-12:
                    assert off <= tan * z + 1e-9


def test_magnet_approach_descends():
    p = ServoParams()
    ref = servo_reference(track((0, 0)), AgentKinematics.at((0, 0, 1.2)), p,
                          ServoPhase.MAGNET_APPROACH)
    assert ref.position[2] < 1.2 and ref.velocity[2] == pytest.approx(-p.approach_speed)


def test_check_ball():
    p = ServoParams()
    tr = track((2, 3))
    centre = (2, 3, p.ball_height)
    assert check_ball(AgentKinematics.at(centre), tr, p)
    assert not check_ball(AgentKinematics.at(centre, (2, 0, 0)), tr, p)
    assert not check_ball(AgentKinematics.at((2 + p.ball_radius + 0.01, 3, p.ball_height)), tr, p)
    # velocity is judged relative to the object
    assert check_ball(AgentKinematics.at(centre, (0.5, 0, 0)), track((2, 3), v=(0.5, 0)), p)


def test_servo_params_validation():
    with pytest.raises(ValueError):
        ServoParams(cone_half_angle=math.pi / 2)
    with pytest.raises(ValueError):
        ServoParams(ball_radius=0.0)


# ------------------------------------------------------------------ gripper / battery


def test_flux_examples():
    p = GripperParams()
    off = GripperState(epm_on=False)
    assert all(flux_reading(off, d, p) == p.base for d in (0.0, 0.01, 1.0))
    on = GripperState(epm_on=True)
    assert flux_reading(on, 1e6, p) == pytest.approx(p.base, abs=1e-12)
    assert flux_reading(on, 0.05, p) == pytest.approx(p.base + 0.5 * p.amplitude)


def test_gripper_scripted_descent():
    p = GripperParams(p_grasp=1.0)
    rng = np.random.default_rng(0)
    g = GripperState(flux=p.base)
    dt, speed = 0.02, 0.2
    events = []
    n = int(round(1.0 / speed / dt))
    for k in range(n + 25):
        d = max(0.0, 1.0 - speed * dt * k)
        remag = k % int(1.0 / dt) == 0
        g, ev = gripper_update(g, True, d, remag, dt, rng, p, object_id=7)
        events += ev
        assert g.attached is None or g.epm_on
    kinds = [e[0] for e in events]
    assert kinds.count("contact") == 1 and ("grasp", 7) in events
    assert g.attached == 7
    g, ev = gripper_update(g, False, 0.0, False, dt, rng, p)
    assert ev == [("release", 7)] and g.attached is None and g.flux == p.base


def test_gripper_failure_probability():
    p = GripperParams(p_grasp=0.0)
    rng = np.random.default_rng(1)
    g = GripperState(epm_on=True, flux=p.base)
    g, ev = gripper_update(g, True, 0.0, False, 0.02, rng, p, object_id=3)
    assert ("grasp_failed", 3) in ev and g.attached is None
    with pytest.raises(ValueError):
        gripper_update(g, True, 0.0, False, 0.0, rng, p)


def test_battery_examples():
    b = Battery()
    assert battery_step(b, 0.0).voltage == b.voltage
    assert battery_step(Battery(rate=0.01), 100.0, 1.0).voltage == pytest.approx(b.voltage - 1.0)
    assert battery_step(b, 1.0, -3.0).voltage == b.voltage  # never charges


# ------------------------------------------------------------------ FSM


def test_explore_follows_plan():
    a = make_agent()
    a.fsm = FsmState(Mode.EXPLORE, 2)
    kin = a.kinematics
    ref, _, _ = a.fsm_step(kin, 1.0, [])
    wp = a.cfg.plan.waypoints[2]
    assert a.fsm.mode is Mode.EXPLORE and a.fsm.cursor == 2
    u = (wp - kin.position) / np.linalg.norm(wp - kin.position)
    assert np.allclose(ref.velocity / np.linalg.norm(ref.velocity), u)


def test_waypoint_advance():
    wp = None
    a = make_agent()
    wp = a.cfg.plan.waypoints[1]
    a.filter = init_filter(GpsFix(0.0, wp + [0.2, 0.0, 0.0], 0.1))
    a.fsm = FsmState(Mode.EXPLORE, 1)
    a.fsm_step(a.kinematics, 1.0, [])
    assert a.fsm.cursor == 2


def test_low_battery_in_deliver_keeps_delivering():
    a = make_agent()
    a.battery = Battery(voltage=13.0)
    a.fsm = FsmState(Mode.DELIVER, 3)
    a.fsm_step(a.kinematics, 1.0, [])
    assert a.fsm.mode is Mode.DELIVER
    a.fsm = FsmState(Mode.EXPLORE, 3)
    events = []
    a.fsm_step(a.kinematics, 1.0, events)
    assert a.fsm.mode is Mode.LAND and events[0][0] == "land"


def test_confirmed_track_starts_servo_in_one_step():
    a = make_agent((5.0, 2.0, 5.0))
    a.fsm = FsmState(Mode.EXPLORE, 0)
    a.tracker.tracks = [track((8.0, 2.0))]
    events = []
    a.fsm_step(a.kinematics, 1.0, events)
    assert a.fsm.label == "Servo/ConeDescent" and a.fsm.track_id == 0
    assert ("claim", 0, 8.0, 2.0) in events


def test_claimed_and_foreign_tracks_ignored():
    from mavpick.agent import Message
    a = make_agent()
    a.fsm = FsmState(Mode.EXPLORE, 0)
    a.tracker.tracks = [track((8.0, 2.0)), track((30.0, 2.0), tid=1)]
    a.receive([Message(1, (0, 0, 5), (0, 0, 0), ((8.1, 2.0, "red"),), 0.9)])
    a.fsm_step(a.kinematics, 1.0, [])
    assert a.fsm.mode is Mode.EXPLORE


@pytest.mark.parametrize("replacement", [False, True])
def test_track_loss_regression(replacement):
    a = make_agent((8.0, 2.0, 2.0))
    a.fsm = FsmState(Mode.EXPLORE, 0)
    a.tracker.tracks = [track((8.0, 2.0))]
    a.fsm_step(a.kinematics, 1.0, [])
    a.fsm = FsmState(Mode.SERVO, 0, 0, ServoPhase.MAGNET_APPROACH, True)
    a.tracker.tracks = [track((8.1, 2.0), tid=4)] if replacement else []
    ref, epm, _ = a.fsm_step(a.kinematics, 1.1, [])
    if replacement:
        assert a.fsm.label == "Servo/ConeDescent" and a.fsm.track_id == 4
    else:
        assert a.fsm.mode is Mode.RETURN
    assert not epm and ref is not None


# ------------------------------------------------------------------ closed loop


def instrumented_run(monkeypatch, scenario, seed=0, **overrides):
    """Step a scenario and check per-tick invariants; returns the simulation."""
    cone_violations = []
    real = agent_mod.servo_reference

    def spy(tr, kin, params=ServoParams(), phase=ServoPhase.CONE_DESCENT):
        ref = real(tr, kin, params, phase)
        if phase in (ServoPhase.CONE_DESCENT, ServoPhase.CENTER_BALL) and \
                ref.position[2] < kin.position[2] - 1e-12:
            off = math.hypot(kin.position[0] - tr.position[0], kin.position[1] - tr.position[1])
            if off > math.tan(params.cone_half_angle) * (kin.position[2] - tr.position[2]) + 1e-9:
                cone_violations.append((kin.position.copy(), tr.position.copy()))
        return ref

    monkeypatch.setattr(agent_mod, "servo_reference", spy)
    cfg = load(scenario, seed)
    cfg.data.update(overrides)
    sim = Simulation(cfg)
    volts = {s.agent.id: s.agent.battery.voltage for s in sim.slots}
    n = int(round(cfg["duration"] / sim.dt))
    while sim.tick < n and not sim.finished():
        sim.step()
        for s in sim.slots:
            a = s.agent
            assert a.battery.voltage <= volts[a.id]
            volts[a.id] = a.battery.voltage
            if a.gripper.epm_on:
                assert a.fsm.mode is Mode.DELIVER or (a.fsm.mode is Mode.SERVO and a.fsm.ball_reached)
            if a.fsm.mode is Mode.SERVO:
                assert a.tracker.get(a.fsm.track_id) is not None
    assert not cone_violations
    return sim


def test_static_pickup_invariants_and_liveness(monkeypatch):
    sim = instrumented_run(monkeypatch, "static-pickup")
    m = sim.metrics()
    assert m["objects_delivered"] == 1 and m["sim_time"] <= 120.0


def test_moving_pickup_invariants(monkeypatch):
    sim = instrumented_run(monkeypatch, "moving-pickup", seed=3)
    assert sim.metrics()["objects_delivered"] == 1


@pytest.mark.slow
def test_mission_lands_on_battery_before_empty(monkeypatch):
    sim = instrumented_run(monkeypatch, "static-pickup", end_on_delivery=False, duration=600.0)
    a = sim.slots[0].agent
    assert a.fsm.mode is Mode.GROUNDED
    assert 0.0 < a.battery.voltage < a.battery.threshold
    assert sim.metrics()["objects_delivered"] == 1
