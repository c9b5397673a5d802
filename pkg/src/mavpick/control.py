"""Position control, disturbance observer and reactive collision avoidance.

All accelerations are in the world frame (m/s^2). Agents are point masses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class StaleObstacle(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentKinematics:
    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def at(cls, position, velocity=(0.0, 0.0, 0.0)) -> "AgentKinematics":
        return cls(np.asarray(position, dtype=float), np.asarray(velocity, dtype=float))


@dataclass(frozen=True)
class ReferencePoint:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def hold(cls, position) -> "ReferencePoint":
        return cls(np.asarray(position, dtype=float), np.zeros(3))


@dataclass(frozen=True)
class ObstacleState:
    agent_id: int
    position: np.ndarray
    velocity: np.ndarray
    stamp: float
    priority: tuple = (1, 0)  # smaller wins; see priority_key

    def predicted(self, t: float) -> np.ndarray:
        return self.position + self.velocity * max(0.0, t - self.stamp)


def priority_key(servoing: bool, agent_id: int) -> tuple:
    """Servoing agents outrank the rest; lower id breaks ties."""
    return (0 if servoing else 1, int(agent_id))


@dataclass(frozen=True)
class ControlGains:
    kp: float = 4.0
    kv: float = 4.0
    a_max: float = 4.0


@dataclass(frozen=True)
class AvoidanceParams:
    d_min: float = 1.0
    d_soft: float = 2.5
    k_rep: float = 10.0
    v_max: float = 3.0
    a_max: float = 4.0
    staleness: float = 0.5
    # fraction of a_max budgeted for braking in the hard constraint
    brake_fraction: float = 0.5
    # radius factor applied to lower-priority neighbours (last-resort only)
    yield_factor: float = 0.5

    def __post_init__(self):
        if not 0 < self.d_min < self.d_soft:
            raise ValueError("need 0 < d_min < d_soft")
        if not (self.k_rep > 0 and self.v_max > 0 and self.a_max > 0):
            raise ValueError("avoidance gains must be positive")


@dataclass
class DisturbanceObserver:
    beta: float = 1.0
    cap: float = 2.0
    estimate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    enabled: bool = True


def clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n > limit > 0:
        return v * (limit / n)
    return v


def track_reference(state: AgentKinematics, ref: ReferencePoint, dist,
                    gains: ControlGains = ControlGains()) -> np.ndarray:
    a = (gains.kp * (ref.position - state.position)
         + gains.kv * (ref.velocity - state.velocity)
         - np.asarray(dist, dtype=float))
    return clamp_norm(a, gains.a_max)


def estimate_disturbance(observer: DisturbanceObserver, measured, commanded, dt: float
                         ) -> np.ndarray:
    """First-order low-pass of the unexplained acceleration, clamped to ``cap``.

    Updates ``observer.estimate`` in place and returns it.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not observer.enabled:
        return observer.estimate
    resid = np.asarray(measured, dtype=float) - np.asarray(commanded, dtype=float)
    d = observer.estimate + observer.beta * dt * (resid - observer.estimate)
    observer.estimate = clamp_norm(d, observer.cap)
    return observer.estimate


def _clamp_keep_normal(a: np.ndarray, n: np.ndarray, limit: float) -> np.ndarray:
    """Clamp ``|a|`` to ``limit`` shrinking the component orthogonal to ``n`` first."""
    if np.linalg.norm(a) <= limit:
        return a
    an = float(a @ n)
    if abs(an) >= limit:
        return math.copysign(limit, an) * n
    at = a - an * n
    nt = float(np.linalg.norm(at))
    keep = math.sqrt(limit * limit - an * an)
    return an * n + (at * (keep / nt) if nt > 0 else 0.0)


def avoid(desired, state: AgentKinematics, obstacles, params: AvoidanceParams = AvoidanceParams(),
          now: float | None = None, dt: float = 0.02, own_priority: tuple = (1, 0),
          margin: float = 0.0) -> np.ndarray:
    """Shape ``desired`` acceleration so that neighbours stay beyond ``d_min``.

    Soft layer: repulsion ``k_rep (1/d - 1/d_soft)`` away from every neighbour
    closer than ``d_soft``. Hard layer: the closing speed towards a neighbour is
    limited to what can still be braked within ``d - d_min`` (using
    ``brake_fraction * a_max``); inside ``d_min`` the command is full escape.
    Neighbours of lower priority are skipped by the soft layer and only guarded
    at ``yield_factor * d_min``. ``margin`` (e.g. position uncertainty) is added
    to both radii.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    a = np.asarray(desired, dtype=float).copy()
    obstacles = list(obstacles)
    d_soft = params.d_soft + margin
    if not obstacles:
        return a
    if now is not None:
        for ob in obstacles:
            if now - ob.stamp > params.staleness:
                raise StaleObstacle(f"state of agent {ob.agent_id} is {now - ob.stamp:.3f} s old")
    t = now if now is not None else max(ob.stamp for ob in obstacles)
    p, v = state.position, state.velocity
    near = []
    for ob in obstacles:
        r = p - ob.predicted(t)
        d = float(np.linalg.norm(r))
        if d >= d_soft:
            continue
        n = r / d if d > 1e-9 else np.array([1.0, 0.0, 0.0])
        yields = ob.priority > own_priority  # neighbour ranks below us
        near.append((d, n, ob, yields))
        if not yields:
            a = a + params.k_rep * (1.0 / max(d - margin, 1e-3) - 1.0 / params.d_soft) * n
    if not near:
        return a
    a_brk = params.brake_fraction * params.a_max
    binding = None
    for d, n, ob, yields in sorted(near, key=lambda x: x[0]):
        d_min = params.d_min * (params.yield_factor if yields else 1.0) + margin
        closing = -float((v - ob.velocity) @ n)
        if d <= d_min:
            lb = params.a_max
        else:
            v_allow = math.sqrt(2.0 * a_brk * (d - d_min))
            lb = (closing - v_allow) / dt
            if lb <= -params.a_max:
                continue
        an = float(a @ n)
        if an < lb:
            a = a + (lb - an) * n
        if binding is None:
            binding = n
    if binding is None:
        return clamp_norm(a, params.a_max)
    return _clamp_keep_normal(a, binding, params.a_max)


def step_dynamics(state: AgentKinematics, accel, wind, dt: float, drag: float = 0.3,
                  v_max: float = 3.0, ground_z: float | None = 0.0) -> AgentKinematics:
    """Semi-implicit Euler step of a double integrator with linear drag."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = state.velocity + (np.asarray(accel, dtype=float) + np.asarray(wind, dtype=float)
                          - drag * state.velocity) * dt
    v = clamp_norm(v, v_max)
    p = state.position + v * dt
    if ground_z is not None and p[2] < ground_z:
        p = p.copy()
        p[2] = ground_z
        v = v.copy()
        v[2] = max(v[2], 0.0)
    return AgentKinematics(p, v)
