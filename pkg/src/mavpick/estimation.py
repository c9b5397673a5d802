"""Fusion of drifting odometry with absolute position fixes.

The filter state is ``[position (3), odometry drift rate (3)]``. Odometry is
integrated as ``position += delta - drift * dt``; fixes correct position and,
through the cross-covariance, the drift.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class InvalidFix(ValueError):
    pass


class NonMonotoneTime(ValueError):
    pass


class EmptyOverlap(ValueError):
    pass


@dataclass(frozen=True)
class OdomReading:
    stamp: float
    delta: np.ndarray  # world-frame displacement since the previous reading
    velocity: np.ndarray
    sigma: float  # std of ``delta`` (m)


@dataclass(frozen=True)
class GpsFix:
    stamp: float
    position: np.ndarray
    sigma: float
    valid: bool = True


@dataclass(frozen=True)
class SensorModel:
    """Noise model for both sensors. Rates in Hz, densities per sqrt(second)."""

    odom_rate: float = 50.0
    odom_density: float = 0.02  # m / sqrt(s): white displacement noise
    vel_sigma: float = 0.03  # m/s on the velocity reading
    bias_walk: float = 4e-3  # m/s / sqrt(s)
    bias0: tuple = (0.0, 0.0, 0.0)  # m/s
    gps_rate: float = 5.0
    gps_sigma: float = 0.3  # m, horizontal
    gps_sigma_z: float = 0.3  # m
    dropouts: tuple = ()  # ((t0, t1), ...) with no fixes
    latency: float = 0.0  # s, fixes stamped this late

    def __post_init__(self):
        if not (self.odom_rate > 0 and self.gps_rate > 0):
            raise ValueError("sensor rates must be positive")

    def odom_sigma(self, dt: float) -> float:
        return self.odom_density * math.sqrt(dt)


@dataclass(frozen=True)
class FusionParams:
    odom_density: float = 0.02
    bias_walk: float = 4e-3
    gps_sigma: float = 0.3
    init_bias_sigma: float = 0.05


@dataclass(frozen=True)
class FusionFilter:
    stamp: float
    x: np.ndarray  # (6,)
    P: np.ndarray  # (6, 6)
    heading: float = 0.0
    params: FusionParams = field(default_factory=FusionParams)

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def bias(self) -> np.ndarray:
        return self.x[3:]


def init_filter(fix: GpsFix, heading: float = 0.0, params: FusionParams = FusionParams()
                ) -> FusionFilter:
    if not fix.valid:
        raise InvalidFix("cannot initialise from an invalid fix")
    x = np.concatenate([np.asarray(fix.position, dtype=float), np.zeros(3)])
    P = np.diag([fix.sigma ** 2] * 3 + [params.init_bias_sigma ** 2] * 3)
    return FusionFilter(float(fix.stamp), x, P, float(heading), params)


def propagate(f: FusionFilter, odom: OdomReading) -> FusionFilter:
    dt = float(odom.stamp) - f.stamp
    if dt < 0:
        raise NonMonotoneTime(f"odometry stamp {odom.stamp} precedes filter time {f.stamp}")
    F = np.eye(6)
    F[:3, 3:] = -dt * np.eye(3)
    x = f.x.copy()
    x[:3] = x[:3] + np.asarray(odom.delta, dtype=float) - x[3:] * dt
    Q = np.zeros((6, 6))
    Q[:3, :3] = odom.sigma ** 2 * np.eye(3)
    Q[3:, 3:] = f.params.bias_walk ** 2 * dt * np.eye(3)
    P = F @ f.P @ F.T + Q
    return FusionFilter(float(odom.stamp), x, 0.5 * (P + P.T), f.heading, f.params)


def correct(f: FusionFilter, fix: GpsFix) -> FusionFilter:
    if not fix.valid:
        raise InvalidFix("fix flagged invalid")
    H = np.hstack([np.eye(3), np.zeros((3, 3))])
    R = fix.sigma ** 2 * np.eye(3)
    S = H @ f.P @ H.T + R
    K = np.linalg.solve(S, H @ f.P).T
    x = f.x + K @ (np.asarray(fix.position, dtype=float) - f.x[:3])
    IKH = np.eye(6) - K @ H
    P = IKH @ f.P @ IKH.T + K @ R @ K.T
    return FusionFilter(f.stamp, x, 0.5 * (P + P.T), f.heading, f.params)


class SensorSimulator:
    """Online odometry/GPS generator driven by the true trajectory."""

    def __init__(self, model: SensorModel, rng: np.random.Generator, t0: float = 0.0):
        self.model = model
        self.rng = rng
        self.bias = np.asarray(model.bias0, dtype=float).copy()
        self.last_gps = -math.inf
        self.t0 = t0
        self._gps_index = 0

    def odom(self, t: float, dt: float, true_delta, true_velocity) -> OdomReading:
        m = self.model
        sigma = m.odom_sigma(dt)
        self.bias = self.bias + self.rng.normal(0.0, m.bias_walk * math.sqrt(dt), 3)
        delta = (np.asarray(true_delta, dtype=float) + self.bias * dt
                 + self.rng.normal(0.0, sigma, 3))
        vel = np.asarray(true_velocity, dtype=float) + self.bias + self.rng.normal(0.0, m.vel_sigma, 3)
        return OdomReading(t, delta, vel, sigma)

    def gps_due(self, t: float) -> bool:
        """True once per GPS period; periods are counted from ``t0``."""
        period = 1.0 / self.model.gps_rate
        k = math.floor((t - self.t0) / period + 1e-9)
        if k >= self._gps_index:
            self._gps_index = k + 1
            return True
        return False

    def gps(self, t: float, true_position) -> GpsFix | None:
        m = self.model
        noise = self.rng.normal(0.0, 1.0, 3) * np.array([m.gps_sigma, m.gps_sigma, m.gps_sigma_z])
        if any(a <= t < b for a, b in m.dropouts):
            return None
        return GpsFix(t + m.latency, np.asarray(true_position, dtype=float) + noise, m.gps_sigma)


def simulate_sensors(stamps, positions, model: SensorModel = SensorModel(), seed: int = 0):
    """Odometry and GPS streams along a sampled true trajectory.

    ``positions`` is sampled at ``stamps``; odometry is emitted at every stamp
    after the first (the trajectory should be sampled at the odometry rate)
    and fixes whenever a GPS period elapses.
    """
    stamps = np.asarray(stamps, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if len(stamps) < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    sim = SensorSimulator(model, rng, t0=float(stamps[0]))
    odom, fixes = [], []
    if sim.gps_due(stamps[0]):
        fx = sim.gps(float(stamps[0]), positions[0])
        if fx is not None:
            fixes.append(fx)
    for i in range(1, len(stamps)):
        dt = stamps[i] - stamps[i - 1]
        delta = positions[i] - positions[i - 1]
        odom.append(sim.odom(float(stamps[i]), dt, delta, delta / dt))
        if sim.gps_due(stamps[i]):
            fx = sim.gps(float(stamps[i]), positions[i])
            if fx is not None:
                fixes.append(fx)
    return odom, fixes


def run_fusion(odom, fixes, params: FusionParams, heading: float = 0.0):
    """Filter a recorded stream; returns ``(stamps, positions)`` after each odometry step."""
    if not fixes:
        raise InvalidFix("need at least one fix to initialise")
    f = init_filter(fixes[0], heading, params)
    fi = 1
    out_t, out_p = [], []
    for o in odom:
        if o.stamp < f.stamp:
            continue
        f = propagate(f, o)
        while fi < len(fixes) and fixes[fi].stamp <= o.stamp + 1e-12:
            f = correct(f, fixes[fi])
            fi += 1
        out_t.append(f.stamp)
        out_p.append(f.position.copy())
    return np.array(out_t), np.array(out_p)


def dead_reckon(odom, start, t0: float):
    t = [t0]
    p = [np.asarray(start, dtype=float)]
    for o in odom:
        t.append(o.stamp)
        p.append(p[-1] + o.delta)
    return np.array(t), np.array(p)


def _interp(t_src, p_src, t_query):
    return np.stack([np.interp(t_query, t_src, p_src[:, i]) for i in range(3)], axis=1)


def rmse_aligned(est_t, est_p, truth_t, truth_p, max_offset: float = 1.0,
                 offset_step: float = 0.01) -> float:
    """RMSE after the best time offset and horizontal translation.

    Offsets are searched on a grid over ``[-max_offset, max_offset]``; for each
    the optimal x-y translation is the mean x-y error. Only estimate samples
    whose shifted stamp lies inside the truth span count.
    """
    est_t = np.asarray(est_t, dtype=float)
    est_p = np.asarray(est_p, dtype=float)
    truth_t = np.asarray(truth_t, dtype=float)
    truth_p = np.asarray(truth_p, dtype=float)
    if len(est_t) == 0 or len(truth_t) == 0:
        raise EmptyOverlap("empty trajectory")
    n_off = int(round(max_offset / offset_step)) if offset_step > 0 else 0
    best = math.inf
    for k in range(-n_off, n_off + 1):
        off = k * offset_step
        tq = est_t + off
        sel = (tq >= truth_t[0]) & (tq <= truth_t[-1])
        if sel.sum() == 0:
            continue
        err = est_p[sel] - _interp(truth_t, truth_p, tq[sel])
        err[:, :2] -= err[:, :2].mean(axis=0)
        rmse = math.sqrt(float(np.mean(np.sum(err ** 2, axis=1))))
        best = min(best, rmse)
    if not math.isfinite(best):
        raise EmptyOverlap("trajectories do not overlap in time")
    return best


def square_trajectory(side: float = 22.5, speed: float = 1.0, rate: float = 50.0,
                      altitude: float = 5.0):
    """Closed square loop (4 * side metres) flown at constant speed."""
    corners = np.array([[0, 0], [side, 0], [side, side], [0, side], [0, 0]], dtype=float)
    total = 4 * side / speed
    t = np.arange(0.0, total + 1e-9, 1.0 / rate)
    s = t * speed
    seg = np.minimum((s // side).astype(int), 3)
    frac = (s - seg * side) / side
    xy = corners[seg] + frac[:, None] * (corners[seg + 1] - corners[seg])
    pos = np.column_stack([xy, np.full(len(t), altitude)])
    return t, pos


def write_trajectory_csv(path, stamps, positions) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stamp", "x", "y", "z"])
        for t, p in zip(stamps, positions):
            w.writerow([f"{t:.6f}", f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"])


def read_trajectory_csv(path):
    t, p = [], []
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        for row in r:
            t.append(float(row["stamp"]))
            p.append([float(row["x"]), float(row["y"]), float(row["z"])])
    return np.array(t), np.array(p)
