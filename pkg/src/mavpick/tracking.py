"""Constant-velocity Kalman tracking of 3D detections with Hungarian association.

State is ``[x, y, z, vx, vy]``: horizontal constant velocity, height as a
random walk (objects move on the ground).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

GATE_SENTINEL = 1e12


@dataclass(frozen=True)
class KfParams:
    q: float = 0.5  # white-acceleration density (m^2/s^3)
    sigma_m: float = 0.15  # measurement noise (m)
    gate: float = 2.0  # association gate (m)
    max_misses: int = 10
    min_hits_confirm: int = 3
    init_pos_sigma: float | None = None  # defaults to sigma_m
    init_vel_sigma: float = 1.0
    q_z: float = 0.01  # height random-walk density (m^2/s)

    def __post_init__(self):
        if not (self.q > 0 and self.sigma_m > 0 and self.gate > 0
                and self.max_misses > 0 and self.min_hits_confirm > 0):
            raise ValueError("KfParams entries must be positive")


@dataclass(frozen=True)
class Track:
    id: int
    state: np.ndarray
    cov: np.ndarray
    color: str
    hits: int = 1
    misses: int = 0
    last_update: float = 0.0
    confirmed: bool = False

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        """Horizontal velocity padded to 3D (vz = 0)."""
        return np.array([self.state[3], self.state[4], 0.0])


H = np.hstack([np.eye(3), np.zeros((3, 2))])


def new_track(track_id: int, det, params: KfParams) -> Track:
    sp = params.sigma_m if params.init_pos_sigma is None else params.init_pos_sigma
    state = np.array([det.position[0], det.position[1], det.position[2], 0.0, 0.0])
    cov = np.diag([sp ** 2] * 3 + [params.init_vel_sigma ** 2] * 2)
    return Track(track_id, state, cov, det.color, hits=1, misses=0, last_update=det.t,
                 confirmed=params.min_hits_confirm <= 1)


def transition(dt: float) -> np.ndarray:
    F = np.eye(5)
    F[0, 3] = dt
    F[1, 4] = dt
    return F


def process_noise(dt: float, params: KfParams) -> np.ndarray:
    q = params.q
    Q = np.zeros((5, 5))
    for p, v in ((0, 3), (1, 4)):
        Q[p, p] = q * dt ** 3 / 3.0
        Q[p, v] = Q[v, p] = q * dt ** 2 / 2.0
        Q[v, v] = q * dt
    Q[2, 2] = params.q_z * dt
    return Q


def kf_predict(track: Track, dt: float, params: KfParams) -> Track:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return track
    F = transition(dt)
    P = F @ track.cov @ F.T + process_noise(dt, params)
    return dataclasses.replace(track, state=F @ track.state, cov=0.5 * (P + P.T))


def kf_update(track: Track, det, params: KfParams) -> Track:
    if det.color != track.color:
        raise ValueError(f"detection colour {det.color!r} does not match track {track.color!r}")
    R = params.sigma_m ** 2 * np.eye(3)
    P = track.cov
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    innov = np.asarray(det.position, dtype=float) - H @ track.state
    state = track.state + K @ innov
    # Joseph form keeps P symmetric PSD
    IKH = np.eye(5) - K @ H
    P = IKH @ P @ IKH.T + K @ R @ K.T
    hits = track.hits + 1
    return dataclasses.replace(track, state=state, cov=0.5 * (P + P.T), hits=hits, misses=0,
                               last_update=det.t,
                               confirmed=track.confirmed or hits >= params.min_hits_confirm)


# --------------------------------------------------------------------------- assignment


def _solve(cost: np.ndarray) -> tuple:
    """Shortest-augmenting-path Hungarian for n <= m; returns (col_of_row, total)."""
    n, m = cost.shape
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    c = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    total = sum(c[i][col_of_row[i]] for i in range(n))
    return col_of_row, total


def _optimum(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    return _solve(cost)[1]


def hungarian(cost) -> list:
    """Minimum-cost matching of size ``min(n, m)`` as sorted ``(row, col)`` pairs.

    Among optimal matchings the lexicographically smallest one is returned,
    comparing the column chosen for each row in row order (rows and columns
    swap roles when there are more rows than columns).
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("costs must be finite; use a large sentinel for forbidden pairs")
    n, m = C.shape
    if n == 0 or m == 0:
        return []
    transposed = n > m
    if transposed:
        C = C.T
        n, m = m, n
    best = _optimum(C)
    tol = 1e-9 * max(1.0, abs(best))
    rows_left = list(range(n))
    cols_left = list(range(m))
    fixed = 0.0
    chosen = []
    for i in range(n):
        rest_rows = rows_left[1:]
        for j in cols_left:
            rest_cols = [c for c in cols_left if c != j]
            sub = C[np.ix_(rest_rows, rest_cols)]
            if fixed + C[i, j] + _optimum(sub) <= best + tol:
                chosen.append((i, j))
                fixed += C[i, j]
                cols_left = rest_cols
                break
        else:  # numerical safety; cannot happen for finite costs
            raise RuntimeError("assignment search lost optimality")
        rows_left = rest_rows
    if transposed:
        chosen = sorted((j, i) for i, j in chosen)
    return chosen


def assignment_cost(cost, pairs) -> float:
    C = np.asarray(cost, dtype=float)
    return float(sum(C[i, j] for i, j in pairs))


# --------------------------------------------------------------------------- tracker


@dataclass
class Tracker:
    """Track list plus the id counter; ids are never reused."""

    params: KfParams = field(default_factory=KfParams)
    tracks: list = field(default_factory=list)
    next_id: int = 0

    def step(self, detections, dt: float) -> list:
        self.tracks, self.next_id = tracker_step(self.tracks, detections, dt, self.params,
                                                 self.next_id)
        return self.tracks

    def confirmed(self) -> list:
        return [t for t in self.tracks if t.confirmed]

    def get(self, track_id: int):
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None


def tracker_step(tracks, detections, dt: float, params: KfParams, next_id: int):
    """One predict/associate/update cycle. Returns ``(tracks, next_id)``."""
    tracks = [kf_predict(t, dt, params) for t in tracks]
    dets = list(detections)
    matched_t, matched_d = set(), set()
    updated = {}
    if tracks and dets:
        cost = np.full((len(tracks), len(dets)), GATE_SENTINEL)
        for i, t in enumerate(tracks):
            for j, d in enumerate(dets):
                if d.color != t.color:
                    continue
                dist = float(np.linalg.norm(np.asarray(d.position) - t.position))
                if dist <= params.gate:
                    cost[i, j] = dist
        for i, j in hungarian(cost):
            if cost[i, j] >= GATE_SENTINEL:
                continue
            updated[i] = kf_update(tracks[i], dets[j], params)
            matched_t.add(i)
            matched_d.add(j)
    out = []
    for i, t in enumerate(tracks):
        if i in matched_t:
            out.append(updated[i])
            continue
        t = dataclasses.replace(t, misses=t.misses + 1)
        if t.misses <= params.max_misses:
            out.append(t)
    for j, d in enumerate(dets):
        if j not in matched_d:
            out.append(new_track(next_id, d, params))
            next_id += 1
    return out, next_id
