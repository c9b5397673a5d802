"""Ground truth: arena, objects and their motion, drop zone, wind."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..coverage import ConvexRegion


class ObjectStatus(str, enum.Enum):
    GROUND = "ground"
    ATTACHED = "attached"
    DELIVERED = "delivered"


@dataclass
class WorldObject:
    id: int
    color: str
    diameter: float
    position: np.ndarray  # (x, y) on the ground
    velocity: np.ndarray  # (vx, vy)
    ferrous: bool = True
    status: ObjectStatus = ObjectStatus.GROUND
    carrier: int | None = None

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


@dataclass
class DropZone:
    center: tuple
    radius: float

    def contains(self, xy) -> bool:
        return math.hypot(xy[0] - self.center[0], xy[1] - self.center[1]) <= self.radius


@dataclass
class World:
    arena: ConvexRegion
    drop_zone: DropZone
    objects: list = field(default_factory=list)
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for ob in self.objects:
            if not ob.diameter > 0:
                raise ValueError(f"object {ob.id}: diameter must be positive")
            if not self.arena.contains(ob.position)[0]:
                raise ValueError(f"object {ob.id} starts outside the arena")

    def get(self, object_id):
        for ob in self.objects:
            if ob.id == object_id:
                return ob
        return None

    def on_ground(self) -> list:
        return [ob for ob in self.objects if ob.status is ObjectStatus.GROUND]

    def delivered(self) -> int:
        return sum(ob.status is ObjectStatus.DELIVERED for ob in self.objects)


def reflect(position: np.ndarray, velocity: np.ndarray, arena: ConvexRegion):
    """Mirror a point that left the arena back across the violated edge(s).

    The velocity component normal to each violated edge changes sign.
    """
    p, v = position.copy(), velocity.copy()
    pts = arena.points
    for _ in range(4):
        moved = False
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            e = b - a
            n = np.array([-e[1], e[0]]) / math.hypot(e[0], e[1])  # inward normal (CCW)
            s = float((p - a) @ n)
            if s < 0:
                p = p - 2.0 * s * n
                vn = float(v @ n)
                if vn < 0:
                    v = v - 2.0 * vn * n
                moved = True
        if not moved:
            break
    return p, v


def move_objects(world: World, dt: float) -> list:
    """Advance free objects; returns ids of those that bounced."""
    bounced = []
    for ob in world.objects:
        if ob.status is not ObjectStatus.GROUND or not np.any(ob.velocity):
            continue
        p = ob.position + ob.velocity * dt
        q, v = reflect(p, ob.velocity, world.arena)
        if not np.allclose(v, ob.velocity):
            bounced.append(ob.id)
        ob.position, ob.velocity = q, v
    return bounced


def ferrous_distance(gripper, world: World):
    """Distance from the gripper to the nearest free ferrous object surface.

    Objects are flat discs at ``z = 0``. Returns ``(distance, object_id)``.
    """
    best, best_id = math.inf, None
    g = np.asarray(gripper, dtype=float)
    for ob in world.on_ground():
        if not ob.ferrous:
            continue
        horiz = math.hypot(g[0] - ob.position[0], g[1] - ob.position[1])
        d = math.hypot(max(0.0, horiz - ob.radius), max(0.0, g[2]))
        if d < best:
            best, best_id = d, ob.id
    return best, best_id
