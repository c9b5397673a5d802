"""Camera frames, pinhole projection and single-view metric localization.

Vectors are plain ``numpy`` arrays of shape (3,). Pixel coordinates use the
convention that the centre of pixel (row i, col j) sits at ``(u_x, u_y) = (j, i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Below this the two-ray system has no meaningful solution.
DEGENERACY_EPS = 1e-12
DEPTH_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class DegenerateGeometry(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector {a}")
    return a


def check_rotation(R, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R @ R.T, np.eye(3), atol=tol, rtol=0.0):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation has det != +1")
    return R


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# Camera looking straight down with image x along world x: optical axis is -z_W.
DOWNWARD = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking camera-frame points into the world frame.

    ``p_W = rotation @ p_C + translation``. ``rotation`` is validated once here.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "translation", as_vec3(self.translation))

    @classmethod
    def downward(cls, position, yaw: float = 0.0) -> "Pose":
        """Nadir camera at ``position`` rotated by ``yaw`` about world z."""
        return cls(rot_z(yaw) @ DOWNWARD, position)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    @property
    def R_CW(self) -> np.ndarray:
        """Rotation taking world-frame vectors into the camera frame."""
        return self.rotation.T

    def object_normal(self) -> np.ndarray:
        """World z axis expressed in the camera frame."""
        return self.R_CW @ np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.px < self.width and 0 < self.py < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, f: float, width: int, height: int) -> "CameraIntrinsics":
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def fov(self) -> float:
        """Full field of view across the narrower image side (rad)."""
        half_w = max(self.px, self.width - 1 - self.px) / self.fx
        half_h = max(self.py, self.height - 1 - self.py) / self.fy
        return 2.0 * float(np.arctan(min(half_w, half_h)))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "px": self.px, "py": self.py,
                "width": self.width, "height": self.height}


def normalize_pixel(u, k: CameraIntrinsics) -> np.ndarray:
    """Ray through pixel ``u`` scaled to unit depth: ``(u_nx, u_ny, 1)``."""
    ux, uy = float(u[0]), float(u[1])
    return np.array([(ux - k.px) / k.fx, (uy - k.py) / k.fy, 1.0])


def project_point(p_C, k: CameraIntrinsics, eps: float = DEPTH_EPS) -> np.ndarray:
    p = as_vec3(p_C)
    if p[2] <= eps:
        raise NonPositiveDepth(f"point depth {p[2]} is not in front of the camera")
    return np.array([k.fx * p[0] / p[2] + k.px, k.fy * p[1] / p[2] + k.py])


def inverse_project_pair(u1, u2, R_CW, l: float, k: CameraIntrinsics,
                         eps: float = DEGENERACY_EPS):
    """Recover two camera-frame points from their pixels and known separation.

    The points are assumed to lie on a plane whose normal is the world z axis
    (``R_CW @ z_W`` in the camera frame) and to be ``l`` metres apart.

    Returns ``(p1, p2)``. Raises ``DegenerateGeometry`` if the rays give no
    unique solution and ``BehindCamera`` if the solution is not in front.
    """
    if not l > 0:
        raise ValueError("segment length must be positive")
    R = check_rotation(R_CW)
    n = R @ np.array([0.0, 0.0, 1.0])
    return _invert_rays(normalize_pixel(u1, k), normalize_pixel(u2, k), n, l, eps)


def _invert_rays(u1n: np.ndarray, u2n: np.ndarray, n: np.ndarray, l: float,
                 eps: float = DEGENERACY_EPS):
    a1 = float(n @ u1n)
    a2 = float(n @ u2n)
    denom = float(np.linalg.norm(a2 * u1n - a1 * u2n))
    if denom < eps:
        raise DegenerateGeometry("rays are collinear or parallel to the object plane")
    if a1 * a2 <= 0.0:
        # rays straddle the plane's horizon: no solution with both points in front
        raise BehindCamera("rays do not intersect a common plane in front of the camera")
    lam1 = abs(a2) / denom
    lam2 = abs(a1) / denom
    p1 = lam1 * l * u1n
    p2 = lam2 * l * u2n
    if p1[2] <= 0.0 or p2[2] <= 0.0:
        raise BehindCamera("recovered depth is not positive")
    return p1, p2


def object_center(p1, p2) -> np.ndarray:
    return 0.5 * (np.asarray(p1, dtype=float) + np.asarray(p2, dtype=float))


def camera_to_world(p_C, pose_WC: Pose) -> np.ndarray:
    return pose_WC.rotation @ np.asarray(p_C, dtype=float) + pose_WC.translation


def world_to_camera(p_W, pose_WC: Pose) -> np.ndarray:
    return pose_WC.rotation.T @ (np.asarray(p_W, dtype=float) - pose_WC.translation)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
