"""Rigid-body math shared by all modules.

Conventions:
  - Rotations are unit quaternions (w, x, y, z), canonicalized to w >= 0.
  - Pose3 maps body-frame points to world frame: p_world = R * p_body + t.
  - Composition a.compose(b) applies b first, then a.
  - Translations in meters, angles in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, OutOfRangeError

# Weight turning geodesic angle into meters for combined pose distances.
# 1 rad counts as 10 cm, comparable to translation at handover scale.
DEFAULT_ROT_WEIGHT = 0.1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Rotation3:
    """Unit quaternion rotation, canonical sign (w >= 0)."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError("quaternion norm must be finite and nonzero")
        s = -1.0 / n if self.w < 0.0 else 1.0 / n
        object.__setattr__(self, "w", self.w * s)
        object.__setattr__(self, "x", self.x * s)
        object.__setattr__(self, "y", self.y * s)
        object.__setattr__(self, "z", self.z * s)

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation3":
        axis = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            if abs(angle) < 1e-12:
                return cls.identity()
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return cls(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_matrix(cls, m) -> "Rotation3":
        m = np.asarray(m, dtype=float)
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return cls((0.25 * s), (m[2, 1] - m[1, 2]) / s,
                       (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = [0.0, 0.0, 0.0, 0.0]
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
        return cls(*q)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def compose(self, other: "Rotation3") -> "Rotation3":
        """Rotation equivalent to applying `other`, then `self`."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Rotation3(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "Rotation3":
        return Rotation3(self.w, -self.x, -self.y, -self.z)

    def apply(self, points) -> np.ndarray:
        """Rotate one point (3,) or a stack of points (N, 3)."""
        return np.asarray(points, dtype=float) @ self.to_matrix().T

    def angle_to(self, other: "Rotation3") -> float:
        """Geodesic angle between two rotations, in [0, pi]."""
        return other.compose(self.inverse()).angle()

    def angle(self) -> float:
        """Rotation angle away from identity, in [0, pi]."""
        # atan2 form stays accurate near identity where acos loses digits
        v = math.sqrt(self.x**2 + self.y**2 + self.z**2)
        return 2.0 * math.atan2(v, abs(self.w))

    def axis_angle(self) -> tuple[np.ndarray, float]:
        """Axis (unit) and angle in [0, pi]; axis is +x for identity."""
        angle = self.angle()
        v = np.array([self.x, self.y, self.z])
        n = float(np.linalg.norm(v))
        if n < 1e-12:
            return np.array([1.0, 0.0, 0.0]), 0.0
        return v / n, angle

    def as_rotvec(self) -> np.ndarray:
        axis, angle = self.axis_angle()
        return axis * angle

    def slerp(self, other: "Rotation3", s: float) -> "Rotation3":
        """Interpolate along the shortest geodesic arc; s=0 -> self, s=1 -> other."""
        q1 = np.array([self.w, self.x, self.y, self.z])
        q2 = np.array([other.w, other.x, other.y, other.z])
        dot = float(q1 @ q2)
        if dot < 0.0:
            q2, dot = -q2, -dot
        if dot > 0.9999995:
            q = q1 + s * (q2 - q1)
            return Rotation3(*q)
        theta = math.acos(min(dot, 1.0))
        st = math.sin(theta)
        q = (math.sin((1.0 - s) * theta) / st) * q1 + (math.sin(s * theta) / st) * q2
        return Rotation3(*q)


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: rotation plus translation (meters)."""

    rotation: Rotation3 = field(default_factory=Rotation3.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _readonly(self.translation)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()

    @classmethod
    def from_parts(cls, rotation: Rotation3, translation) -> "Pose3":
        return cls(rotation, np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, m) -> "Pose3":
        m = np.asarray(m, dtype=float)
        return cls(Rotation3.from_matrix(m[:3, :3]), m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose3") -> "Pose3":
        """Pose equivalent to applying `other`, then `self`."""
        return Pose3(self.rotation.compose(other.rotation),
                     self.rotation.apply(other.translation) + self.translation)

    def inverse(self) -> "Pose3":
        rinv = self.rotation.inverse()
        return Pose3(rinv, -rinv.apply(self.translation))

    def apply(self, points) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Transform direction-valued quantities: rotation only."""
        return self.rotation.apply(vectors)


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) with optional per-point direction attributes (velocities, offsets).

    Direction attributes transform with rotation only.
    """

    points: np.ndarray
    vectors: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = _readonly(np.atleast_2d(self.points)) if np.size(self.points) else _readonly(
            np.zeros((0, 3)))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (N, 3)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        vecs = {}
        for name, v in self.vectors.items():
            v = _readonly(v)
            if v.shape != pts.shape:
                raise ValueError(f"attribute {name!r} must match point count")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"attribute {name!r} must be finite")
            vecs[name] = v
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise EmptyInputError("centroid of empty cloud")
        return self.points.mean(axis=0)

    def with_vectors(self, **vectors) -> "PointCloud":
        merged = dict(self.vectors)
        merged.update(vectors)
        return PointCloud(self.points, merged)


def transform_cloud(cloud: PointCloud, pose: Pose3) -> PointCloud:
    """Rigidly transform a cloud; direction attributes are rotated only."""
    if len(cloud) == 0:
        raise EmptyInputError("cannot transform an empty cloud")
    return PointCloud(pose.apply(cloud.points),
                      {k: pose.apply_vectors(v) for k, v in cloud.vectors.items()})


def pose_distance(a: Pose3, b: Pose3, rot_weight: float = DEFAULT_ROT_WEIGHT) -> float:
    """Translation distance plus rot_weight times geodesic angle (meters).

    rot_weight is in meters per radian; 0 gives a pure-translation distance.
    """
    if rot_weight < 0.0:
        raise ValueError("rot_weight must be >= 0")
    d = float(np.linalg.norm(a.translation - b.translation))
    if rot_weight > 0.0:
        d += rot_weight * a.rotation.angle_to(b.rotation)
    return d


def interpolate_pose(a: Pose3, b: Pose3, s: float) -> Pose3:
    """Geodesic rotation / linear translation interpolation; s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise OutOfRangeError(f"interpolation fraction {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    return Pose3(a.rotation.slerp(b.rotation, s),
                 (1.0 - s) * a.translation + s * b.translation)
