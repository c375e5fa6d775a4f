"""Scene state around the object: giver motion, object state, observations.

The giver (the hand presenting the object) is synthetic: a parametric
trajectory driving the object pose plus a small set of proxy spheres attached
to the object's far side standing in for the giver's fingers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRangeError
from .geometry import PointCloud, Pose3, Rotation3, interpolate_pose
from .hand import HandState
from .mesh import ObjectMesh, Sphere, sample_surface

DEFAULT_OBJECT_SAMPLES = 1024
DEFAULT_TRANSLATION_CAP = 0.03   # m/frame
DEFAULT_ROTATION_CAP = 0.1       # rad/frame

TRAJECTORY_KINDS = ("hold-still", "linear", "arc", "sinusoid",
                    "piecewise-waypoint")


@dataclass(frozen=True)
class GiverTrajectory:
    """Closed-form object motion; per-frame speed caps checked exhaustively."""

    kind: str
    start: Pose3
    duration: int
    translation_cap: float = DEFAULT_TRANSLATION_CAP
    rotation_cap: float = DEFAULT_ROTATION_CAP
    direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0]))
    speed: float = 0.0            # linear, m/frame
    radius: float = 0.0           # arc, m
    angular_rate: float = 0.0     # arc, rad/frame
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 60.0          # sinusoid, frames
    spin_axis: np.ndarray = field(default_factory=lambda: np.array([0, 0, 1.0]))
    spin_rate: float = 0.0        # rad/frame, applied to the object rotation
    waypoints: tuple[tuple[int, Pose3], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration < 1:
            raise ValueError("duration must be at least 1 frame")
        for name in ("direction", "amplitude", "spin_axis"):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        n = np.linalg.norm(self.direction)
        if self.kind == "linear" and n < 1e-12:
            raise ValueError("linear trajectory needs a nonzero direction")
        if n > 1e-12:
            d = self.direction / n
            d.setflags(write=False)
            object.__setattr__(self, "direction", d)
        if self.kind == "piecewise-waypoint":
            frames = [f for f, _ in self.waypoints]
            if not frames or frames[0] != 0:
                raise ValueError("waypoints must start at frame 0")
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise ValueError("waypoint frames must strictly increase")
        self._check_caps()

    def _check_caps(self):
        prev = self.pose_at(0)
        for f in range(1, self.duration + 1):
            cur = self.pose_at(f)
            step = np.linalg.norm(cur.translation - prev.translation)
            if step > self.translation_cap + 1e-12:
                raise ValueError(
                    f"frame {f}: translation step {step:.4f} m exceeds cap "
                    f"{self.translation_cap:.4f} m")
            turn = cur.rotation.angle_to(prev.rotation)
            if turn > self.rotation_cap + 1e-12:
                raise ValueError(
                    f"frame {f}: rotation step {turn:.4f} rad exceeds cap "
                    f"{self.rotation_cap:.4f} rad")
            prev = cur

    def _spin(self, frame: int) -> Rotation3:
        if self.spin_rate == 0.0:
            return Rotation3.identity()
        return Rotation3.from_axis_angle(self.spin_axis, self.spin_rate * frame)

    def pose_at(self, frame: int) -> Pose3:
        rot = self._spin(frame).compose(self.start.rotation)
        t0 = self.start.translation
        if self.kind == "hold-still":
            return Pose3(self.start.rotation, t0)
        if self.kind == "linear":
            return Pose3(rot, t0 + self.speed * frame * self.direction)
        if self.kind == "arc":
            # Circle tangent to +x at the start point, turning toward +y.
            a = self.angular_rate * frame
            off = self.radius * np.array([math.sin(a), 1.0 - math.cos(a), 0.0])
            return Pose3(rot, t0 + off)
        if self.kind == "sinusoid":
            s = math.sin(2.0 * math.pi * frame / self.period)
            return Pose3(rot, t0 + self.amplitude * s)
        # piecewise-waypoint: hold the last pose past the final waypoint
        frames = [f for f, _ in self.waypoints]
        poses = [p for _, p in self.waypoints]
        if frame >= frames[-1]:
            return poses[-1]
        i = int(np.searchsorted(frames, frame, side="right")) - 1
        span = frames[i + 1] - frames[i]
        return interpolate_pose(poses[i], poses[i + 1], (frame - frames[i]) / span)


def advance_giver(traj: GiverTrajectory, frame: int) -> Pose3:
    """Object pose at an integer frame index within [0, duration]."""
    if frame < 0 or frame > traj.duration:
        raise OutOfRangeError(
            f"frame {frame} outside trajectory range [0, {traj.duration}]")
    return traj.pose_at(int(frame))


@dataclass(frozen=True)
class ObjectState:
    """Object pose at a frame plus its per-frame velocity."""

    mesh: ObjectMesh
    pose: Pose3
    frame: int
    velocity_translation: np.ndarray   # m/frame
    velocity_rotation: np.ndarray      # axis-angle vector, rad/frame

    def __post_init__(self):
        for name in ("velocity_translation", "velocity_rotation"):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def object_state_at(mesh: ObjectMesh, traj: GiverTrajectory,
                    frame: int) -> ObjectState:
    """State with velocity backward-differenced from the previous frame."""
    pose = advance_giver(traj, frame)
    if frame == 0:
        return ObjectState(mesh, pose, 0, np.zeros(3), np.zeros(3))
    prev = advance_giver(traj, frame - 1)
    dt = pose.translation - prev.translation
    drot = pose.rotation.compose(prev.rotation.inverse()).as_rotvec()
    return ObjectState(mesh, pose, frame, dt, drot)


@dataclass(frozen=True)
class ObservationFrame:
    """What the receiver sees at one frame: object cloud and its own state."""

    object_cloud: PointCloud
    hand_state: HandState
    frame: int


def observe(mesh: ObjectMesh, object_pose: Pose3, hand_state: HandState,
            frame: int, n: int = DEFAULT_OBJECT_SAMPLES,
            seed: int = 0) -> ObservationFrame:
    cloud = sample_surface(mesh, object_pose, n, seed)
    return ObservationFrame(cloud, hand_state, frame)


# ---------------------------------------------------------------------------
# Giver-hand proxy spheres
# ---------------------------------------------------------------------------

def giver_proxy_local(mesh: ObjectMesh, away_direction,
                      radius: float = 0.012, count: int = 6,
                      clearance: float = 0.004) -> tuple[Sphere, ...]:
    """Sphere blob hugging the object's far side, in the object frame.

    away_direction points from the object toward the giver side (object
    frame). The blob rides rigidly with the object.
    """
    d = np.array(away_direction, dtype=float)
    n = np.linalg.norm(d)
    if n < 1e-12:
        raise ValueError("away_direction must be nonzero")
    d /= n
    support = float(np.max(mesh.vertices @ d))
    centroid = mesh.volume_centroid()
    center = centroid + (support - float(centroid @ d) + radius + clearance) * d
    # One core sphere plus a ring around the approach axis.
    ref = np.array([1.0, 0, 0]) if abs(d[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    spheres = [Sphere(center, radius)]
    ring = max(count - 1, 0)
    for i in range(ring):
        a = 2.0 * math.pi * i / ring
        offset = 1.6 * radius * (math.cos(a) * u + math.sin(a) * v)
        spheres.append(Sphere(center + offset + 0.5 * radius * d, radius))
    return tuple(spheres[:count])


def giver_proxy_world(proxies_local, object_pose: Pose3) -> list[Sphere]:
    return [s.transformed(object_pose) for s in proxies_local]


@dataclass(frozen=True)
class Scene:
    """Everything outside the receiver hand: object, motion, giver proxies."""

    mesh: ObjectMesh
    trajectory: GiverTrajectory
    hand_start_pose: Pose3
    hand_start_articulation: np.ndarray | None = None
    proxies_local: tuple[Sphere, ...] = ()
    object_samples: int = DEFAULT_OBJECT_SAMPLES

    def __post_init__(self):
        if self.hand_start_articulation is not None:
            q = np.array(self.hand_start_articulation, dtype=float)
            q.setflags(write=False)
            object.__setattr__(self, "hand_start_articulation", q)
        object.__setattr__(self, "proxies_local", tuple(self.proxies_local))
