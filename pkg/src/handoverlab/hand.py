"""Configurable kinematic dexterous hand: articulation, FK, surface cloud, spheres.

Frame conventions for the default hand:
  - wrist (root link) at the origin, palm extending along +x
  - palm faces +z; fingers curl toward +z when flexion joints go positive
  - articulation vector order = joint declaration order in the config
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigMismatchError, GeometryError
from .geometry import PointCloud, Pose3, Rotation3
from .mesh import Sphere

HAND_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Joint:
    """Revolute joint connecting parent_link to child_link."""

    name: str
    parent_link: str
    child_link: str
    offset: Pose3                 # parent link frame -> joint frame at q = 0
    axis: np.ndarray              # unit rotation axis, joint frame
    limits: tuple[float, float]   # radians, lo <= hi
    closes_for_grasp: bool = True  # marched when closing fingers onto an object

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            raise ValueError(f"joint {self.name!r}: axis must be nonzero")
        axis /= n
        axis.setflags(write=False)
        object.__setattr__(self, "axis", axis)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if lo > hi:
            raise ValueError(f"joint {self.name!r}: limits out of order")
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True)
class Link:
    """Rigid link: collision spheres and surface sample points, link frame."""

    name: str
    spheres: tuple[Sphere, ...] = ()
    samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_centers: np.ndarray = field(init=False, repr=False, compare=False)
    sphere_radii: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).reshape(-1, 3)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "spheres", tuple(self.spheres))
        centers = np.array([sp.center for sp in self.spheres]).reshape(-1, 3)
        radii = np.array([sp.radius for sp in self.spheres])
        centers.setflags(write=False)
        radii.setflags(write=False)
        object.__setattr__(self, "sphere_centers", centers)
        object.__setattr__(self, "sphere_radii", radii)


@dataclass(frozen=True)
class HandConfig:
    """Kinematic tree rooted at the wrist link."""

    root_link: str
    joints: tuple[Joint, ...]
    links: tuple[Link, ...]
    format_version: int = HAND_FORMAT_VERSION
    fk_plan: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "links", tuple(self.links))
        problems = validate_hand(self)
        if problems:
            raise GeometryError("; ".join(problems))
        # Offset rotations as matrices, precomputed for the hot FK path.
        plan = tuple((j.parent_link, j.child_link, j.offset.rotation.to_matrix(),
                      j.offset.translation, j.axis) for j in self.joints)
        object.__setattr__(self, "fk_plan", plan)

    @property
    def articulation_dim(self) -> int:
        return len(self.joints)

    def link(self, name: str) -> Link:
        for l in self.links:
            if l.name == name:
                return l
        raise KeyError(name)

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, articulation) -> np.ndarray:
        q = np.asarray(articulation, dtype=float)
        if q.shape != (self.articulation_dim,):
            raise ConfigMismatchError(
                f"articulation has {q.shape} entries, config expects "
                f"{self.articulation_dim}")
        return np.clip(q, self.lower_limits(), self.upper_limits())

    def make_state(self, pose: Pose3, articulation) -> "HandState":
        """Build a state with joint limits enforced; clamped joints recorded."""
        q = np.asarray(articulation, dtype=float)
        clamped = self.clamp(q)
        violated = tuple(j.name for j, a, b in zip(self.joints, q, clamped)
                         if abs(a - b) > 1e-12)
        return HandState(pose, clamped, violated)

    def open_articulation(self) -> np.ndarray:
        """Neutral pre-grasp posture: zeros, clamped into limits."""
        return self.clamp(np.zeros(self.articulation_dim))

    def pregrasp_articulation(self, curl: float = 0.5) -> np.ndarray:
        """Open posture with the grasping joints curled partway closed.

        Fully extended fingers protrude far past the palm and sweep the
        object during transit, so the transit posture tucks them; curl 0
        is the open posture, curl 1 the joint-limit close.
        """
        if not 0.0 <= curl <= 1.0:
            raise ValueError("curl must lie in [0, 1]")
        q = self.open_articulation()
        for i, j in enumerate(self.joints):
            if j.closes_for_grasp:
                q[i] += curl * (j.limits[1] - q[i])
        return self.clamp(q)

    def leaf_links(self) -> tuple[str, ...]:
        """Links with no child joint (fingertips), in link order."""
        parents = {j.parent_link for j in self.joints}
        return tuple(l.name for l in self.links
                     if l.name not in parents and l.name != self.root_link)

    def chain_to(self, link_name: str) -> tuple[Joint, ...]:
        """Joints from the root to the given link, root side first."""
        by_child = {j.child_link: j for j in self.joints}
        chain = []
        cur = link_name
        while cur != self.root_link:
            j = by_child[cur]
            chain.append(j)
            cur = j.parent_link
        return tuple(reversed(chain))


def validate_hand(config: HandConfig) -> list[str]:
    """Tree and geometry checks; returns human-readable violations."""
    problems = []
    link_names = [l.name for l in config.links]
    if len(set(link_names)) != len(link_names):
        problems.append("duplicate link names")
    if config.root_link not in link_names:
        problems.append(f"root link {config.root_link!r} is not declared")
        return problems
    known = {config.root_link}
    for j in config.joints:
        if j.parent_link not in known:
            problems.append(
                f"joint {j.name!r}: parent {j.parent_link!r} not reachable from "
                f"the root (joints must be declared parents-first)")
        if j.child_link in known:
            problems.append(f"joint {j.name!r}: child {j.child_link!r} already attached")
        if j.child_link not in link_names:
            problems.append(f"joint {j.name!r}: child link {j.child_link!r} not declared")
        known.add(j.child_link)
    unattached = set(link_names) - known
    if unattached:
        problems.append(f"links not attached to the tree: {sorted(unattached)}")
    return problems


@dataclass(frozen=True)
class HandState:
    """Wrist pose plus articulation vector (radians)."""

    pose: Pose3
    articulation: np.ndarray
    clamped_joints: tuple[str, ...] = ()

    def __post_init__(self):
        q = np.array(self.articulation, dtype=float)
        if q.ndim != 1 or not np.all(np.isfinite(q)):
            raise ValueError("articulation must be a finite vector")
        q.setflags(write=False)
        object.__setattr__(self, "articulation", q)
        object.__setattr__(self, "clamped_joints", tuple(self.clamped_joints))


@dataclass(frozen=True)
class HandDelta:
    """Per-frame hand state change.

    The rotation composes on the left of the wrist rotation; the translation
    adds in world frame, so its norm is the actual wrist displacement.
    """

    rotation: Rotation3
    translation: np.ndarray
    articulation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float)
        q = np.array(self.articulation, dtype=float)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation delta must be a finite 3-vector")
        if not np.all(np.isfinite(q)):
            raise ValueError("articulation delta must be finite")
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "articulation", q)

    @classmethod
    def zero(cls, dim: int) -> "HandDelta":
        return cls(Rotation3.identity(), np.zeros(3), np.zeros(dim))

    @classmethod
    def between(cls, current: HandState, target: HandState) -> "HandDelta":
        return cls(target.pose.rotation.compose(current.pose.rotation.inverse()),
                   target.pose.translation - current.pose.translation,
                   target.articulation - current.articulation)


def apply_delta(config: HandConfig, state: HandState, delta: HandDelta) -> HandState:
    pose = Pose3(delta.rotation.compose(state.pose.rotation),
                 state.pose.translation + delta.translation)
    return config.make_state(pose, state.articulation + delta.articulation)


def _axis_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    x, y, z = axis
    c = math.cos(angle)
    s = math.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def link_frames(config: HandConfig, state: HandState) -> dict:
    """World frame of every link as (rotation matrix, translation) pairs."""
    if state.articulation.shape != (config.articulation_dim,):
        raise ConfigMismatchError(
            f"state has {state.articulation.shape[0]} articulation entries, "
            f"config expects {config.articulation_dim}")
    frames = {config.root_link: (state.pose.rotation.to_matrix(),
                                 state.pose.translation)}
    for q, (parent, child, r_off, t_off, axis) in zip(state.articulation,
                                                      config.fk_plan):
        rp, tp = frames[parent]
        rj = rp @ r_off
        frames[child] = (rj @ _axis_matrix(axis, float(q)), rp @ t_off + tp)
    return frames


def forward_kinematics(config: HandConfig, state: HandState) -> dict[str, Pose3]:
    """World pose of every link; root link pose equals the wrist pose."""
    frames = link_frames(config, state)
    poses = {config.root_link: state.pose}
    for name, (r, t) in frames.items():
        if name != config.root_link:
            poses[name] = Pose3(Rotation3.from_matrix(r), t)
    return poses


def hand_point_cloud(config: HandConfig, state: HandState) -> PointCloud:
    """Surface samples of all links in world frame; link order, then sample order."""
    frames = link_frames(config, state)
    parts = []
    for link in config.links:
        if len(link.samples):
            r, t = frames[link.name]
            parts.append(link.samples @ r.T + t)
    return PointCloud(np.concatenate(parts, axis=0))


def sphere_arrays(config: HandConfig, state: HandState) -> tuple[np.ndarray,
                                                                 np.ndarray]:
    """World-frame sphere (centers, radii) arrays; link order, sphere order."""
    frames = link_frames(config, state)
    centers = []
    radii = []
    for link in config.links:
        if len(link.sphere_radii):
            r, t = frames[link.name]
            centers.append(link.sphere_centers @ r.T + t)
            radii.append(link.sphere_radii)
    return np.concatenate(centers, axis=0), np.concatenate(radii)


def collision_spheres(config: HandConfig, state: HandState) -> list[Sphere]:
    """Collision spheres in world frame; radii unchanged by state."""
    centers, radii = sphere_arrays(config, state)
    return [Sphere(c, r) for c, r in zip(centers, radii)]


# ---------------------------------------------------------------------------
# Default hand: 5-finger, 22 revolute joints (4 x 4 fingers, 5 thumb, 1 spread)
# ---------------------------------------------------------------------------

_FINGERS = (("index", 0.033), ("middle", 0.011), ("ring", -0.011), ("little", -0.033))
_PROXIMAL_LEN = 0.045
_MIDDLE_LEN = 0.025
_DISTAL_LEN = 0.024
_PALM_LEN = 0.095


def _sphere_samples(spheres, count, rng) -> np.ndarray:
    """Surface sample points distributed over a link's spheres."""
    if not spheres or count <= 0:
        return np.zeros((0, 3))
    pts = []
    per = [count // len(spheres)] * len(spheres)
    per[0] += count - sum(per)
    for sphere, n in zip(spheres, per):
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts.append(sphere.center + sphere.radius * dirs)
    return np.concatenate(pts, axis=0)


def _offset(x=0.0, y=0.0, z=0.0, rotation: Rotation3 | None = None) -> Pose3:
    return Pose3(rotation or Rotation3.identity(), np.array([x, y, z]))


def default_hand_config(seed: int = 0, samples_per_link: int = 9) -> HandConfig:
    """ShadowHand-like 22-DoF hand; geometry is data, not behavior."""
    rng = np.random.default_rng(seed)
    flex_axis = (0.0, -1.0, 0.0)  # positive flexion curls toward +z (palm side)
    joints: list[Joint] = []
    link_spheres: dict[str, list[Sphere]] = {
        "wrist": [Sphere([0.0, 0.0, 0.0], 0.016)],
        "palm": [
            Sphere([0.025, 0.02, 0.0], 0.013), Sphere([0.025, -0.02, 0.0], 0.013),
            Sphere([0.055, 0.022, 0.0], 0.012), Sphere([0.055, -0.022, 0.0], 0.012),
            Sphere([0.08, 0.025, 0.0], 0.011), Sphere([0.08, -0.025, 0.0], 0.011),
        ],
    }

    joints.append(Joint("palm_spread", "wrist", "palm", _offset(), (1, 0, 0),
                        (-0.25, 0.25), closes_for_grasp=False))

    for name, y in _FINGERS:
        base = f"{name}_knuckle"
        joints.append(Joint(f"{name}_abduct", "palm", base,
                            _offset(_PALM_LEN, y, 0.0), (0, 0, 1),
                            (-0.3, 0.3), closes_for_grasp=False))
        link_spheres[base] = [Sphere([0.0, 0.0, 0.0], 0.009)]
        joints.append(Joint(f"{name}_proximal", base, f"{name}_proximal_link",
                            _offset(), flex_axis, (-0.1, 1.571)))
        link_spheres[f"{name}_proximal_link"] = [
            Sphere([0.015, 0.0, 0.0], 0.009), Sphere([0.033, 0.0, 0.0], 0.0085)]
        joints.append(Joint(f"{name}_middle", f"{name}_proximal_link",
                            f"{name}_middle_link", _offset(_PROXIMAL_LEN), flex_axis,
                            (0.0, 1.571)))
        link_spheres[f"{name}_middle_link"] = [Sphere([0.012, 0.0, 0.0], 0.008)]
        joints.append(Joint(f"{name}_distal", f"{name}_middle_link",
                            f"{name}_distal_link", _offset(_MIDDLE_LEN), flex_axis,
                            (0.0, 1.571)))
        link_spheres[f"{name}_distal_link"] = [
            Sphere([0.008, 0.0, 0.0], 0.0075), Sphere([0.019, 0.0, 0.0], 0.007)]

    # Thumb: base swing about the palm normal, roll, then a 3-joint column.
    joints.append(Joint("thumb_base", "palm", "thumb_meta",
                        _offset(0.02, -0.04, 0.0,
                                Rotation3.from_axis_angle([0, 0, 1], -1.0)),
                        (0, 0, 1), (-0.3, 1.4)))
    link_spheres["thumb_meta"] = [Sphere([0.018, 0.0, 0.0], 0.011)]
    joints.append(Joint("thumb_roll", "thumb_meta", "thumb_hub",
                        _offset(0.038), (1, 0, 0), (-0.8, 0.8),
                        closes_for_grasp=False))
    link_spheres["thumb_hub"] = [Sphere([0.0, 0.0, 0.0], 0.01)]
    joints.append(Joint("thumb_proximal", "thumb_hub", "thumb_proximal_link",
                        _offset(), flex_axis, (-0.3, 1.2)))
    link_spheres["thumb_proximal_link"] = [
        Sphere([0.012, 0.0, 0.0], 0.01), Sphere([0.026, 0.0, 0.0], 0.009)]
    joints.append(Joint("thumb_middle", "thumb_proximal_link", "thumb_middle_link",
                        _offset(0.032), flex_axis, (0.0, 1.2)))
    link_spheres["thumb_middle_link"] = [Sphere([0.012, 0.0, 0.0], 0.0085)]
    joints.append(Joint("thumb_distal", "thumb_middle_link", "thumb_distal_link",
                        _offset(0.027), flex_axis, (0.0, 1.2)))
    link_spheres["thumb_distal_link"] = [
        Sphere([0.007, 0.0, 0.0], 0.008), Sphere([0.017, 0.0, 0.0], 0.0075)]

    links = [Link(name, tuple(spheres), _sphere_samples(spheres, samples_per_link, rng))
             for name, spheres in link_spheres.items()]
    return HandConfig("wrist", tuple(joints), tuple(links))


# ---------------------------------------------------------------------------
# Config file I/O
# ---------------------------------------------------------------------------

def save_hand_config(config: HandConfig, path) -> None:
    doc = {
        "format_version": config.format_version,
        "articulation_dim": config.articulation_dim,
        "root_link": config.root_link,
        "joints": [
            {
                "name": j.name,
                "parent": j.parent_link,
                "child": j.child_link,
                "offset_translation": [float(x) for x in j.offset.translation],
                "offset_quaternion": [float(j.offset.rotation.w),
                                      float(j.offset.rotation.x),
                                      float(j.offset.rotation.y),
                                      float(j.offset.rotation.z)],
                "axis": [float(x) for x in j.axis],
                "limits": [float(j.limits[0]), float(j.limits[1])],
                "closes_for_grasp": j.closes_for_grasp,
            }
            for j in config.joints
        ],
        "links": [
            {
                "name": l.name,
                "spheres": [{"center": [float(x) for x in s.center],
                             "radius": float(s.radius)} for s in l.spheres],
                "samples": [[float(x) for x in p] for p in l.samples],
            }
            for l in config.links
        ],
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_hand_config(path) -> HandConfig:
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict):
        raise GeometryError(f"{path}: not a mapping")
    version = doc.get("format_version")
    if version != HAND_FORMAT_VERSION:
        raise GeometryError(
            f"{path}: unsupported format_version {version!r} "
            f"(expected {HAND_FORMAT_VERSION})")
    joints = tuple(
        Joint(j["name"], j["parent"], j["child"],
              Pose3(Rotation3(*j["offset_quaternion"]),
                    np.array(j["offset_translation"], dtype=float)),
              np.array(j["axis"], dtype=float),
              (j["limits"][0], j["limits"][1]),
              bool(j.get("closes_for_grasp", True)))
        for j in doc["joints"])
    links = tuple(
        Link(l["name"],
             tuple(Sphere(np.array(s["center"], dtype=float), float(s["radius"]))
                   for s in l.get("spheres", [])),
             np.array(l.get("samples", []), dtype=float).reshape(-1, 3))
        for l in doc["links"])
    config = HandConfig(doc["root_link"], joints, links)
    declared = doc.get("articulation_dim")
    if declared != config.articulation_dim:
        raise GeometryError(
            f"{path}: articulation_dim {declared} does not match the "
            f"{config.articulation_dim} declared joints")
    return config
