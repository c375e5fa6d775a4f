"""Grasp candidate generation, physical filtering, and goal selection.

Candidates are synthesized procedurally: sample an approach point on the
object surface, place the palm at a standoff along the outward normal with a
random roll, then march the finger flexion joints closed until the fingertips
touch the surface. Stability is a quasi-static check: can contact forces
inside linearized friction cones balance gravity plus a test force, solved as
a linear feasibility problem per test direction.

All candidate geometry lives in the object frame; select_goal and track_goal
maintain the world-frame goal as the object moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog

from .errors import NoValidGraspError
from .geometry import DEFAULT_ROT_WEIGHT, Pose3, Rotation3, pose_distance
from .hand import HandConfig, HandState, collision_spheres, sphere_arrays
from .mesh import (ObjectMesh, Sphere, nearest_surface, penetration_depth,
                   signed_distances)

SIX_DIRECTIONS = (
    np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]),
    np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0]),
    np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]),
)

# Palm reference point in the hand frame: the spot placed over the approach
# point at the sampled standoff. Sits past the knuckles so the curled fingers
# wrap the far edge of a palm-sized object instead of patting one face.
PALM_REFERENCE = np.array([0.07, 0.0, 0.012])


@dataclass(frozen=True)
class StabilityParams:
    friction: float = 0.5
    test_force_scale: float = 2.0     # multiples of object weight
    gravity: float = 9.81             # m/s^2
    contact_tolerance: float = 2e-3   # m
    object_mass: float = 0.3          # kg
    cone_edges: int = 8
    force_budget: float = 50.0        # total normal force, multiples of weight
    gravity_direction: tuple = (0.0, 0.0, -1.0)

    def __post_init__(self):
        if self.friction < 0:
            raise ValueError("friction must be nonnegative")
        for name in ("test_force_scale", "gravity", "contact_tolerance",
                     "object_mass", "force_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cone_edges < 3:
            raise ValueError("cone_edges must be at least 3")


@dataclass(frozen=True)
class Contact:
    point: np.ndarray    # m
    normal: np.ndarray   # outward unit normal at the contact
    link: str

    def __post_init__(self):
        p = np.array(self.point, dtype=float)
        n = np.array(self.normal, dtype=float)
        n /= np.linalg.norm(n)
        p.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n)

    def transformed(self, pose: Pose3) -> "Contact":
        return Contact(pose.apply(self.point),
                       pose.rotation.apply(self.normal), self.link)


@dataclass(frozen=True)
class GraspCandidate:
    """Hand state relative to the object frame plus its contact set.

    Verdicts stay None until the corresponding filter has run. world and
    contacts_world are populated once the candidate is selected as a goal.
    """

    relative: HandState
    contacts: tuple[Contact, ...]
    stable6: bool | None = None
    collision_free: bool | None = None
    index: int = 0
    world: HandState | None = None
    contacts_world: tuple[Contact, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(self.contacts))
        if self.contacts_world is not None:
            object.__setattr__(self, "contacts_world",
                               tuple(self.contacts_world))

    def surviving(self) -> bool:
        return bool(self.stable6) and bool(self.collision_free)


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

def _sample_surface_points(mesh: ObjectMesh, n: int, rng):
    """Area-uniform surface points with their outward face normals."""
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = np.sqrt(rng.uniform(size=n))
    v = rng.uniform(size=n)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    pts = (1 - u)[:, None] * a + (u * (1 - v))[:, None] * b + (u * v)[:, None] * c
    return pts, mesh.face_normals[tri]


def _approach_pose(point, normal, roll: float, standoff: float) -> Pose3:
    """Wrist pose putting the palm reference over the point, palm facing it."""
    n = normal / np.linalg.norm(normal)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, -n)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        align = Rotation3.identity() if -n[2] > 0 else \
            Rotation3.from_axis_angle([1, 0, 0], math.pi)
    else:
        align = Rotation3.from_axis_angle(axis / s, math.atan2(s, float(-n[2])))
    rot = align.compose(Rotation3.from_axis_angle(z, roll))
    translation = point + standoff * n - rot.apply(PALM_REFERENCE)
    return Pose3(rot, translation)


def _finger_groups(hand: HandConfig):
    """(closing joint indices, sphere index ranges) per fingertip chain."""
    sphere_link = []
    for link in hand.links:
        sphere_link.extend([link.name] * len(link.spheres))
    sphere_link = np.array(sphere_link)
    groups = []
    for leaf in hand.leaf_links():
        chain = hand.chain_to(leaf)
        closing = [hand.joint_index(j.name) for j in chain if j.closes_for_grasp]
        chain_links = [j.child_link for j in chain]
        members = np.flatnonzero(np.isin(sphere_link, chain_links))
        tips = np.flatnonzero(sphere_link == leaf)
        if closing and len(tips):
            groups.append((np.array(closing), members, tips))
    return groups


def _close_fingers(hand: HandConfig, mesh: ObjectMesh, pose: Pose3,
                   tolerance: float, coarse: float = 0.08,
                   bisect_steps: int = 5) -> np.ndarray:
    """Flex fingers closed until fingertip contact, penetration, or limits.

    Coarse forward march per finger, then bisection of the bracketing step
    for fingers that overshot into the object.
    """
    open_q = hand.open_articulation()
    upper = hand.upper_limits()
    groups = _finger_groups(hand)
    radii = sphere_arrays(hand, hand.make_state(Pose3.identity(), open_q))[1]

    def posture(offsets) -> np.ndarray:
        q = open_q.copy()
        for gi, (joints, _, _) in enumerate(groups):
            q[joints] = np.minimum(open_q[joints] + offsets[gi], upper[joints])
        return q

    def probe(offsets):
        state = hand.make_state(pose, posture(offsets))
        centers, _ = sphere_arrays(hand, state)
        sd = nearest_surface(mesh, Pose3.identity(), centers)[0]
        over = np.zeros(len(groups), dtype=bool)
        touch = np.zeros(len(groups), dtype=bool)
        for gi, (_, members, tips) in enumerate(groups):
            over[gi] = bool(np.any(sd[members] < radii[members] - tolerance))
            touch[gi] = bool(np.any(sd[tips] - radii[tips] <= tolerance))
        return over, touch

    travel = np.array([float(np.max(upper[j] - open_q[j]))
                       for j, _, _ in groups])
    lo = np.zeros(len(groups))           # last posture known to be clear
    hi = np.full(len(groups), np.nan)    # first posture known to overshoot
    active = np.ones(len(groups), dtype=bool)
    for _ in range(int(np.ceil(travel.max() / coarse)) + 1):
        if not active.any():
            break
        trial = np.where(active, np.minimum(lo + coarse, travel), lo)
        over, touch = probe(trial)
        for gi in np.flatnonzero(active):
            if over[gi]:
                hi[gi] = trial[gi]       # bracket found, refine later
                active[gi] = False
            else:
                lo[gi] = trial[gi]
                if touch[gi] or trial[gi] >= travel[gi] - 1e-12:
                    active[gi] = False
    refine = np.flatnonzero(np.isfinite(hi))
    for _ in range(bisect_steps if len(refine) else 0):
        mid = lo.copy()
        mid[refine] = 0.5 * (lo[refine] + hi[refine])
        over, _ = probe(mid)
        for gi in refine:
            if over[gi]:
                hi[gi] = mid[gi]
            else:
                lo[gi] = mid[gi]
    return posture(lo)


def find_contacts(hand: HandConfig, mesh: ObjectMesh, state: HandState,
                  tolerance: float) -> tuple[Contact, ...]:
    """Spheres whose surface lies within +/- tolerance of the object surface."""
    link_of = []
    for link in hand.links:
        link_of.extend([link.name] * len(link.spheres))
    centers, radii = sphere_arrays(hand, state)
    sd, closest, normals, _ = nearest_surface(mesh, Pose3.identity(), centers)
    hit = np.abs(np.abs(sd) - radii) <= tolerance
    return tuple(Contact(closest[i], normals[i], link_of[i])
                 for i in np.flatnonzero(hit))


def sample_candidates(mesh: ObjectMesh, hand: HandConfig, n: int, seed: int,
                      standoff_band: tuple[float, float] = (0.005, 0.02),
                      contact_tolerance: float = 2e-3) -> list[GraspCandidate]:
    """n procedural grasp candidates in the object frame, deterministic in seed."""
    if n < 1:
        raise ValueError("need n >= 1 candidates")
    rng = np.random.default_rng(seed)
    points, normals = _sample_surface_points(mesh, n, rng)
    rolls = rng.uniform(0.0, 2.0 * math.pi, size=n)
    standoffs = rng.uniform(standoff_band[0], standoff_band[1], size=n)
    out = []
    for i in range(n):
        pose = _approach_pose(points[i], normals[i], rolls[i], standoffs[i])
        q = _close_fingers(hand, mesh, pose, contact_tolerance)
        state = hand.make_state(pose, q)
        contacts = find_contacts(hand, mesh, state, contact_tolerance)
        out.append(GraspCandidate(state, contacts, index=i))
    return out


# ---------------------------------------------------------------------------
# Stability: friction-cone linear feasibility
# ---------------------------------------------------------------------------

def _tangent_basis(normal: np.ndarray):
    ref = np.array([1.0, 0, 0]) if abs(normal[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def friction_cone_edges(normal, friction: float, count: int) -> np.ndarray:
    """Inward force-cone edges with unit inward-normal component, (count, 3)."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    u, v = _tangent_basis(n)
    angles = 2.0 * math.pi * np.arange(count) / count
    return (-n[None, :] + friction *
            (np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * v))


def contact_wrenches(contacts, reference, friction: float,
                     cone_edges: int) -> np.ndarray:
    """Wrench matrix (6, K): force rows then torque rows about the reference."""
    cols = []
    ref = np.asarray(reference, dtype=float)
    for c in contacts:
        edges = friction_cone_edges(c.normal, friction, cone_edges)
        arm = c.point - ref
        for f in edges:
            cols.append(np.concatenate([f, np.cross(arm, f)]))
    return np.array(cols).T


def wrench_feasible(wrenches: np.ndarray, external: np.ndarray,
                    budget: float) -> bool:
    """Can nonnegative edge forces with bounded total balance the external wrench?"""
    k = wrenches.shape[1]
    res = linprog(np.zeros(k), A_ub=np.ones((1, k)), b_ub=[budget],
                  A_eq=wrenches, b_eq=-external, bounds=(0, None),
                  method="highs")
    return bool(res.status == 0)


def stability_test(cand: GraspCandidate, mesh: ObjectMesh,
                   params: StabilityParams, directions) -> list[bool]:
    """Per-direction verdict: contacts balance gravity plus the test force.

    Directions and gravity_direction are interpreted in the contact frame
    (the object frame for candidates). Forces are expressed in multiples of
    the object weight, torques about the object volume centroid.
    """
    if not cand.contacts:
        return [False] * len(list(directions))
    w = contact_wrenches(cand.contacts, mesh.volume_centroid(),
                         params.friction, params.cone_edges)
    g = np.asarray(params.gravity_direction, dtype=float)
    g = g / np.linalg.norm(g)
    verdicts = []
    for d in directions:
        d = np.asarray(d, dtype=float)
        force = g + params.test_force_scale * d / np.linalg.norm(d)
        external = np.concatenate([force, np.zeros(3)])
        verdicts.append(wrench_feasible(w, external, params.force_budget))
    return verdicts


def apply_stability(cand: GraspCandidate, mesh: ObjectMesh,
                    params: StabilityParams,
                    directions=SIX_DIRECTIONS) -> GraspCandidate:
    verdicts = stability_test(cand, mesh, params, directions)
    return replace(cand, stable6=all(verdicts))


# ---------------------------------------------------------------------------
# Collision filter
# ---------------------------------------------------------------------------

def hand_penetration(hand: HandConfig, state: HandState, mesh: ObjectMesh,
                     object_pose: Pose3, proxies=()) -> float:
    """Deepest overlap of hand spheres into the object or giver, meters.

    Proxies are world-frame spheres; overlap depth of two spheres is the sum
    of radii minus the center distance.
    """
    centers, radii = sphere_arrays(hand, state)
    sd = signed_distances(mesh, object_pose, centers)
    depth = float(np.max(radii - sd))
    for p in proxies:
        gap = np.linalg.norm(centers - p.center, axis=1) - radii - p.radius
        depth = max(depth, float(-np.min(gap)))
    return max(0.0, depth)


def filter_collision(cand: GraspCandidate, mesh: ObjectMesh, hand: HandConfig,
                     proxies=(), tolerance: float = 2e-3) -> bool:
    """True iff the hand neither penetrates the object nor hits the giver."""
    spheres = collision_spheres(hand, cand.relative)
    if penetration_depth(spheres, mesh, Pose3.identity()) > tolerance:
        return False
    for s in spheres:
        for p in proxies:
            if np.linalg.norm(s.center - p.center) < s.radius + p.radius:
                return False
    return True


def apply_collision(cand: GraspCandidate, mesh: ObjectMesh, hand: HandConfig,
                    proxies=(), tolerance: float = 2e-3) -> GraspCandidate:
    return replace(cand, collision_free=filter_collision(
        cand, mesh, hand, proxies, tolerance))


def filter_candidates(candidates, mesh: ObjectMesh, hand: HandConfig,
                      params: StabilityParams, proxies=(),
                      directions=SIX_DIRECTIONS) -> list[GraspCandidate]:
    """Run both filters on every candidate; order does not affect the verdicts."""
    out = []
    for cand in candidates:
        cand = apply_collision(cand, mesh, hand, proxies,
                               params.contact_tolerance)
        cand = apply_stability(cand, mesh, params, directions)
        out.append(cand)
    return out


# ---------------------------------------------------------------------------
# Goal selection and rigid tracking
# ---------------------------------------------------------------------------

def world_goal(cand: GraspCandidate, object_pose: Pose3) -> GraspCandidate:
    """Populate world-frame state and contacts for the current object pose."""
    pose = object_pose.compose(cand.relative.pose)
    world = HandState(pose, cand.relative.articulation)
    contacts = tuple(c.transformed(object_pose) for c in cand.contacts)
    return replace(cand, world=world, contacts_world=contacts)


def select_goal(candidates, object_pose: Pose3, current: HandState,
                rot_weight: float = DEFAULT_ROT_WEIGHT) -> GraspCandidate:
    """Surviving candidate whose world pose is closest to the current hand."""
    best = None
    best_key = None
    for cand in candidates:
        if not cand.surviving():
            continue
        pose = object_pose.compose(cand.relative.pose)
        d = pose_distance(pose, current.pose, rot_weight)
        key = (d, cand.index)   # ties go to the lowest candidate index
        if best_key is None or key < best_key:
            best, best_key = cand, key
    if best is None:
        raise NoValidGraspError("no candidate passed both filters")
    return world_goal(best, object_pose)


def track_goal(goal: GraspCandidate, old_object_pose: Pose3,
               new_object_pose: Pose3) -> GraspCandidate:
    """Carry the world-frame goal along with the rigid object motion."""
    if goal.world is None:
        raise ValueError("goal has no world state; run select_goal first")
    delta = new_object_pose.compose(old_object_pose.inverse())
    pose = Pose3(delta.rotation.compose(goal.world.pose.rotation),
                 delta.apply(goal.world.pose.translation))
    world = HandState(pose, goal.world.articulation)
    contacts = tuple(c.transformed(delta) for c in (goal.contacts_world or ()))
    return replace(goal, world=world, contacts_world=contacts)


def goal_hand_cloud(hand: HandConfig, goal: GraspCandidate):
    from .hand import hand_point_cloud
    if goal.world is None:
        raise ValueError("goal has no world state")
    return hand_point_cloud(hand, goal.world)
