"""Receding-horizon approach policies over observation windows.

Policies are pure functions (window, params) -> plan. The engine executes the
first executed_prefix deltas of each plan, then rebuilds the window and calls
the policy again. Both baselines share the learned-policy I/O contract, so a
different policy can be swapped in without engine changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyHistoryError
from .geometry import (DEFAULT_ROT_WEIGHT, PointCloud, Pose3, interpolate_pose,
                       pose_distance)
from .grasping import GraspCandidate
from .hand import HandConfig, HandDelta, HandState, hand_point_cloud
from .world import ObservationFrame

DEFAULT_WINDOW = 4          # k observed frames
DEFAULT_HORIZON = 8         # m planned steps
DEFAULT_PREFIX = 4          # a executed steps per plan
DEFAULT_STEP_CAP = 0.03     # m per frame


@dataclass(frozen=True)
class PolicyParams:
    gain: float = 1.0
    step_cap: float = DEFAULT_STEP_CAP
    horizon: int = DEFAULT_HORIZON
    executed_prefix: int = DEFAULT_PREFIX
    window: int = DEFAULT_WINDOW
    rot_weight: float = DEFAULT_ROT_WEIGHT
    # Articulation target during approach; None pursues the goal articulation.
    rest_articulation: np.ndarray | None = None

    def __post_init__(self):
        if self.gain <= 0 or self.step_cap <= 0:
            raise ValueError("gain and step_cap must be positive")
        if not 1 <= self.executed_prefix <= self.horizon:
            raise ValueError("need 1 <= executed_prefix <= horizon")
        if self.window < 1:
            raise ValueError("window must hold at least one frame")
        if self.rest_articulation is not None:
            q = np.array(self.rest_articulation, dtype=float)
            q.setflags(write=False)
            object.__setattr__(self, "rest_articulation", q)


@dataclass(frozen=True)
class ObservationWindow:
    """k past frames plus hand clouds annotated with velocity and goal offset."""

    frames: tuple[ObservationFrame, ...]
    goal: GraspCandidate
    hand_clouds: tuple[PointCloud, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "hand_clouds", tuple(self.hand_clouds))
        if len(self.frames) != len(self.hand_clouds) or not self.frames:
            raise ValueError("frames and hand clouds must match and be nonempty")
        indices = [f.frame for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("frame indices must strictly increase")
        if self.goal.world is None:
            raise ValueError("goal must carry a world-frame state")
        for cloud in self.hand_clouds:
            for key in ("velocity", "goal_offset"):
                if key not in cloud.vectors:
                    raise ValueError(f"hand cloud missing {key!r} attribute")

    @property
    def current(self) -> HandState:
        return self.frames[-1].hand_state


def build_observation(history, k: int, goal: GraspCandidate,
                      hand: HandConfig) -> ObservationWindow:
    """Window over the last k frames; short histories repeat the earliest frame.

    Padding copies keep the earliest content under synthetic decreasing frame
    indices so window indices stay strictly increasing.
    """
    history = list(history)
    if not history:
        raise EmptyHistoryError("no observation frames buffered")
    tail = history[-k:]
    while len(tail) < k:
        first = tail[0]
        tail.insert(0, ObservationFrame(first.object_cloud, first.hand_state,
                                        first.frame - 1))
    goal_cloud = hand_point_cloud(hand, goal.world)
    raw = [hand_point_cloud(hand, f.hand_state).points for f in tail]
    clouds = []
    for i, pts in enumerate(raw):
        velocity = np.zeros_like(pts) if i == 0 else pts - raw[i - 1]
        clouds.append(PointCloud(pts, vectors={
            "velocity": velocity,
            "goal_offset": goal_cloud.points - pts,
        }))
    return ObservationWindow(tuple(tail), goal, tuple(clouds))


@dataclass(frozen=True)
class ActionPlan:
    """m future hand deltas; only the first executed_prefix are ever executed."""

    deltas: tuple[HandDelta, ...]
    executed_prefix: int = DEFAULT_PREFIX
    step_cap: float = DEFAULT_STEP_CAP

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(self.deltas))
        if not 1 <= self.executed_prefix <= len(self.deltas):
            raise ValueError("need 1 <= executed_prefix <= plan length")
        for i, d in enumerate(self.deltas):
            step = float(np.linalg.norm(d.translation))
            if step > self.step_cap + 1e-12:
                raise ValueError(
                    f"delta {i} translation {step:.4f} m exceeds step cap "
                    f"{self.step_cap:.4f} m")

    def executed(self) -> tuple[HandDelta, ...]:
        return self.deltas[:self.executed_prefix]


def _pursuit_step(current: HandState, target_pose: Pose3, target_q: np.ndarray,
                  params: PolicyParams) -> HandState:
    """One capped step along the interpolation path toward the target."""
    d = pose_distance(current.pose, target_pose, params.rot_weight)
    if d < 1e-12:
        return HandState(target_pose, np.array(current.articulation))
    s = min(params.gain * d, params.step_cap) / d
    s = min(s, 1.0)
    pose = interpolate_pose(current.pose, target_pose, s)
    q = current.articulation + s * (target_q - current.articulation)
    return HandState(pose, q)


def _rollout(window: ObservationWindow, params: PolicyParams,
             goal_poses) -> ActionPlan:
    """Auto-regressive internal rollout: plan against predicted goal poses."""
    goal_q = window.goal.world.articulation
    target_q = params.rest_articulation if params.rest_articulation is not None \
        else goal_q
    cur = window.current
    deltas = []
    for pose in goal_poses:
        nxt = _pursuit_step(cur, pose, target_q, params)
        deltas.append(HandDelta.between(cur, nxt))
        cur = nxt
    return ActionPlan(tuple(deltas), params.executed_prefix, params.step_cap)


def goal_pursuit_policy(window: ObservationWindow,
                        params: PolicyParams = PolicyParams()) -> ActionPlan:
    """Pursue the goal as currently tracked, ignoring object motion."""
    return _rollout(window, params,
                    [window.goal.world.pose] * params.horizon)


def object_velocity(window: ObservationWindow) -> np.ndarray:
    """Mean per-frame object centroid drift across the window, m/frame."""
    centroids = np.array([f.object_cloud.points.mean(axis=0)
                          for f in window.frames])
    if len(centroids) < 2:
        return np.zeros(3)
    return (centroids[-1] - centroids[0]) / (len(centroids) - 1)


def predicted_goal_poses(window: ObservationWindow,
                         params: PolicyParams) -> list[Pose3]:
    """Goal pose extrapolated j frames ahead by the estimated object velocity."""
    v = object_velocity(window)
    base = window.goal.world.pose
    return [Pose3(base.rotation, base.translation + j * v)
            for j in range(1, params.horizon + 1)]


def velocity_matching_policy(window: ObservationWindow,
                             params: PolicyParams = PolicyParams()) -> ActionPlan:
    """Pursuit toward the goal extrapolated along the object's drift."""
    return _rollout(window, params, predicted_goal_poses(window, params))


POLICIES = {
    "goal_pursuit": goal_pursuit_policy,
    "velocity_matching": velocity_matching_policy,
}
