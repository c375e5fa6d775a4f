"""Goal-pose alignment: the fixed-velocity endgame inside the threshold U.

Once the hand is within U of the goal, each frame moves the hand along the
interpolation path toward the re-tracked goal by exactly v (or the remaining
gap, if smaller). With a static object this closes a gap d0 in exactly
ceil(d0 / v) frames; against a receding object the gap still shrinks by
v minus the object speed per frame. Rounding the per-frame step down to
gap / ceil(gap / v) instead would stall short of the stop distance whenever
the object keeps receding, so the step is held at v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose3, interpolate_pose
from .grasping import GraspCandidate, hand_penetration
from .hand import HandConfig, HandState, hand_point_cloud
from .mesh import ObjectMesh

EASY_THRESHOLD = 0.10
HARD_THRESHOLD = 0.05
MODES = {"easy": EASY_THRESHOLD, "hard": HARD_THRESHOLD}
DEFAULT_VELOCITY = 0.02
DEFAULT_STOP = 0.01
DISTANCE_MODES = ("centroid", "wrist")


@dataclass(frozen=True)
class AlignmentParams:
    threshold: float = EASY_THRESHOLD
    velocity: float = DEFAULT_VELOCITY
    stop: float = DEFAULT_STOP
    collision_tolerance: float = 2e-3
    distance_mode: str = "centroid"

    def __post_init__(self):
        if self.velocity <= 0.0:
            raise ValueError("velocity must be positive")
        if not 0.0 < self.stop < self.threshold:
            raise ValueError("need 0 < stop distance < threshold")
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"unknown distance mode {self.distance_mode!r}")

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "AlignmentParams":
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
        return cls(threshold=MODES[mode], **kwargs)


def alignment_distance(current: HandState, goal: GraspCandidate,
                       hand: HandConfig, mode: str = "centroid") -> float:
    """Distance between current and goal hand clouds (centroids), meters."""
    if goal.world is None:
        raise ValueError("goal has no world state; run select_goal first")
    if mode == "wrist":
        return float(np.linalg.norm(goal.world.pose.translation -
                                    current.pose.translation))
    a = hand_point_cloud(hand, current).points.mean(axis=0)
    b = hand_point_cloud(hand, goal.world).points.mean(axis=0)
    return float(np.linalg.norm(b - a))


def plan_steps(d: float, v: float) -> int:
    """Frames needed to cover d at v per frame; ceiling, at least 1.

    The small slack keeps exact multiples (0.10 / 0.02) from rounding up to
    an extra frame through float noise.
    """
    return max(1, math.ceil(d / v - 1e-9))


@dataclass(frozen=True)
class AlignmentStep:
    """One controller tick: the state to move to plus flags the engine logs."""

    next: HandState
    collision: bool
    done: bool
    distance: float      # d recomputed at `next`
    penetration: float   # deepest hand overlap at `next`, meters


def alignment_step(current: HandState, goal: GraspCandidate,
                   params: AlignmentParams, hand: HandConfig,
                   mesh: ObjectMesh, object_pose: Pose3,
                   proxies=()) -> AlignmentStep:
    """Advance v along the interpolation path toward the re-tracked goal."""
    d = alignment_distance(current, goal, hand, params.distance_mode)
    if d < params.stop:
        pen = hand_penetration(hand, current, mesh, object_pose, proxies)
        return AlignmentStep(current, pen > params.collision_tolerance,
                             True, d, pen)
    # the centroid gap understates wrist travel when rotations disagree;
    # pace by whichever is larger so the wrist never moves more than v
    wrist = float(np.linalg.norm(goal.world.pose.translation -
                                 current.pose.translation))
    s = min(1.0, params.velocity / max(d, wrist))
    pose = interpolate_pose(current.pose, goal.world.pose, s)
    articulation = current.articulation + s * (goal.world.articulation -
                                               current.articulation)
    nxt = HandState(pose, articulation)
    d_next = alignment_distance(nxt, goal, hand, params.distance_mode)
    pen = hand_penetration(hand, nxt, mesh, object_pose, proxies)
    return AlignmentStep(nxt, pen > params.collision_tolerance,
                         d_next < params.stop, d_next, pen)
