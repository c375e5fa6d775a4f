import numpy as np
import pytest

from handoverlab.alignment import (AlignmentParams, AlignmentStep,
                                   alignment_distance, alignment_step,
                                   plan_steps)
from handoverlab.geometry import Pose3, Rotation3
from handoverlab.grasping import GraspCandidate, track_goal
from handoverlab.hand import HandState, default_hand_config, hand_point_cloud
from handoverlab.mesh import Sphere, box_mesh

from helpers import random_pose

HAND = default_hand_config()
OPEN = HAND.open_articulation()
BOX = box_mesh((0.06, 0.06, 0.06))
FAR_OBJECT = Pose3(Rotation3.identity(), np.array([0.0, 0.0, -10.0]))


def _state(t=(0.0, 0.0, 0.0), q=None, rot=None):
    rot = Rotation3.identity() if rot is None else rot
    return HandState(Pose3(rot, np.array(t, dtype=float)),
                     OPEN if q is None else q)


def _goal(state: HandState) -> GraspCandidate:
    return GraspCandidate(relative=state, contacts=(), stable6=True,
                          collision_free=True, index=0, world=state,
                          contacts_world=())


def _run(start, goal, params, object_pose=FAR_OBJECT, limit=100):
    """Step until done; returns the visited states after each step."""
    states, cur = [], start
    for _ in range(limit):
        step = alignment_step(cur, goal, params, HAND, BOX, object_pose)
        states.append(step)
        cur = step.next
        if step.done:
            return states
    raise AssertionError("alignment did not terminate")


# ---------------------------------------------------------------------------
# Distance and schedule
# ---------------------------------------------------------------------------

def test_distance_zero_at_goal():
    here = _state(t=(0.2, 0.0, 0.1))
    assert alignment_distance(here, _goal(here), HAND) == 0.0


def test_distance_equals_rigid_shift():
    a = _state(t=(0.0, 0.0, 0.0))
    b = _state(t=(0.0, 0.07, 0.0))
    assert abs(alignment_distance(a, _goal(b), HAND) - 0.07) < 1e-9


def test_distance_matches_centroid_oracle_for_differing_articulation():
    rng = np.random.default_rng(3)
    for _ in range(5):
        qa = HAND.clamp(rng.uniform(-0.2, 1.2, HAND.articulation_dim))
        qb = HAND.clamp(rng.uniform(-0.2, 1.2, HAND.articulation_dim))
        a = HandState(random_pose(rng), qa)
        b = HandState(random_pose(rng), qb)
        ca = hand_point_cloud(HAND, a).points.mean(axis=0)
        cb = hand_point_cloud(HAND, b).points.mean(axis=0)
        got = alignment_distance(a, _goal(b), HAND)
        assert abs(got - np.linalg.norm(cb - ca)) < 1e-12


def test_wrist_distance_mode():
    a = _state(t=(0.0, 0.0, 0.0), rot=Rotation3.from_axis_angle([0, 0, 1], 1.0))
    b = _state(t=(0.3, 0.4, 0.0))
    assert abs(alignment_distance(a, _goal(b), HAND, "wrist") - 0.5) < 1e-12


def test_plan_steps_examples():
    assert plan_steps(0.10, 0.02) == 5
    assert plan_steps(0.02, 0.02) == 1
    assert plan_steps(0.05, 0.02) == 3
    assert plan_steps(1e-9, 0.02) == 1


def test_params_validation():
    with pytest.raises(ValueError):
        AlignmentParams(threshold=0.05, stop=0.05)
    with pytest.raises(ValueError):
        AlignmentParams(velocity=0.0)
    with pytest.raises(ValueError):
        AlignmentParams(distance_mode="palm")
    with pytest.raises(ValueError):
        AlignmentParams.for_mode("medium")
    assert AlignmentParams.for_mode("easy").threshold == 0.10
    assert AlignmentParams.for_mode("hard").threshold == 0.05


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def test_static_ten_centimeters_takes_exactly_five_frames():
    goal = _goal(_state(t=(0.10, 0.0, 0.0)))
    steps = _run(_state(), goal, AlignmentParams())
    assert len(steps) == 5
    assert steps[-1].distance < 0.01
    prev = _state()
    for s in steps:
        wrist = np.linalg.norm(s.next.pose.translation -
                               prev.pose.translation)
        assert abs(wrist - 0.02) < 1e-6
        prev = s.next


def test_already_within_stop_is_done_immediately():
    goal = _goal(_state(t=(0.005, 0.0, 0.0)))
    step = alignment_step(_state(), goal, AlignmentParams(), HAND, BOX,
                          FAR_OBJECT)
    assert step.done
    assert step.next is not None
    assert step.next.pose.translation is _state().pose.translation or \
        np.array_equal(step.next.pose.translation, np.zeros(3))


def test_static_termination_matches_ceiling_schedule():
    # at exact multiples of v the count is ceil(d0/v); in general the stop
    # threshold trims the tail to ceil((d0 - stop)/v)
    rng = np.random.default_rng(9)
    params = AlignmentParams()
    for k in range(1, 9):
        d0 = k * params.velocity
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        goal = _goal(_state(t=tuple(d0 * direction)))
        steps = _run(_state(), goal, params)
        assert len(steps) == plan_steps(d0, params.velocity) == k
        assert steps[-1].distance < params.stop
    for _ in range(8):
        d0 = float(rng.uniform(0.011, 0.3))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        goal = _goal(_state(t=tuple(d0 * direction)))
        steps = _run(_state(), goal, params)
        assert len(steps) == plan_steps(d0 - params.stop, params.velocity)
        assert steps[-1].distance < params.stop


def test_articulation_reaches_goal_exactly_on_landing():
    closed = HAND.clamp(np.full(HAND.articulation_dim, 0.9))
    goal = _goal(_state(t=(0.06, 0.0, 0.0), q=closed))
    steps = _run(_state(), goal, AlignmentParams())
    final = steps[-1].next
    assert np.max(np.abs(final.articulation - closed)) < 1e-12
    assert np.max(np.abs(final.pose.translation -
                         np.array([0.06, 0.0, 0.0]))) < 1e-12


def test_wrist_speed_capped_even_when_rotation_hides_distance():
    # rotating the hand about its own cloud centroid moves the wrist a lot
    # while barely moving the centroid; the pace guard must notice
    c = hand_point_cloud(HAND, _state()).points.mean(axis=0)
    rot = Rotation3.from_axis_angle([0.0, 0.0, 1.0], np.pi)
    t_goal = c - rot.apply(c) + np.array([0.0, 0.03, 0.0])
    goal = _goal(_state(t=tuple(t_goal), rot=rot))
    params = AlignmentParams()
    cur = _state()
    for _ in range(60):
        step = alignment_step(cur, goal, params, HAND, BOX, FAR_OBJECT)
        wrist = np.linalg.norm(step.next.pose.translation -
                               cur.pose.translation)
        assert wrist <= params.velocity + 1e-9
        cur = step.next
        if step.done:
            break
    else:
        raise AssertionError("did not finish")


def test_wrist_speed_cap_over_random_goals():
    rng = np.random.default_rng(21)
    params = AlignmentParams()
    for _ in range(8):
        cur = _state(t=tuple(rng.uniform(-0.1, 0.1, 3)))
        q = HAND.clamp(rng.uniform(-0.2, 1.2, HAND.articulation_dim))
        goal = _goal(HandState(random_pose(rng), q))
        for _ in range(120):
            step = alignment_step(cur, goal, params, HAND, BOX, FAR_OBJECT)
            wrist = np.linalg.norm(step.next.pose.translation -
                                   cur.pose.translation)
            assert wrist <= params.velocity + 1e-9
            cur = step.next
            if step.done:
                break


def test_receding_object_still_converges_with_margin():
    # object drifts 1cm/frame away; the gap must close by >= v - drift each
    # frame measured goal-to-goal, and alignment must still finish
    drift = np.array([0.01, 0.0, 0.0])
    params = AlignmentParams()
    object_pose = Pose3.identity()
    goal = _goal(_state(t=(0.05, 0.0, 0.0)))
    cur = _state()
    d_prev = alignment_distance(cur, goal, HAND)
    for _ in range(40):
        new_pose = Pose3(object_pose.rotation,
                         object_pose.translation + drift)
        goal = track_goal(goal, object_pose, new_pose)
        object_pose = new_pose
        d_meas = alignment_distance(cur, goal, HAND)
        step = alignment_step(cur, goal, params, HAND, BOX, FAR_OBJECT)
        cur = step.next
        if step.done:
            break
        assert d_meas - step.distance >= params.velocity - 1e-9
        d_after_drift = d_meas - d_prev
        assert d_after_drift <= 0.01 + 1e-9
        d_prev = d_meas
    else:
        raise AssertionError("never finished against receding object")


def test_faster_object_never_reaches_done():
    # giver outruns the controller: v = 2cm but object flees at 3cm/frame
    drift = np.array([0.03, 0.0, 0.0])
    params = AlignmentParams()
    object_pose = Pose3.identity()
    goal = _goal(_state(t=(0.04, 0.0, 0.0)))
    cur = _state()
    for _ in range(50):
        new_pose = Pose3(object_pose.rotation,
                         object_pose.translation + drift)
        goal = track_goal(goal, object_pose, new_pose)
        object_pose = new_pose
        step = alignment_step(cur, goal, params, HAND, BOX, FAR_OBJECT)
        assert not step.done
        cur = step.next


def test_trajectory_invariant_under_fixed_frame_change():
    # observing the same scene from a rigidly offset frame must not change
    # the object-relative trajectory
    g_rot = Rotation3.from_axis_angle([0.3, -0.5, 0.8], 1.1)
    g = Pose3(g_rot, np.array([0.4, -0.2, 0.7]))
    params = AlignmentParams()

    rel_goal = _state(t=(0.08, 0.02, -0.03),
                      rot=Rotation3.from_axis_angle([0, 0, 1], 0.4))
    start_rel = _state()

    base_goal = _goal(rel_goal)
    base = _run(start_rel, base_goal, params)

    moved_goal_state = HandState(g.compose(rel_goal.pose),
                                 rel_goal.articulation)
    moved_goal = GraspCandidate(relative=rel_goal, contacts=(), stable6=True,
                                collision_free=True, index=0,
                                world=moved_goal_state, contacts_world=())
    moved_start = HandState(g.compose(start_rel.pose),
                            start_rel.articulation)
    moved = _run(moved_start, moved_goal, params,
                 object_pose=Pose3(g.rotation,
                                   g.translation + np.array([0, 0, -10.0])))

    assert len(base) == len(moved)
    g_inv = g.inverse()
    for sb, sm in zip(base, moved):
        back = g_inv.compose(sm.next.pose)
        assert np.max(np.abs(back.translation -
                             sb.next.pose.translation)) < 1e-6
        assert back.rotation.angle_to(sb.next.pose.rotation) < 1e-6


# ---------------------------------------------------------------------------
# Collision flag
# ---------------------------------------------------------------------------

def test_collision_flag_against_object_and_proxies():
    params = AlignmentParams()
    goal = _goal(_state(t=(0.3, 0.0, 0.0)))
    # hand centered on the box: spheres penetrate well past tolerance
    buried = _state(t=(-0.05, 0.0, 0.0))
    step = alignment_step(buried, goal, params, HAND, BOX, Pose3.identity())
    assert step.collision
    assert step.penetration > params.collision_tolerance

    clear = _state(t=(0.0, 0.0, 0.5))
    step = alignment_step(clear, goal, params, HAND, BOX, Pose3.identity())
    assert not step.collision
    assert step.penetration == 0.0

    blob = (Sphere(np.array([0.05, 0.0, 0.512]), 0.05),)
    step = alignment_step(clear, goal, params, HAND, BOX, Pose3.identity(),
                          proxies=blob)
    assert step.collision
