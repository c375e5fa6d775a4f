import numpy as np
import pytest

from handoverlab.errors import NoValidGraspError
from handoverlab.geometry import PointCloud, Pose3, Rotation3, pose_distance
from handoverlab.grasping import (SIX_DIRECTIONS, Contact, GraspCandidate,
                                  StabilityParams, apply_collision,
                                  apply_stability, contact_wrenches,
                                  filter_candidates, filter_collision,
                                  friction_cone_edges, sample_candidates,
                                  select_goal, stability_test, track_goal,
                                  world_goal, wrench_feasible)
from handoverlab.hand import HandState, collision_spheres, default_hand_config
from handoverlab.mesh import (Sphere, box_mesh, icosphere_mesh,
                              penetration_depth, signed_distance,
                              signed_distances)

from helpers import random_pose, random_rotation, random_unit
from oracles import force_closure_oracle, wrench_feasible_oracle


@pytest.fixture(scope="module")
def hand():
    return default_hand_config(seed=0)


@pytest.fixture(scope="module")
def ball():
    return icosphere_mesh(0.04, 2)


def _candidate_with_contacts(contacts) -> GraspCandidate:
    state = HandState(Pose3.identity(), np.zeros(22))
    return GraspCandidate(state, tuple(contacts))


def _antipodal(r=0.04):
    return (Contact([r, 0.0, 0.0], [1.0, 0.0, 0.0], "a"),
            Contact([-r, 0.0, 0.0], [-1.0, 0.0, 0.0], "b"))


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

def test_candidates_deterministic(hand, ball):
    a = sample_candidates(ball, hand, 6, seed=12)
    b = sample_candidates(ball, hand, 6, seed=12)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.relative.pose.translation,
                                      y.relative.pose.translation)
        np.testing.assert_array_equal(x.relative.articulation,
                                      y.relative.articulation)
        assert len(x.contacts) == len(y.contacts)


def test_standoff_band_on_sphere(hand, ball):
    from handoverlab.grasping import PALM_REFERENCE
    band = (0.01, 0.04)
    for cand in sample_candidates(ball, hand, 12, seed=3,
                                  standoff_band=band):
        palm = cand.relative.pose.apply(PALM_REFERENCE)
        gap = signed_distance(ball, Pose3.identity(), palm)
        assert band[0] - 2e-3 <= gap <= band[1] + 2e-3


def test_cube_approach_covers_faces(hand):
    cube = box_mesh((0.07, 0.07, 0.07))
    faces = set()
    for cand in sample_candidates(cube, hand, 64, seed=0):
        # The palm faces the object along the hand frame +z axis.
        outward = -cand.relative.pose.rotation.apply(np.array([0, 0, 1.0]))
        axis = int(np.argmax(np.abs(outward)))
        faces.add((axis, outward[axis] > 0))
    assert len(faces) >= 5


def test_contacts_lie_on_surface(hand, ball):
    for cand in sample_candidates(ball, hand, 8, seed=7):
        for c in cand.contacts:
            assert abs(signed_distance(ball, Pose3.identity(), c.point)) < 1e-6


def test_fingertips_close_without_deep_penetration(hand, ball):
    for cand in sample_candidates(ball, hand, 8, seed=5):
        spheres = collision_spheres(hand, cand.relative)
        pen = penetration_depth(spheres, ball, Pose3.identity())
        assert pen <= 2e-3 + 1e-9


def test_most_candidates_touch_the_object(hand, ball):
    cands = sample_candidates(ball, hand, 16, seed=2)
    with_contacts = sum(1 for c in cands if len(c.contacts) >= 2)
    assert with_contacts >= 12


# ---------------------------------------------------------------------------
# Friction cones and stability verdicts
# ---------------------------------------------------------------------------

def test_cone_edges_unit_normal_component():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = random_unit(rng)
        edges = friction_cone_edges(n, 0.5, 8)
        np.testing.assert_allclose(edges @ -n, np.ones(8), atol=1e-12)
        tang = edges - np.outer(edges @ -n, -n)
        np.testing.assert_allclose(np.linalg.norm(tang, axis=1), 0.5,
                                   atol=1e-12)


def test_antipodal_grasp_passes_six(ball):
    cand = _candidate_with_contacts(_antipodal())
    verdicts = stability_test(cand, ball, StabilityParams(), SIX_DIRECTIONS)
    assert verdicts[0] and verdicts[1]   # contact-axis directions
    assert all(verdicts)


def test_single_contact_pull_away_fails(ball):
    cand = _candidate_with_contacts([Contact([0.04, 0, 0], [1, 0, 0], "a")])
    verdicts = stability_test(cand, ball, StabilityParams(),
                              [np.array([1.0, 0, 0])])
    assert verdicts == [False]


def test_zero_contacts_unstable(ball):
    cand = _candidate_with_contacts([])
    assert stability_test(cand, ball, StabilityParams(), SIX_DIRECTIONS) \
        == [False] * 6


def test_three_symmetric_contacts_force_closure():
    r = 0.05
    contacts = []
    for k in range(3):
        a = 2 * np.pi * k / 3
        n = np.array([np.cos(a), np.sin(a), 0.0])
        contacts.append(Contact(r * n, n, f"c{k}"))
    w = contact_wrenches(contacts, np.zeros(3), 0.5, 8)
    assert force_closure_oracle(w)
    params = StabilityParams()
    for d in SIX_DIRECTIONS:
        g = np.array(params.gravity_direction)
        ext = np.concatenate([g + params.test_force_scale * d, np.zeros(3)])
        assert wrench_feasible(w, ext, params.force_budget)


def test_frictionless_antipodal_cannot_hold_gravity(ball):
    cand = _candidate_with_contacts(_antipodal())
    params = StabilityParams(friction=1e-9)
    verdicts = stability_test(cand, ball, params, SIX_DIRECTIONS)
    assert not any(verdicts)


def test_verdicts_match_hull_oracle(ball):
    # Randomized contact sets: LP feasibility must agree with the
    # convex-hull containment oracle in every direction.
    rng = np.random.default_rng(42)
    params = StabilityParams()
    checked = 0
    for _ in range(60):
        m = rng.integers(1, 6)
        contacts = []
        for i in range(m):
            n = random_unit(rng)
            contacts.append(Contact(0.05 * n, n, f"c{i}"))
        cand = _candidate_with_contacts(contacts)
        verdicts = stability_test(cand, ball, params, SIX_DIRECTIONS)
        w = contact_wrenches(contacts, ball.volume_centroid(),
                             params.friction, params.cone_edges)
        g = np.array(params.gravity_direction, dtype=float)
        for d, v in zip(SIX_DIRECTIONS, verdicts):
            ext = np.concatenate([g + params.test_force_scale * d,
                                  np.zeros(3)])
            assert v == wrench_feasible_oracle(w, ext, params.force_budget)
            checked += 1
    assert checked >= 300


def test_feasibility_monotone_in_test_magnitude(ball):
    rng = np.random.default_rng(7)
    for _ in range(10):
        contacts = [Contact(0.04 * random_unit(rng), random_unit(rng), "c")
                    for _ in range(4)]
        cand = _candidate_with_contacts(contacts)
        d = [random_unit(rng)]
        prev = None
        for scale in (3.0, 2.0, 1.0, 0.5, 0.25):
            v = stability_test(cand, ball,
                               StabilityParams(test_force_scale=scale), d)[0]
            if prev is not None:
                assert v or not prev   # feasible at larger scale stays feasible
            prev = v


def test_verdicts_rigidly_invariant():
    rng = np.random.default_rng(3)
    params = StabilityParams()
    for _ in range(10):
        contacts = [Contact(0.05 * random_unit(rng), random_unit(rng), "c")
                    for _ in range(3)]
        ref = np.zeros(3)
        g = np.array([0.0, 0.0, -1.0])
        pose = random_pose(rng)
        moved = [c.transformed(pose) for c in contacts]
        w0 = contact_wrenches(contacts, ref, params.friction, 8)
        w1 = contact_wrenches(moved, pose.apply(ref), params.friction, 8)
        for d in (random_unit(rng), random_unit(rng)):
            e0 = np.concatenate([g + 2.0 * d, np.zeros(3)])
            e1 = np.concatenate([pose.rotation.apply(g + 2.0 * d), np.zeros(3)])
            assert wrench_feasible(w0, e0, params.force_budget) == \
                wrench_feasible(w1, e1, params.force_budget)


# ---------------------------------------------------------------------------
# Collision filter
# ---------------------------------------------------------------------------

def test_far_hand_passes(hand, ball):
    state = HandState(Pose3(Rotation3.identity(), np.array([1.0, 0, 0])),
                      hand.open_articulation())
    cand = GraspCandidate(state, ())
    assert filter_collision(cand, ball, hand, ())


def test_concentric_proxy_fails(hand, ball):
    state = HandState(Pose3(Rotation3.identity(), np.array([1.0, 0, 0])),
                      hand.open_articulation())
    cand = GraspCandidate(state, ())
    wrist_world = collision_spheres(hand, state)[0]
    proxy = Sphere(wrist_world.center, 0.01)
    assert not filter_collision(cand, ball, hand, (proxy,))


def test_collision_matches_bruteforce(hand, ball):
    rng = np.random.default_rng(11)
    proxies = (Sphere([0.0, 0.0, -0.06], 0.012), Sphere([0.02, 0, -0.06], 0.012))
    for _ in range(12):
        pose = Pose3(random_rotation(rng), rng.uniform(-0.12, 0.12, 3))
        state = hand.make_state(pose, rng.uniform(hand.lower_limits(),
                                                  hand.upper_limits()))
        cand = GraspCandidate(state, ())
        got = filter_collision(cand, ball, hand, proxies, tolerance=2e-3)
        spheres = collision_spheres(hand, state)
        centers = np.array([s.center for s in spheres])
        radii = np.array([s.radius for s in spheres])
        sd = signed_distances(ball, Pose3.identity(), centers)
        expect = bool(np.max(radii - sd) <= 2e-3)
        for s in spheres:
            for p in proxies:
                if np.linalg.norm(s.center - p.center) < s.radius + p.radius:
                    expect = False
        assert got == expect


def test_filter_order_irrelevant(hand, ball):
    cands = sample_candidates(ball, hand, 10, seed=1)
    params = StabilityParams()
    ab = [apply_stability(apply_collision(c, ball, hand), ball, params)
          for c in cands]
    ba = [apply_collision(apply_stability(c, ball, params), ball, hand)
          for c in cands]
    assert [c.surviving() for c in ab] == [c.surviving() for c in ba]


# ---------------------------------------------------------------------------
# Goal selection and tracking
# ---------------------------------------------------------------------------

def _fake_survivors(rng, n):
    out = []
    for i in range(n):
        state = HandState(random_pose(rng), np.zeros(22))
        out.append(GraspCandidate(state, (), stable6=True,
                                  collision_free=True, index=i))
    return out


def test_select_goal_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    current = HandState(Pose3.identity(), np.zeros(22))
    object_pose = random_pose(rng)
    cands = _fake_survivors(rng, 50)
    goal = select_goal(cands, object_pose, current)
    dists = [pose_distance(object_pose.compose(c.relative.pose), current.pose)
             for c in cands]
    assert goal.index == int(np.argmin(dists))


def test_select_goal_permutation_invariant():
    rng = np.random.default_rng(1)
    current = HandState(Pose3.identity(), np.zeros(22))
    object_pose = random_pose(rng)
    cands = _fake_survivors(rng, 30)
    goal_a = select_goal(cands, object_pose, current)
    perm = [cands[i] for i in rng.permutation(30)]
    goal_b = select_goal(perm, object_pose, current)
    assert goal_a.index == goal_b.index


def test_select_goal_translation_dominance():
    current = HandState(Pose3.identity(), np.zeros(22))
    near = GraspCandidate(HandState(Pose3(Rotation3.identity(),
                                          np.array([0.05, 0, 0])),
                                    np.zeros(22)), (),
                          stable6=True, collision_free=True, index=0)
    far = GraspCandidate(HandState(Pose3(Rotation3.identity(),
                                         np.array([0.08, 0, 0])),
                                   np.zeros(22)), (),
                         stable6=True, collision_free=True, index=1)
    goal = select_goal([far, near], Pose3.identity(), current)
    assert goal.index == 0


def test_select_goal_skips_failed_candidates():
    current = HandState(Pose3.identity(), np.zeros(22))
    bad = GraspCandidate(HandState(Pose3.identity(), np.zeros(22)), (),
                         stable6=True, collision_free=False, index=0)
    with pytest.raises(NoValidGraspError):
        select_goal([bad], Pose3.identity(), current)


def test_track_goal_identity_noop():
    rng = np.random.default_rng(2)
    pose = random_pose(rng)
    cand = _fake_survivors(rng, 1)[0]
    goal = world_goal(cand, pose)
    same = track_goal(goal, pose, pose)
    np.testing.assert_allclose(same.world.pose.translation,
                               goal.world.pose.translation, atol=1e-12)


def test_track_goal_rigid_attachment():
    rng = np.random.default_rng(3)
    old = random_pose(rng)
    cand = _fake_survivors(rng, 1)[0]
    goal = world_goal(cand, old)
    new = Pose3(old.rotation, old.translation + np.array([0.03, 0.0, 0.0]))
    moved = track_goal(goal, old, new)
    np.testing.assert_allclose(
        moved.world.pose.translation - goal.world.pose.translation,
        [0.03, 0.0, 0.0], atol=1e-12)


def test_track_goal_preserves_relative_pose():
    rng = np.random.default_rng(4)
    cand = GraspCandidate(HandState(random_pose(rng), np.zeros(22)),
                          (Contact([0.01, 0, 0], [1, 0, 0], "tip"),),
                          stable6=True, collision_free=True)
    old = random_pose(rng)
    goal = world_goal(cand, old)
    for _ in range(10):
        new = random_pose(rng)
        moved = track_goal(goal, old, new)
        rel = new.inverse().compose(moved.world.pose)
        assert np.linalg.norm(rel.translation -
                              cand.relative.pose.translation) < 1e-9
        assert rel.rotation.angle_to(cand.relative.pose.rotation) < 1e-9
        back = new.inverse().apply(moved.contacts_world[0].point)
        np.testing.assert_allclose(back, cand.contacts[0].point, atol=1e-9)
        goal, old = moved, new


def test_selected_goal_respects_filters(hand, ball):
    cands = filter_candidates(sample_candidates(ball, hand, 12, seed=0),
                              ball, hand, StabilityParams())
    current = HandState(Pose3(Rotation3.identity(),
                              np.array([0.3, 0.0, 0.0])), np.zeros(22))
    if any(c.surviving() for c in cands):
        goal = select_goal(cands, Pose3.identity(), current)
        assert goal.stable6 and goal.collision_free
