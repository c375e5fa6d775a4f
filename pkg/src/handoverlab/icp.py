"""Rigid point-cloud registration: point-to-point ICP with trimming.

track_sequence treats the first frame's cloud as the object model: `init` is
the object pose in frame 0, and each later frame is aligned starting from the
previous frame's recovered pose.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, EmptyInputError, NoOverlapError
from .geometry import PointCloud, Pose3, Rotation3, pose_distance


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    tolerance: float = 1e-6          # combined pose-change metric
    max_correspondence: float = 0.05  # m
    trim_fraction: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.tolerance <= 0 or self.max_correspondence <= 0:
            raise ValueError("tolerance and max_correspondence must be positive")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class IcpResult:
    pose: Pose3
    rmse: float
    iterations: int
    converged: bool


def best_rigid_transform(source: np.ndarray, target: np.ndarray) -> Pose3:
    """Least-squares rigid transform mapping paired source onto target (Kabsch)."""
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("point arrays must be matching (N, 3)")
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])   # reflection guard: keep det = +1
    r = vt.T @ flip @ u.T
    rot = Rotation3.from_matrix(r)
    return Pose3(rot, dc - r @ sc)


def _check_nondegenerate(points: np.ndarray):
    if len(points) < 3:
        raise DegenerateGeometryError(
            f"need at least 3 points, got {len(points)}")
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] < 1e-9 * max(s[0], 1e-12):
        raise DegenerateGeometryError("points are collinear or coincident")


def _correspond(points: np.ndarray, tree: cKDTree, params: IcpParams):
    dist, idx = tree.query(points)
    mask = dist <= params.max_correspondence
    if not np.any(mask):
        raise NoOverlapError(
            f"no correspondences within {params.max_correspondence} m")
    sel = np.flatnonzero(mask)
    if params.trim_fraction > 0.0:
        keep = max(3, int(np.ceil((1.0 - params.trim_fraction) * len(sel))))
        order = np.argsort(dist[sel], kind="stable")
        sel = sel[order[:keep]]
    if len(sel) < 3:
        raise NoOverlapError(
            f"only {len(sel)} correspondences within "
            f"{params.max_correspondence} m")
    return sel, idx[sel], dist[sel]


def icp_align(source: PointCloud, target: PointCloud, init: Pose3,
              params: IcpParams = IcpParams()) -> IcpResult:
    """Align source onto target; returned pose maps source points to target."""
    src = source.points
    dst = target.points
    _check_nondegenerate(src)
    _check_nondegenerate(dst)
    tree = cKDTree(dst)
    pose = init
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = pose.apply(src)
        sel, nn, _ = _correspond(moved, tree, params)
        inc = best_rigid_transform(moved[sel], dst[nn])
        new_pose = inc.compose(pose)
        change = pose_distance(new_pose, pose)
        pose = new_pose
        if change < params.tolerance:
            converged = True
            break
    moved = pose.apply(src)
    sel, nn, dist = _correspond(moved, tree, params)
    resid = moved[sel] - dst[nn]
    rmse = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return IcpResult(pose, rmse, iterations, converged)


def track_sequence(frames, init: Pose3,
                   params: IcpParams = IcpParams()) -> list[IcpResult]:
    """Object pose per frame; frame k starts from frame k-1's result."""
    frames = list(frames)
    if not frames:
        raise EmptyInputError("need at least one frame")
    model = transform_model(frames[0], init)
    results = []
    guess = init
    for k, frame in enumerate(frames):
        try:
            result = icp_align(model, frame, guess, params)
        except (DegenerateGeometryError, NoOverlapError) as e:
            raise type(e)(f"frame {k}: {e}") from e
        results.append(result)
        guess = result.pose
    return results


def transform_model(frame0: PointCloud, init: Pose3) -> PointCloud:
    """Re-express the first frame in the object's own frame."""
    return PointCloud(init.inverse().apply(frame0.points))


# ---------------------------------------------------------------------------
# Plain-text cloud files: one "x y z" line per point
# ---------------------------------------------------------------------------

def load_xyz(path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
        rows.append([float(p) for p in parts])
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3))


def save_xyz(cloud: PointCloud, path) -> None:
    lines = [f"{p[0]:.9f} {p[1]:.9f} {p[2]:.9f}" for p in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n")
