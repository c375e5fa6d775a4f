"""Watertight triangle meshes: loading, validation, distance and sampling queries.

Meshes are stored in their local frame; queries take the current rigid pose
and work in world coordinates. All queries are pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .geometry import PointCloud, Pose3

# Fallback ray directions for the parity test, tried in order until one is
# free of edge-grazing hits. Deliberately off-axis.
_RAY_DIRECTIONS = [
    np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0),
    np.array([-2.0, 1.0, 2.5]) / math.sqrt(11.25),
    np.array([3.0, -1.0, 1.0]) / math.sqrt(11.0),
    np.array([0.5, 3.0, -2.0]) / math.sqrt(13.25),
    np.array([-1.0, -2.0, 2.0]) / 3.0,
    np.array([2.0, 2.0, -1.0]) / 3.0,
    np.array([-3.0, 0.5, -1.0]) / math.sqrt(10.25),
    np.array([1.0, -3.0, -2.0]) / math.sqrt(14.0),
]


@dataclass(frozen=True)
class Sphere:
    """Collision sphere: center (meters) and radius (meters)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.array(self.center, dtype=float)
        c.setflags(write=False)
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise ValueError("sphere center must be a finite 3-vector")
        if not self.radius > 0.0:
            raise ValueError("sphere radius must be > 0")
        object.__setattr__(self, "center", c)

    def transformed(self, pose: Pose3) -> "Sphere":
        return Sphere(pose.apply(self.center), self.radius)


def validate_mesh(vertices: np.ndarray, triangles: np.ndarray) -> list[str]:
    """Structural checks; returns a list of human-readable violations."""
    problems = []
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=int)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) < 4:
        return ["vertices must be an (N, 3) array with N >= 4"]
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) < 4:
        return ["triangles must be an (M, 3) index array with M >= 4"]
    if not np.all(np.isfinite(vertices)):
        problems.append("vertex coordinates must be finite")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        return problems + ["triangle indices out of vertex range"]

    tri = vertices[triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    n_degenerate = int(np.sum(areas < 1e-14))
    if n_degenerate:
        problems.append(f"{n_degenerate} degenerate (zero-area) triangles")

    # Watertight: every undirected edge shared by exactly 2 triangles.
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    undirected = np.sort(edges, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    bad = int(np.sum(counts != 2))
    if bad:
        problems.append(f"not watertight: {bad} edges not shared by exactly 2 triangles")
    else:
        # Orientation consistency: each directed edge must appear exactly once.
        _, dcounts = np.unique(edges, axis=0, return_counts=True)
        if np.any(dcounts != 1):
            problems.append("inconsistent triangle winding across shared edges")
        else:
            volume = float(np.einsum("ij,ij->", tri[:, 0],
                                     np.cross(tri[:, 1], tri[:, 2]))) / 6.0
            if volume <= 0.0:
                problems.append(f"winding is inward (signed volume {volume:.3e} <= 0)")
    return problems


@dataclass(frozen=True)
class ObjectMesh:
    """Watertight triangle mesh with outward winding, local frame."""

    vertices: np.ndarray
    triangles: np.ndarray
    face_normals: np.ndarray = field(init=False)
    bounds: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=int)
        problems = validate_mesh(v, t)
        if problems:
            raise GeometryError("; ".join(problems))
        v.setflags(write=False)
        t.setflags(write=False)
        tri = v[t]
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        normals.setflags(write=False)
        bounds = np.stack([v.min(axis=0), v.max(axis=0)])
        bounds.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "face_normals", normals)
        object.__setattr__(self, "bounds", bounds)

    @property
    def triangle_vertices(self) -> np.ndarray:
        """(M, 3, 3) corner coordinates per triangle."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        tri = self.triangle_vertices
        return 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def volume(self) -> float:
        tri = self.triangle_vertices
        return float(np.einsum("ij,ij->", tri[:, 0],
                               np.cross(tri[:, 1], tri[:, 2]))) / 6.0

    def volume_centroid(self) -> np.ndarray:
        """Center of mass assuming uniform density, local frame."""
        tri = self.triangle_vertices
        cross = np.cross(tri[:, 1], tri[:, 2])
        vols = np.einsum("ij,ij->i", tri[:, 0], cross) / 6.0
        centers = tri.sum(axis=1) / 4.0
        return centers.T @ vols / vols.sum()


# ---------------------------------------------------------------------------
# Distance and containment queries
# ---------------------------------------------------------------------------

def _closest_on_triangles(points: np.ndarray, tri: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point on each triangle for each query point.

    points: (N, 3), tri: (M, 3, 3). Returns (dist (N, M), closest (N, M, 3)).
    Vectorized barycentric region walk (Ericson, Real-Time Collision Detection).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    p = points[:, None, :]  # (N, 1, 3)

    ap = p - a
    d1 = np.einsum("mk,nmk->nm", ab, ap)
    d2 = np.einsum("mk,nmk->nm", ac, ap)
    bp = p - b
    d3 = np.einsum("mk,nmk->nm", ab, bp)
    d4 = np.einsum("mk,nmk->nm", ac, bp)
    cp = p - c
    d5 = np.einsum("mk,nmk->nm", ab, cp)
    d6 = np.einsum("mk,nmk->nm", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom

    conds = [
        (d1 <= 0) & (d2 <= 0),                    # vertex A
        (d3 >= 0) & (d4 <= d3),                   # vertex B
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),        # edge AB
        (d6 >= 0) & (d5 <= d6),                   # vertex C
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),        # edge AC
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge BC
    ]
    zeros = np.zeros_like(d1)
    ones = np.ones_like(d1)
    v = np.select(conds, [zeros, ones, v_ab, zeros, zeros, 1.0 - w_bc], default=v_in)
    w = np.select(conds, [zeros, zeros, zeros, ones, w_ac, w_bc], default=w_in)

    closest = a + v[..., None] * ab + w[..., None] * ac
    dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
    return dist, closest


def _containment_parity(mesh: ObjectMesh, points: np.ndarray,
                        chunk: int = 4096) -> np.ndarray:
    """True where a point is inside the mesh (odd ray-crossing parity)."""
    tri = mesh.triangle_vertices
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    inside = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), chunk):
        stop = min(start + chunk, len(points))
        inside[start:stop] = _parity_block(points[start:stop], a, e1, e2)
    return inside


def _parity_block(points: np.ndarray, a, e1, e2) -> np.ndarray:
    inside = np.zeros(len(points), dtype=bool)
    undecided = np.arange(len(points))
    for direction in _RAY_DIRECTIONS:
        p = points[undecided]
        h = np.cross(direction, e2)
        det = np.einsum("mk,mk->m", e1, h)
        parallel = np.abs(det) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            s = p[:, None, :] - a[None, :, :]
            u = np.einsum("nmk,mk->nm", s, h) * inv
            q = np.cross(s, e1[None, :, :])
            v = np.einsum("nmk,k->nm", q, direction) * inv
            t = np.einsum("nmk,mk->nm", q, e2) * inv
        hit = (~parallel & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-12))
        # A hit grazing an edge or starting on the surface is ambiguous;
        # retry those points with the next direction.
        margin = 1e-9
        risky = hit & ((u < margin) | (v < margin) | (u + v > 1.0 - margin)
                       | (t < 1e-9))
        clean = ~np.any(risky, axis=1)
        decided = undecided[clean]
        inside[decided] = (np.count_nonzero(hit[clean], axis=1) % 2).astype(bool)
        undecided = undecided[~clean]
        if not len(undecided):
            return inside
    raise GeometryError("containment ray test degenerate for all directions")



def nearest_surface(mesh: ObjectMesh, pose: Pose3, points) -> tuple[
        np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Signed distance, closest surface point, outward normal, triangle index.

    Negative distances are inside the mesh. All outputs in world frame.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    local = pose.inverse().apply(points)
    dist, closest = _closest_on_triangles(local, mesh.triangle_vertices)
    idx = np.argmin(dist, axis=1)
    rows = np.arange(len(points))
    unsigned = dist[rows, idx]
    sign = np.where(_containment_parity(mesh, local), -1.0, 1.0)
    # On-surface points keep a positive sign by convention (distance ~ 0).
    signed = sign * unsigned
    return (signed,
            pose.apply(closest[rows, idx]),
            pose.apply_vectors(mesh.face_normals[idx]),
            idx)


def signed_distances(mesh: ObjectMesh, pose: Pose3, points) -> np.ndarray:
    """Signed distances (negative inside) for a batch of world-frame points."""
    return nearest_surface(mesh, pose, points)[0]


def signed_distance(mesh: ObjectMesh, pose: Pose3, point) -> float:
    return float(signed_distances(mesh, pose, [point])[0])


def penetration_depth(spheres, mesh: ObjectMesh, pose: Pose3) -> float:
    """Deepest overlap of any sphere past the object surface, meters (>= 0)."""
    spheres = list(spheres)
    if not spheres:
        return 0.0
    centers = np.array([s.center for s in spheres])
    radii = np.array([s.radius for s in spheres])
    sd = signed_distances(mesh, pose, centers)
    return float(max(0.0, np.max(radii - sd)))


def sample_surface(mesh: ObjectMesh, pose: Pose3, n: int, seed: int) -> PointCloud:
    """n area-uniform surface samples in world frame, deterministic per seed."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.triangle_areas()
    which = rng.choice(len(areas), size=n, p=areas / areas.sum())
    tri = mesh.triangle_vertices[which]
    # sqrt trick gives uniform barycentric samples
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    pts = ((1.0 - r1)[:, None] * tri[:, 0]
           + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
           + (r1 * r2)[:, None] * tri[:, 2])
    return PointCloud(pose.apply(pts))


# ---------------------------------------------------------------------------
# Primitive generators
# ---------------------------------------------------------------------------

def box_mesh(size=(0.06, 0.06, 0.06)) -> ObjectMesh:
    """Axis-aligned box centered at the origin."""
    hx, hy, hz = (0.5 * s for s in size)
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)])
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ])
    return ObjectMesh(v, f)


def icosphere_mesh(radius: float = 0.04, subdivisions: int = 2) -> ObjectMesh:
    """Sphere approximation by subdividing an icosahedron."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=float) / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces

    return ObjectMesh(np.array(verts) * radius, np.array(faces))


# ---------------------------------------------------------------------------
# File I/O (triangulated OBJ and OFF)
# ---------------------------------------------------------------------------

def parse_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw vertex/triangle arrays with no structural validation."""
    vertices, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise GeometryError(
                    f"{path}:{lineno}: only triangle faces supported "
                    f"(got {len(parts) - 1} vertices)")
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    if not vertices or not faces:
        raise GeometryError(f"{path}: no triangle geometry found")
    return np.array(vertices), np.array(faces)


def load_obj(path) -> ObjectMesh:
    return ObjectMesh(*parse_obj(path))


def parse_off(path) -> tuple[np.ndarray, np.ndarray]:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise GeometryError(f"{path}: missing OFF header")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    vertices = np.array([float(x) for x in tokens[pos:pos + 3 * nv]]).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        if k != 3:
            raise GeometryError(f"{path}: only triangle faces supported (got {k}-gon)")
        faces.append([int(t) for t in tokens[pos + 1:pos + 4]])
        pos += 1 + k
    return vertices, np.array(faces)


def load_off(path) -> ObjectMesh:
    return ObjectMesh(*parse_off(path))


def parse_mesh_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw arrays by extension; lets callers report validation findings."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return parse_obj(path)
    if suffix == ".off":
        return parse_off(path)
    raise GeometryError(f"unsupported mesh format {suffix!r} (use .obj or .off)")


def save_obj(mesh: ObjectMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> ObjectMesh:
    """Dispatch on file extension (.obj or .off)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".off":
        return load_off(path)
    raise GeometryError(f"unsupported mesh format {suffix!r} (use .obj or .off)")
