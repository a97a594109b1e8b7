"""
File name: mesh.py

Description: Triangle meshes and point clouds, built-in phantom shapes, and an
axis-aligned bounding volume hierarchy (median split) answering batched
first-hit ray casts and closest-point queries. Traversal is breadth-first over
(query, node) pairs so every wave is a handful of numpy operations.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from errors import DegenerateInputError, InvalidGeometryError
from geometry import Pose, rotation_about_axis

MIN_TRIANGLE_AREA = 1e-12
HIT_EPSILON = 1e-9
PARALLEL_EPSILON = 1e-15
BARYCENTRIC_EPSILON = 1e-12
LEAF_SIZE = 4


@dataclass(frozen=True)
class TriangleMesh:
    """Vertices in metres, shape (V, 3); triangles as vertex-index triples, shape (F, 3)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise InvalidGeometryError("Mesh vertices must be finite")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidGeometryError("Mesh triangle index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        if triangles.size and self.areas.min() <= MIN_TRIANGLE_AREA:
            raise InvalidGeometryError("Mesh contains a degenerate triangle")

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (F, 3, 3)."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles)

    def merged(self, other: "TriangleMesh") -> "TriangleMesh":
        return TriangleMesh(np.vstack([self.vertices, other.vertices]),
                            np.vstack([self.triangles, other.triangles + len(self.vertices)]))

    def sample_surface(self, n: int, rng: np.random.Generator) -> "PointCloud":
        """Points drawn uniformly by area over the surface."""
        if len(self) == 0:
            raise DegenerateInputError("Cannot sample an empty mesh")
        areas = self.areas
        chosen = rng.choice(len(self), size=n, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(n))[:, None]
        r2 = rng.random(n)[:, None]
        c = self.corners[chosen]
        points = (1.0 - r1) * c[:, 0] + r1 * (1.0 - r2) * c[:, 1] + r1 * r2 * c[:, 2]
        return PointCloud(points)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise InvalidGeometryError("Point cloud must be finite")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points))


# ---------------------------------------------------------------- shapes

def _grid_sheet(u_range: tuple[float, float], v_range: tuple[float, float], nu: int, nv: int, place) -> TriangleMesh:
    """Triangulated (nu x nv)-cell sheet; `place(u, v)` maps parameters to 3-D points."""
    u = np.linspace(*u_range, nu + 1)
    v = np.linspace(*v_range, nv + 1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    vertices = place(uu.ravel(), vv.ravel())
    index = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a = index[:-1, :-1].ravel()
    b = index[1:, :-1].ravel()
    c = index[1:, 1:].ravel()
    d = index[:-1, 1:].ravel()
    triangles = np.concatenate([np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)])
    return TriangleMesh(vertices, triangles)


def flat_plate(depth_m: float, half_width_m: float, half_length_m: float, cells: int = 8) -> TriangleMesh:
    """Plate in the plane z = depth_m, perpendicular to the beam axis of an identity-pose frame."""
    return _grid_sheet((-half_width_m, half_width_m), (-half_length_m, half_length_m), cells, cells,
                       lambda u, v: np.stack([u, v, np.full_like(u, depth_m)], axis=1))


def tilted_plate(depth_m: float, half_width_m: float, half_length_m: float, tilt_rad: float,
                 cells: int = 8) -> TriangleMesh:
    """Flat plate rotated in the image plane (about the elevation axis) around its centre."""
    plate = flat_plate(0.0, half_width_m, half_length_m, cells)
    pose = Pose(rotation_about_axis(np.array([0.0, 1.0, 0.0]), tilt_rad), np.array([0.0, 0.0, depth_m]))
    return plate.transformed(pose)


def cylinder(depth_m: float, radius_m: float, half_length_m: float, around: int = 48, along: int = 8) -> TriangleMesh:
    """Open tube whose axis runs along the elevation (y) direction at depth depth_m."""
    def place(phi, y):
        return np.stack([radius_m * np.sin(phi), y, depth_m - radius_m * np.cos(phi)], axis=1)
    return _grid_sheet((-np.pi, np.pi), (-half_length_m, half_length_m), around, along, place)


def wedge(depth_m: float, size_m: float, half_length_m: float, along: int = 8) -> TriangleMesh:
    """Triangular prism along y with its ridge pointing at the transducer, a spinous-process stand-in."""
    apex = np.array([0.0, depth_m - size_m])
    left = np.array([-size_m, depth_m + size_m])
    right = np.array([size_m, depth_m + size_m])
    mesh = TriangleMesh.empty()
    for start, end in ((left, apex), (apex, right), (right, left)):
        def place(s, y, start=start, end=end):
            xz = start[None, :] + s[:, None] * (end - start)[None, :]
            return np.stack([xz[:, 0], y, xz[:, 1]], axis=1)
        mesh = mesh.merged(_grid_sheet((0.0, 1.0), (-half_length_m, half_length_m), 4, along, place))
    return mesh


def box(size_m: tuple[float, float, float], centre_m: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed axis-aligned box of 12 triangles."""
    half = np.asarray(size_m, dtype=np.float64) / 2.0
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
    vertices = signs * half + np.asarray(centre_m, dtype=np.float64)
    faces = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x = -, x = +
        (0, 4, 5, 1), (2, 3, 7, 6),  # y = -, y = +
        (0, 2, 6, 4), (1, 5, 7, 3),  # z = -, z = +
    ]
    triangles = []
    for a, b, c, d in faces:
        triangles.extend([(a, b, c), (a, c, d)])
    return TriangleMesh(vertices, np.array(triangles))


SHAPES = ("flat_plate", "tilted_plate", "cylinder", "wedge", "box")


def build_shape(name: str, depth_m: float, size_m: float, tilt_rad: float = 0.0,
                half_length_m: float = 0.06) -> TriangleMesh:
    """Phantom mesh by name; `size_m` is the half width, radius or ridge height."""
    if name == "flat_plate":
        return flat_plate(depth_m, size_m, half_length_m)
    if name == "tilted_plate":
        return tilted_plate(depth_m, size_m, half_length_m, tilt_rad)
    if name == "cylinder":
        return cylinder(depth_m, size_m, half_length_m)
    if name == "wedge":
        return wedge(depth_m, size_m, half_length_m)
    if name == "box":
        return box((2 * size_m, 2 * half_length_m, size_m), (0.0, 0.0, depth_m))
    raise InvalidGeometryError(f"Unknown phantom shape '{name}', expected one of {SHAPES}")


# ---------------------------------------------------------------- primitive tests

def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def intersect_triangles(origins: np.ndarray, directions: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """
    Vectorized Möller–Trumbore for paired rays and triangles.

    Returns:
        np.ndarray: Hit distance t per pair, inf where the pair misses
        (parallel, outside the triangle beyond a 1e-12 barycentric slack, or t <= 1e-9).
    """
    v0, v1, v2 = corners[:, 0], corners[:, 1], corners[:, 2]
    edge1 = v1 - v0
    edge2 = v2 - v0
    pvec = np.cross(directions, edge2)
    det = _dot(edge1, pvec)
    valid = np.abs(det) >= PARALLEL_EPSILON
    inv_det = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    tvec = origins - v0
    u = _dot(tvec, pvec) * inv_det
    qvec = np.cross(tvec, edge1)
    v = _dot(directions, qvec) * inv_det
    t = _dot(edge2, qvec) * inv_det
    # Slack on the bounds: a hit on a shared edge registers on both neighbours.
    tol = BARYCENTRIC_EPSILON
    hit = valid & (u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol) & (t > HIT_EPSILON)
    return np.where(hit, t, np.inf)


def closest_on_triangles(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Closest point on each paired triangle (Voronoi-region method), shape (M, 3)."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    ab, ac = b - a, c - a
    ap, bp, cp = points - a, points - b, points - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe(num, den):
        return num / np.where(den == 0.0, 1.0, den)

    denom = va + vb + vc
    result = a + ab * safe(vb, denom)[:, None] + ac * safe(vc, denom)[:, None]
    # Later regions override earlier ones; vertex regions take precedence over edges.
    regions = [
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
         b + (c - b) * safe(d4 - d3, (d4 - d3) + (d5 - d6))[:, None]),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * safe(d2, d2 - d6)[:, None]),
        ((d6 >= 0) & (d5 <= d6), c),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * safe(d1, d1 - d3)[:, None]),
        ((d3 >= 0) & (d4 <= d3), b),
        ((d1 <= 0) & (d2 <= 0), a),
    ]
    for selected, value in regions:
        result = np.where(selected[:, None], value, result)
    return result


def _first_per_query(query: np.ndarray, key: np.ndarray, tri: np.ndarray):
    """Index of the smallest key per query (ties broken by triangle index)."""
    order = np.lexsort((tri, key, query))
    first = np.ones(len(order), dtype=bool)
    first[1:] = query[order][1:] != query[order][:-1]
    return order[first]


# ---------------------------------------------------------------- BVH

class BVH:
    """
    Immutable median-split bounding volume hierarchy over a mesh.

    Node arrays: box_min/box_max (N, 3), left/right child (-1 for leaves),
    start/count into `order` for leaves.
    """

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        self.corners = mesh.corners
        self.normals = mesh.normals if len(mesh) else np.zeros((0, 3))
        n = len(mesh)
        self.order = np.arange(n)
        box_min, box_max, left, right, start, count = [], [], [], [], [], []
        if n:
            centroids = self.corners.mean(axis=1)
            tri_min = self.corners.min(axis=1)
            tri_max = self.corners.max(axis=1)
            stack = [(0, n, -1, 0)]
            while stack:
                lo, hi, parent, side = stack.pop()
                node = len(box_min)
                if parent >= 0:
                    (left if side == 0 else right)[parent] = node
                members = self.order[lo:hi]
                bmin = tri_min[members].min(axis=0)
                bmax = tri_max[members].max(axis=0)
                pad = HIT_EPSILON * (1.0 + np.abs(bmax - bmin).max())
                box_min.append(bmin - pad)
                box_max.append(bmax + pad)
                left.append(-1)
                right.append(-1)
                if hi - lo <= leaf_size:
                    start.append(lo)
                    count.append(hi - lo)
                    continue
                start.append(0)
                count.append(0)
                axis = int(np.argmax(bmax - bmin))
                ranked = members[np.argsort(centroids[members, axis], kind="stable")]
                self.order[lo:hi] = ranked
                mid = (lo + hi) // 2
                stack.append((mid, hi, node, 1))
                stack.append((lo, mid, node, 0))
        self.box_min = np.array(box_min).reshape(-1, 3)
        self.box_max = np.array(box_max).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.box_min)

    def _leaf_pairs(self, query: np.ndarray, node: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Expand (query, leaf) pairs into (query, triangle) pairs."""
        counts = self.count[node]
        q = np.repeat(query, counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        tri = self.order[np.repeat(self.start[node], counts) + offsets]
        return q, tri

    def _slab(self, origins: np.ndarray, directions: np.ndarray, node: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        bmin, bmax = self.box_min[node], self.box_max[node]
        parallel = directions == 0.0
        safe = np.where(parallel, 1.0, directions)
        t1 = (bmin - origins) / safe
        t2 = (bmax - origins) / safe
        inside = (origins >= bmin) & (origins <= bmax)
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        return lo.max(axis=1), hi.min(axis=1)

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        First hits of a batch of rays.

        Args:
            origins (np.ndarray): Ray origins, shape (N, 3).
            directions (np.ndarray): Unit directions, shape (N, 3).

        Returns:
            tuple: (t, triangle) per ray; t = inf and triangle = -1 on a miss.
        """
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        n = len(origins)
        best_t = np.full(n, np.inf)
        best_tri = np.full(n, -1, dtype=np.int64)
        if len(self) == 0 or n == 0:
            return best_t, best_tri

        query = np.arange(n)
        node = np.zeros(n, dtype=np.int64)
        while len(query):
            near, far = self._slab(origins[query], directions[query], node)
            keep = (near <= far) & (far > HIT_EPSILON) & (near <= best_t[query])
            query, node = query[keep], node[keep]
            leaf = self.left[node] < 0
            if leaf.any():
                q, tri = self._leaf_pairs(query[leaf], node[leaf])
                t = intersect_triangles(origins[q], directions[q], self.corners[tri])
                hit = np.isfinite(t)
                q, tri, t = q[hit], tri[hit], t[hit]
                if len(q):
                    # include current bests so ties and improvements resolve together
                    holders = np.flatnonzero(np.isfinite(best_t))
                    q_all = np.concatenate([q, holders])
                    t_all = np.concatenate([t, best_t[holders]])
                    tri_all = np.concatenate([tri, best_tri[holders]])
                    winners = _first_per_query(q_all, t_all, tri_all)
                    best_t[q_all[winners]] = t_all[winners]
                    best_tri[q_all[winners]] = tri_all[winners]
            inner = ~leaf
            query = np.concatenate([query[inner], query[inner]])
            node = np.concatenate([self.left[node[inner]], self.right[node[inner]]])
        return best_t, best_tri

    def closest_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Closest surface point for every query point.

        Returns:
            tuple: (closest points (N, 3), distances (N,), triangle indices (N,)).
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        if len(self) == 0:
            raise DegenerateInputError("Closest-point query against an empty mesh")
        # Distance to the nearest vertex bounds the distance to the surface from above.
        bound, _ = cKDTree(self.mesh.vertices).query(points)
        bound = bound * (1.0 + 1e-12) + 1e-15
        best_d2 = np.full(n, np.inf)
        best_point = np.zeros((n, 3))
        best_tri = np.full(n, -1, dtype=np.int64)

        query = np.arange(n)
        node = np.zeros(n, dtype=np.int64)
        while len(query):
            gap = np.maximum(np.maximum(self.box_min[node] - points[query], points[query] - self.box_max[node]), 0.0)
            keep = np.einsum("ij,ij->i", gap, gap) <= np.minimum(bound[query] ** 2, best_d2[query])
            query, node = query[keep], node[keep]
            leaf = self.left[node] < 0
            if leaf.any():
                q, tri = self._leaf_pairs(query[leaf], node[leaf])
                candidate = closest_on_triangles(points[q], self.corners[tri])
                d2 = np.einsum("ij,ij->i", candidate - points[q], candidate - points[q])
                holders = np.flatnonzero(best_tri >= 0)
                q_all = np.concatenate([q, holders])
                d2_all = np.concatenate([d2, best_d2[holders]])
                tri_all = np.concatenate([tri, best_tri[holders]])
                pt_all = np.concatenate([candidate, best_point[holders]])
                winners = _first_per_query(q_all, d2_all, tri_all)
                best_d2[q_all[winners]] = d2_all[winners]
                best_tri[q_all[winners]] = tri_all[winners]
                best_point[q_all[winners]] = pt_all[winners]
            inner = ~leaf
            query = np.concatenate([query[inner], query[inner]])
            node = np.concatenate([self.left[node[inner]], self.right[node[inner]]])
        return best_point, np.sqrt(best_d2), best_tri


def ray_cast_first_hit(target: TriangleMesh | BVH, origin: np.ndarray,
                       direction: np.ndarray) -> tuple[float, np.ndarray] | None:
    """Nearest hit (t, point) of one ray, or None on a miss."""
    direction = np.asarray(direction, dtype=np.float64).reshape(3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise InvalidGeometryError("Ray direction must be a unit vector")
    bvh = target if isinstance(target, BVH) else BVH(target)
    t, _ = bvh.intersect(origin[None, :], direction[None, :])
    if not np.isfinite(t[0]):
        return None
    return float(t[0]), origin + t[0] * direction


def brute_force_first_hits(mesh: TriangleMesh, origins: np.ndarray,
                           directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs reference for `BVH.intersect`."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n, f = len(origins), len(mesh)
    if f == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
    q = np.repeat(np.arange(n), f)
    tri = np.tile(np.arange(f), n)
    t = intersect_triangles(origins[q], directions[q], mesh.corners[tri]).reshape(n, f)
    best_tri = np.argmin(t, axis=1)
    best_t = t[np.arange(n), best_tri]
    return best_t, np.where(np.isfinite(best_t), best_tri, -1)


def brute_force_closest_points(mesh: TriangleMesh, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs reference for `BVH.closest_points`: (closest points, distances)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n, f = len(points), len(mesh)
    q = np.repeat(np.arange(n), f)
    tri = np.tile(np.arange(f), n)
    candidate = closest_on_triangles(points[q], mesh.corners[tri]).reshape(n, f, 3)
    d = np.linalg.norm(candidate - points[:, None, :], axis=2)
    best = np.argmin(d, axis=1)
    return candidate[np.arange(n), best], d[np.arange(n), best]
