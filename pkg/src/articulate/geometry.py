"""Geometric kernels: rotations, similarity transforms, lines and oriented boxes.

All functions are pure and operate on float64 numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateInput

PARALLEL_EPS = 1e-9


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(rotvec) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues)."""
    w = np.asarray(rotvec, dtype=float).reshape(3)
    theta = math.sqrt(float(w @ w))
    if theta == 0.0:
        return np.eye(3)
    K = skew(w / theta)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float).reshape(3)
    return exp_so3(axis / np.linalg.norm(axis) * angle)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def rotation_angle(R) -> float:
    """Angle of a rotation matrix in radians, in [0, pi].

    Uses atan2 of the sine (from the antisymmetric part) and cosine (from the
    trace); this equals the clamped arccos((tr(R) - 1) / 2) but stays accurate
    near 0 and pi.
    """
    R = np.asarray(R, dtype=float)
    sin2 = math.hypot(R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1])
    cos2 = float(np.trace(R)) - 1.0
    cos2 = min(max(cos2, -2.0), 2.0)
    return math.atan2(sin2, cos2)


def rotation_geodesic_deg(r1, r2) -> float:
    """Geodesic distance between two rotations in degrees, in [0, 180]."""
    return math.degrees(rotation_angle(np.asarray(r2) @ np.asarray(r1).T))


def direction_angle_deg(a, b, oriented: bool = False) -> float:
    """Angle between two direction vectors in degrees.

    With ``oriented=False`` the result is the angle between the undirected
    lines, in [0, 90].
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    ang = math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))
    if not oriented:
        ang = min(ang, 180.0 - ang)
    return ang


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def apply_direction(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.rotation.T

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        Rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(d["scale"], np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))

    def __eq__(self, other):
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return (
            self.scale == other.scale
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Line3:
    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("line direction must be nonzero")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float).reshape(3))
        object.__setattr__(self, "direction", d / n)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    rotation: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        h = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(h <= 0):
            raise ValueError(f"half extents must be positive, got {h}")
        object.__setattr__(self, "half_extents", h)

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        local = (np.asarray(points, dtype=float) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + tol, axis=-1)

    def faces(self) -> list[np.ndarray]:
        """The six faces as counter-clockwise (outward normal) corner loops."""
        c = self.corners()
        # corner index = 4*ix + 2*iy + iz
        loops = [
            [0, 1, 3, 2],  # -x
            [4, 6, 7, 5],  # +x
            [0, 4, 5, 1],  # -y
            [2, 3, 7, 6],  # +y
            [0, 2, 6, 4],  # -z
            [1, 5, 7, 3],  # +z
        ]
        return [c[idx] for idx in loops]

    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        """Outward normals n and offsets d such that the box is {x : n·x <= d}."""
        out = []
        for axis in range(3):
            n = self.rotation[:, axis]
            for sign in (-1.0, 1.0):
                normal = sign * n
                out.append((normal, float(normal @ self.center + self.half_extents[axis])))
        return out


def umeyama_fit(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``src`` onto ``dst``.

    Minimizes ``sum ||dst_i - (s R src_i + t)||^2``. Reflections are removed by
    flipping the smallest singular direction, so ``det(R) = +1``.

    Raises:
        DegenerateInput: fewer than 3 points, or the source points are
            collinear/coincident.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) arrays, got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    sv_src = np.linalg.svd(xs, compute_uv=False)
    if sv_src[0] == 0.0 or sv_src[1] <= 1e-10 * sv_src[0]:
        raise DegenerateInput("source points are collinear or coincident")

    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    if with_scale:
        var_s = float(np.sum(xs * xs)) / n
        s = float(D @ S) / var_s
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return SimilarityTransform(s, R, t)


def line_to_line_distance(a: Line3, b: Line3) -> float:
    """Minimum distance between two infinite lines."""
    w = b.point - a.point
    n = np.cross(a.direction, b.direction)
    nn = np.linalg.norm(n)
    if nn < PARALLEL_EPS:
        return float(np.linalg.norm(np.cross(w, a.direction)))
    return float(abs(w @ n) / nn)


def point_to_line_distance(points, line: Line3) -> np.ndarray:
    w = np.asarray(points, dtype=float) - line.point
    return np.linalg.norm(np.cross(w, line.direction), axis=-1)


def _clip_polygon(poly: np.ndarray, normal: np.ndarray, offset: float, eps: float):
    """Sutherland-Hodgman step: keep the part of ``poly`` with normal·x <= offset.

    Returns the clipped loop and the new vertices created on the plane.
    """
    out = []
    cut = []
    m = len(poly)
    dist = poly @ normal - offset
    for i in range(m):
        cur, nxt = poly[i], poly[(i + 1) % m]
        dc, dn = dist[i], dist[(i + 1) % m]
        if dc <= eps:
            out.append(cur)
            if abs(dc) <= eps:
                cut.append(cur)
        if (dc < -eps and dn > eps) or (dc > eps and dn < -eps):
            p = cur + (nxt - cur) * (dc / (dc - dn))
            out.append(p)
            cut.append(p)
    return (np.array(out) if len(out) >= 3 else None), cut


def _order_loop(points: np.ndarray, normal: np.ndarray) -> np.ndarray | None:
    """Counter-clockwise ordering (about ``normal``) of coplanar points."""
    if len(points) < 3:
        return None
    pts = np.unique(np.round(points, 12), axis=0)
    if len(pts) < 3:
        return None
    c = pts.mean(axis=0)
    u = pts[0] - c
    if np.linalg.norm(u) == 0:
        u = pts[1] - c
    u = u / np.linalg.norm(u)
    v = np.cross(normal, u)
    ang = np.arctan2((pts - c) @ v, (pts - c) @ u)
    return pts[np.argsort(ang)]


def _polytope_volume(points: np.ndarray) -> float:
    if len(points) < 4:
        return 0.0
    try:
        return float(ConvexHull(points).volume)
    except QhullError:
        return 0.0


def clip_box_by_box(a: OrientedBox, b: OrientedBox) -> np.ndarray:
    """Vertices of the convex polytope ``a ∩ b``.

    Each face polygon of ``a`` is clipped against the six half-spaces of ``b``;
    after every plane the cut points close the polytope with a cap polygon.
    """
    scale = float(max(a.half_extents.max(), b.half_extents.max()))
    eps = 1e-12 * max(scale, 1.0)
    polys = list(a.faces())
    for normal, offset in b.halfspaces():
        new_polys = []
        cut_pts = []
        for poly in polys:
            clipped, cut = _clip_polygon(poly, normal, offset, eps)
            if clipped is not None:
                new_polys.append(clipped)
            cut_pts.extend(cut)
        if cut_pts:
            cap = _order_loop(np.array(cut_pts), normal)
            if cap is not None:
                new_polys.append(cap)
        polys = new_polys
        if not polys:
            return np.zeros((0, 3))
    return np.concatenate(polys, axis=0)


def box_iou_3d(a: OrientedBox, b: OrientedBox) -> float:
    """Exact 3D IoU of two oriented boxes via convex polytope clipping."""
    verts = clip_box_by_box(a, b)
    inter = _polytope_volume(verts) if len(verts) else 0.0
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))
