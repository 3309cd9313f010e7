"""Kinematic models of articulated objects and forward kinematics.

A model is a tree of rigid parts connected by single-DOF revolute or
prismatic joints. Part samples are stored in the object frame at the rest
configuration, so forward kinematics at the rest states is the identity for
every part. Joint ``k`` (0-based position in ``model.joints``) carries the
association label ``k + 1``; label 0 means "no joint".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaVersionMismatch, StateOutOfRange, UnknownCategory
from .geometry import SimilarityTransform, rotation_about_axis

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
JOINT_TYPES = (REVOLUTE, PRISMATIC)
CATEGORIES = ("two_part_revolute", "eyeglasses_like", "drawer_like")
MODEL_SCHEMA_VERSION = 1

_RANGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Joint:
    id: int
    joint_type: str
    parent: int
    child: int
    axis: np.ndarray
    pivot: np.ndarray | None
    state_range: tuple[float, float]
    rest_state: float

    def __post_init__(self):
        if self.joint_type not in JOINT_TYPES:
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"joint axis must be unit length, got norm {norm}")
        object.__setattr__(self, "axis", axis)
        if self.joint_type == REVOLUTE:
            if self.pivot is None:
                raise ValueError("revolute joint needs a pivot")
            object.__setattr__(self, "pivot", np.asarray(self.pivot, dtype=float).reshape(3))
        else:
            object.__setattr__(self, "pivot", None)
        lo, hi = (float(v) for v in self.state_range)
        object.__setattr__(self, "state_range", (lo, hi))
        object.__setattr__(self, "rest_state", float(self.rest_state))
        if not lo <= self.rest_state <= hi:
            raise ValueError(f"rest state {self.rest_state} outside range {self.state_range}")
        if self.parent == self.child:
            raise ValueError("joint must connect two different parts")

    @property
    def label(self) -> int:
        return self.id + 1

    def motion(self, state: float) -> SimilarityTransform:
        """Rigid motion of the child relative to the parent at ``state``."""
        offset = state - self.rest_state
        if self.joint_type == REVOLUTE:
            R = rotation_about_axis(self.axis, offset)
            return SimilarityTransform(1.0, R, self.pivot - R @ self.pivot)
        return SimilarityTransform(1.0, np.eye(3), offset * self.axis)


@dataclass(frozen=True, eq=False)
class PartGeometry:
    """Surface samples of one part, in the object frame at rest.

    ``normals`` are outward unit normals used for back-face culling; they may
    be omitted for open surfaces, in which case every sample is two-sided.
    """

    id: int
    points: np.ndarray
    area_weights: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        w = np.asarray(self.area_weights, dtype=float).reshape(-1)
        if len(pts) < 50:
            raise ValueError(f"part {self.id} needs at least 50 samples, got {len(pts)}")
        if len(w) != len(pts) or np.any(w <= 0):
            raise ValueError("area weights must be positive, one per sample")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("area weights must sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "area_weights", w)
        if self.normals is not None:
            object.__setattr__(self, "normals", np.asarray(self.normals, dtype=float).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class KinematicModel:
    parts: list[PartGeometry]
    joints: list[Joint]
    root_part: int
    category_name: str
    _order: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        m = len(self.parts)
        if m < 2:
            raise ValueError("a model needs at least two parts")
        if len(self.joints) != m - 1:
            raise ValueError(f"expected {m - 1} joints for {m} parts, got {len(self.joints)}")
        for j, p in enumerate(self.parts):
            if p.id != j:
                raise ValueError("part ids must equal their list positions")
        for k, jt in enumerate(self.joints):
            if jt.id != k:
                raise ValueError("joint ids must equal their list positions")
        # breadth-first order of joints from the root; rejects cycles and forests
        reached = {self.root_part}
        order = []
        frontier = [self.root_part]
        while frontier:
            nxt = []
            for p in frontier:
                for jt in self.joints:
                    if jt.parent == p:
                        if jt.child in reached:
                            raise ValueError("joints do not form a tree")
                        reached.add(jt.child)
                        order.append(jt.id)
                        nxt.append(jt.child)
            frontier = nxt
        if len(reached) != m:
            raise ValueError("joints do not connect every part to the root")
        object.__setattr__(self, "_order", tuple(order))

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def rest_states(self) -> np.ndarray:
        return np.array([j.rest_state for j in self.joints])

    def joint_order(self) -> tuple[int, ...]:
        """Joint ids ordered so every parent is posed before its child."""
        return self._order

    def all_points(self) -> np.ndarray:
        return np.concatenate([p.points for p in self.parts], axis=0)


def forward_kinematics(model: KinematicModel, states) -> list[SimilarityTransform]:
    """Per-part rigid transforms (object frame) for the given joint states."""
    states = np.asarray(states, dtype=float).reshape(-1)
    if len(states) != model.num_joints:
        raise ValueError(f"expected {model.num_joints} joint states, got {len(states)}")
    for jt, s in zip(model.joints, states):
        lo, hi = jt.state_range
        if not (lo - _RANGE_TOL <= s <= hi + _RANGE_TOL):
            raise StateOutOfRange(f"joint {jt.id}: state {s} outside [{lo}, {hi}]")
    poses: list[SimilarityTransform | None] = [None] * model.num_parts
    poses[model.root_part] = SimilarityTransform.identity()
    for k in model.joint_order():
        jt = model.joints[k]
        poses[jt.child] = poses[jt.parent].compose(jt.motion(states[k]))
    return poses


def pose_in_camera(model: KinematicModel, states, camera: SimilarityTransform) -> list[SimilarityTransform]:
    """Object-frame part transforms composed with the object-to-camera transform."""
    return [camera.compose(T) for T in forward_kinematics(model, states)]


# ---------------------------------------------------------------------------
# procedural categories


def _box_surface(lo, hi, spacing: float, skip: tuple[str, ...] = ()):
    """Cell-centred grid samples on the faces of an axis-aligned box.

    Returns points, per-sample areas and outward normals. Faces are named
    ``-x``, ``+x``, ``-y``, ``+y``, ``-z``, ``+z``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts, areas, normals = [], [], []
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        nu = max(2, int(math.ceil((hi[u] - lo[u]) / spacing)))
        nv = max(2, int(math.ceil((hi[v] - lo[v]) / spacing)))
        gu = lo[u] + (np.arange(nu) + 0.5) * (hi[u] - lo[u]) / nu
        gv = lo[v] + (np.arange(nv) + 0.5) * (hi[v] - lo[v]) / nv
        U, V = np.meshgrid(gu, gv, indexing="ij")
        cell = (hi[u] - lo[u]) * (hi[v] - lo[v]) / (nu * nv)
        for sign, name in ((-1.0, "-"), (1.0, "+")):
            if name + "xyz"[axis] in skip:
                continue
            face = np.empty((nu * nv, 3))
            face[:, axis] = lo[axis] if sign < 0 else hi[axis]
            face[:, u] = U.ravel()
            face[:, v] = V.ravel()
            n = np.zeros(3)
            n[axis] = sign
            pts.append(face)
            areas.append(np.full(nu * nv, cell))
            normals.append(np.tile(n, (nu * nv, 1)))
    return np.concatenate(pts), np.concatenate(areas), np.concatenate(normals)


def _part(pid: int, boxes) -> PartGeometry:
    pts, areas, normals = zip(*boxes)
    pts = np.concatenate(pts)
    areas = np.concatenate(areas)
    normals = np.concatenate(normals)
    return PartGeometry(pid, pts, areas / areas.sum(), normals)


def _uniform(rng, lo, hi) -> float:
    return float(rng.uniform(lo, hi))


def _spacing(extent, shape_params: dict) -> float:
    """Sample spacing as a fraction of the object diagonal."""
    return float(shape_params.get("spacing_fraction", 0.007)) * float(np.linalg.norm(extent))


def _two_part_revolute(rng, params) -> KinematicModel:
    # laptop-like: base slab plus a lid hinged at the back edge, lid upright at rest
    w = params.get("width", _uniform(rng, 0.30, 0.40))
    d = params.get("depth", _uniform(rng, 0.22, 0.30))
    h = params.get("base_thickness", _uniform(rng, 0.025, 0.035))
    lt = params.get("lid_thickness", _uniform(rng, 0.015, 0.02))
    lh = params.get("lid_height", d * _uniform(rng, 0.85, 1.0))
    sp = _spacing([w, d + lt, h + lh], params)
    base = _part(0, [_box_surface([-w / 2, -d / 2, 0.0], [w / 2, d / 2, h], sp)])
    lid = _part(1, [_box_surface([-w / 2, -d / 2, h], [w / 2, -d / 2 + lt, h + lh], sp)])
    rest = math.pi / 2
    hinge = Joint(0, REVOLUTE, 0, 1, np.array([1.0, 0.0, 0.0]), np.array([0.0, -d / 2, h]),
                  (rest - 0.9, rest + 0.6), rest)
    return KinematicModel([base, lid], [hinge], 0, "two_part_revolute")


def _eyeglasses_like(rng, params) -> KinematicModel:
    # front frame in the x-z plane facing +y; temples extend toward -y at rest (right angle)
    W = params.get("frame_width", _uniform(rng, 0.13, 0.15))
    H = params.get("frame_height", _uniform(rng, 0.040, 0.050))
    T = params.get("frame_thickness", _uniform(rng, 0.008, 0.012))
    L = params.get("temple_length", _uniform(rng, 0.12, 0.15))
    a = params.get("temple_width", _uniform(rng, 0.008, 0.010))
    b = params.get("temple_height", _uniform(rng, 0.012, 0.016))
    sp = _spacing([W, L + T, H], params)
    frame = _part(0, [_box_surface([-W / 2, 0.0, -H / 2], [W / 2, T, H / 2], sp)])
    z0 = H / 2 - b
    left = _part(1, [_box_surface([-W / 2, -L, z0], [-W / 2 + a, 0.0, H / 2], sp)])
    right = _part(2, [_box_surface([W / 2 - a, -L, z0], [W / 2, 0.0, H / 2], sp)])
    rest = math.pi / 2
    zc = H / 2 - b / 2
    rng_span = (rest - 0.9, rest + 0.15)
    # folding (state below rest) swings each temple toward the middle
    j_left = Joint(0, REVOLUTE, 0, 1, np.array([0.0, 0.0, -1.0]), np.array([-W / 2, 0.0, zc]), rng_span, rest)
    j_right = Joint(1, REVOLUTE, 0, 2, np.array([0.0, 0.0, 1.0]), np.array([W / 2, 0.0, zc]), rng_span, rest)
    return KinematicModel([frame, left, right], [j_left, j_right], 0, "eyeglasses_like")


def _drawer_like(rng, params) -> KinematicModel:
    # open-front cabinet with three stacked drawers sliding along +y, closed at rest
    W = params.get("width", _uniform(rng, 0.40, 0.50))
    D = params.get("depth", _uniform(rng, 0.35, 0.45))
    H = params.get("height", _uniform(rng, 0.50, 0.70))
    wall = params.get("wall", 0.02)
    gap = params.get("gap", 0.01)
    sp = _spacing([W, D, H], params)
    cabinet = _part(0, [_box_surface([-W / 2, -D / 2, 0.0], [W / 2, D / 2, H], sp, skip=("+y",))])
    parts = [cabinet]
    joints = []
    inner = (H - 2 * wall) / 3
    for k in range(3):
        z_lo = wall + k * inner + gap / 2
        z_hi = wall + (k + 1) * inner - gap / 2
        box = _box_surface([-W / 2 + wall, -D / 2 + wall, z_lo], [W / 2 - wall, D / 2, z_hi], sp)
        parts.append(_part(k + 1, [box]))
        joints.append(Joint(k, PRISMATIC, 0, k + 1, np.array([0.0, 1.0, 0.0]), None,
                            (0.0, 0.6 * D), 0.0))
    return KinematicModel(parts, joints, 0, "drawer_like")


_BUILDERS = {
    "two_part_revolute": _two_part_revolute,
    "eyeglasses_like": _eyeglasses_like,
    "drawer_like": _drawer_like,
}


def make_procedural_model(category: str, rng_seed: int = 0, shape_params: dict | None = None) -> KinematicModel:
    """Build a deterministic instance of a procedural category.

    ``shape_params`` may pin any dimension (e.g. ``{"temple_length": 0.14}``)
    or change ``spacing_fraction``, the sample spacing relative to the object
    diagonal.
    """
    try:
        builder = _BUILDERS[category]
    except KeyError:
        raise UnknownCategory(f"unknown category {category!r}; expected one of {CATEGORIES}") from None
    rng = np.random.default_rng(rng_seed)
    return builder(rng, dict(shape_params or {}))


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: KinematicModel) -> dict:
    parts = []
    for p in model.parts:
        d = {"id": p.id, "points": p.points.tolist(), "area_weights": p.area_weights.tolist()}
        if p.normals is not None:
            d["normals"] = p.normals.tolist()
        parts.append(d)
    joints = [
        {
            "id": j.id,
            "type": j.joint_type,
            "parent": j.parent,
            "child": j.child,
            "axis": j.axis.tolist(),
            "pivot": None if j.pivot is None else j.pivot.tolist(),
            "range": list(j.state_range),
            "rest_state": j.rest_state,
        }
        for j in model.joints
    ]
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "category_name": model.category_name,
        "root_part": model.root_part,
        "parts": parts,
        "joints": joints,
    }


def model_from_dict(d: dict) -> KinematicModel:
    if d.get("schema_version", MODEL_SCHEMA_VERSION) != MODEL_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"model schema version {d.get('schema_version')} unsupported")
    try:
        parts = [
            PartGeometry(p["id"], np.array(p["points"], dtype=float), np.array(p["area_weights"], dtype=float),
                         None if p.get("normals") is None else np.array(p["normals"], dtype=float))
            for p in d["parts"]
        ]
        joints = [
            Joint(j["id"], j["type"], j["parent"], j["child"], np.array(j["axis"], dtype=float),
                  None if j["pivot"] is None else np.array(j["pivot"], dtype=float),
                  tuple(j["range"]), j["rest_state"])
            for j in d["joints"]
        ]
        return KinematicModel(parts, joints, d["root_part"], d["category_name"])
    except KeyError as exc:
        raise SchemaVersionMismatch(f"model document missing field {exc}") from None


def write_model(model: KinematicModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def read_model(path) -> KinematicModel:
    return model_from_dict(json.loads(Path(path).read_text()))
