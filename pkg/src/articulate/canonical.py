"""Two-level canonical spaces: object-level NAOCS and per-part NPCS.

NAOCS is the rest-state object zero-centred and scaled to a unit tight-box
diagonal. Each NPCS re-centres and re-scales one part of the NAOCS (no
rotation), related to it by ``g = G_s * c + G_t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePart
from .geometry import Line3, point_to_line_distance
from .kinematics import PRISMATIC, REVOLUTE, KinematicModel, forward_kinematics

DEFAULT_SIGMA = 0.2


def tight_box(points) -> tuple[np.ndarray, float]:
    """Centre and diagonal length of the axis-aligned bounding box."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return (lo + hi) / 2.0, float(np.linalg.norm(hi - lo))


@dataclass(frozen=True, eq=False)
class NaocsFrame:
    object_scale: float
    object_offset: np.ndarray
    points: list[np.ndarray]

    def to_naocs(self, x) -> np.ndarray:
        """Map object-frame (rest) coordinates into NAOCS."""
        return (np.asarray(x, dtype=float) - self.object_offset) * self.object_scale

    def to_object(self, g) -> np.ndarray:
        return np.asarray(g, dtype=float) / self.object_scale + self.object_offset


@dataclass(frozen=True, eq=False)
class NpcsFrame:
    points: list[np.ndarray]
    g_scale: np.ndarray
    g_offset: np.ndarray

    def to_naocs(self, part: int, c) -> np.ndarray:
        return self.g_scale[part] * np.asarray(c, dtype=float) + self.g_offset[part]

    def from_naocs(self, part: int, g) -> np.ndarray:
        return (np.asarray(g, dtype=float) - self.g_offset[part]) / self.g_scale[part]


@dataclass(frozen=True, eq=False)
class NaocsJointParams:
    """Joint axes (unit) and pivots in one frame; prismatic pivots are ``None``."""

    joint_types: list[str]
    axes: np.ndarray
    pivots: list[np.ndarray | None]

    def line(self, k: int) -> Line3:
        return Line3(self.pivots[k], self.axes[k])

    def to_dict(self) -> dict:
        return {
            "types": list(self.joint_types),
            "axes": np.asarray(self.axes).tolist(),
            "pivots": [None if q is None else np.asarray(q).tolist() for q in self.pivots],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NaocsJointParams":
        return cls(
            list(d["types"]),
            np.array(d["axes"], dtype=float).reshape(-1, 3),
            [None if q is None else np.array(q, dtype=float) for q in d["pivots"]],
        )


def build_naocs(model: KinematicModel) -> NaocsFrame:
    rest = forward_kinematics(model, model.rest_states)
    posed = [T.apply(p.points) for T, p in zip(rest, model.parts)]
    center, diag = tight_box(np.concatenate(posed))
    scale = 1.0 / diag
    return NaocsFrame(scale, center, [(p - center) * scale for p in posed])


def build_npcs(naocs: NaocsFrame) -> NpcsFrame:
    points, gs, gt = [], [], []
    for j, g in enumerate(naocs.points):
        center, diag = tight_box(g)
        if diag < 1e-9:
            raise DegeneratePart(f"part {j} has diagonal {diag}")
        gs.append(diag)
        gt.append(center)
        points.append((g - center) / diag)
    return NpcsFrame(points, np.array(gs), np.array(gt))


def naocs_joint_params(model: KinematicModel, naocs: NaocsFrame) -> NaocsJointParams:
    # NAOCS normalisation is scale + offset only, so directions carry over unchanged
    axes = np.array([j.axis for j in model.joints]).reshape(-1, 3)
    pivots = [None if j.pivot is None else naocs.to_naocs(j.pivot) for j in model.joints]
    return NaocsJointParams([j.joint_type for j in model.joints], axes, pivots)


def associate_points_to_joints(naocs: NaocsFrame, model: KinematicModel,
                               sigma: float = DEFAULT_SIGMA) -> list[np.ndarray]:
    """Per-part joint-association labels for every canonical sample.

    Revolute joint ``k`` claims samples of its two parts within ``sigma``
    (NAOCS units) of its axis; prismatic joint ``k`` claims every sample of its
    moving part. Prismatic claims beat revolute ones; among revolute claims the
    nearer axis wins.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    params = naocs_joint_params(model, naocs)
    labels = []
    for j, g in enumerate(naocs.points):
        lab = np.zeros(len(g), dtype=np.int64)
        best = np.full(len(g), np.inf)
        prismatic = np.zeros(len(g), dtype=bool)
        for jt in model.joints:
            if j not in (jt.parent, jt.child):
                continue
            if jt.joint_type == PRISMATIC:
                if j == jt.child:
                    # several prismatic joints on one moving part cannot happen in a tree
                    lab[:] = jt.label
                    prismatic[:] = True
                continue
            assert jt.joint_type == REVOLUTE
            dist = point_to_line_distance(g, params.line(jt.id))
            take = (dist < sigma) & (dist < best) & ~prismatic
            lab[take] = jt.label
            best[take] = dist[take]
        labels.append(lab)
    return labels


@dataclass(frozen=True, eq=False)
class CanonicalModel:
    """Everything canonical about a model, computed once."""

    naocs: NaocsFrame
    npcs: NpcsFrame
    joints: NaocsJointParams
    association: list[np.ndarray]


def canonicalize(model: KinematicModel, sigma: float = DEFAULT_SIGMA) -> CanonicalModel:
    naocs = build_naocs(model)
    return CanonicalModel(
        naocs,
        build_npcs(naocs),
        naocs_joint_params(model, naocs),
        associate_points_to_joints(naocs, model, sigma),
    )
