"""Closed-form camera-space joint parameters, joint states and amodal boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canonical import NaocsJointParams
from .errors import DegenerateAxis
from .geometry import OrientedBox, SimilarityTransform, rotation_angle
from .kinematics import REVOLUTE, Joint
from .solve import joint_anchor_offset

AXIS_EPS = 1e-9
MIN_HALF_EXTENT = 1e-9


@dataclass(eq=False)
class JointEstimate:
    joint_id: int
    joint_type: str
    axis: np.ndarray
    pivot: np.ndarray | None
    state: float

    def to_dict(self) -> dict:
        return {
            "joint_id": self.joint_id,
            "type": self.joint_type,
            "axis": self.axis.tolist(),
            "pivot": None if self.pivot is None else self.pivot.tolist(),
            "state": self.state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointEstimate":
        return cls(d["joint_id"], d["type"], np.array(d["axis"], dtype=float),
                   None if d["pivot"] is None else np.array(d["pivot"], dtype=float), float(d["state"]))


def camera_axis(R1, R2, axis_naocs) -> np.ndarray:
    """Unit axis ``(R1 + R2) u' / ||(R1 + R2) u'||``; symmetric in the two parts."""
    v = (np.asarray(R1) + np.asarray(R2)) @ np.asarray(axis_naocs, dtype=float)
    n = np.linalg.norm(v)
    if n < AXIS_EPS:
        raise DegenerateAxis(f"|(R1 + R2) u'| = {n:.3g}")
    return v / n


def recover_revolute(pose1: SimilarityTransform, pose2: SimilarityTransform, g1, g2, axis_naocs, pivot_naocs,
                     joint_id: int = 0) -> JointEstimate:
    """Camera-space axis, pivot and unsigned angle of a revolute joint.

    ``g1``/``g2`` are the ``(G_s, G_t)`` pairs of the two parts. The pivot is
    the average of the NAOCS pivot carried through each part's pose.
    """
    u = camera_axis(pose1.rotation, pose2.rotation, axis_naocs)
    q = np.zeros(3)
    for pose, (gs, gt) in ((pose1, g1), (pose2, g2)):
        q += pose.rotation @ (pose.scale / gs * (np.asarray(pivot_naocs) - gt)) + pose.translation
    q /= 2.0
    theta = rotation_angle(pose2.rotation @ pose1.rotation.T)
    return JointEstimate(joint_id, REVOLUTE, u, q, float(theta))


def recover_prismatic(pose1: SimilarityTransform, pose2: SimilarityTransform, g1, g2, axis_naocs,
                      joint_id: int = 0) -> JointEstimate:
    """Camera-space axis and slide distance ``||delta||`` of a prismatic joint."""
    u = camera_axis(pose1.rotation, pose2.rotation, axis_naocs)
    delta = joint_anchor_offset(pose1.rotation, pose1.translation, pose1.scale / g1[0], np.asarray(g1[1]),
                                pose2.rotation, pose2.translation, pose2.scale / g2[0], np.asarray(g2[1]))
    return JointEstimate(joint_id, "prismatic", u, None, float(np.linalg.norm(delta)))


def recover_joints(poses, joints: list[Joint], naocs_joints: NaocsJointParams, g_scale, g_offset) -> list[JointEstimate]:
    out = []
    for jt in joints:
        a, b = jt.parent, jt.child
        ga = (g_scale[a], g_offset[a])
        gb = (g_scale[b], g_offset[b])
        if jt.joint_type == REVOLUTE:
            out.append(recover_revolute(poses[a], poses[b], ga, gb, naocs_joints.axes[jt.id],
                                        naocs_joints.pivots[jt.id], jt.id))
        else:
            out.append(recover_prismatic(poses[a], poses[b], ga, gb, naocs_joints.axes[jt.id], jt.id))
    return out


def amodal_box(pose: SimilarityTransform, npcs_points) -> OrientedBox:
    """Tight NPCS box of ``npcs_points`` carried into the camera by ``pose``.

    Flat extents are padded to ``MIN_HALF_EXTENT`` so the box stays valid.
    """
    c = np.asarray(npcs_points, dtype=float).reshape(-1, 3)
    if len(c) == 0:
        raise ValueError("amodal box needs at least one point")
    lo = c.min(axis=0)
    hi = c.max(axis=0)
    center = (lo + hi) / 2.0
    half = np.maximum(pose.scale * (hi - lo) / 2.0, MIN_HALF_EXTENT)
    return OrientedBox(pose.apply(center), pose.rotation, half)
