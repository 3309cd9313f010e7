"""Per-scene estimation for the three methods.

``ancsh``  per-part RANSAC in NPCS, then kinematically constrained refinement.
``npcs``   per-part RANSAC in NPCS only.
``naocs``  per-part RANSAC from predicted NAOCS coordinates (poses map NAOCS
           to camera, so no amodal boxes are produced).

All three recover joint parameters and states in closed form from the poses
and the vote-aggregated NAOCS joints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .canonical import NaocsJointParams
from .errors import SchemaVersionMismatch, SolverDiverged
from .geometry import OrientedBox, SimilarityTransform
from .kinematics import KinematicModel
from .predict import PredictionRecord, aggregate_joint_votes, aggregate_part_transforms
from .recover import JointEstimate, amodal_box, recover_joints
from .seeding import derive_seed
from .solve import (
    ConstraintWeights,
    PoseEstimate,
    RansacConfig,
    SolverConfig,
    config_from_dict,
    config_to_dict,
    energy_vanilla,
    fit_part_ransac,
    refine_constrained,
)

log = logging.getLogger(__name__)

METHODS = ("npcs", "naocs", "ancsh")
ESTIMATE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    ransac: RansacConfig = RansacConfig()
    weights: ConstraintWeights = ConstraintWeights()
    solver: SolverConfig = SolverConfig()

    def to_dict(self) -> dict:
        return {
            "ransac": config_to_dict(self.ransac),
            "weights": config_to_dict(self.weights),
            "solver": config_to_dict(self.solver),
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "FitConfig":
        d = d or {}
        return cls(
            config_from_dict(RansacConfig, d.get("ransac")),
            config_from_dict(ConstraintWeights, d.get("weights")),
            config_from_dict(SolverConfig, d.get("solver")),
        )


@dataclass(eq=False)
class SceneEstimate:
    """Everything estimated for one scene by one method.

    ``frame`` is ``"npcs"`` when poses map NPCS to camera and ``"naocs"``
    when they map NAOCS to camera. ``g_scale``/``g_offset`` are the
    per-part transforms used for joint recovery.
    """

    scene_id: int
    method: str
    frame: str
    pose: PoseEstimate
    g_scale: np.ndarray
    g_offset: np.ndarray
    naocs_joints: NaocsJointParams
    joints: list[JointEstimate]
    boxes: list[OrientedBox] | None
    notes: list[str] = field(default_factory=list)

    @property
    def poses(self) -> list[SimilarityTransform]:
        return self.pose.poses

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "method": self.method,
            "frame": self.frame,
            "poses": [p.to_dict() for p in self.pose.poses],
            "inliers": [np.flatnonzero(m).tolist() for m in self.pose.inliers],
            "num_points": int(len(self.pose.inliers[0])) if self.pose.inliers else 0,
            "energy": self.pose.energy,
            "iterations": self.pose.iterations,
            "converged": self.pose.converged,
            "g_scale": self.g_scale.tolist(),
            "g_offset": self.g_offset.tolist(),
            "naocs_joints": self.naocs_joints.to_dict(),
            "joints": [j.to_dict() for j in self.joints],
            "boxes": None if self.boxes is None else [
                {"center": b.center.tolist(), "rotation": b.rotation.tolist(), "half_extents": b.half_extents.tolist()}
                for b in self.boxes
            ],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneEstimate":
        try:
            n = d["num_points"]
            masks = []
            for idx in d["inliers"]:
                m = np.zeros(n, dtype=bool)
                m[np.asarray(idx, dtype=np.int64)] = True
                masks.append(m)
            pose = PoseEstimate([SimilarityTransform.from_dict(p) for p in d["poses"]], masks, float(d["energy"]),
                                int(d["iterations"]), bool(d["converged"]))
            boxes = None
            if d["boxes"] is not None:
                boxes = [OrientedBox(np.array(b["center"]), np.array(b["rotation"]), np.array(b["half_extents"]))
                         for b in d["boxes"]]
            return cls(d["scene_id"], d["method"], d["frame"], pose, np.array(d["g_scale"], dtype=float),
                       np.array(d["g_offset"], dtype=float).reshape(-1, 3), NaocsJointParams.from_dict(d["naocs_joints"]),
                       [JointEstimate.from_dict(j) for j in d["joints"]], boxes, list(d.get("notes", [])))
        except (KeyError, TypeError) as exc:
            raise SchemaVersionMismatch(f"estimate record missing or malformed field {exc}") from None


def _ransac_all(points, src, labels, num_parts, cfg: RansacConfig, seed: int, diameters):
    poses, masks = [], []
    for j in range(num_parts):
        sel = np.flatnonzero(labels == j)
        T, local = fit_part_ransac(points[sel], src[sel], cfg, derive_seed(seed, "ransac", j), diameters[j])
        m = np.zeros(len(points), dtype=bool)
        m[sel[local]] = True
        poses.append(T)
        masks.append(m)
    return poses, masks


def fit_scene(points, pred: PredictionRecord, model: KinematicModel, method: str = "ancsh",
              cfg: FitConfig = FitConfig(), seed: int = 0) -> SceneEstimate:
    """Estimate part poses, joints and boxes for one scene.

    Raises:
        ValueError: unknown method.
        EmptyPart, InsufficientVotes, TooFewPoints, DegenerateInput,
        DegenerateAxis: the prediction cannot support an estimate.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    points = np.asarray(points, dtype=float)
    M = model.num_parts
    naocs_joints = aggregate_joint_votes(pred, [j.joint_type for j in model.joints])
    notes = []

    if method == "naocs":
        gs_pred, _ = aggregate_part_transforms(pred, M)
        poses, masks = _ransac_all(points, pred.naocs(), pred.labels, M, cfg.ransac, seed, gs_pred)
        g_scale, g_offset = np.ones(M), np.zeros((M, 3))
        as_naocs = PredictionRecord(pred.scene_id, pred.labels, pred.naocs(), pred.g_scale, pred.g_offset,
                                    pred.assoc, pred.votes)
        est = PoseEstimate(poses, masks, energy_vanilla(poses, as_naocs, points, masks), 0, True)
        joints = recover_joints(poses, model.joints, naocs_joints, g_scale, g_offset)
        return SceneEstimate(pred.scene_id, method, "naocs", est, g_scale, g_offset, naocs_joints, joints, None, notes)

    g_scale, g_offset = aggregate_part_transforms(pred, M)
    poses, masks = _ransac_all(points, pred.npcs, pred.labels, M, cfg.ransac, seed, np.ones(M))
    est = PoseEstimate(poses, masks, energy_vanilla(poses, pred, points, masks), 0, True)
    if method == "ancsh":
        try:
            est = refine_constrained(est, pred, points, model.joints, naocs_joints, g_scale, g_offset,
                                     cfg.weights, cfg.solver)
        except SolverDiverged as exc:
            log.warning("scene %s: %s; keeping RANSAC poses", pred.scene_id, exc)
            notes.append(f"solver diverged: {exc}")
    joints = recover_joints(est.poses, model.joints, naocs_joints, g_scale, g_offset)
    boxes = [amodal_box(est.poses[j], pred.npcs[pred.labels == j]) for j in range(M)]
    return SceneEstimate(pred.scene_id, method, "npcs", est, g_scale, g_offset, naocs_joints, joints, boxes, notes)
