"""Per-point predictions standing in for the network heads.

A :class:`PredictionRecord` holds, per point: part label, NPCS coordinate,
NPCS-to-NAOCS scale/offset, joint association and a 7-D joint vote
``[axis(3), projection_direction(3), projection_distance(1)]``. Records are
either simulated from a scene's ground truth with controlled noise or loaded
from files written by an external predictor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .canonical import NaocsJointParams
from .errors import EmptyPart, InsufficientVotes, LengthMismatch, SchemaVersionMismatch
from .geometry import exp_so3
from .kinematics import REVOLUTE

PREDICTION_SCHEMA_VERSION = 1
SEG_FLIP_ELIGIBLE_FRACTION = 0.10


@dataclass(eq=False)
class PredictionRecord:
    scene_id: int
    labels: np.ndarray
    npcs: np.ndarray
    g_scale: np.ndarray
    g_offset: np.ndarray
    assoc: np.ndarray
    votes: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = len(self.labels)
        self.npcs = np.asarray(self.npcs, dtype=float).reshape(-1, 3)
        self.g_scale = np.asarray(self.g_scale, dtype=float).reshape(-1)
        self.g_offset = np.asarray(self.g_offset, dtype=float).reshape(-1, 3)
        self.assoc = np.asarray(self.assoc, dtype=np.int64).reshape(-1)
        self.votes = np.asarray(self.votes, dtype=float).reshape(-1, 7)
        for name in ("npcs", "g_scale", "g_offset", "assoc", "votes"):
            if len(getattr(self, name)) != n:
                raise LengthMismatch(f"{name} has {len(getattr(self, name))} rows, labels have {n}")

    def __len__(self):
        return len(self.labels)

    def naocs(self) -> np.ndarray:
        """Predicted NAOCS coordinates ``g_i = G_s,i * c_i + G_t,i``."""
        return self.g_scale[:, None] * self.npcs + self.g_offset

    def to_dict(self) -> dict:
        return {
            "schema_version": PREDICTION_SCHEMA_VERSION,
            "scene_id": self.scene_id,
            "labels": self.labels.tolist(),
            "npcs": self.npcs.tolist(),
            "g_scale": self.g_scale.tolist(),
            "g_offset": self.g_offset.tolist(),
            "assoc": self.assoc.tolist(),
            "votes": self.votes.tolist(),
        }

    def equals(self, other: "PredictionRecord") -> bool:
        return self.scene_id == other.scene_id and all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self) if f.name != "scene_id"
        )


@dataclass(frozen=True)
class NoiseConfig:
    npcs_sigma: float = 0.0
    g_scale_rel_sigma: float = 0.0
    g_offset_sigma: float = 0.0
    axis_angle_sigma_deg: float = 0.0
    pivot_sigma: float = 0.0
    seg_flip_prob: float = 0.0
    assoc_flip_prob: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")
        if self.seg_flip_prob >= 1 or self.assoc_flip_prob >= 1:
            raise ValueError("flip probabilities must be below 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def encode_votes(g: np.ndarray, assoc: np.ndarray, joints: NaocsJointParams) -> np.ndarray:
    """Ground-truth 7-D votes for NAOCS positions ``g`` under associations ``assoc``."""
    votes = np.zeros((len(g), 7))
    for k, jtype in enumerate(joints.joint_types):
        sel = assoc == k + 1
        if not np.any(sel):
            continue
        u = joints.axes[k]
        votes[sel, :3] = u
        if jtype != REVOLUTE:
            continue
        q = joints.pivots[k]
        rel = g[sel] - q
        foot = q + np.outer(rel @ u, u)
        d = foot - g[sel]
        dist = np.linalg.norm(d, axis=1)
        direction = np.zeros_like(d)
        nz = dist > 0
        direction[nz] = d[nz] / dist[nz, None]
        if np.any(~nz):
            # on-axis points: any unit vector orthogonal to the axis
            direction[~nz] = _orthogonal_unit(u)
        votes[sel, 3:6] = direction
        votes[sel, 6] = dist
    return votes


def _orthogonal_unit(u: np.ndarray) -> np.ndarray:
    a = np.eye(3)[np.argmin(np.abs(u))]
    v = np.cross(u, a)
    return v / np.linalg.norm(v)


def _random_other(rng, current: np.ndarray, n_labels: int) -> np.ndarray:
    """Uniformly random label in ``[0, n_labels)`` different from ``current``."""
    draw = rng.integers(0, n_labels - 1, size=len(current))
    return draw + (draw >= current)


def seg_flip_eligible(points: np.ndarray, labels: np.ndarray,
                      fraction: float = SEG_FLIP_ELIGIBLE_FRACTION) -> np.ndarray:
    """Mask of the points closest to a differently labelled point (boundary band)."""
    n = len(points)
    nearest = np.full(n, np.inf)
    for j in np.unique(labels):
        other = labels != j
        if not np.any(other):
            continue
        tree = cKDTree(points[other])
        mine = np.flatnonzero(~other)
        nearest[mine], _ = tree.query(points[mine])
    k = int(math.ceil(fraction * n))
    eligible = np.zeros(n, dtype=bool)
    eligible[np.argsort(nearest, kind="stable")[:k]] = True
    return eligible & np.isfinite(nearest)


def ground_truth_prediction(scene) -> PredictionRecord:
    lab = scene.gt_part_labels
    return PredictionRecord(
        scene.scene_id,
        lab.copy(),
        scene.gt_npcs.copy(),
        scene.gt_g_scale[lab].copy(),
        scene.gt_g_offset[lab].copy(),
        scene.gt_joint_assoc.copy(),
        encode_votes(scene.gt_naocs(), scene.gt_joint_assoc, scene.gt_joint_params_naocs),
    )


def simulate_prediction(scene, noise: NoiseConfig, rng_seed: int) -> PredictionRecord:
    """Degrade a scene's ground truth the way an imperfect predictor would.

    Segmentation flips are restricted to the boundary band (see
    :func:`seg_flip_eligible`); a flipped point reports its true NAOCS position
    expressed in the wrong part's NPCS. Votes always follow the (possibly
    flipped) association and are computed from the true NAOCS position.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(rng_seed).spawn(7)]
    seg_rng, assoc_rng, npcs_rng, gs_rng, gt_rng, axis_rng, piv_rng = streams
    n = scene.num_points
    M, K = scene.num_parts, scene.num_joints
    g_true = scene.gt_naocs()

    labels = scene.gt_part_labels.copy()
    if noise.seg_flip_prob > 0 and M > 1:
        eligible = seg_flip_eligible(scene.points, labels)
        flip = eligible & (seg_rng.random(n) < noise.seg_flip_prob)
        labels[flip] = _random_other(seg_rng, labels[flip], M)
    g_scale = scene.gt_g_scale[labels].copy()
    g_offset = scene.gt_g_offset[labels].copy()
    npcs = (g_true - g_offset) / g_scale[:, None]
    same = labels == scene.gt_part_labels
    npcs[same] = scene.gt_npcs[same]

    assoc = scene.gt_joint_assoc.copy()
    if noise.assoc_flip_prob > 0:
        flip = assoc_rng.random(n) < noise.assoc_flip_prob
        assoc[flip] = _random_other(assoc_rng, assoc[flip], K + 1)
    votes = encode_votes(g_true, assoc, scene.gt_joint_params_naocs)

    if noise.npcs_sigma > 0:
        npcs = npcs + npcs_rng.normal(0.0, noise.npcs_sigma, size=npcs.shape)
    if noise.g_scale_rel_sigma > 0:
        g_scale = g_scale * np.exp(gs_rng.normal(0.0, noise.g_scale_rel_sigma, size=n))
    if noise.g_offset_sigma > 0:
        g_offset = g_offset + gt_rng.normal(0.0, noise.g_offset_sigma, size=g_offset.shape)
    active = np.flatnonzero(assoc > 0)
    if noise.axis_angle_sigma_deg > 0 and len(active):
        rv = axis_rng.normal(0.0, math.radians(noise.axis_angle_sigma_deg), size=(len(active), 3))
        for i, w in zip(active, rv):
            votes[i, :3] = exp_so3(w) @ votes[i, :3]
        votes[active, :3] /= np.linalg.norm(votes[active, :3], axis=1, keepdims=True)
    if noise.pivot_sigma > 0 and len(active):
        revolute = [k + 1 for k, t in enumerate(scene.gt_joint_params_naocs.joint_types) if t == REVOLUTE]
        rev = np.flatnonzero(np.isin(assoc, revolute))
        votes[rev, 6] += piv_rng.normal(0.0, noise.pivot_sigma, size=len(rev))
    return PredictionRecord(scene.scene_id, labels, npcs, g_scale, g_offset, assoc, votes)


def aggregate_part_transforms(pred: PredictionRecord, num_parts: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean per-point ``G_s`` and ``G_t`` over each predicted part."""
    gs = np.empty(num_parts)
    gt = np.empty((num_parts, 3))
    for j in range(num_parts):
        sel = pred.labels == j
        if not np.any(sel):
            raise EmptyPart(f"scene {pred.scene_id}: no point labelled as part {j}")
        gs[j] = pred.g_scale[sel].mean()
        gt[j] = pred.g_offset[sel].mean(axis=0)
    return gs, gt


def average_axis(vectors: np.ndarray) -> np.ndarray:
    """Sign-aligned mean direction, independent of vector order.

    The reference orientation is the principal eigenvector of the scatter
    matrix, signed to agree with the majority of the raw votes; every vote is
    flipped onto that hemisphere before averaging.
    """
    v = np.asarray(vectors, dtype=float)
    _, vecs = np.linalg.eigh(v.T @ v)
    ref = vecs[:, -1]
    if np.sum(v @ ref) < 0:
        ref = -ref
    signs = np.where(v @ ref < 0, -1.0, 1.0)
    mean = (v * signs[:, None]).mean(axis=0)
    return mean / np.linalg.norm(mean)


def aggregate_joint_votes(pred: PredictionRecord, joint_types: list[str], min_votes: int = 3) -> NaocsJointParams:
    """Average each joint's votes into NAOCS joint parameters.

    Pivot votes are decoded with the predicted NAOCS positions, so NPCS and
    scale/offset errors propagate into the pivot.
    """
    g = pred.naocs()
    axes, pivots = [], []
    for k, jtype in enumerate(joint_types):
        sel = pred.assoc == k + 1
        if np.count_nonzero(sel) < min_votes:
            raise InsufficientVotes(f"scene {pred.scene_id}: joint {k} has {np.count_nonzero(sel)} votes")
        v = pred.votes[sel]
        axes.append(average_axis(v[:, :3]))
        if jtype == REVOLUTE:
            pivots.append((g[sel] + v[:, 6:7] * v[:, 3:6]).mean(axis=0))
        else:
            pivots.append(None)
    return NaocsJointParams(list(joint_types), np.array(axes).reshape(-1, 3), pivots)


_REQUIRED = ("scene_id", "labels", "npcs", "g_scale", "g_offset", "assoc", "votes")


def write_prediction(pred: PredictionRecord, path) -> None:
    Path(path).write_text(json.dumps(pred.to_dict()) + "\n")


def load_prediction(path, expected_points: int | None = None, expected_scene: int | None = None) -> PredictionRecord:
    """Read a prediction file.

    Raises:
        SchemaVersionMismatch: wrong version, malformed JSON or a missing field.
        LengthMismatch: per-point arrays disagree with each other or with
            ``expected_points``.
    """
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(d, dict) or d.get("schema_version") != PREDICTION_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: unsupported prediction schema")
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise SchemaVersionMismatch(f"{path}: missing field(s) {', '.join(missing)}")
    if expected_scene is not None and d["scene_id"] != expected_scene:
        raise SchemaVersionMismatch(f"{path}: prediction for scene {d['scene_id']}, expected {expected_scene}")
    try:
        pred = PredictionRecord(d["scene_id"], d["labels"], d["npcs"], d["g_scale"], d["g_offset"], d["assoc"],
                                d["votes"])
    except ValueError as exc:
        raise SchemaVersionMismatch(f"{path}: malformed arrays ({exc})") from None
    if expected_points is not None and len(pred) != expected_points:
        raise LengthMismatch(f"{path}: {len(pred)} points, scene has {expected_points}")
    return pred
