"""Synthetic observations of articulated objects.

A scene is produced by sampling joint states and a look-at camera, resolving
visibility of the model's surface samples with a point z-buffer, and keeping
one sample per pixel as the back-projected depth cloud. Ground truth for all
canonical quantities travels with the scene.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .canonical import CanonicalModel, NaocsJointParams, canonicalize, tight_box
from .errors import ResampleLimitExceeded, SchemaVersionMismatch
from .geometry import SimilarityTransform
from .kinematics import KinematicModel, forward_kinematics
from .seeding import derive_seed

log = logging.getLogger(__name__)

DATASET_SCHEMA_VERSION = 1
MAX_VIEW_ATTEMPTS = 100


@dataclass(frozen=True)
class CameraConfig:
    """Viewpoint distribution and visibility-buffer settings.

    ``distance_range`` is a multiple of the object's rest diagonal when
    ``distance_relative`` is true, otherwise absolute scene units.
    ``min_part_points`` and ``min_joint_points`` reject views where a part or a
    joint's associated region has too few points in the final cloud.
    """

    distance_range: tuple[float, float] = (1.5, 3.0)
    distance_relative: bool = True
    elevation_range: tuple[float, float] = (0.15, 0.6)
    azimuth_range: tuple[float, float] = (-math.pi / 3, math.pi / 3)
    image_resolution: tuple[int, int] = (160, 120)
    focal: float = 140.0
    sample_count: int = 1024
    depth_tolerance_px: float = 1.0
    min_part_points: int = 1
    min_joint_points: int = 3

    def __post_init__(self):
        if not 0 < self.distance_range[0] <= self.distance_range[1]:
            raise ValueError("distance range must satisfy 0 < lo <= hi")
        w, h = self.image_resolution
        if w < 32 or h < 32:
            raise ValueError("image resolution must be at least 32x32")
        if self.sample_count < 64:
            raise ValueError("sample_count must be at least 64")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass(eq=False)
class Scene:
    """One observation with complete ground truth.

    ``gt_joint_states`` are unsigned articulation offsets ``|θ - θ_rest|``
    (radians or scene units); ``joint_states`` are the raw sampled states.
    ``gt_part_poses`` map each part's NPCS into the camera frame.
    """

    scene_id: int
    model_ref: str
    joint_states: np.ndarray
    camera: SimilarityTransform
    points: np.ndarray
    gt_part_labels: np.ndarray
    gt_npcs: np.ndarray
    gt_g_scale: np.ndarray
    gt_g_offset: np.ndarray
    gt_part_poses: list[SimilarityTransform]
    gt_joint_params_naocs: NaocsJointParams
    gt_joint_params_camera: NaocsJointParams
    gt_joint_states: np.ndarray
    gt_joint_assoc: np.ndarray
    occlusion: np.ndarray
    resampled: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_parts(self) -> int:
        return len(self.gt_part_poses)

    @property
    def num_joints(self) -> int:
        return len(self.gt_joint_states)

    def gt_naocs(self) -> np.ndarray:
        lab = self.gt_part_labels
        return self.gt_g_scale[lab, None] * self.gt_npcs + self.gt_g_offset[lab]

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "model_ref": self.model_ref,
            "joint_states": self.joint_states.tolist(),
            "camera": self.camera.to_dict(),
            "points": self.points.tolist(),
            "gt_part_labels": self.gt_part_labels.tolist(),
            "gt_npcs": self.gt_npcs.tolist(),
            "gt_g_scale": self.gt_g_scale.tolist(),
            "gt_g_offset": self.gt_g_offset.tolist(),
            "gt_part_poses": [p.to_dict() for p in self.gt_part_poses],
            "gt_joint_params_naocs": self.gt_joint_params_naocs.to_dict(),
            "gt_joint_params_camera": self.gt_joint_params_camera.to_dict(),
            "gt_joint_states": self.gt_joint_states.tolist(),
            "gt_joint_assoc": self.gt_joint_assoc.tolist(),
            "occlusion": self.occlusion.tolist(),
            "resampled": self.resampled,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            return cls(
                scene_id=d["scene_id"],
                model_ref=d["model_ref"],
                joint_states=np.array(d["joint_states"], dtype=float),
                camera=SimilarityTransform.from_dict(d["camera"]),
                points=np.array(d["points"], dtype=float).reshape(-1, 3),
                gt_part_labels=np.array(d["gt_part_labels"], dtype=np.int64),
                gt_npcs=np.array(d["gt_npcs"], dtype=float).reshape(-1, 3),
                gt_g_scale=np.array(d["gt_g_scale"], dtype=float),
                gt_g_offset=np.array(d["gt_g_offset"], dtype=float).reshape(-1, 3),
                gt_part_poses=[SimilarityTransform.from_dict(p) for p in d["gt_part_poses"]],
                gt_joint_params_naocs=NaocsJointParams.from_dict(d["gt_joint_params_naocs"]),
                gt_joint_params_camera=NaocsJointParams.from_dict(d["gt_joint_params_camera"]),
                gt_joint_states=np.array(d["gt_joint_states"], dtype=float),
                gt_joint_assoc=np.array(d["gt_joint_assoc"], dtype=np.int64),
                occlusion=np.array(d["occlusion"], dtype=float),
                resampled=bool(d["resampled"]),
                extras=dict(d.get("extras", {})),
            )
        except KeyError as exc:
            raise SchemaVersionMismatch(f"scene record missing field {exc}") from None


# ---------------------------------------------------------------------------
# visibility


def project(points, focal: float, resolution) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection to integer pixel ids; returns ``(pixel_id, in_frame)``."""
    w, h = resolution
    pts = np.asarray(points, dtype=float)
    z = pts[:, 2]
    in_front = z > 1e-12
    zs = np.where(in_front, z, 1.0)
    u = np.floor(focal * pts[:, 0] / zs + w / 2.0)
    v = np.floor(focal * pts[:, 1] / zs + h / 2.0)
    ok = in_front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    pix = np.where(ok, v * w + u, -1).astype(np.int64)
    return pix, ok


def zbuffer_visibility(points, normals, focal: float, resolution, depth_tolerance_px: float = 1.0):
    """Resolve visibility of camera-frame surface samples.

    Samples facing away from the camera (by their outward normal) are culled.
    Each pixel keeps its nearest sample (the "winner"); a sample is visible if
    its depth is within ``depth_tolerance_px`` pixel footprints of its pixel's
    winner, which lets densely sampled surfaces count as fully visible.

    Returns:
        visible: boolean mask over samples.
        winners: indices of the per-pixel winning samples, sorted by pixel id.
    """
    pts = np.asarray(points, dtype=float)
    pix, ok = project(pts, focal, resolution)
    if normals is not None:
        ok &= np.einsum("ij,ij->i", np.asarray(normals, dtype=float), pts) < 0
    idx = np.flatnonzero(ok)
    visible = np.zeros(len(pts), dtype=bool)
    if len(idx) == 0:
        return visible, idx
    depth = pts[idx, 2]
    order = np.lexsort((idx, depth, pix[idx]))
    sp = pix[idx][order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sp[1:] != sp[:-1]
    winners = idx[order[first]]
    # broadcast each pixel's winning depth back to its samples
    group = np.cumsum(first) - 1
    zwin = depth[order][first][group]
    d = depth[order]
    tol = depth_tolerance_px * d / focal
    visible[idx[order]] = d <= zwin + tol
    return visible, winners


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SimilarityTransform:
    """World-to-camera transform for a camera at ``eye`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return SimilarityTransform(1.0, R, -R @ eye)


# ---------------------------------------------------------------------------
# scene sampling


def part_poses_npcs_to_camera(canon: CanonicalModel, object_poses, camera: SimilarityTransform):
    """NPCS-to-camera similarity per part for object-frame part transforms."""
    naocs_to_obj = SimilarityTransform(1.0 / canon.naocs.object_scale, np.eye(3), canon.naocs.object_offset)
    out = []
    for j, T in enumerate(object_poses):
        npcs_to_naocs = SimilarityTransform(canon.npcs.g_scale[j], np.eye(3), canon.npcs.g_offset[j])
        out.append(camera.compose(T).compose(naocs_to_obj).compose(npcs_to_naocs))
    return out


def camera_joint_params(model: KinematicModel, object_poses, camera: SimilarityTransform) -> NaocsJointParams:
    """Joint axes and pivots in the camera frame, posed through the parent part."""
    axes, pivots = [], []
    for jt in model.joints:
        T = camera.compose(object_poses[jt.parent])
        axes.append(T.apply_direction(jt.axis))
        pivots.append(None if jt.pivot is None else T.apply(jt.pivot))
    return NaocsJointParams([j.joint_type for j in model.joints], np.array(axes), pivots)


def _sample_camera(rng, cfg: CameraConfig, target, diag: float) -> SimilarityTransform:
    dist = rng.uniform(*cfg.distance_range)
    if cfg.distance_relative:
        dist *= diag
    el = rng.uniform(*cfg.elevation_range)
    az = rng.uniform(*cfg.azimuth_range)
    # azimuth 0 looks at the object's front (+y)
    direction = np.array([math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])
    return look_at(target + dist * direction, target)


def sample_scene(model: KinematicModel, cam_cfg: CameraConfig, rng_seed: int, scene_id: int = 0,
                 model_ref: str = "model.json", canon: CanonicalModel | None = None) -> Scene:
    """Sample one scene; views leaving a part (or a joint's region) unseen are redrawn.

    Raises:
        ResampleLimitExceeded: after ``MAX_VIEW_ATTEMPTS`` rejected views.
    """
    canon = canon or canonicalize(model)
    rng = np.random.default_rng(rng_seed)
    M, K = model.num_parts, model.num_joints
    part_of = np.concatenate([np.full(len(p.points), j) for j, p in enumerate(model.parts)])
    npcs_all = np.concatenate(canon.npcs.points)
    weights_all = np.concatenate([p.area_weights for p in model.parts])
    assoc_all = np.concatenate(canon.association)
    has_normals = all(p.normals is not None for p in model.parts)
    diag = 1.0 / canon.naocs.object_scale

    for attempt in range(MAX_VIEW_ATTEMPTS):
        states = np.array([rng.uniform(*j.state_range) for j in model.joints])
        object_poses = forward_kinematics(model, states)
        posed_obj = np.concatenate([T.apply(p.points) for T, p in zip(object_poses, model.parts)])
        center, _ = tight_box(posed_obj)
        camera = _sample_camera(rng, cam_cfg, center, diag)
        poses = part_poses_npcs_to_camera(canon, object_poses, camera)
        pts_cam = np.concatenate([poses[j].apply(c) for j, c in enumerate(canon.npcs.points)])
        normals = None
        if has_normals:
            normals = np.concatenate([
                camera.compose(T).apply_direction(p.normals) for T, p in zip(object_poses, model.parts)
            ])
        visible, winners = zbuffer_visibility(pts_cam, normals, cam_cfg.focal, cam_cfg.image_resolution,
                                              cam_cfg.depth_tolerance_px)
        n = cam_cfg.sample_count
        resampled = len(winners) < n
        if len(winners) == 0:
            continue
        chosen = winners[rng.choice(len(winners), size=n, replace=resampled)]
        labels = part_of[chosen]
        counts = np.bincount(labels, minlength=M)
        if counts.min() < max(1, cam_cfg.min_part_points):
            log.debug("scene %s: view %d rejected, part counts %s", scene_id, attempt, counts.tolist())
            continue
        assoc = assoc_all[chosen]
        joint_counts = np.bincount(assoc, minlength=K + 1)[1:]
        if K and joint_counts.min() < cam_cfg.min_joint_points:
            log.debug("scene %s: view %d rejected, joint counts %s", scene_id, attempt, joint_counts.tolist())
            continue
        occlusion = np.bincount(part_of[visible], weights=weights_all[visible], minlength=M)
        offsets = np.abs(states - model.rest_states)
        return Scene(
            scene_id=scene_id,
            model_ref=model_ref,
            joint_states=states,
            camera=camera,
            points=pts_cam[chosen],
            gt_part_labels=labels.astype(np.int64),
            gt_npcs=npcs_all[chosen],
            gt_g_scale=canon.npcs.g_scale.copy(),
            gt_g_offset=canon.npcs.g_offset.copy(),
            gt_part_poses=poses,
            gt_joint_params_naocs=canon.joints,
            gt_joint_params_camera=camera_joint_params(model, object_poses, camera),
            gt_joint_states=offsets,
            gt_joint_assoc=assoc.astype(np.int64),
            occlusion=np.clip(occlusion, 0.0, 1.0),
            resampled=bool(resampled),
        )
    raise ResampleLimitExceeded(f"scene {scene_id}: {MAX_VIEW_ATTEMPTS} viewpoints rejected")


def occlusion_level(scene: Scene, part: int) -> float:
    """Area-weighted visible fraction of a part's surface samples."""
    return float(scene.occlusion[part])


def generate_scenes(model: KinematicModel, cam_cfg: CameraConfig, master_seed: int, count: int,
                    model_ref: str = "model.json", threads: int = 1, first_id: int = 0) -> list[Scene]:
    canon = canonicalize(model)
    ids = range(first_id, first_id + count)

    def one(sid):
        return sample_scene(model, cam_cfg, derive_seed(master_seed, "scene", sid), sid, model_ref, canon)

    if threads <= 1:
        return [one(i) for i in ids]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, ids))


# ---------------------------------------------------------------------------
# persistence


def _header(kind: str, count: int) -> str:
    return json.dumps({"schema_version": DATASET_SCHEMA_VERSION, "kind": kind, "count": count})


def read_jsonl(path, kind: str) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SchemaVersionMismatch(f"{path}: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaVersionMismatch(f"{path}: unreadable header ({exc})") from None
    if header.get("kind") != kind or header.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: expected {kind} v{DATASET_SCHEMA_VERSION}, got {header.get('kind')} v{header.get('schema_version')}"
        )
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaVersionMismatch(f"{path}:{n}: {exc}") from None
    if header.get("count", len(records)) != len(records):
        raise SchemaVersionMismatch(f"{path}: header announces {header['count']} records, found {len(records)}")
    return records


def write_jsonl(records: list[dict], path, kind: str) -> None:
    with open(path, "w") as fh:
        fh.write(_header(kind, len(records)) + "\n")
        for r in records:
            fh.write(json.dumps(r) + "\n")


def write_dataset(scenes: list[Scene], path) -> None:
    write_jsonl([s.to_dict() for s in scenes], path, "scenes")


def read_dataset(path) -> list[Scene]:
    return [Scene.from_dict(d) for d in read_jsonl(path, "scenes")]
