"""Metrics, baseline comparison and report emission.

Per part: rotation error (geodesic degrees), translation error (camera
units), 3D IoU of amodal boxes and an AD hit flag. Per joint: state error
(degrees for revolute, camera units for prismatic), axis angle error (sign
agnostic, degrees) and the line-to-line distance of revolute axes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

from .canonical import CanonicalModel, NaocsJointParams
from .errors import ArticulateError, CountMismatch
from .geometry import (
    Line3,
    SimilarityTransform,
    box_iou_3d,
    direction_angle_deg,
    exp_so3,
    line_to_line_distance,
    rotation_geodesic_deg,
)
from .kinematics import REVOLUTE, KinematicModel
from .observe import Scene
from .pipeline import FitConfig, SceneEstimate, fit_scene
from .predict import NoiseConfig, PredictionRecord, aggregate_joint_votes, encode_votes, simulate_prediction
from .recover import amodal_box
from .seeding import derive_seed

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DEFAULT_OCCLUSION_BINS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_AD_THRESHOLD = 0.10
DEFAULT_DIRECT_NOISE_FACTOR = 2.0

PART_METRICS = ("rotation_error_deg", "translation_error", "iou_3d", "ad_hit")
JOINT_METRICS = ("state_error", "axis_angle_error_deg", "pivot_line_distance")


# ---------------------------------------------------------------------------
# per-scene scoring


@dataclass
class SceneMetrics:
    """Per-part and per-joint errors of one estimate. ``None`` marks a metric
    the method does not define (IoU for NAOCS poses, pivots for prismatic
    joints, AD when no reference samples were supplied)."""

    scene_id: int
    method: str
    rotation_error_deg: list[float]
    translation_error: list[float]
    iou_3d: list[float | None]
    ad_hit: list[bool | None]
    state_error: list[float]
    axis_angle_error_deg: list[float]
    pivot_line_distance: list[float | None]
    occlusion: list[float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMetrics":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class AdReference:
    """Canonical (NPCS) samples of every part and their diameters."""

    samples: list[np.ndarray]
    diameters: np.ndarray

    @classmethod
    def from_canonical(cls, canon: CanonicalModel) -> "AdReference":
        return cls(list(canon.npcs.points), np.array([point_set_diameter(c) for c in canon.npcs.points]))


def point_set_diameter(points) -> float:
    """Largest pairwise distance, searched over convex hull vertices."""
    pts = np.asarray(points, dtype=float)
    try:
        pts = pts[ConvexHull(pts).vertices]
    except Exception:  # flat or tiny sets: fall back to all points
        pass
    return float(pdist(pts).max()) if len(pts) > 1 else 0.0


def gt_pose_in_frame(scene: Scene, part: int, frame: str) -> SimilarityTransform:
    """Ground-truth pose of ``part`` from ``frame`` ("npcs" or "naocs") to camera."""
    pose = scene.gt_part_poses[part]
    if frame == "npcs":
        return pose
    gs, gt = scene.gt_g_scale[part], scene.gt_g_offset[part]
    return pose.compose(SimilarityTransform(1.0 / gs, np.eye(3), -gt / gs))


def gt_boxes(scene: Scene):
    """Ground-truth amodal boxes from the observed points' true NPCS coordinates."""
    return [amodal_box(scene.gt_part_poses[j], scene.gt_npcs[scene.gt_part_labels == j])
            for j in range(scene.num_parts)]


def average_distance(est: SceneEstimate, scene: Scene, part: int, samples: np.ndarray) -> float:
    """Mean camera-space distance of canonical samples under estimated vs true pose."""
    x = np.asarray(samples, dtype=float)
    truth = scene.gt_part_poses[part].apply(x)
    if est.frame == "naocs":
        x = scene.gt_g_scale[part] * x + scene.gt_g_offset[part]
    return float(np.mean(np.linalg.norm(est.poses[part].apply(x) - truth, axis=1)))


def score_scene(est: SceneEstimate, scene: Scene, ad_ref: AdReference | None = None,
                ad_threshold: float = DEFAULT_AD_THRESHOLD) -> SceneMetrics:
    """Compare one estimate with its scene's ground truth.

    Raises:
        CountMismatch: part or joint counts differ.
    """
    M, K = scene.num_parts, scene.num_joints
    if len(est.poses) != M or len(est.joints) != K:
        raise CountMismatch(f"scene {scene.scene_id}: estimate has {len(est.poses)} parts/{len(est.joints)} joints, "
                            f"scene has {M}/{K}")
    rot, trans, iou, ad = [], [], [], []
    boxes = gt_boxes(scene) if est.boxes is not None else None
    for j in range(M):
        gt = gt_pose_in_frame(scene, j, est.frame)
        rot.append(rotation_geodesic_deg(est.poses[j].rotation, gt.rotation))
        trans.append(float(np.linalg.norm(est.poses[j].translation - gt.translation)))
        iou.append(None if boxes is None else box_iou_3d(est.boxes[j], boxes[j]))
        if ad_ref is None:
            ad.append(None)
        else:
            diam = ad_ref.diameters[j] * scene.gt_part_poses[j].scale
            ad.append(bool(average_distance(est, scene, j, ad_ref.samples[j]) < ad_threshold * diam))
    cam = scene.gt_joint_params_camera
    state, axis, pivot = [], [], []
    for k, je in enumerate(est.joints):
        diff = float(abs(je.state - scene.gt_joint_states[k]))
        state.append(math.degrees(diff) if cam.joint_types[k] == REVOLUTE else diff)
        axis.append(direction_angle_deg(je.axis, cam.axes[k]))
        if cam.joint_types[k] == REVOLUTE and je.pivot is not None:
            pivot.append(line_to_line_distance(Line3(je.pivot, je.axis), cam.line(k)))
        else:
            pivot.append(None)
    return SceneMetrics(scene.scene_id, est.method, rot, trans, iou, ad, state, axis, pivot,
                        [float(v) for v in scene.occlusion])


def ad_accuracy(estimates: list[SceneEstimate], scenes: list[Scene], ad_ref: AdReference,
                threshold_fraction: float = DEFAULT_AD_THRESHOLD) -> np.ndarray:
    """Per-part fraction of scenes whose AD is below ``threshold_fraction`` of the part diameter."""
    if not scenes:
        raise ValueError("AD accuracy needs at least one scene")
    if len(estimates) != len(scenes):
        raise CountMismatch(f"{len(estimates)} estimates for {len(scenes)} scenes")
    hits = np.zeros(scenes[0].num_parts)
    for est, scene in zip(estimates, scenes):
        m = score_scene(est, scene, ad_ref, threshold_fraction)
        hits += np.array(m.ad_hit, dtype=float)
    return hits / len(scenes)


# ---------------------------------------------------------------------------
# aggregation


def _mean(values) -> float | None:
    vals = [float(v) for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def summarize(metrics: list[SceneMetrics]) -> dict:
    """Per-part and per-joint means over scenes (``None`` entries are skipped)."""
    if not metrics:
        return {"parts": [], "joints": []}
    M = len(metrics[0].rotation_error_deg)
    K = len(metrics[0].state_error)
    parts = []
    for j in range(M):
        row = {name: _mean(getattr(m, name)[j] for m in metrics) for name in PART_METRICS}
        row["ad_accuracy"] = row.pop("ad_hit")
        parts.append(row)
    joints = [{name: _mean(getattr(m, name)[k] for m in metrics) for name in JOINT_METRICS} for k in range(K)]
    return {"parts": parts, "joints": joints}


@dataclass
class MethodResult:
    method: str
    metrics: list[SceneMetrics]
    failures: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {"scene_count": len(self.metrics), "failure_count": len(self.failures), **summarize(self.metrics)}


def _failure(scene_id: int, exc: Exception) -> dict:
    return {"scene_id": scene_id, "error": type(exc).__name__, "message": str(exc)}


def evaluate_estimates(method: str, estimates: list[SceneEstimate | None], scenes: list[Scene],
                       ad_ref: AdReference | None = None, ad_threshold: float = DEFAULT_AD_THRESHOLD,
                       failures: list[dict] | None = None) -> MethodResult:
    """Score estimates paired with scenes; ``None`` estimates are skipped (already failed)."""
    if len(estimates) != len(scenes):
        raise CountMismatch(f"{len(estimates)} estimates for {len(scenes)} scenes")
    out = MethodResult(method, [], list(failures or []))
    for est, scene in zip(estimates, scenes):
        if est is None:
            continue
        if est.scene_id != scene.scene_id:
            raise CountMismatch(f"estimate for scene {est.scene_id} paired with scene {scene.scene_id}")
        out.metrics.append(score_scene(est, scene, ad_ref, ad_threshold))
    return out


def fit_predictions(method: str, scenes: list[Scene], preds: list[PredictionRecord | None], model: KinematicModel,
                    cfg: FitConfig = FitConfig(), master_seed: int = 0, threads: int = 1):
    """Fit every scene; returns ``(estimates, failures)`` with ``None`` for failed scenes.

    Per-scene fit seeds depend on the scene id only, so methods compared on
    the same scenes see the same RANSAC samples.
    """

    def one(i):
        scene, pred = scenes[i], preds[i]
        if pred is None:
            return None, None
        try:
            return fit_scene(scene.points, pred, model, method, cfg,
                             derive_seed(master_seed, "fit", scene.scene_id)), None
        except ArticulateError as exc:
            log.error("scene %s (%s): %s: %s", scene.scene_id, method, type(exc).__name__, exc)
            return None, _failure(scene.scene_id, exc)

    if threads <= 1:
        results = [one(i) for i in range(len(scenes))]
    else:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(len(scenes))))
    return [r[0] for r in results], [r[1] for r in results if r[1] is not None]


def simulate_predictions(scenes: list[Scene], noise: NoiseConfig, master_seed: int) -> list[PredictionRecord]:
    return [simulate_prediction(s, noise, derive_seed(master_seed, "predict", s.scene_id)) for s in scenes]


def run_baseline(method: str, scenes: list[Scene], model: KinematicModel, noise: NoiseConfig = NoiseConfig(),
                 cfg: FitConfig = FitConfig(), master_seed: int = 0, ad_ref: AdReference | None = None,
                 threads: int = 1, preds: list[PredictionRecord] | None = None) -> MethodResult:
    """Simulate predictions (unless given), fit with ``method`` and score."""
    if preds is None:
        preds = simulate_predictions(scenes, noise, master_seed)
    estimates, failures = fit_predictions(method, scenes, preds, model, cfg, master_seed, threads)
    return evaluate_estimates(method, estimates, scenes, ad_ref, failures=failures)


@dataclass
class ComparisonReport:
    results: dict[str, MethodResult]
    scene_count: int
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.results:
            raise ValueError("a comparison report needs at least one method")

    @property
    def failures(self) -> list[dict]:
        return [dict(f, method=m) for m, r in self.results.items() for f in r.failures]

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "scene_count": self.scene_count,
            "config": self.config,
            "methods": {m: r.summary() for m, r in self.results.items()},
            "scenes": {m: [x.to_dict() for x in r.metrics] for m, r in self.results.items()},
            "failures": self.failures,
            "extras": self.extras,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        cols = ["method", "kind", "index", "count", "rotation_error_deg", "translation_error", "iou_3d",
                "ad_accuracy", "state_error", "axis_angle_error_deg", "pivot_line_distance"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for m, r in self.results.items():
                s = r.summary()
                for kind, rows in (("part", s["parts"]), ("joint", s["joints"])):
                    for i, row in enumerate(rows):
                        w.writerow([m, kind, i, s["scene_count"]]
                                   + ["" if row.get(c) is None else repr(row[c]) for c in cols[4:]])


def compare_methods(methods, scenes: list[Scene], model: KinematicModel, noise: NoiseConfig = NoiseConfig(),
                    cfg: FitConfig = FitConfig(), master_seed: int = 0, ad_ref: AdReference | None = None,
                    threads: int = 1) -> ComparisonReport:
    """Run several methods on identical simulated predictions."""
    preds = simulate_predictions(scenes, noise, master_seed)
    results = {m: run_baseline(m, scenes, model, noise, cfg, master_seed, ad_ref, threads, preds) for m in methods}
    config = {"master_seed": master_seed, "noise": noise.to_dict(), "fit": cfg.to_dict()}
    return ComparisonReport(results, len(scenes), config)


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "scene_count", "config", "methods", "scenes", "failures", "extras"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "scene_count": {"type": "integer", "minimum": 0},
        "config": {"type": "object"},
        "methods": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "required": ["scene_count", "failure_count", "parts", "joints"],
                "properties": {
                    "parts": {"type": "array", "items": {
                        "type": "object",
                        "required": ["rotation_error_deg", "translation_error", "iou_3d", "ad_accuracy"],
                        "additionalProperties": {"type": ["number", "null"]},
                    }},
                    "joints": {"type": "array", "items": {
                        "type": "object",
                        "required": list(JOINT_METRICS),
                        "additionalProperties": {"type": ["number", "null"]},
                    }},
                },
            },
        },
        "scenes": {"type": "object", "additionalProperties": {"type": "array", "items": {
            "type": "object", "required": ["scene_id", "method", "rotation_error_deg", "occlusion"]}}},
        "failures": {"type": "array", "items": {
            "type": "object", "required": ["scene_id", "error", "message", "method"]}},
        "extras": {"type": "object"},
    },
}


# ---------------------------------------------------------------------------
# joint voting comparison


def direct_camera_joints(scene: Scene, assoc: np.ndarray, noise: NoiseConfig, factor: float,
                         rng_seed: int) -> NaocsJointParams:
    """Joint parameters from votes cast directly in camera space.

    Votes are encoded from the true camera-space axes and observed points,
    then perturbed like the NAOCS votes with every noise scale multiplied by
    ``factor`` (pivot noise is also converted from NAOCS to camera units).
    """
    axis_rng, piv_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(rng_seed).spawn(2))
    cam = scene.gt_joint_params_camera
    votes = encode_votes(scene.points, assoc, cam)
    active = np.flatnonzero(assoc > 0)
    if noise.axis_angle_sigma_deg > 0 and len(active):
        rv = axis_rng.normal(0.0, factor * math.radians(noise.axis_angle_sigma_deg), size=(len(active), 3))
        for i, w in zip(active, rv):
            votes[i, :3] = exp_so3(w) @ votes[i, :3]
    if noise.pivot_sigma > 0:
        to_camera = scene.gt_part_poses[0].scale / scene.gt_g_scale[0]
        rev = np.flatnonzero(np.isin(assoc, [k + 1 for k, t in enumerate(cam.joint_types) if t == REVOLUTE]))
        votes[rev, 6] += piv_rng.normal(0.0, factor * noise.pivot_sigma * to_camera, size=len(rev))
    n = scene.num_points
    rec = PredictionRecord(scene.scene_id, scene.gt_part_labels, scene.points, np.ones(n), np.zeros((n, 3)),
                           assoc, votes)
    return aggregate_joint_votes(rec, cam.joint_types)


@dataclass
class JointVotingTable:
    """Per-scene, per-revolute-joint errors of both voting pathways."""

    joint_ids: list[int]
    scene_ids: list[int]
    errors: dict[str, dict[str, np.ndarray]]
    direct_noise_factor: float
    failures: list[dict] = field(default_factory=list)

    def means(self) -> dict:
        return {m: {name: [math.fsum(col) / len(col) if len(col) else None for col in arr.T]
                    for name, arr in d.items()} for m, d in self.errors.items()}

    def to_dict(self) -> dict:
        return {
            "joint_ids": self.joint_ids,
            "scene_count": len(self.scene_ids),
            "direct_noise_factor": self.direct_noise_factor,
            "methods": self.means(),
            "failures": self.failures,
        }


def joint_voting_comparison(scenes: list[Scene], model: KinematicModel, noise: NoiseConfig,
                            cfg: FitConfig = FitConfig(), master_seed: int = 0,
                            direct_noise_factor: float = DEFAULT_DIRECT_NOISE_FACTOR) -> JointVotingTable:
    """Axis/pivot errors of NAOCS votes + estimated poses vs direct camera-space votes.

    Both pathways use the same (possibly noisy) joint associations.
    """
    rev = [jt.id for jt in model.joints if jt.joint_type == REVOLUTE]
    if not rev:
        raise ValueError("joint voting comparison needs at least one revolute joint")
    rows = {m: {"axis_angle_error_deg": [], "pivot_line_distance": []} for m in ("ancsh", "direct")}
    scene_ids, failures = [], []
    for scene in scenes:
        pred = simulate_prediction(scene, noise, derive_seed(master_seed, "predict", scene.scene_id))
        try:
            est = fit_scene(scene.points, pred, model, "ancsh", cfg, derive_seed(master_seed, "fit", scene.scene_id))
            direct = direct_camera_joints(scene, pred.assoc, noise, direct_noise_factor,
                                          derive_seed(master_seed, "direct-votes", scene.scene_id))
        except ArticulateError as exc:
            failures.append(_failure(scene.scene_id, exc))
            continue
        cam = scene.gt_joint_params_camera
        scene_ids.append(scene.scene_id)
        for name, axes, lines in (
            ("ancsh", [est.joints[k].axis for k in rev], [Line3(est.joints[k].pivot, est.joints[k].axis) for k in rev]),
            ("direct", [direct.axes[k] for k in rev], [direct.line(k) for k in rev]),
        ):
            rows[name]["axis_angle_error_deg"].append([direction_angle_deg(a, cam.axes[k]) for a, k in zip(axes, rev)])
            rows[name]["pivot_line_distance"].append([line_to_line_distance(ln, cam.line(k)) for ln, k in zip(lines, rev)])
    errors = {m: {n: np.array(v, dtype=float).reshape(-1, len(rev)) for n, v in d.items()} for m, d in rows.items()}
    return JointVotingTable(rev, scene_ids, errors, direct_noise_factor, failures)


# ---------------------------------------------------------------------------
# occlusion analysis


def _check_bins(bins) -> np.ndarray:
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("occlusion bins must be at least two increasing edges")
    if edges[0] > 0 or edges[-1] < 1:
        raise ValueError("occlusion bins must cover [0, 1]")
    return edges


def occlusion_analysis(metrics: list[SceneMetrics], bins=DEFAULT_OCCLUSION_BINS, part: int | None = None) -> dict:
    """Mean part errors grouped by visible fraction.

    Bins are half-open ``[lo, hi)`` except the last, which is closed. Empty
    bins report ``None`` means. With ``part`` set only that part is counted.
    """
    edges = _check_bins(bins)
    nb = len(edges) - 1
    groups = {name: [[] for _ in range(nb)] for name in ("rotation_error_deg", "translation_error", "iou_3d")}
    for m in metrics:
        parts = range(len(m.occlusion)) if part is None else [part]
        for j in parts:
            b = min(int(np.searchsorted(edges, m.occlusion[j], side="right")) - 1, nb - 1)
            for name, g in groups.items():
                g[b].append(getattr(m, name)[j])
    counts = [len(x) for x in groups["rotation_error_deg"]]
    return {
        "edges": edges.tolist(),
        "counts": counts,
        **{name: [_mean(x) if x else None for x in g] for name, g in groups.items()},
    }


def occlusion_rank_correlation(metrics: list[SceneMetrics], part: int | None = None) -> float:
    """Spearman correlation between visible fraction and rotation error."""
    vis, err = [], []
    for m in metrics:
        parts = range(len(m.occlusion)) if part is None else [part]
        for j in parts:
            vis.append(m.occlusion[j])
            err.append(m.rotation_error_deg[j])
    return float(spearmanr(vis, err).statistic)
