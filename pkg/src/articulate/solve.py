"""Part pose estimation with kinematic constraints.

Initial poses come from a RANSAC-wrapped Umeyama fit per part. The joint
refinement then minimizes

    E = sum_j e_j + lam * sum_k e_k

over rotations and translations with the part scales held fixed, where
``e_j`` is the mean squared alignment error of part ``j``'s inliers and
``e_k`` penalizes violations of joint ``k`` (see the ``*_block`` functions).
Rotations are updated by left-multiplied axis-angle increments
``R <- exp([w]x) R``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .canonical import NaocsJointParams
from .errors import DegenerateInput, SolverDiverged, TooFewPoints
from .geometry import SimilarityTransform, exp_so3, skew, umeyama_fit
from .kinematics import REVOLUTE, Joint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings.

    With ``inlier_threshold`` unset the threshold is ``threshold_fraction``
    times the part diameter in the camera frame, estimated from the median
    distance ratio of sampled point pairs. After consensus the threshold is
    tightened to ``tighten_factor`` times the median inlier residual (never
    loosened), which drops outliers that landed near their true position;
    ``tighten_factor = 0`` disables this.
    """

    max_iters: int = 200
    inlier_threshold: float | None = None
    threshold_fraction: float = 0.05
    min_sample: int = 3
    confidence: float = 0.99
    batch_size: int = 50
    tighten_factor: float = 3.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.inlier_threshold is not None and self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.threshold_fraction <= 0:
            raise ValueError("threshold_fraction must be positive")
        if self.tighten_factor < 0:
            raise ValueError("tighten_factor must be nonnegative")
        if self.min_sample != 3:
            raise ValueError("similarity fits use minimal samples of 3 points")


@dataclass(frozen=True)
class ConstraintWeights:
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("constraint weights must be nonnegative")


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100
    grad_tol: float = 1e-10
    rel_tol: float = 1e-12
    initial_damping: float = 1e-4
    max_damping: float = 1e12


def config_to_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def config_from_dict(cls, d: dict | None):
    d = d or {}
    return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass(eq=False)
class PoseEstimate:
    """Per-part similarity transforms plus bookkeeping.

    ``inliers[j]`` is a boolean mask over all scene points; it is a subset of
    the points predicted as part ``j``.
    """

    poses: list[SimilarityTransform]
    inliers: list[np.ndarray]
    energy: float
    iterations: int = 0
    converged: bool = True
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# RANSAC initialisation


def _batched_umeyama(src: np.ndarray, dst: np.ndarray):
    """Umeyama fits for a batch of minimal samples, shapes ``(B, m, 3)``.

    Returns scales, rotations, translations and a validity mask that rejects
    collinear or coincident source samples.
    """
    m = src.shape[1]
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    xs = src - mu_s
    xd = dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    valid = (sv[:, 0] > 0) & (sv[:, 1] > 1e-10 * sv[:, 0])
    cov = np.einsum("bni,bnj->bij", xd, xs) / m
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones_like(D)
    S[:, 2] = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0, -1.0, 1.0)
    R = np.einsum("bij,bj,bjk->bik", U, S, Vt)
    var_s = np.einsum("bni,bni->b", xs, xs) / m
    scale = np.einsum("bi,bi->b", D, S) / np.where(valid, var_s, 1.0)
    valid &= scale > 0
    t = mu_d[:, 0] - scale[:, None] * np.einsum("bij,bj->bi", R, mu_s[:, 0])
    return scale, R, t, valid


def _robust_scale(points: np.ndarray, src: np.ndarray, pairs: np.ndarray) -> float:
    dp = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    ds = np.linalg.norm(src[pairs[:, 0]] - src[pairs[:, 1]], axis=1)
    ok = ds > 1e-12
    if not np.any(ok):
        raise DegenerateInput("all sampled source pairs coincide")
    return float(np.median(dp[ok] / ds[ok]))


def fit_part_ransac(points, src, cfg: RansacConfig = RansacConfig(), rng_seed: int = 0,
                    source_diameter: float = 1.0) -> tuple[SimilarityTransform, np.ndarray]:
    """Robust similarity fit mapping canonical coordinates ``src`` onto ``points``.

    Minimal samples for every trial are drawn up front from ``rng_seed``, so
    the result does not depend on how many trials adaptive termination runs.
    The best-consensus hypothesis is refit on its inliers until the inlier set
    stops changing.

    Args:
        source_diameter: extent of the part in ``src`` units (1 for NPCS).

    Returns:
        The transform and a boolean inlier mask over the input points.
    """
    points = np.asarray(points, dtype=float)
    src = np.asarray(src, dtype=float)
    n = len(points)
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    rng = np.random.default_rng(rng_seed)
    samples = np.argpartition(rng.random((cfg.max_iters, n)), 2, axis=1)[:, :3]

    if cfg.inlier_threshold is not None:
        thresh = cfg.inlier_threshold
    else:
        thresh = cfg.threshold_fraction * source_diameter * _robust_scale(points, src, samples[:, :2])
    thresh2 = thresh * thresh

    best = None  # ((count, -sse), s, R, t)
    required = cfg.max_iters
    done = 0
    while done < min(required, cfg.max_iters):
        idx = samples[done:done + cfg.batch_size]
        s, R, t, valid = _batched_umeyama(src[idx], points[idx])
        pred = s[:, None, None] * np.einsum("bij,nj->bni", R, src) + t[:, None, :]
        d2 = np.sum((pred - points[None]) ** 2, axis=2)
        inl = d2 < thresh2
        count = np.where(valid, inl.sum(axis=1), -1)
        sse = np.where(inl, d2, thresh2).sum(axis=1)
        for b in range(len(idx)):
            if count[b] < 0:
                continue
            key = (int(count[b]), -float(sse[b]))
            if best is None or key > best[0]:
                best = (key, s[b], R[b], t[b])
        done += len(idx)
        if best is not None:
            w = best[0][0] / n
            if w >= 1.0:
                required = done
            elif w > 0:
                denom = math.log(max(1.0 - w ** 3, 1e-300))
                if denom < 0:
                    required = int(math.ceil(math.log(1.0 - cfg.confidence) / denom))
    if best is None:
        raise DegenerateInput("every minimal sample was degenerate")

    T = SimilarityTransform(best[1], best[2], best[3])
    T, mask = _refit_inliers(T, src, points, thresh2)
    if cfg.tighten_factor > 0 and mask.sum() >= 3:
        d = np.sqrt(np.sum((T.apply(src[mask]) - points[mask]) ** 2, axis=1))
        tight = min(thresh, max(cfg.tighten_factor * float(np.median(d)), 1e-7 * thresh))
        if tight < thresh:
            T, mask = _refit_inliers(T, src, points, tight * tight)
    return T, mask


def _refit_inliers(T: SimilarityTransform, src, points, thresh2: float, rounds: int = 5):
    """Refit on inliers until the inlier set stops changing (or would shrink)."""
    mask = np.sum((T.apply(src) - points) ** 2, axis=1) < thresh2
    for _ in range(rounds):
        if mask.sum() < 3:
            break
        try:
            T_new = umeyama_fit(src[mask], points[mask])
        except DegenerateInput:
            break
        new_mask = np.sum((T_new.apply(src) - points) ** 2, axis=1) < thresh2
        if new_mask.sum() < mask.sum():
            break
        T = T_new
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return T, mask


# ---------------------------------------------------------------------------
# residual blocks; each returns residuals and Jacobians w.r.t. the rotation
# increment (w) and translation (t) of every part it touches


def data_block(R, t, s, points, src):
    """Alignment residuals ``(p_i - s R c_i - t) / sqrt(n)`` for one part."""
    n = len(points)
    w = 1.0 / math.sqrt(n)
    Rc = src @ R.T
    r = (points - s * Rc - t) * w
    J_w = np.empty((n, 3, 3))
    # dr/dw = s [R c]x / sqrt(n), since d(R c)/dw = -[R c]x
    J_w[:] = 0.0
    J_w[:, 0, 1], J_w[:, 0, 2] = -Rc[:, 2], Rc[:, 1]
    J_w[:, 1, 0], J_w[:, 1, 2] = Rc[:, 2], -Rc[:, 0]
    J_w[:, 2, 0], J_w[:, 2, 1] = -Rc[:, 1], Rc[:, 0]
    J_w *= s * w
    J_t = np.broadcast_to(-w * np.eye(3), (n, 3, 3))
    return r.reshape(-1), J_w.reshape(-1, 3), np.ascontiguousarray(J_t).reshape(-1, 3)


def revolute_block(R1, R2, axis, weight: float = 1.0):
    """``weight * (R1 u - R2 u)``: zero iff both parts map the axis alike."""
    a1 = R1 @ axis
    a2 = R2 @ axis
    r = weight * (a1 - a2)
    return r, -weight * skew(a1), weight * skew(a2)


def prismatic_rotation_block(R1, R2, weight: float = 1.0):
    """``weight * vec(R1 R2^T - I)`` (row-major, 9 entries)."""
    Q = R1 @ R2.T
    r = weight * (Q - np.eye(3)).reshape(-1)
    J1 = np.empty((9, 3))
    J2 = np.empty((9, 3))
    for a in range(3):
        E = skew(np.eye(3)[a])
        J1[:, a] = (E @ Q).reshape(-1)
        J2[:, a] = -(Q @ E).reshape(-1)
    return r, weight * J1, weight * J2


def joint_anchor_offset(R1, t1, k1, Gt1, R2, t2, k2, Gt2):
    """Camera-space displacement between the two parts' images of the NAOCS origin.

    ``k_j = s_j / G_s,j`` is the NAOCS-to-camera scale implied by part ``j``.
    """
    return t2 - t1 + k1 * (R1 @ Gt1) - k2 * (R2 @ Gt2)


def prismatic_cross_block(R1, t1, k1, Gt1, R2, t2, k2, Gt2, axis, weight: float = 1.0):
    """``weight * [R_j u]x delta`` for both parts (6 entries).

    Returns residuals and Jacobians ``(J_w1, J_t1, J_w2, J_t2)``.
    """
    delta = joint_anchor_offset(R1, t1, k1, Gt1, R2, t2, k2, Gt2)
    d_w1 = -k1 * skew(R1 @ Gt1)
    d_w2 = k2 * skew(R2 @ Gt2)
    S_delta = skew(delta)
    r = np.empty(6)
    J_w1 = np.empty((6, 3))
    J_w2 = np.empty((6, 3))
    J_t1 = np.empty((6, 3))
    J_t2 = np.empty((6, 3))
    for row, R in ((0, R1), (3, R2)):
        a = R @ axis
        Sa = skew(a)
        r[row:row + 3] = weight * np.cross(a, delta)
        J_w1[row:row + 3] = weight * (Sa @ d_w1)
        J_w2[row:row + 3] = weight * (Sa @ d_w2)
        J_t1[row:row + 3] = -weight * Sa
        J_t2[row:row + 3] = weight * Sa
        own = S_delta @ Sa * weight
        if row == 0:
            J_w1[row:row + 3] += own
        else:
            J_w2[row:row + 3] += own
    return r, J_w1, J_t1, J_w2, J_t2


# ---------------------------------------------------------------------------
# energies


def _part_data(points, pred, masks, j):
    sel = (pred.labels == j) if masks is None else masks[j]
    return points[sel], pred.npcs[sel]


def energy_vanilla(poses, pred, points, masks=None) -> float:
    """Sum over parts of the mean squared alignment error."""
    points = np.asarray(points, dtype=float)
    total = 0.0
    for j, T in enumerate(poses):
        p, c = _part_data(points, pred, masks, j)
        if len(p):
            total += float(np.mean(np.sum((p - T.apply(c)) ** 2, axis=1)))
    return total


def joint_energies(poses, joints: list[Joint], naocs_joints: NaocsJointParams, g_scale, g_offset,
                   mu: float = 1.0) -> np.ndarray:
    """Unweighted per-joint penalties ``e_k``."""
    out = np.zeros(len(joints))
    for jt in joints:
        a, b = poses[jt.parent], poses[jt.child]
        u = naocs_joints.axes[jt.id]
        if jt.joint_type == REVOLUTE:
            r, _, _ = revolute_block(a.rotation, b.rotation, u)
            out[jt.id] = r @ r
        else:
            r1, _, _ = prismatic_rotation_block(a.rotation, b.rotation)
            r2, *_ = prismatic_cross_block(
                a.rotation, a.translation, a.scale / g_scale[jt.parent], g_offset[jt.parent],
                b.rotation, b.translation, b.scale / g_scale[jt.child], g_offset[jt.child], u)
            out[jt.id] = mu * (r1 @ r1) + r2 @ r2
    return out


def energy_constrained(poses, pred, points, joints: list[Joint], naocs_joints: NaocsJointParams,
                       g_scale, g_offset, weights: ConstraintWeights = ConstraintWeights(), masks=None) -> float:
    e = energy_vanilla(poses, pred, points, masks)
    if weights.lam == 0:
        return e
    return e + weights.lam * float(joint_energies(poses, joints, naocs_joints, g_scale, g_offset, weights.mu).sum())


# ---------------------------------------------------------------------------
# refinement


class _Problem:
    """Stacked residuals/Jacobian of the constrained energy over free parts."""

    def __init__(self, scales, points, pred, masks, joints, naocs_joints, g_scale, g_offset, weights, free):
        self.scales = scales
        self.data = []
        for j in range(len(scales)):
            p, c = _part_data(points, pred, masks, j)
            self.data.append((p, c))
        self.joints = joints
        self.naocs_joints = naocs_joints
        self.g_scale = g_scale
        self.g_offset = g_offset
        self.weights = weights
        self.free = free
        self.col = {j: 6 * i for i, j in enumerate(free)}

    def evaluate(self, R, t, jacobian=True):
        res, rows = [], []
        ncols = 6 * len(self.free)

        def add(r, blocks):
            res.append(r)
            if not jacobian:
                return
            J = np.zeros((len(r), ncols))
            for part, kind, Jb in blocks:
                if part in self.col:
                    c0 = self.col[part] + (0 if kind == "w" else 3)
                    J[:, c0:c0 + 3] += Jb
            rows.append(J)

        for j, (p, c) in enumerate(self.data):
            if len(p) == 0:
                continue
            r, Jw, Jt = data_block(R[j], t[j], self.scales[j], p, c)
            add(r, [(j, "w", Jw), (j, "t", Jt)])
        lam = self.weights.lam
        if lam > 0:
            for jt in self.joints:
                a, b = jt.parent, jt.child
                u = self.naocs_joints.axes[jt.id]
                if jt.joint_type == REVOLUTE:
                    r, J1, J2 = revolute_block(R[a], R[b], u, math.sqrt(lam))
                    add(r, [(a, "w", J1), (b, "w", J2)])
                    continue
                if self.weights.mu > 0:
                    r, J1, J2 = prismatic_rotation_block(R[a], R[b], math.sqrt(lam * self.weights.mu))
                    add(r, [(a, "w", J1), (b, "w", J2)])
                r, Jw1, Jt1, Jw2, Jt2 = prismatic_cross_block(
                    R[a], t[a], self.scales[a] / self.g_scale[a], self.g_offset[a],
                    R[b], t[b], self.scales[b] / self.g_scale[b], self.g_offset[b], u, math.sqrt(lam))
                add(r, [(a, "w", Jw1), (a, "t", Jt1), (b, "w", Jw2), (b, "t", Jt2)])
        r = np.concatenate(res) if res else np.zeros(0)
        if not jacobian:
            return r, None
        return r, (np.vstack(rows) if rows else np.zeros((0, ncols)))

    def retract(self, R, t, step):
        R = [r.copy() for r in R]
        t = t.copy()
        for j, c0 in self.col.items():
            R[j] = exp_so3(step[c0:c0 + 3]) @ R[j]
            t[j] = t[j] + step[c0 + 3:c0 + 6]
        return R, t


def refine_constrained(init: PoseEstimate, pred, points, joints: list[Joint], naocs_joints: NaocsJointParams,
                       g_scale, g_offset, weights: ConstraintWeights = ConstraintWeights(),
                       solver_cfg: SolverConfig = SolverConfig()) -> PoseEstimate:
    """Levenberg-Marquardt refinement of rotations and translations, scales fixed.

    The data term uses ``init.inliers``. Parts with fewer than three inliers
    keep their initial pose and only enter through joint residuals.

    Raises:
        SolverDiverged: the energy became non-finite; ``fallback`` is ``init``.
    """
    points = np.asarray(points, dtype=float)
    M = len(init.poses)
    scales = [T.scale for T in init.poses]
    masks = init.inliers
    free = [j for j in range(M) if np.count_nonzero(masks[j]) >= 3]
    problem = _Problem(scales, points, pred, masks, joints, naocs_joints, g_scale, g_offset, weights, free)
    R = [T.rotation.copy() for T in init.poses]
    t = np.array([T.translation for T in init.poses])

    r, J = problem.evaluate(R, t)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise SolverDiverged("initial energy is not finite", fallback=init)
    damping = solver_cfg.initial_damping
    converged = False
    it = 0
    for it in range(1, solver_cfg.max_iters + 1):
        g = J.T @ r
        if not free or np.max(np.abs(g)) < solver_cfg.grad_tol:
            converged = True
            it -= 1
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        accepted = False
        while damping <= solver_cfg.max_damping:
            try:
                step = np.linalg.solve(A + damping * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            R_new, t_new = problem.retract(R, t, step)
            r_new, _ = problem.evaluate(R_new, t_new, jacobian=False)
            new_cost = float(r_new @ r_new)
            if not math.isfinite(new_cost):
                raise SolverDiverged("energy became non-finite", fallback=init)
            if new_cost < cost:
                accepted = True
                break
            damping *= 10.0
        if not accepted:
            # no descent direction left at any damping: a (numerical) stationary point
            converged = True
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        R, t, cost = R_new, t_new, new_cost
        damping = max(damping / 10.0, 1e-15)
        r, J = problem.evaluate(R, t)
        if rel < solver_cfg.rel_tol:
            converged = True
            break
    poses = [SimilarityTransform(scales[j], R[j], t[j]) for j in range(M)]
    return PoseEstimate(poses, [m.copy() for m in masks], cost, it, converged, dict(init.extras))
