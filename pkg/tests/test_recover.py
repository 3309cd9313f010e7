import math

import numpy as np
import pytest

from articulate.errors import DegenerateAxis
from articulate.geometry import Line3, SimilarityTransform, direction_angle_deg, line_to_line_distance, rotation_about_axis
from articulate.kinematics import REVOLUTE
from articulate.recover import JointEstimate, amodal_box, camera_axis, recover_joints, recover_prismatic, recover_revolute

from conftest import random_rotation, random_similarity

U = np.array([0.0, 0.0, 1.0])
Q = np.array([0.1, -0.2, 0.05])
G = (1.0, np.zeros(3))


def about_line(axis, pivot, theta):
    """Rigid rotation by ``theta`` about the line through ``pivot`` along ``axis``."""
    R = rotation_about_axis(axis, theta)
    return SimilarityTransform(1.0, R, pivot - R @ pivot)


def test_rest_configuration():
    T = random_similarity(np.random.default_rng(0))
    est = recover_revolute(T, T, G, G, U, Q)
    assert est.state == pytest.approx(0.0, abs=1e-12)
    assert direction_angle_deg(est.axis, T.rotation @ U, oriented=True) < 1e-9
    np.testing.assert_allclose(est.pivot, T.apply(Q), atol=1e-12)


def test_known_angle_about_known_line():
    T = random_similarity(np.random.default_rng(1))
    M = about_line(U, Q, math.radians(33))
    est = recover_revolute(T, T.compose(M), G, G, U, Q)
    assert math.degrees(est.state) == pytest.approx(33.0, abs=1e-9)
    line = Line3(T.apply(Q), T.rotation @ U)
    assert line_to_line_distance(Line3(est.pivot, est.axis), line) < 1e-12
    assert direction_angle_deg(est.axis, line.direction, oriented=True) < 1e-9


def test_recovery_is_symmetric_in_the_two_parts():
    rng = np.random.default_rng(2)
    T = random_similarity(rng)
    M = about_line(U, Q, 1.1)
    g2 = (0.7, np.array([0.1, 0.2, 0.3]))
    a = recover_revolute(T, T.compose(M), G, g2, U, Q)
    b = recover_revolute(T.compose(M), T, g2, G, U, Q)
    np.testing.assert_allclose(a.axis, b.axis, atol=1e-15)
    np.testing.assert_allclose(a.pivot, b.pivot, atol=1e-15)
    assert a.state == pytest.approx(b.state, abs=1e-15)


def test_degenerate_axis():
    R1 = random_rotation(np.random.default_rng(3))
    u_cam = R1 @ U
    perp = np.cross(u_cam, [1.0, 0, 0])
    R2 = rotation_about_axis(perp / np.linalg.norm(perp), math.pi) @ R1
    with pytest.raises(DegenerateAxis):
        camera_axis(R1, R2, U)


def test_prismatic_pull_distance():
    N = random_similarity(np.random.default_rng(4))
    ga = (0.8, np.array([0.0, -0.1, 0.05]))
    gb = (0.5, np.array([0.1, 0.2, 0.0]))

    def part_pose(g, shift):
        # NAOCS -> camera composed with the part's NPCS -> NAOCS map
        return SimilarityTransform(N.scale * g[0], N.rotation, N.apply(g[1]) + shift)

    for d in (0.0, 0.05, 0.3):
        est = recover_prismatic(part_pose(ga, 0.0), part_pose(gb, d * N.scale * (N.rotation @ U)), ga, gb, U)
        assert est.state == pytest.approx(d * N.scale, abs=1e-12)
        assert direction_angle_deg(est.axis, N.rotation @ U, oriented=True) < 1e-9
        assert est.pivot is None


def test_ground_truth_poses_give_ground_truth_joints(models, scenes):
    for c, sc in scenes.items():
        m = models[c]
        for s in sc:
            est = recover_joints(s.gt_part_poses, m.joints, s.gt_joint_params_naocs, s.gt_g_scale, s.gt_g_offset)
            gt = s.gt_joint_params_camera
            for e, jt in zip(est, m.joints):
                assert direction_angle_deg(e.axis, gt.axes[jt.id], oriented=True) < 1e-9
                assert e.state == pytest.approx(s.gt_joint_states[jt.id], abs=1e-9)
                if jt.joint_type == REVOLUTE:
                    assert line_to_line_distance(Line3(e.pivot, e.axis), gt.line(jt.id)) < 1e-9


def test_joint_estimate_roundtrip():
    e = JointEstimate(1, REVOLUTE, np.array([0, 0, 1.0]), np.array([1, 2, 3.0]), 0.25)
    back = JointEstimate.from_dict(e.to_dict())
    assert back.to_dict() == e.to_dict()


def test_amodal_box_examples():
    cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    box = amodal_box(SimilarityTransform.identity(), cube)
    np.testing.assert_allclose(box.half_extents, 0.5)
    np.testing.assert_allclose(box.center, 0.0)
    T = random_similarity(np.random.default_rng(5))
    box = amodal_box(T, cube * [1, 0.5, 0.25] + 0.1)
    np.testing.assert_allclose(box.half_extents, T.scale * np.array([0.5, 0.25, 0.125]), rtol=1e-12)
    np.testing.assert_allclose(box.center, T.apply([0.1, 0.1, 0.1]), atol=1e-12)
    assert box.volume == pytest.approx(T.scale ** 3 * 0.125, rel=1e-12)
    flat = amodal_box(T, cube * [1, 1, 0])
    assert flat.half_extents[2] > 0
    with pytest.raises(ValueError):
        amodal_box(T, np.zeros((0, 3)))


def test_amodal_box_contains_transformed_points(scenes):
    s = scenes["eyeglasses_like"][0]
    for j, pose in enumerate(s.gt_part_poses):
        sel = s.gt_part_labels == j
        box = amodal_box(pose, s.gt_npcs[sel])
        assert box.contains(s.points[sel], tol=1e-9).all()
