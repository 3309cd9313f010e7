import hashlib
import json
import math

import numpy as np
import pytest

from articulate.errors import ResampleLimitExceeded, SchemaVersionMismatch
from articulate.kinematics import forward_kinematics, make_procedural_model
from articulate.observe import (
    CameraConfig,
    Scene,
    generate_scenes,
    look_at,
    occlusion_level,
    part_poses_npcs_to_camera,
    project,
    read_dataset,
    sample_scene,
    write_dataset,
    zbuffer_visibility,
)


def plane(x0, x1, y0, y1, z, n):
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])


def test_front_plane_hides_half_of_back_plane():
    back = plane(-0.5, 0.5, -0.5, 0.5, 2.0, 200)
    # covers exactly the x < 0 half of the back plane's image
    front = plane(-0.4, 0.0, -0.4, 0.4, 1.0, 200)
    pts = np.vstack([back, front])
    visible, winners = zbuffer_visibility(pts, None, 140.0, (160, 120))
    vis_back = visible[: len(back)].mean()
    assert vis_back == pytest.approx(0.5, abs=0.05)
    # pixels covered by the front plane are won by it
    pix, _ = project(pts, 140.0, (160, 120))
    front_pixels = set(pix[len(back):].tolist())
    assert all(w >= len(back) for w in winners if pix[w] in front_pixels)
    assert visible[len(back):].all()


def test_isolated_plane_fully_visible():
    pts = plane(-0.3, 0.3, -0.3, 0.3, 2.0, 150)
    visible, winners = zbuffer_visibility(pts, None, 140.0, (160, 120))
    assert visible.all()
    assert len(winners) == len(set(project(pts, 140.0, (160, 120))[0].tolist()))


def test_backface_culling():
    pts = plane(-0.3, 0.3, -0.3, 0.3, 2.0, 50)
    away = np.tile([0, 0, 1.0], (len(pts), 1))
    visible, winners = zbuffer_visibility(pts, away, 140.0, (160, 120))
    assert not visible.any() and len(winners) == 0


def test_look_at_frame():
    cam = look_at([0, -3, 0], [0, 0, 0])
    np.testing.assert_allclose(cam.apply([0, 0, 0]), [0, 0, 3], atol=1e-12)
    # world up (+z) appears as image up, i.e. camera -y
    assert cam.apply_direction([0, 0, 1])[1] < 0
    assert np.linalg.det(cam.rotation) == pytest.approx(1.0)


def test_scene_determinism(models):
    m = models["eyeglasses_like"]
    a = sample_scene(m, CameraConfig(), 42, 3)
    b = sample_scene(m, CameraConfig(), 42, 3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_generate_independent_of_threads(models):
    m = models["two_part_revolute"]
    a = generate_scenes(m, CameraConfig(), 9, 4, threads=1)
    b = generate_scenes(m, CameraConfig(), 9, 4, threads=3)
    assert [json.dumps(s.to_dict()) for s in a] == [json.dumps(s.to_dict()) for s in b]


def test_scene_ground_truth_consistency(scenes):
    for sc in scenes.values():
        for s in sc:
            assert len(s.points) == CameraConfig().sample_count
            for j, pose in enumerate(s.gt_part_poses):
                sel = s.gt_part_labels == j
                assert sel.any()
                assert np.max(np.abs(pose.apply(s.gt_npcs[sel]) - s.points[sel])) < 1e-9
            assert np.all((s.occlusion >= 0) & (s.occlusion <= 1))
            assert occlusion_level(s, 0) == s.occlusion[0]


def test_scene_states_within_ranges(models, scenes):
    for c, sc in scenes.items():
        m = models[c]
        for s in sc:
            for jt, st in zip(m.joints, s.joint_states):
                assert jt.state_range[0] <= st <= jt.state_range[1]
            np.testing.assert_allclose(s.gt_joint_states, np.abs(s.joint_states - m.rest_states))


def test_camera_joint_params_through_child_agree(models, scenes):
    """Joint axes/pivots posed through the child part give the same lines."""
    for c, sc in scenes.items():
        m = models[c]
        for s in sc:
            poses = forward_kinematics(m, s.joint_states)
            for jt in m.joints:
                T = s.camera.compose(poses[jt.child])
                np.testing.assert_allclose(T.apply_direction(jt.axis), s.gt_joint_params_camera.axes[jt.id],
                                           atol=1e-12)
                if jt.pivot is not None:
                    # the pivot is fixed by the revolute motion
                    np.testing.assert_allclose(T.apply(jt.pivot), s.gt_joint_params_camera.pivots[jt.id],
                                               atol=1e-12)


def test_visibility_resolution_monotone(models):
    m = models["eyeglasses_like"]
    rng = np.random.default_rng(0)
    for _ in range(5):
        states = np.array([rng.uniform(*j.state_range) for j in m.joints])
        obj = forward_kinematics(m, states)
        cam = look_at([0.3, 0.8, 0.3], [0, 0, 0])
        pts = np.concatenate([cam.compose(T).apply(p.points) for T, p in zip(obj, m.parts)])
        normals = np.concatenate([cam.compose(T).apply_direction(p.normals) for T, p in zip(obj, m.parts)])
        part_of = np.concatenate([np.full(len(p.points), j) for j, p in enumerate(m.parts)])
        weights = np.concatenate([p.area_weights for p in m.parts])
        occ = []
        for scale in (1, 2):
            vis, _ = zbuffer_visibility(pts, normals, 140.0 * scale, (160 * scale, 120 * scale))
            occ.append(np.bincount(part_of[vis], weights=weights[vis], minlength=3))
        assert np.all(occ[1] >= occ[0] - 0.05)


def test_resample_limit():
    m = make_procedural_model("two_part_revolute", 0)
    cfg = CameraConfig(min_part_points=10_000)
    with pytest.raises(ResampleLimitExceeded):
        sample_scene(m, cfg, 0)


def test_resampled_flag_when_few_visible(models):
    m = models["two_part_revolute"]
    s = sample_scene(m, CameraConfig(image_resolution=(40, 32), focal=35.0, sample_count=1024), 1)
    assert s.resampled
    assert len(s.points) == 1024


def test_camera_config_invariants():
    with pytest.raises(ValueError):
        CameraConfig(distance_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        CameraConfig(image_resolution=(16, 120))
    with pytest.raises(ValueError):
        CameraConfig(sample_count=10)
    cfg = CameraConfig(focal=99.0)
    assert CameraConfig.from_dict(cfg.to_dict()) == cfg


def test_npcs_pose_composition(models, canon):
    m = models["drawer_like"]
    c = canon["drawer_like"]
    poses = part_poses_npcs_to_camera(c, forward_kinematics(m, m.rest_states), look_at([0, 3, 1], [0, 0, 0]))
    for j, pose in enumerate(poses):
        # NPCS -> NAOCS -> object frame must hit the model samples
        cam = look_at([0, 3, 1], [0, 0, 0])
        np.testing.assert_allclose(pose.apply(c.npcs.points[j]), cam.apply(m.parts[j].points), atol=1e-12)


# --- persistence -----------------------------------------------------------


def test_empty_dataset_roundtrip(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_dataset([], path)
    assert len(path.read_text().splitlines()) == 1
    assert read_dataset(path) == []


def test_dataset_roundtrip_exact(tmp_path, scenes):
    sc = [s for v in scenes.values() for s in v]
    path = tmp_path / "d.jsonl"
    write_dataset(sc, path)
    back = read_dataset(path)
    assert len(back) == len(sc)
    for a, b in zip(sc, back):
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        np.testing.assert_array_equal(a.points, b.points)
        assert a.gt_part_poses[0] == b.gt_part_poses[0]
    path2 = tmp_path / "d2.jsonl"
    write_dataset(back, path2)
    assert hashlib.sha256(path.read_bytes()).hexdigest() == hashlib.sha256(path2.read_bytes()).hexdigest()


def test_dataset_schema_errors(tmp_path, scenes):
    s = scenes["two_part_revolute"][0]
    path = tmp_path / "d.jsonl"
    write_dataset([s], path)
    lines = path.read_text().splitlines()
    bad_version = json.loads(lines[0])
    bad_version["schema_version"] = 99
    (tmp_path / "v.jsonl").write_text(json.dumps(bad_version) + "\n" + lines[1] + "\n")
    with pytest.raises(SchemaVersionMismatch):
        read_dataset(tmp_path / "v.jsonl")
    rec = json.loads(lines[1])
    del rec["gt_npcs"]
    (tmp_path / "f.jsonl").write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(SchemaVersionMismatch, match="gt_npcs"):
        read_dataset(tmp_path / "f.jsonl")
    (tmp_path / "c.jsonl").write_text(lines[0] + "\n")
    with pytest.raises(SchemaVersionMismatch):
        read_dataset(tmp_path / "c.jsonl")
    with pytest.raises(SchemaVersionMismatch):
        Scene.from_dict({})


def test_occlusion_varies_with_view(models):
    m = models["eyeglasses_like"]
    sc = generate_scenes(m, CameraConfig(), 5, 20)
    occ = np.array([s.occlusion for s in sc])
    assert occ.std(axis=0).min() > 0.0
    assert math.isfinite(occ.sum())
