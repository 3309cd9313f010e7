import copy
import json
import math

import jsonschema
import numpy as np
import pytest

from articulate.errors import CountMismatch
from articulate.evaluate import (
    REPORT_SCHEMA,
    AdReference,
    SceneMetrics,
    ad_accuracy,
    compare_methods,
    evaluate_estimates,
    fit_predictions,
    gt_boxes,
    joint_voting_comparison,
    occlusion_analysis,
    occlusion_rank_correlation,
    point_set_diameter,
    run_baseline,
    score_scene,
    simulate_predictions,
    summarize,
)
from articulate.geometry import SimilarityTransform, rotation_about_axis
from articulate.pipeline import fit_scene
from articulate.predict import NoiseConfig, ground_truth_prediction

from conftest import voxel_iou


def gt_estimate(scene, model, method="ancsh"):
    return fit_scene(scene.points, ground_truth_prediction(scene), model, method)


def with_poses(est, poses):
    out = copy.copy(est)
    out.pose = copy.copy(est.pose)
    out.pose.poses = list(poses)
    return out


def rotation_error_oracle(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1) / 2
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def test_ground_truth_scores_zero(models, scenes, canon):
    for c, sc in scenes.items():
        ref = AdReference.from_canonical(canon[c])
        for s in sc[:2]:
            m = score_scene(gt_estimate(s, models[c]), s, ref)
            assert max(m.rotation_error_deg) < 1e-6
            assert max(m.translation_error) < 1e-9
            assert min(m.iou_3d) > 1 - 1e-9
            assert all(m.ad_hit)
            assert max(m.axis_angle_error_deg) < 1e-6
            assert max(m.state_error) < 1e-6


def test_five_degree_rotation_error(models, scenes):
    s = scenes["two_part_revolute"][0]
    est = gt_estimate(s, models["two_part_revolute"])
    T = s.gt_part_poses[0]
    bad = SimilarityTransform(T.scale, rotation_about_axis([0, 0, 1], math.radians(5)) @ T.rotation, T.translation)
    m = score_scene(with_poses(est, [bad, est.poses[1]]), s)
    assert m.rotation_error_deg[0] == pytest.approx(5.0, abs=1e-6)
    assert m.translation_error[0] < 1e-9
    assert m.rotation_error_deg[1] < 1e-6


def test_metrics_match_reimplementation(models, scenes):
    """Scores of noisy fits agree with an independent recomputation."""
    c = "eyeglasses_like"
    sc = scenes[c][:3]
    preds = simulate_predictions(sc, NoiseConfig(npcs_sigma=0.03, seg_flip_prob=0.05), 2)
    ests, _ = fit_predictions("ancsh", sc, preds, models[c], master_seed=2)
    res = evaluate_estimates("ancsh", ests, sc)
    for m, est, s in zip(res.metrics, ests, sc):
        boxes = gt_boxes(s)
        for j, pose in enumerate(s.gt_part_poses):
            assert m.rotation_error_deg[j] == pytest.approx(
                rotation_error_oracle(est.poses[j].rotation, pose.rotation), abs=1e-5)
            assert m.translation_error[j] == pytest.approx(
                math.sqrt(sum((a - b) ** 2 for a, b in zip(est.poses[j].translation, pose.translation))), rel=1e-12)
            assert m.iou_3d[j] == pytest.approx(voxel_iou(est.boxes[j], boxes[j], 120), abs=0.02)


def test_ad_accuracy_examples(models, scenes, canon):
    c = "drawer_like"
    sc = scenes[c][:4]
    ref = AdReference.from_canonical(canon[c])
    good = [gt_estimate(s, models[c]) for s in sc]
    np.testing.assert_array_equal(ad_accuracy(good, sc, ref), 1.0)
    far = [with_poses(e, [SimilarityTransform(T.scale, T.rotation, T.translation + 10.0) for T in e.poses])
           for e in good]
    np.testing.assert_array_equal(ad_accuracy(far, sc, ref), 0.0)
    np.testing.assert_array_equal(ad_accuracy(good[:2] + far[2:], sc, ref), 0.5)
    with pytest.raises(CountMismatch):
        ad_accuracy(good[:3], sc, ref)


def test_ad_threshold_boundary(models, scenes, canon):
    """A pure shift of ``d`` has AD exactly ``d``; the hit flips at the threshold."""
    c = "two_part_revolute"
    s = scenes[c][0]
    ref = AdReference.from_canonical(canon[c])
    est = gt_estimate(s, models[c])
    diam = ref.diameters[0] * s.gt_part_poses[0].scale
    for frac, hit in ((0.09, True), (0.11, False)):
        T = est.poses[0]
        shifted = with_poses(est, [SimilarityTransform(T.scale, T.rotation, T.translation + [frac * diam, 0, 0]),
                                   est.poses[1]])
        assert score_scene(shifted, s, ref).ad_hit[0] is hit


def test_point_set_diameter():
    pts = np.array([[0, 0, 0], [3, 0, 0], [0, 4, 0], [1, 1, 0.5], [0, 0, 1.0]])
    assert point_set_diameter(pts) == pytest.approx(5.0)
    assert point_set_diameter(pts[:1]) == 0.0


def test_summary_mean_is_exact():
    vals = [1e16, 1.0, -1e16, 1.0]
    metrics = [SceneMetrics(i, "npcs", [v], [0.0], [None], [True], [], [], [], [0.5]) for i, v in enumerate(vals)]
    s = summarize(metrics)
    assert s["parts"][0]["rotation_error_deg"] == 0.5
    assert s["parts"][0]["iou_3d"] is None
    assert s["parts"][0]["ad_accuracy"] == 1.0


def test_naocs_baseline_has_no_boxes(models, scenes):
    c = "two_part_revolute"
    res = run_baseline("naocs", scenes[c][:2], models[c])
    assert all(v is None for m in res.metrics for v in m.iou_3d)
    assert summarize(res.metrics)["parts"][0]["iou_3d"] is None


def test_naocs_translation_suffers_from_g_noise(models, scenes):
    c = "eyeglasses_like"
    noise = NoiseConfig(g_scale_rel_sigma=0.05, g_offset_sigma=0.03)
    report = compare_methods(["npcs", "naocs"], scenes[c], models[c], noise, master_seed=1)
    t = {m: summarize(r.metrics)["parts"] for m, r in report.results.items()}
    for j in range(3):
        assert t["naocs"][j]["translation_error"] > t["npcs"][j]["translation_error"]
        assert t["npcs"][j]["translation_error"] < 1e-9


def test_report_validates_against_schema(tmp_path, models, scenes, canon):
    c = "drawer_like"
    report = compare_methods(["npcs", "ancsh"], scenes[c][:3], models[c], NoiseConfig(npcs_sigma=0.02),
                             master_seed=3, ad_ref=AdReference.from_canonical(canon[c]))
    jsonschema.validate(report.to_dict(), REPORT_SCHEMA)
    report.write_json(tmp_path / "r.json")
    report.write_csv(tmp_path / "r.csv")
    jsonschema.validate(json.loads((tmp_path / "r.json").read_text()), REPORT_SCHEMA)
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * (4 + 3)
    bad = report.to_dict()
    del bad["methods"]["npcs"]["parts"][0]["iou_3d"]
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, REPORT_SCHEMA)


def test_count_mismatch(models, scenes):
    a = scenes["two_part_revolute"][0]
    est = gt_estimate(scenes["eyeglasses_like"][0], models["eyeglasses_like"])
    with pytest.raises(CountMismatch):
        score_scene(est, a)


def metric_with(occ, rot):
    return SceneMetrics(0, "ancsh", list(rot), [0.0] * len(rot), [1.0] * len(rot), [None] * len(rot), [], [], [],
                        list(occ))


def test_occlusion_bins():
    ms = [metric_with([0.0, 0.5], [1.0, 2.0]), metric_with([0.2, 1.0], [3.0, 4.0]), metric_with([0.55, 0.9], [5, 6])]
    out = occlusion_analysis(ms)
    assert out["counts"] == [1, 1, 2, 0, 2]
    assert out["rotation_error_deg"] == [1.0, 3.0, 3.5, None, 5.0]
    part1 = occlusion_analysis(ms, part=1)
    assert part1["counts"] == [0, 0, 1, 0, 2]
    with pytest.raises(ValueError):
        occlusion_analysis(ms, bins=[0.0, 0.5])
    with pytest.raises(ValueError):
        occlusion_analysis(ms, bins=[0.0, 0.6, 0.4, 1.0])


def test_occlusion_rank_correlation_sign():
    ms = [metric_with([v], [10 - 9 * v]) for v in np.linspace(0, 1, 20)]
    assert occlusion_rank_correlation(ms) == pytest.approx(-1.0)


def test_joint_voting_comparison_zero_noise(models, scenes):
    c = "eyeglasses_like"
    table = joint_voting_comparison(scenes[c][:3], models[c], NoiseConfig())
    assert table.joint_ids == [0, 1]
    for method in ("ancsh", "direct"):
        assert table.errors[method]["axis_angle_error_deg"].shape == (3, 2)
        assert table.errors[method]["axis_angle_error_deg"].max() < 1e-6
        assert table.errors[method]["pivot_line_distance"].max() < 1e-6
    with pytest.raises(ValueError):
        joint_voting_comparison(scenes["drawer_like"][:1], models["drawer_like"], NoiseConfig())
