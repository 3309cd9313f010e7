"""Command-line front end: ``generate``, ``predict``, ``fit`` and ``eval``.

Every subcommand reads an optional JSON run config (``--config``); flags
override the matching config fields. All randomness derives from
``master_seed`` through :func:`articulate.seeding.derive_seed`.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .canonical import canonicalize
from .errors import ArticulateError, SchemaVersionMismatch
from .evaluate import (
    DEFAULT_OCCLUSION_BINS,
    AdReference,
    ComparisonReport,
    MethodResult,
    evaluate_estimates,
    fit_predictions,
    occlusion_analysis,
)
from .kinematics import make_procedural_model, read_model, write_model
from .observe import CameraConfig, generate_scenes, read_dataset, read_jsonl, write_dataset, write_jsonl
from .pipeline import METHODS, FitConfig, SceneEstimate
from .predict import NoiseConfig, load_prediction, simulate_prediction, write_prediction
from .seeding import derive_seed

log = logging.getLogger("articulate")

MODEL_FILE = "model.json"
DATASET_FILE = "scenes.jsonl"


@dataclass
class RunConfig:
    master_seed: int = 0
    category: str = "two_part_revolute"
    model_seed: int = 0
    shape_params: dict = field(default_factory=dict)
    scene_count: int = 10
    camera: CameraConfig = CameraConfig()
    noise: NoiseConfig = NoiseConfig()
    fit: FitConfig = FitConfig()
    threads: int = 1

    def __post_init__(self):
        if self.scene_count < 1:
            raise ValueError("scene_count must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"master_seed", "category", "model_seed", "shape_params", "scene_count", "camera", "noise", "fit",
                 "threads"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        return cls(
            master_seed=int(d.get("master_seed", 0)),
            category=d.get("category", "two_part_revolute"),
            model_seed=int(d.get("model_seed", 0)),
            shape_params=dict(d.get("shape_params", {})),
            scene_count=int(d.get("scene_count", 10)),
            camera=CameraConfig.from_dict(d.get("camera", {})),
            noise=NoiseConfig.from_dict(d.get("noise", {})),
            fit=FitConfig.from_dict(d.get("fit")),
            threads=int(d.get("threads", 1)),
        )

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "category": self.category,
            "model_seed": self.model_seed,
            "shape_params": self.shape_params,
            "scene_count": self.scene_count,
            "camera": self.camera.to_dict(),
            "noise": self.noise.to_dict(),
            "fit": self.fit.to_dict(),
            "threads": self.threads,
        }


def load_config(args) -> RunConfig:
    d = {}
    if args.config:
        d = json.loads(Path(args.config).read_text())
    if getattr(args, "seed", None) is not None:
        d["master_seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        d["threads"] = args.threads
    if getattr(args, "category", None) is not None:
        d["category"] = args.category
    if getattr(args, "count", None) is not None:
        d["scene_count"] = args.count
    return RunConfig.from_dict(d)


def _model_for(dataset: Path, scenes):
    ref = scenes[0].model_ref if scenes else MODEL_FILE
    return read_model(dataset.parent / ref)


def prediction_path(directory, scene_id: int) -> Path:
    return Path(directory) / f"scene_{scene_id:06d}.json"


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    model = make_procedural_model(cfg.category, cfg.model_seed, cfg.shape_params)
    write_model(model, out / MODEL_FILE)
    scenes = generate_scenes(model, cfg.camera, cfg.master_seed, cfg.scene_count, MODEL_FILE, cfg.threads)
    write_dataset(scenes, out / DATASET_FILE)
    log.info("wrote %d scenes to %s", len(scenes), out / DATASET_FILE)
    return 0


def cmd_predict(args) -> int:
    cfg = load_config(args)
    scenes = read_dataset(args.dataset)
    out = Path(args.out or "predictions")
    out.mkdir(parents=True, exist_ok=True)
    for s in scenes:
        pred = simulate_prediction(s, cfg.noise, derive_seed(cfg.master_seed, "predict", s.scene_id))
        write_prediction(pred, prediction_path(out, s.scene_id))
    log.info("wrote %d predictions to %s", len(scenes), out)
    return 0


def load_predictions(directory, scenes):
    """Per-scene predictions (``None`` where loading failed) and failure records."""
    preds, failures = [], []
    for s in scenes:
        path = prediction_path(directory, s.scene_id)
        try:
            preds.append(load_prediction(path, expected_points=s.num_points, expected_scene=s.scene_id))
        except (ArticulateError, OSError) as exc:
            log.error("scene %s: cannot load prediction %s: %s", s.scene_id, path, exc)
            preds.append(None)
            failures.append({"scene_id": s.scene_id, "error": type(exc).__name__, "message": str(exc)})
    return preds, failures


def _fit_method(method, scenes, model, pred_dir, cfg: RunConfig):
    preds, failures = load_predictions(pred_dir, scenes)
    estimates, fit_failures = fit_predictions(method, scenes, preds, model, cfg.fit, cfg.master_seed, cfg.threads)
    return estimates, failures + fit_failures


def _report_failures(failures) -> None:
    for f in failures:
        print(f"scene {f['scene_id']} failed: {f['error']}: {f['message']}", file=sys.stderr)


def cmd_fit(args) -> int:
    cfg = load_config(args)
    dataset = Path(args.dataset)
    scenes = read_dataset(dataset)
    model = _model_for(dataset, scenes)
    estimates, failures = _fit_method(args.method, scenes, model, args.predictions, cfg)
    failed = {f["scene_id"]: f for f in failures}
    records = []
    for s, est in zip(scenes, estimates):
        if est is not None:
            records.append(est.to_dict())
        else:
            records.append({"scene_id": s.scene_id, "method": args.method, "failure": failed[s.scene_id]})
    write_jsonl(records, args.out or "estimates.jsonl", "estimates")
    _report_failures(failures)
    return 1 if failures else 0


def read_estimates(path):
    """Estimates (``None`` for failed scenes), failure records and the method name."""
    estimates, failures, methods = [], [], set()
    for d in read_jsonl(path, "estimates"):
        if "method" not in d:
            raise SchemaVersionMismatch(f"{path}: estimate record missing field 'method'")
        methods.add(d["method"])
        if "failure" in d:
            estimates.append(None)
            failures.append(d["failure"])
        else:
            estimates.append(SceneEstimate.from_dict(d))
    if len(methods) > 1:
        raise ValueError(f"{path}: mixed methods {sorted(methods)}")
    return estimates, failures, (methods.pop() if methods else "ancsh")


def _parse_bins(text):
    return [float(x) for x in text.split(",")] if text else None


def cmd_eval(args) -> int:
    cfg = load_config(args)
    dataset = Path(args.dataset)
    scenes = read_dataset(dataset)
    model = _model_for(dataset, scenes)
    ad_ref = AdReference.from_canonical(canonicalize(model)) if args.ad else None
    results: dict[str, MethodResult] = {}
    if args.estimates:
        estimates, failures, method = read_estimates(args.estimates)
        results[method] = evaluate_estimates(method, estimates, scenes, ad_ref, failures=failures)
    if args.compare:
        if not args.predictions:
            raise ValueError("--compare needs --predictions")
        for method in args.compare.split(","):
            method = method.strip().lower()
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r} in --compare")
            estimates, failures = _fit_method(method, scenes, model, args.predictions, cfg)
            results[method] = evaluate_estimates(method, estimates, scenes, ad_ref, failures=failures)
    if not results:
        raise ValueError("eval needs --estimates and/or --compare")
    extras = {}
    bins = _parse_bins(args.occlusion_bins)
    if bins is not None or args.occlusion:
        bins = bins or list(DEFAULT_OCCLUSION_BINS)
        extras["occlusion"] = {m: occlusion_analysis(r.metrics, bins) for m, r in results.items()}
    report = ComparisonReport(results, len(scenes), {**cfg.to_dict(), "dataset": str(dataset)}, extras)
    out = Path(args.out or "report")
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    _report_failures(report.failures)
    return 1 if report.failures else 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="articulate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("generate", help="write a procedural model and a scene dataset")
    common(p)
    p.add_argument("--category", help="procedural category")
    p.add_argument("--count", type=int, help="number of scenes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("predict", help="simulate per-scene predictions from a dataset")
    common(p)
    p.add_argument("dataset")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit", help="estimate poses and joints for every scene")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--predictions", required=True, help="directory of prediction files")
    p.add_argument("--method", choices=METHODS, default="ancsh")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score estimates and write CSV/JSON reports")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--estimates", help="estimates file from `fit`")
    p.add_argument("--predictions", help="prediction directory (needed by --compare)")
    p.add_argument("--compare", help="comma-separated methods to fit and compare, e.g. npcs,ancsh")
    p.add_argument("--ad", action="store_true", help="compute AD accuracy")
    p.add_argument("--occlusion", action="store_true", help="add occlusion analysis with default bins")
    p.add_argument("--occlusion-bins", help="comma-separated bin edges covering [0, 1]")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ARTICULATE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArticulateError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
