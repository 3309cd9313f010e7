"""Category-level pose and joint estimation for articulated objects.

The pipeline: procedural kinematic models (:mod:`.kinematics`), their
canonical spaces (:mod:`.canonical`), synthetic depth observations
(:mod:`.observe`), simulated per-point predictions (:mod:`.predict`),
constrained pose fitting (:mod:`.solve`, :mod:`.pipeline`), closed-form joint
recovery (:mod:`.recover`) and evaluation (:mod:`.evaluate`).
"""

from .canonical import canonicalize
from .errors import ArticulateError
from .evaluate import AdReference, compare_methods, score_scene
from .kinematics import make_procedural_model
from .observe import CameraConfig, generate_scenes
from .pipeline import FitConfig, fit_scene
from .predict import NoiseConfig, ground_truth_prediction, simulate_prediction

__version__ = "0.1.0"

__all__ = [
    "AdReference",
    "ArticulateError",
    "CameraConfig",
    "FitConfig",
    "NoiseConfig",
    "canonicalize",
    "compare_methods",
    "fit_scene",
    "generate_scenes",
    "ground_truth_prediction",
    "make_procedural_model",
    "score_scene",
    "simulate_prediction",
]
