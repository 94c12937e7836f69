from .cam import CamHeatmap, UnknownClass, cam, colormap, overlay
from .lime import LimeConfig, LimeExplanation, PredictorFailure, lime_explain
from .jobs import ExplainJob, JobState, LimeJobRunner, UnknownDetection

__all__ = [
    "CamHeatmap",
    "UnknownClass",
    "cam",
    "colormap",
    "overlay",
    "LimeConfig",
    "LimeExplanation",
    "PredictorFailure",
    "lime_explain",
    "ExplainJob",
    "JobState",
    "LimeJobRunner",
    "UnknownDetection",
]
