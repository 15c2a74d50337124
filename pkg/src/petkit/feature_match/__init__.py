"""Keypoint stability across sessions: detection, matching, RANSAC verification."""
from .sift import Keypoint, detect_and_describe
from .verify import (
    MatchReport,
    StabilityParams,
    apply_transform,
    fit_affine,
    fit_similarity,
    match_descriptors,
    ransac_verify,
    stability_report,
)

__all__ = [
    "Keypoint",
    "MatchReport",
    "StabilityParams",
    "apply_transform",
    "detect_and_describe",
    "fit_affine",
    "fit_similarity",
    "match_descriptors",
    "ransac_verify",
    "stability_report",
]
