"""Capacity-matched model inputs: the 4-channel PET stack and the
pseudo-intensity stack (channel mean duplicated four times)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demosaic import PolarizationChannels
from .errors import DimensionMismatch

PET = "pet"
PSEUDO_INTENSITY = "pseudo_intensity"
MODALITIES = (PET, PSEUDO_INTENSITY)


@dataclass(eq=False)
class ModelInput:
    planes: np.ndarray  # (4, H, W)
    modality: str
    source_frame_id: str = ""
    provenance: str = ""

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 4:
            raise DimensionMismatch(f"model input needs 4 planes, got shape {self.planes.shape}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")


def standardize(plane: np.ndarray) -> np.ndarray:
    """Zero mean, unit (population) variance; constant planes become zeros."""
    plane = np.asarray(plane, dtype=np.float64)
    centered = plane - plane.mean()
    std = np.sqrt(np.mean(centered**2))
    if std == 0 or not np.isfinite(std):
        return np.zeros_like(plane)
    return centered / std


def _normalize(plane, normalize: str):
    if normalize == "per_channel_standardize":
        return standardize(plane)
    if normalize == "none":
        return np.asarray(plane, dtype=np.float64)
    raise ValueError(f"unknown normalization {normalize!r}")


def form_pet_input(channels: PolarizationChannels, normalize: str = "per_channel_standardize",
                   source_frame_id: str = "") -> ModelInput:
    planes = np.stack([_normalize(p, normalize) for p in channels.planes()])
    return ModelInput(planes, PET, source_frame_id, channels.provenance)


def form_pseudo_intensity_input(channels: PolarizationChannels, normalize: str = "per_channel_standardize",
                                source_frame_id: str = "") -> ModelInput:
    i0, i45, i90, i135 = channels.planes()
    mean = _normalize((i0 + i45 + i90 + i135) / 4.0, normalize)
    return ModelInput(np.stack([mean] * 4), PSEUDO_INTENSITY, source_frame_id, channels.provenance)


def form_input(channels: PolarizationChannels, modality: str, normalize: str = "per_channel_standardize",
               source_frame_id: str = "") -> ModelInput:
    if modality == PET:
        return form_pet_input(channels, normalize, source_frame_id)
    if modality == PSEUDO_INTENSITY:
        return form_pseudo_intensity_input(channels, normalize, source_frame_id)
    raise ValueError(f"unknown modality {modality!r}")
