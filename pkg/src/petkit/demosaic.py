"""Per-orientation channel reconstruction from a PFA mosaic, plus smoothing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, NonPositiveSigma
from .mosaic_io import ANGLES, RawMosaicFrame

FULL_RES = "full_res_interpolated"
HALF_RES = "superpixel_half_res"


@dataclass(eq=False)
class PolarizationChannels:
    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray
    provenance: str = FULL_RES

    def __post_init__(self):
        shapes = {p.shape for p in self.planes()}
        if len(shapes) != 1 or self.i0.ndim != 2:
            raise DimensionMismatch(f"channel planes must share one 2-D shape, got {shapes}")

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.i0, self.i45, self.i90, self.i135

    def stack(self) -> np.ndarray:
        return np.stack(self.planes())

    @property
    def shape(self) -> tuple[int, int]:
        return self.i0.shape

    @classmethod
    def from_stack(cls, stack, provenance: str = FULL_RES) -> "PolarizationChannels":
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3 or stack.shape[0] != 4:
            raise DimensionMismatch(f"expected a (4, H, W) stack, got {stack.shape}")
        return cls(*stack, provenance=provenance)


def _plane(frame: RawMosaicFrame, angle: int) -> np.ndarray:
    r, c = frame.layout.offset(angle)
    return frame.data[r::2, c::2].astype(np.float64)


def split_superpixels(frame: RawMosaicFrame) -> PolarizationChannels:
    """Half-resolution channels: one sample per angle per 2x2 cell."""
    return PolarizationChannels(*(_plane(frame, a) for a in ANGLES), provenance=HALF_RES)


def _interpolate_lattice(data: np.ndarray, r: int, c: int) -> np.ndarray:
    # Bilinear fill of the stride-2 lattice starting at (r, c): carrier rows
    # first (horizontal midpoints), then the rows in between (vertical
    # midpoints). Past the last lattice sample the edge value is replicated.
    sub = data[r::2, c::2]
    m, n = sub.shape
    out = np.empty((2 * m, 2 * n), dtype=np.float64)
    rows = out[r::2]
    rows[:, c::2] = sub
    mid = rows[:, 1:-1:2] if c == 0 else rows[:, 2::2]
    np.add(sub[:, :-1], sub[:, 1:], out=mid, dtype=np.float64)
    mid *= 0.5
    rows[:, -1 if c == 0 else 0] = sub[:, -1 if c == 0 else 0]
    mid = out[1:-1:2] if r == 0 else out[2::2]
    np.add(out[r:-2:2], out[r + 2::2], out=mid)
    mid *= 0.5
    if r == 0:
        out[-1] = out[-2]
    else:
        out[0] = out[1]
    return out


def demosaic_bilinear(frame: RawMosaicFrame) -> PolarizationChannels:
    """Full-resolution channels by separable bilinear interpolation.

    Carrier pixels of each angle keep their raw sample exactly; borders
    replicate the outermost lattice sample.
    """
    planes = [_interpolate_lattice(frame.data, *frame.layout.offset(a)) for a in ANGLES]
    return PolarizationChannels(*planes, provenance=FULL_RES)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at radius ceil(3 sigma), normalized to sum 1."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def smooth_plane(plane: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(np.asarray(plane, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def gaussian_smooth(channels: PolarizationChannels, sigma: float = 1.0) -> PolarizationChannels:
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be > 0, got {sigma}")
    return PolarizationChannels(
        *(smooth_plane(p, sigma) for p in channels.planes()), provenance=channels.provenance
    )
