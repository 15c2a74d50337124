"""Stokes maps, intensity / DoLP / AoLP products, masking and HSV composites."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demosaic import PolarizationChannels
from .errors import NonPositiveGamma
from .gaze_eval import percentile

PAPER_LITERAL = "paper_literal"
PHYSICAL_X2 = "physical_x2"


@dataclass(eq=False)
class StokesMaps:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


@dataclass(eq=False)
class PolarizationProducts:
    intensity: np.ndarray
    dolp: np.ndarray
    aolp: np.ndarray
    mask: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.intensity, self.dolp, self.aolp, self.mask.astype(np.float64)])

    @classmethod
    def from_stack(cls, stack) -> "PolarizationProducts":
        intensity, dolp, aolp, mask = (np.asarray(p, dtype=np.float64) for p in stack)
        return cls(intensity, dolp, aolp, mask > 0.5)


PRODUCT_NAMES = ("intensity", "dolp", "aolp", "mask")


@dataclass(frozen=True)
class ProductConfig:
    """``epsilon`` stabilizes the DoLP denominator; pixels whose S0 falls below
    ``mask_threshold_rel`` times the 99th percentile of S0 are masked."""

    epsilon: float = 1e-6 * 2**12
    mask_threshold_rel: float = 0.01
    dolp_convention: str = PAPER_LITERAL

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 <= self.mask_threshold_rel < 1:
            raise ValueError(f"mask_threshold_rel must lie in [0, 1), got {self.mask_threshold_rel}")
        if self.dolp_convention not in (PAPER_LITERAL, PHYSICAL_X2):
            raise ValueError(f"unknown dolp_convention {self.dolp_convention!r}")

    @classmethod
    def for_bit_depth(cls, bit_depth: int | None, **kw) -> "ProductConfig":
        """Epsilon relative to full scale (1e-6 of 2**bit_depth)."""
        eps = 1e-6 * (2**bit_depth if bit_depth else 1.0)
        return cls(epsilon=eps, **kw)


def compute_stokes(channels: PolarizationChannels) -> StokesMaps:
    i0, i45, i90, i135 = channels.planes()
    return StokesMaps(i0 + i45 + i90 + i135, i0 - i90, i45 - i135)


def compute_products(stokes: StokesMaps, cfg: ProductConfig = ProductConfig()) -> PolarizationProducts:
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    intensity = s0 / 4.0
    # in-place steps keep the full-frame path to a few array passes
    dolp = s1 * s1
    dolp += s2 * s2
    np.sqrt(dolp, out=dolp)
    dolp /= s0 + cfg.epsilon
    if cfg.dolp_convention == PHYSICAL_X2:
        dolp *= 2.0
    np.clip(dolp, 0.0, 1.0, out=dolp)
    # numpy's arctan2(0, 0) is already 0
    aolp = 0.5 * np.arctan2(s2, s1)
    # fold the single boundary value -pi/2 onto +pi/2
    aolp[aolp <= -np.pi / 2] = np.pi / 2
    mask = s0 >= cfg.mask_threshold_rel * percentile(s0, 99)
    invalid = ~mask
    dolp[invalid] = 0.0
    aolp[invalid] = 0.0
    return PolarizationProducts(intensity, dolp, aolp, mask)


def normalize_intensity(intensity: np.ndarray) -> np.ndarray:
    """Scale by the 99th percentile and clamp to [0, 1]; all zeros if p99 is 0."""
    intensity = np.asarray(intensity, dtype=np.float64)
    p99 = percentile(intensity, 99)
    if p99 == 0:
        return np.zeros_like(intensity)
    return np.clip(intensity / p99, 0.0, 1.0)


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Standard HSV to RGB for arrays with all components in [0, 1]."""
    h = np.mod(np.asarray(h, dtype=np.float64), 1.0)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h6 = h * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    sectors = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(sectors):
        sel = i == k
        rgb[sel, 0] = np.broadcast_to(r, h.shape)[sel]
        rgb[sel, 1] = np.broadcast_to(g, h.shape)[sel]
        rgb[sel, 2] = np.broadcast_to(b, h.shape)[sel]
    return rgb


def render_composite(products: PolarizationProducts, mode: str = "methods_hsv", gamma: float = 2.2) -> np.ndarray:
    """RGB8 composite with hue from AoLP.

    ``methods_hsv``: S = 1, V = DoLP. ``figure_hsv``: S = DoLP, V = gamma
    corrected normalized intensity. Masked pixels are black.
    """
    if not gamma > 0:
        raise NonPositiveGamma(f"gamma must be > 0, got {gamma}")
    hue = (products.aolp + np.pi / 2) / np.pi
    if mode == "methods_hsv":
        sat = np.ones_like(products.dolp)
        val = products.dolp
    elif mode == "figure_hsv":
        sat = products.dolp
        val = normalize_intensity(products.intensity) ** (1.0 / gamma)
    else:
        raise ValueError(f"unknown composite mode {mode!r}")
    rgb = hsv_to_rgb(hue, sat, val)
    rgb[~products.mask] = 0.0
    return np.round(255.0 * np.clip(rgb, 0.0, 1.0)).astype(np.uint8)


def products_from_channels(channels: PolarizationChannels, cfg: ProductConfig = ProductConfig()) -> PolarizationProducts:
    return compute_products(compute_stokes(channels), cfg)
