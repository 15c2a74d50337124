"""Difference-of-Gaussians keypoints with 128-d gradient-histogram descriptors.

Follows the usual SIFT recipe: 2x upsampled base image blurred to sigma 1.6,
``n_scales`` intervals per octave, quadratic sub-pixel refinement, contrast and
edge rejection, a single dominant orientation from a 36-bin histogram, and a
4x4x8 trilinearly interpolated descriptor clipped at 0.2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmall

SIGMA = 1.6
ASSUMED_BLUR = 0.5
BORDER = 5
ORI_BINS = 36
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE = 3.0
DESC_CLIP = 0.2


@dataclass
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    octave: int = 0
    layer: int = 0


def _blur(img, sigma):
    return ndimage.gaussian_filter(img, sigma, mode="nearest", truncate=4.0)


def _pyramid(base, n_octaves, n_scales):
    k = 2.0 ** (1.0 / n_scales)
    sig = [SIGMA * k**i for i in range(n_scales + 3)]
    incr = [math.sqrt(sig[i] ** 2 - sig[i - 1] ** 2) for i in range(1, len(sig))]
    gauss = []
    img = base
    for _ in range(n_octaves):
        octave = [img]
        for s in incr:
            octave.append(_blur(octave[-1], s))
        gauss.append(np.stack(octave))
        img = octave[n_scales][::2, ::2]
        if min(img.shape) < 2 * BORDER + 3:
            break
    dogs = [g[1:] - g[:-1] for g in gauss]
    return gauss, dogs


def _derivatives(dog, s, y, x):
    c = dog[s, y, x]
    dx = 0.5 * (dog[s, y, x + 1] - dog[s, y, x - 1])
    dy = 0.5 * (dog[s, y + 1, x] - dog[s, y - 1, x])
    ds = 0.5 * (dog[s + 1, y, x] - dog[s - 1, y, x])
    dxx = dog[s, y, x + 1] + dog[s, y, x - 1] - 2 * c
    dyy = dog[s, y + 1, x] + dog[s, y - 1, x] - 2 * c
    dss = dog[s + 1, y, x] + dog[s - 1, y, x] - 2 * c
    dxy = 0.25 * (dog[s, y + 1, x + 1] - dog[s, y + 1, x - 1] - dog[s, y - 1, x + 1] + dog[s, y - 1, x - 1])
    dxs = 0.25 * (dog[s + 1, y, x + 1] - dog[s + 1, y, x - 1] - dog[s - 1, y, x + 1] + dog[s - 1, y, x - 1])
    dys = 0.25 * (dog[s + 1, y + 1, x] - dog[s + 1, y - 1, x] - dog[s - 1, y + 1, x] + dog[s - 1, y - 1, x])
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def _localize(dog, s, y, x, n_scales, contrast_threshold, edge_threshold):
    n_layers, h, w = dog.shape
    for _ in range(5):
        grad, hess = _derivatives(dog, s, y, x)
        try:
            off = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            break
        x += int(round(off[0]))
        y += int(round(off[1]))
        s += int(round(off[2]))
        if not (1 <= s <= n_layers - 2 and BORDER <= y < h - BORDER and BORDER <= x < w - BORDER):
            return None
    else:
        return None
    value = dog[s, y, x] + 0.5 * grad.dot(off)
    if abs(value) * n_scales < contrast_threshold:
        return None
    dxx, dyy, dxy = hess[0, 0], hess[1, 1], hess[0, 1]
    tr, det = dxx + dyy, dxx * dyy - dxy * dxy
    r = edge_threshold
    if det <= 0 or tr * tr * r >= (r + 1) ** 2 * det:
        return None
    return s, y, x, off, abs(value)


def _gradients(img):
    gy, gx = np.gradient(img)
    return np.hypot(gx, gy), np.arctan2(gy, gx)


def _dominant_orientation(mag, ori, y, x, sigma_oct):
    h, w = mag.shape
    sw = 1.5 * sigma_oct
    rad = int(round(3 * sw))
    y0, y1 = max(y - rad, 1), min(y + rad + 1, h - 1)
    x0, x1 = max(x - rad, 1), min(x + rad + 1, w - 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    weight = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * sw * sw))
    bins = np.round(ORI_BINS * np.mod(ori[y0:y1, x0:x1], 2 * np.pi) / (2 * np.pi)).astype(int) % ORI_BINS
    hist = np.bincount(bins.ravel(), (weight * mag[y0:y1, x0:x1]).ravel(), ORI_BINS)
    hist = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + np.roll(hist, 2) + np.roll(hist, -2)) / 16
    i = int(np.argmax(hist))
    if hist[i] <= 0:
        return None
    left, right = hist[i - 1], hist[(i + 1) % ORI_BINS]
    denom = left - 2 * hist[i] + right
    shift = 0.5 * (left - right) / denom if denom != 0 else 0.0
    return float(np.mod(2 * np.pi * (i + shift) / ORI_BINS, 2 * np.pi))


def _descriptor(mag, ori, y, x, sigma_oct, angle):
    h, w = mag.shape
    d, nb = DESC_WIDTH, DESC_BINS
    hist_w = DESC_SCALE * sigma_oct
    rad = int(round(hist_w * math.sqrt(2) * (d + 1) * 0.5))
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    y0, y1 = max(int(y) - rad, 0), min(int(y) + rad + 1, h)
    x0, x1 = max(int(x) - rad, 0), min(int(x) + rad + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - x, yy - y
    # offsets in the keypoint frame, in histogram-cell units
    c_rot = (cos_t * dx + sin_t * dy) / hist_w
    r_rot = (-sin_t * dx + cos_t * dy) / hist_w
    rbin = r_rot + d / 2 - 0.5
    cbin = c_rot + d / 2 - 0.5
    ok = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    rbin, cbin = rbin[ok], cbin[ok]
    weight = np.exp(-(c_rot[ok] ** 2 + r_rot[ok] ** 2) / (0.5 * d * d)) * mag[y0:y1, x0:x1][ok]
    obin = np.mod(ori[y0:y1, x0:x1][ok] - angle, 2 * np.pi) * nb / (2 * np.pi)

    r0, c0, o0 = np.floor(rbin).astype(int), np.floor(cbin).astype(int), np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nb))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nb), weight * wr * wc * wo)
    vec = hist[1:-1, 1:-1].ravel()
    norm = np.linalg.norm(vec)
    if norm == 0:
        return None
    vec = np.minimum(vec / norm, DESC_CLIP)
    return vec / np.linalg.norm(vec)


def detect_and_describe(image, n_octaves: int | None = None, contrast_threshold: float = 0.03,
                        edge_threshold: float = 10.0, n_scales: int = 3, upsample: bool = True):
    """Keypoints and unit-norm descriptors of a [0, 1] image.

    Returns ``(keypoints, descriptors)`` with descriptors as an (N, 128) array.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 32:
        raise ImageTooSmall(f"image must be at least 32x32, got {img.shape}")
    if upsample:
        base = ndimage.zoom(img, 2, order=1, mode="nearest", grid_mode=True)
        base = _blur(base, math.sqrt(SIGMA**2 - (2 * ASSUMED_BLUR) ** 2))
        scale0 = 0.5
    else:
        base = _blur(img, math.sqrt(SIGMA**2 - ASSUMED_BLUR**2))
        scale0 = 1.0
    if n_octaves is None:
        n_octaves = max(1, int(math.log2(min(base.shape))) - 3)
    gauss, dogs = _pyramid(base, n_octaves, n_scales)

    keypoints, descriptors = [], []
    pre = 0.5 * contrast_threshold / n_scales
    for o, dog in enumerate(dogs):
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        cand = ((dog == mx) | (dog == mn)) & (np.abs(dog) > pre)
        cand[[0, -1]] = False
        cand[:, :BORDER] = cand[:, -BORDER:] = False
        cand[:, :, :BORDER] = cand[:, :, -BORDER:] = False
        grads = {}
        seen = set()
        for s, y, x in zip(*np.nonzero(cand)):
            loc = _localize(dog, int(s), int(y), int(x), n_scales, contrast_threshold, edge_threshold)
            if loc is None:
                continue
            s, y, x, off, resp = loc
            if (s, y, x) in seen:
                continue
            seen.add((s, y, x))
            sigma_oct = SIGMA * 2.0 ** ((s + off[2]) / n_scales)
            if s not in grads:
                grads[s] = _gradients(gauss[o][s])
            mag, ori = grads[s]
            angle = _dominant_orientation(mag, ori, y, x, sigma_oct)
            if angle is None:
                continue
            fx, fy = x + off[0], y + off[1]
            desc = _descriptor(mag, ori, fy, fx, sigma_oct, angle)
            if desc is None:
                continue
            # decimation keeps sample 0; only the 2x zoom shifts pixel centres
            f = scale0 * 2.0**o
            px = (fx * 2.0**o + 0.5) * scale0 - 0.5
            py = (fy * 2.0**o + 0.5) * scale0 - 0.5
            if not (0 <= px <= img.shape[1] - 1 and 0 <= py <= img.shape[0] - 1):
                continue
            keypoints.append(Keypoint(float(px), float(py), float(sigma_oct * f), angle, float(resp), o, int(s)))
            descriptors.append(desc)
    desc = np.array(descriptors).reshape(-1, DESC_WIDTH * DESC_WIDTH * DESC_BINS)
    return keypoints, desc
