"""Ratio-test matching, RANSAC geometric verification and session stability."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateSample, TooFewMatches
from .sift import detect_and_describe

MIN_SAMPLES = {"similarity": 2, "affine": 3}


def match_descriptors(a, b, ratio: float = 0.75) -> list[tuple[int, int]]:
    """Mutual nearest neighbours of ``a`` in ``b`` that pass the ratio test."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1) if len(a) else np.empty((0, 0))
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1) if len(b) else np.empty((0, 0))
    if len(a) == 0 or len(b) == 0:
        return []
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    dist = np.sqrt(np.maximum(d2, 0.0))
    nn = np.argmin(dist, axis=1)
    back = np.argmin(dist, axis=0)
    if dist.shape[1] > 1:
        two = np.partition(dist, 1, axis=1)[:, :2]
        first, second = two[:, 0], two[:, 1]
    else:
        first, second = dist[:, 0], np.full(len(a), np.inf)
    pairs = []
    for i, j in enumerate(nn):
        if back[j] == i and first[i] < ratio * second[i]:
            pairs.append((i, int(j)))
    return pairs


@dataclass(eq=False)
class MatchReport:
    n_putative: int
    n_inliers: int
    transform: np.ndarray  # 2x3, maps baseline (x, y) to session (x, y)
    inlier_rms_px: float
    seed: int
    inlier_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    verified: bool = True

    def to_json(self) -> dict:
        return {
            "n_putative": int(self.n_putative),
            "n_inliers": int(self.n_inliers),
            "transform": [[round(float(v), 9) for v in row] for row in self.transform],
            "inlier_rms_px": round(float(self.inlier_rms_px), 9),
            "seed": int(self.seed),
            "verified": self.verified,
        }


def fit_similarity(src, dst) -> np.ndarray:
    """Least-squares x' = a x - b y + tx, y' = b x + a y + ty."""
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    A[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    (a, b, tx, ty), *_ = np.linalg.lstsq(A, dst.reshape(-1), rcond=None)
    return np.array([[a, -b, tx], [b, a, ty]])


def fit_affine(src, dst) -> np.ndarray:
    src, dst = np.asarray(src, float), np.asarray(dst, float)
    A = np.column_stack([src, np.ones(len(src))])
    sol, *_ = np.linalg.lstsq(A, dst, rcond=None)
    return sol.T


def apply_transform(T, pts) -> np.ndarray:
    pts = np.asarray(pts, float)
    return pts @ T[:, :2].T + T[:, 2]


def _hypotheses(src, dst, samples, model):
    """Batched minimal-sample fits; returns (K, 2, 3) transforms and a validity mask."""
    if model == "similarity":
        z = src[samples, 0] + 1j * src[samples, 1]  # (K, 2)
        w = dst[samples, 0] + 1j * dst[samples, 1]
        dz = z[:, 1] - z[:, 0]
        dw = w[:, 1] - w[:, 0]
        scale = max(1.0, float(np.abs(src).max()))
        ok = (np.abs(dz) > 1e-9 * scale) & (np.abs(dw) > 1e-9 * scale)
        a = np.where(ok, dw / np.where(ok, dz, 1.0), 0.0)
        t = w[:, 0] - a * z[:, 0]
        T = np.empty((len(samples), 2, 3))
        T[:, 0] = np.column_stack([a.real, -a.imag, t.real])
        T[:, 1] = np.column_stack([a.imag, a.real, t.imag])
        return T, ok
    p = src[samples]  # (K, 3, 2)
    q = dst[samples]
    A = np.concatenate([p, np.ones(p.shape[:2] + (1,))], axis=2)  # (K, 3, 3)
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    scale = max(1.0, float(np.abs(src).max()))
    ok = area > 1e-9 * scale * scale
    A[~ok] = np.eye(3)
    T = np.linalg.solve(A, q).transpose(0, 2, 1)
    return T, ok


def ransac_verify(matches, model: str = "similarity", threshold_px: float = 3.0, max_iters: int = 2000,
                  seed: int = 0) -> MatchReport:
    """RANSAC over point pairs ``matches`` of shape (N, 2, 2): [[x, y], [x', y']].

    Hypotheses come from minimal samples, inliers have reprojection error
    below ``threshold_px``, and the winner is refit by least squares on its
    inliers until the inlier set stops changing.
    """
    if model not in MIN_SAMPLES:
        raise ValueError(f"unknown model {model!r}")
    m = np.asarray(matches, dtype=np.float64).reshape(-1, 2, 2)
    src, dst = m[:, 0], m[:, 1]
    n, k = len(m), MIN_SAMPLES[model]
    if n < k:
        raise TooFewMatches(f"{model} needs at least {k} pairs, got {n}")
    rng = np.random.default_rng(seed)
    samples = np.stack([rng.choice(n, k, replace=False) for _ in range(max_iters)])
    T, ok = _hypotheses(src, dst, samples, model)
    if not ok.any():
        raise DegenerateSample("every minimal sample was degenerate")
    proj = np.einsum("kij,nj->kni", T[:, :, :2], src) + T[:, None, :, 2]
    err = np.linalg.norm(proj - dst[None], axis=2)  # (K, N)
    inl = err < threshold_px
    count = np.where(ok, inl.sum(1), -1)
    sse = np.where(inl, err**2, 0.0).sum(1)
    best_count = count.max()
    # ties go to the lowest squared error, then the earliest iteration
    cand = np.flatnonzero(count == best_count)
    best = int(cand[np.argmin(sse[cand])])

    fit = fit_similarity if model == "similarity" else fit_affine
    mask = inl[best]
    Tbest = T[best]
    for _ in range(10):
        if mask.sum() < k:
            break
        Tnew = fit(src[mask], dst[mask])
        e = np.linalg.norm(apply_transform(Tnew, src) - dst, axis=1)
        new_mask = e < threshold_px
        if new_mask.sum() < mask.sum():
            break
        Tbest = Tnew
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    e = np.linalg.norm(apply_transform(Tbest, src) - dst, axis=1)
    mask = e < threshold_px
    rms = float(np.sqrt(np.mean(e[mask] ** 2))) if mask.any() else 0.0
    return MatchReport(n, int(mask.sum()), Tbest, rms, seed, mask)


@dataclass(frozen=True)
class StabilityParams:
    n_octaves: int | None = None
    contrast_threshold: float = 0.03
    edge_threshold: float = 10.0
    ratio: float = 0.75
    model: str = "similarity"
    threshold_px: float = 3.0
    max_iters: int = 2000
    seed: int = 0
    # rescale each image to [0, 1] (min-max) before detection
    normalize: bool = True


def _features(image, params: StabilityParams):
    image = np.asarray(image, dtype=np.float64)
    if params.normalize:
        lo, hi = image.min(), image.max()
        image = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
    kps, desc = detect_and_describe(image, params.n_octaves, params.contrast_threshold, params.edge_threshold)
    return np.array([[kp.x, kp.y] for kp in kps]).reshape(-1, 2), desc


def stability_report(baseline, sessions, params: StabilityParams = StabilityParams()) -> list[MatchReport]:
    """Match every session image against the baseline.

    Sessions with too few putative matches for the model report zero inliers
    (``verified=False``) instead of aborting the whole run.
    """
    if len(sessions) < 1:
        raise ValueError("need at least one session image")
    pts0, desc0 = _features(baseline, params)
    reports = []
    for image in sessions:
        pts1, desc1 = _features(image, params)
        pairs = match_descriptors(desc0, desc1, params.ratio)
        m = np.array([[pts0[i], pts1[j]] for i, j in pairs]).reshape(-1, 2, 2)
        try:
            rep = ransac_verify(m, params.model, params.threshold_px, params.max_iters, params.seed)
        except (TooFewMatches, DegenerateSample):
            rep = MatchReport(len(m), 0, np.array([[1.0, 0, 0], [0, 1.0, 0]]), 0.0, params.seed,
                              np.zeros(len(m), dtype=bool), verified=False)
        reports.append(rep)
    return reports
