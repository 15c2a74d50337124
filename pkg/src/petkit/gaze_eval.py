"""Gaze error statistics: angular error, E95, U50E95, participant-level
bootstrap intervals and paired percentile-difference curves.

One percentile rule is used everywhere in the package: sort ascending, take
the fractional index ``h = (n - 1) * p / 100`` and interpolate linearly
between the two neighbouring order statistics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInput, UnpairedParticipants


class GazeAngles(NamedTuple):
    yaw: float
    pitch: float


def _interp_sorted(v: np.ndarray, p, axis: int = -1):
    n = v.shape[axis]
    h = (n - 1) * np.asarray(p, dtype=np.float64) / 100.0
    lo = np.floor(h).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = h - lo
    a = np.take(v, lo, axis=axis)
    b = np.take(v, hi, axis=axis)
    return a + frac * (b - a)


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile of ``values`` at ``p`` in [0, 100]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("percentile of an empty sequence")
    if not 0 <= p <= 100:
        raise ValueError(f"p must lie in [0, 100], got {p}")
    n = v.size
    h = (n - 1) * p / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    if n > 4096:
        # selection instead of a full sort; same order statistics
        part = np.partition(v, lo)
        a = part[lo]
        b = part[lo + 1:].min() if hi != lo else a
    else:
        s = np.sort(v)
        a, b = s[lo], s[hi]
    return float(a + (h - lo) * (b - a))


def percentiles_along(values, ps, axis: int = -1) -> np.ndarray:
    """Vectorized form of :func:`percentile` for several ``ps`` along ``axis``.

    The percentile axis is appended last.
    """
    v = np.sort(np.asarray(values, dtype=np.float64), axis=axis)
    if v.shape[axis] == 0:
        raise EmptyInput("percentile of an empty sequence")
    v = np.moveaxis(v, axis, -1)
    return _interp_sorted(v, np.atleast_1d(ps), axis=-1)


def gaze_vector(yaw, pitch) -> np.ndarray:
    """Unit gaze vector(s) (x, y, z) for yaw/pitch in degrees."""
    y = np.deg2rad(np.asarray(yaw, dtype=np.float64))
    p = np.deg2rad(np.asarray(pitch, dtype=np.float64))
    return np.stack([np.cos(p) * np.sin(y), np.sin(p), np.cos(p) * np.cos(y)], axis=-1)


def angular_error(pred, gt, mode: str = "angle3d"):
    """Absolute gaze error in degrees.

    ``pred`` and ``gt`` are (yaw, pitch) pairs or (..., 2) arrays. ``angle3d``
    is the angle between unit gaze vectors; ``euclidean`` is the per-axis
    Euclidean distance in angle space.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("gaze angles must be finite")
    if mode == "euclidean":
        err = np.hypot(pred[..., 0] - gt[..., 0], pred[..., 1] - gt[..., 1])
    elif mode == "angle3d":
        u = gaze_vector(pred[..., 0], pred[..., 1])
        v = gaze_vector(gt[..., 0], gt[..., 1])
        cos = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
        err = np.rad2deg(np.arccos(cos))
    else:
        raise ValueError(f"unknown angular error mode {mode!r}")
    return float(err) if err.ndim == 0 else err


@dataclass(eq=False)
class ParticipantErrors:
    participant_id: str
    errors: np.ndarray

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64).ravel()
        if np.any(self.errors < 0) or not np.all(np.isfinite(self.errors)):
            raise ValueError(f"participant {self.participant_id}: errors must be finite and >= 0")


def participant_e95(pe: ParticipantErrors) -> float:
    if pe.errors.size == 0:
        raise EmptyInput(f"participant {pe.participant_id} has no frames")
    return percentile(pe.errors, 95)


def _check_cohort(participants: Sequence[ParticipantErrors]):
    if not participants:
        raise EmptyInput("no participants")
    for pe in participants:
        if pe.errors.size == 0:
            raise EmptyInput(f"participant {pe.participant_id} has no frames")


def u50_e95(participants: Sequence[ParticipantErrors]) -> float:
    _check_cohort(participants)
    return percentile([participant_e95(pe) for pe in participants], 50)


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    ci_low: float
    ci_high: float
    n_resamples: int
    seed: int
    level: float = 0.90

    def __post_init__(self):
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")

    @property
    def point_outside(self) -> bool:
        """True in the pathological case where the interval excludes the point."""
        return not self.ci_low <= self.point <= self.ci_high

    def to_json(self) -> dict:
        return {
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "n_resamples": self.n_resamples,
            "seed": self.seed,
            "point_outside_ci": self.point_outside,
        }


def resample_indices(n: int, B: int, seed: int) -> np.ndarray:
    """(B, n) participant indices; row b depends only on (seed, b)."""
    out = np.empty((B, n), dtype=np.intp)
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        out[b] = rng.integers(0, n, size=n)
    return out


def _ci_bounds(level: float) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    tail = 100.0 * (1.0 - level) / 2.0
    return tail, 100.0 - tail


def _paired_values(pairs, p: float) -> np.ndarray:
    diffs = []
    for pet, ref in pairs:
        _check_cohort([pet, ref])
        diffs.append(percentile(pet.errors, p) - percentile(ref.errors, p))
    return np.asarray(diffs)


def bootstrap_ci(
    participants,
    statistic: str | Callable = "u50_e95",
    B: int = 1000,
    level: float = 0.90,
    seed: int = 0,
    p: float = 95,
) -> BootstrapResult:
    """Participant-level percentile bootstrap.

    ``statistic`` is ``"u50_e95"`` (``participants`` is a list of
    ParticipantErrors), ``"median_diff"`` (a list of (pet, intensity) pairs;
    the statistic is the median over participants of the paired difference
    of per-participant error percentiles at ``p``), or a callable applied to
    each resampled participant list.
    """
    participants = list(participants)
    if not participants:
        raise EmptyInput("no participants")
    if B < 1:
        raise ValueError("B must be >= 1")
    lo_p, hi_p = _ci_bounds(level)
    idx = resample_indices(len(participants), B, seed)

    if callable(statistic):
        point = float(statistic(participants))
        stats = np.array([statistic([participants[i] for i in row]) for row in idx], dtype=np.float64)
    else:
        if statistic == "u50_e95":
            _check_cohort(participants)
            per = np.array([participant_e95(pe) for pe in participants])
        elif statistic == "median_diff":
            per = _paired_values(participants, p)
        else:
            raise ValueError(f"unknown statistic {statistic!r}")
        point = percentile(per, 50)
        stats = percentiles_along(per[idx], 50, axis=1)[:, 0]

    lo, hi = percentiles_along(stats, [lo_p, hi_p])
    return BootstrapResult(float(point), float(lo), float(hi), B, int(seed), level)


@dataclass(eq=False)
class DifferenceCurve:
    percentiles: np.ndarray
    median_diff: np.ndarray
    envelope_low: np.ndarray
    envelope_high: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64).ravel() for a in
                  (self.percentiles, self.median_diff, self.envelope_low, self.envelope_high)]
        self.percentiles, self.median_diff, self.envelope_low, self.envelope_high = arrays
        if len({a.size for a in arrays}) != 1:
            raise ValueError("difference curve arrays must have equal length")
        if np.any(np.diff(self.percentiles) <= 0):
            raise ValueError("percentiles must be strictly increasing")
        if np.any(self.envelope_low > self.envelope_high):
            raise ValueError("envelope_low exceeds envelope_high")

    def rows(self):
        return zip(self.percentiles, self.median_diff, self.envelope_low, self.envelope_high)


DEFAULT_PERCENTILES = tuple(range(1, 100))


def percentile_difference_curve(
    pet: Sequence[ParticipantErrors],
    intensity: Sequence[ParticipantErrors],
    percentiles=DEFAULT_PERCENTILES,
    B: int = 1000,
    seed: int = 0,
    level: float = 0.90,
) -> DifferenceCurve:
    """Median over participants of paired (PET - intensity) error percentiles.

    Envelopes come from a paired participant-level bootstrap: one set of
    resample indices per replicate, shared by both arms and all percentiles.
    """
    pet_ids = [pe.participant_id for pe in pet]
    ref = {pe.participant_id: pe for pe in intensity}
    if len(set(pet_ids)) != len(pet_ids) or set(pet_ids) != set(ref) or len(ref) != len(intensity):
        missing = sorted(set(pet_ids) ^ set(ref))
        raise UnpairedParticipants(f"participant sets differ between arms: {missing}")
    _check_cohort(list(pet) + list(intensity))
    ps = np.asarray(percentiles, dtype=np.float64)
    diffs = np.stack([
        percentiles_along(pe.errors, ps)[..., :] - percentiles_along(ref[pe.participant_id].errors, ps)
        for pe in pet
    ])  # (n, P)
    median = percentiles_along(diffs, 50, axis=0)[..., 0]
    idx = resample_indices(len(pet), B, seed)
    boot = percentiles_along(diffs[idx], 50, axis=1)[..., 0]  # (B, P)
    lo_p, hi_p = _ci_bounds(level)
    env = percentiles_along(boot, [lo_p, hi_p], axis=0)  # (P, 2)
    return DifferenceCurve(ps, median, env[:, 0], env[:, 1])


def errors_by_participant(dataset, mode: str = "angle3d") -> list[ParticipantErrors]:
    """Per-frame errors from a GazeDataset whose records carry ``gaze_pred``."""
    out = []
    for part in dataset.participants:
        recs = [r for r in part.records if r.gaze_pred is not None]
        if len(recs) != len(part.records):
            raise ValueError(f"participant {part.participant_id}: records without gaze_pred")
        if recs:
            errs = angular_error([r.gaze_pred for r in recs], [r.gaze_gt for r in recs], mode)
        else:
            errs = np.empty(0)
        out.append(ParticipantErrors(part.participant_id, np.atleast_1d(errs)))
    return out
