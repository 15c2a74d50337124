"""Per-axis affine user calibration and the grid-pooled ridge/Huber stand-in
gaze regressor."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateAxis,
    DimensionMismatch,
    GridTooFine,
    NonPositiveDelta,
    SingularSystem,
    TooFewSamples,
)
from .gaze_eval import GazeAngles, angular_error
from .input_former import ModelInput


@dataclass(frozen=True)
class CalibrationParams:
    scale: tuple[float, float] = (1.0, 1.0)
    bias: tuple[float, float] = (0.0, 0.0)

    @property
    def well_posed(self) -> bool:
        return all(np.isfinite(self.scale + self.bias)) and min(self.scale) > 0

    def to_json(self) -> dict:
        return {"scale": list(self.scale), "bias": list(self.bias), "well_posed": self.well_posed}

    @classmethod
    def from_json(cls, doc) -> "CalibrationParams":
        return cls(tuple(map(float, doc["scale"])), tuple(map(float, doc["bias"])))


def fit_affine_calibration(preds, gts) -> CalibrationParams:
    """Independent per-axis least squares ``gt = a * pred + b``."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(g):
        raise DimensionMismatch(f"{len(p)} predictions for {len(g)} targets")
    if len(p) < 2:
        raise DegenerateAxis("calibration needs at least 2 points")
    scale, bias = [], []
    for axis, name in enumerate(("yaw", "pitch")):
        pc = p[:, axis] - p[:, axis].mean()
        sxx = pc @ pc
        if sxx == 0:
            raise DegenerateAxis(f"predictions have zero variance in {name}")
        a = (pc @ (g[:, axis] - g[:, axis].mean())) / sxx
        scale.append(float(a))
        bias.append(float(g[:, axis].mean() - a * p[:, axis].mean()))
    return CalibrationParams(tuple(scale), tuple(bias))


def apply_calibration(params: CalibrationParams, pred):
    """Apply the calibration to one (yaw, pitch) pair or an (N, 2) array."""
    p = np.asarray(pred, dtype=np.float64)
    out = p * np.asarray(params.scale) + np.asarray(params.bias)
    if out.ndim == 1:
        return GazeAngles(float(out[0]), float(out[1]))
    return out


def huber_loss(residual, delta: float = 1.0):
    if not delta > 0:
        raise NonPositiveDelta(f"delta must be > 0, got {delta}")
    r = np.abs(np.asarray(residual, dtype=np.float64))
    out = np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def _cell_edges(n: int, g: int) -> np.ndarray:
    return (np.arange(g + 1) * n) // g


def extract_features(model_input: ModelInput, g: int = 8) -> np.ndarray:
    """Per-cell means of each plane over a g x g grid (plane-major, row-major cells)."""
    planes = model_input.planes if isinstance(model_input, ModelInput) else np.asarray(model_input, float)
    _, h, w = planes.shape
    if g < 1 or g > min(h, w):
        raise GridTooFine(f"grid {g} too fine for {h}x{w} planes")
    re, ce = _cell_edges(h, g), _cell_edges(w, g)
    sums = np.add.reduceat(np.add.reduceat(planes, re[:-1], axis=1), ce[:-1], axis=2)
    counts = np.outer(np.diff(re), np.diff(ce))
    return (sums / counts).reshape(-1)


@dataclass(eq=False)
class RegressorModel:
    weights: np.ndarray  # (2, n_features), raw feature space
    intercept: np.ndarray  # (2,) degrees
    ridge_lambda: float = 1e-3
    huber_delta: float = 1.0
    trained_modality: str = "pet"
    grid: int = 8
    outlier_k: float = 5.0
    outlier_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    n_rounds: int = 0
    converged: bool = False
    training_loss: float = float("nan")

    def to_json(self) -> dict:
        return {
            "weights": [[float(v) for v in row] for row in self.weights],
            "intercept": [float(v) for v in self.intercept],
            "ridge_lambda": self.ridge_lambda,
            "huber_delta": self.huber_delta,
            "outlier_k": self.outlier_k,
            "trained_modality": self.trained_modality,
            "g": self.grid,
        }

    @classmethod
    def from_json(cls, doc) -> "RegressorModel":
        return cls(
            np.asarray(doc["weights"], dtype=np.float64),
            np.asarray(doc["intercept"], dtype=np.float64),
            float(doc["ridge_lambda"]),
            float(doc["huber_delta"]),
            doc["trained_modality"],
            int(doc["g"]),
            float(doc.get("outlier_k", 5.0)),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "RegressorModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _weighted_ridge(Z, Y, w, lam):
    sw = w.sum()
    zbar = (w @ Z) / sw
    ybar = (w @ Y) / sw
    Zc, Yc = Z - zbar, Y - ybar
    A = Zc.T @ (Zc * w[:, None]) + lam * np.eye(Z.shape[1])
    if lam == 0 and np.linalg.matrix_rank(Zc * np.sqrt(w)[:, None]) < Z.shape[1]:
        raise SingularSystem("rank-deficient features with ridge_lambda = 0")
    try:
        beta = np.linalg.solve(A, Zc.T @ (Yc * w[:, None]))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return beta, ybar - zbar @ beta


def fit_standin_regressor(features, targets, ridge_lambda: float = 1e-3, huber_delta: float = 1.0,
                          outlier_k: float = 5.0, modality: str = "pet", grid: int = 8,
                          max_rounds: int = 10) -> RegressorModel:
    """Ridge fit on standardized features, then Huber IRLS with MAD outlier rejection.

    Each round recomputes per-sample angular errors, drops samples whose
    error exceeds ``median + outlier_k * MAD`` and reweights the rest with
    Huber weights (1 inside ``huber_delta``, ``delta / |r|`` outside).
    """
    if not huber_delta > 0:
        raise NonPositiveDelta(f"huber_delta must be > 0, got {huber_delta}")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if X.ndim != 2 or len(X) != len(Y):
        raise DimensionMismatch(f"features {X.shape} do not match targets {Y.shape}")
    n = len(X)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")

    mu = X.mean(0)
    sd = X.std(0)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    Z = np.where(live, (X - mu) / np.where(live, sd, 1.0), 0.0)
    if ridge_lambda == 0 and not live.all():
        raise SingularSystem("constant feature columns with ridge_lambda = 0")

    w = np.ones(n)
    beta, c = _weighted_ridge(Z, Y, w, ridge_lambda)
    outliers = np.zeros(n, dtype=bool)
    converged = False
    rounds = 0
    # floor for the MAD so exact fits do not flag round-off as outliers
    mad_floor = 1e-2 * huber_delta
    for rounds in range(1, max_rounds + 1):
        err = angular_error(Z @ beta + c, Y)
        med = np.median(err)
        mad = np.median(np.abs(err - med))
        outliers = err > med + outlier_k * max(mad, mad_floor)
        w_new = np.where(err <= huber_delta, 1.0, huber_delta / np.maximum(err, 1e-300))
        w_new[outliers] = 0.0
        if w_new.sum() == 0:
            break
        if np.max(np.abs(w_new - w)) < 1e-6:
            converged = True
            break
        w = w_new
        beta, c = _weighted_ridge(Z, Y, w, ridge_lambda)

    weights = np.where(live, beta.T / np.where(live, sd, 1.0), 0.0)
    intercept = c - weights @ mu
    err = angular_error(X @ weights.T + intercept, Y)
    return RegressorModel(weights, intercept, ridge_lambda, huber_delta, modality, grid, outlier_k,
                          outliers, rounds, converged, float(np.mean(huber_loss(err, huber_delta))))


def predict_gaze(model: RegressorModel, features):
    """Gaze for one feature vector (GazeAngles) or an (N, F) batch ((N, 2) array)."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != model.weights.shape[1]:
        raise DimensionMismatch(f"model expects {model.weights.shape[1]} features, got {f.shape[-1]}")
    out = f @ model.weights.T + model.intercept
    if out.ndim == 1:
        return GazeAngles(float(out[0]), float(out[1]))
    return out
