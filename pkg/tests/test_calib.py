import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petkit.calib import (
    CalibrationParams,
    RegressorModel,
    apply_calibration,
    extract_features,
    fit_affine_calibration,
    fit_standin_regressor,
    huber_loss,
    predict_gaze,
)
from petkit.demosaic import PolarizationChannels
from petkit.errors import (
    DegenerateAxis,
    DimensionMismatch,
    GridTooFine,
    NonPositiveDelta,
    SingularSystem,
    TooFewSamples,
)
from petkit.gaze_eval import GazeAngles
from petkit.input_former import PET, PSEUDO_INTENSITY, ModelInput, form_input
from petkit.synth import GroundTruthScene, SceneParams, generate_scene, polarizer_samples

RING = np.array([(20 * np.cos(t), 20 * np.sin(t)) for t in 2 * np.pi * np.arange(9) / 9])


def test_identity_calibration():
    c = fit_affine_calibration(RING, RING)
    assert np.max(np.abs(np.array(c.scale) - 1)) < 1e-12
    assert np.max(np.abs(c.bias)) < 1e-12
    assert c.well_posed


def test_exact_affine_recovered():
    c = fit_affine_calibration(RING, 2 * RING + 1)
    np.testing.assert_allclose(c.scale, (2, 2), atol=1e-12)
    np.testing.assert_allclose(c.bias, (1, 1), atol=1e-12)


def test_noisy_fit_matches_normal_equations():
    rng = np.random.default_rng(0)
    preds = RING + rng.normal(0, 2, RING.shape)
    gts = np.column_stack([1.3 * preds[:, 0] - 2, 0.8 * preds[:, 1] + 0.5]) + rng.normal(0, 1, RING.shape)
    c = fit_affine_calibration(preds, gts)
    for axis in range(2):
        A = np.column_stack([preds[:, axis], np.ones(9)])
        a, b = np.linalg.solve(A.T @ A, A.T @ gts[:, axis])
        assert abs(c.scale[axis] - a) < 1e-9 and abs(c.bias[axis] - b) < 1e-9


def test_degenerate_axis():
    preds = RING.copy()
    preds[:, 1] = 3.0
    with pytest.raises(DegenerateAxis):
        fit_affine_calibration(preds, RING)
    with pytest.raises(DegenerateAxis):
        fit_affine_calibration(RING[:1], RING[:1])


def test_negative_scale_flagged_not_rejected():
    c = fit_affine_calibration(RING, -RING)
    assert not c.well_posed
    assert c.scale[0] == pytest.approx(-1)


def test_apply_calibration():
    assert apply_calibration(CalibrationParams(), (3.0, 4.0)) == GazeAngles(3.0, 4.0)
    assert apply_calibration(CalibrationParams((2, 2), (1, 1)), (3, 4)) == GazeAngles(7.0, 9.0)


def test_calibration_reduces_error():
    rng = np.random.default_rng(1)
    preds = RING * 0.7 + 3 + rng.normal(0, 1, RING.shape)
    c = fit_affine_calibration(preds, RING)
    assert np.mean((apply_calibration(c, preds) - RING) ** 2) < np.mean((preds - RING) ** 2)


@settings(max_examples=50)
@given(st.floats(-30, 30), st.floats(0.1, 10))
def test_calibration_equivariance(shift, k):
    rng = np.random.default_rng(2)
    preds = RING + rng.normal(0, 1, RING.shape)
    gts = RING * 1.1 + rng.normal(0, 0.5, RING.shape)
    base = fit_affine_calibration(preds, gts)
    shifted = fit_affine_calibration(preds, gts + shift)
    np.testing.assert_allclose(shifted.scale, base.scale, atol=1e-9)
    np.testing.assert_allclose(shifted.bias, np.array(base.bias) + shift, atol=1e-9)
    scaled = fit_affine_calibration(preds, gts * k)
    np.testing.assert_allclose(scaled.scale, np.array(base.scale) * k, rtol=1e-9)
    np.testing.assert_allclose(scaled.bias, np.array(base.bias) * k, rtol=1e-9, atol=1e-9)


def _input(planes, modality=PET):
    return ModelInput(np.asarray(planes, float), modality)


def test_features_constant_and_g1():
    assert np.all(extract_features(_input(np.full((4, 10, 12), 2.5)), 3) == 2.5)
    rng = np.random.default_rng(3)
    planes = rng.random((4, 9, 7))
    np.testing.assert_allclose(extract_features(_input(planes), 1), planes.mean(axis=(1, 2)), atol=1e-15)


def test_features_cell_means_oracle():
    rng = np.random.default_rng(4)
    planes = rng.random((4, 11, 13))
    g = 3
    got = extract_features(_input(planes), g)
    assert got.shape == (4 * g * g,)
    rows, cols = [0, 3, 7, 11], [0, 4, 8, 13]  # (k * n) // g
    expected = [planes[p, rows[i]:rows[i + 1], cols[j]:cols[j + 1]].mean()
                for p in range(4) for i in range(g) for j in range(g)]
    np.testing.assert_allclose(got, expected, atol=1e-15)


def test_features_pseudo_blocks_repeat():
    rng = np.random.default_rng(5)
    ch = PolarizationChannels.from_stack(rng.random((4, 16, 16)))
    f = extract_features(form_input(ch, PSEUDO_INTENSITY), 4)
    blocks = f.reshape(4, 16)
    assert all(np.array_equal(blocks[0], b) for b in blocks)


def test_grid_too_fine():
    with pytest.raises(GridTooFine):
        extract_features(_input(np.ones((4, 5, 8))), 6)


def _linear_data(n=60, f=12, seed=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, f)) * rng.uniform(0.5, 5, f) + rng.uniform(-3, 3, f)
    W = rng.normal(size=(2, f)) * 0.5
    Y = X @ W.T + np.array([1.0, -2.0])
    return X, Y


def test_planted_linear_model_recovered():
    X, Y = _linear_data()
    model = fit_standin_regressor(X, Y, ridge_lambda=1e-9)
    assert np.max(np.abs(predict_gaze(model, X) - Y)) < 1e-6
    assert not model.outlier_mask.any()


def test_ridge_limit():
    X, Y = _linear_data()
    # wide Huber threshold keeps every sample at unit weight
    model = fit_standin_regressor(X, Y, ridge_lambda=1e12, huber_delta=1e6, outlier_k=1e6)
    assert np.max(np.abs(model.weights)) < 1e-6
    np.testing.assert_allclose(model.intercept, Y.mean(0), atol=1e-4)


def test_planted_outliers_flagged():
    X, Y = _linear_data(n=200, seed=7)
    rng = np.random.default_rng(8)
    Y = Y + rng.normal(0, 0.3, Y.shape)
    bad = rng.choice(200, 20, replace=False)
    Y[bad, 0] += 50.0
    model = fit_standin_regressor(X, Y)
    assert model.outlier_mask[bad].mean() >= 0.9
    clean = np.setdiff1d(np.arange(200), bad)
    assert np.median(np.abs(predict_gaze(model, X[clean]) - Y[clean])) < 0.5


def test_regressor_errors():
    X, Y = _linear_data()
    with pytest.raises(TooFewSamples):
        fit_standin_regressor(X[:1], Y[:1])
    Xd = np.column_stack([X, X[:, 0] * 2])
    with pytest.raises(SingularSystem):
        fit_standin_regressor(Xd, Y, ridge_lambda=0.0)
    with pytest.raises(NonPositiveDelta):
        fit_standin_regressor(X, Y, huber_delta=0)
    with pytest.raises(DimensionMismatch):
        fit_standin_regressor(X, Y[:-1])


def test_predict_and_round_trip(tmp_path):
    m = RegressorModel(np.zeros((2, 5)), np.array([2.0, 3.0]))
    assert predict_gaze(m, np.arange(5.0)) == GazeAngles(2.0, 3.0)
    with pytest.raises(DimensionMismatch):
        predict_gaze(m, np.zeros(4))
    X, Y = _linear_data()
    model = fit_standin_regressor(X, Y, modality=PSEUDO_INTENSITY, grid=3)
    model.save(tmp_path / "m.json")
    back = RegressorModel.load(tmp_path / "m.json")
    assert back.trained_modality == PSEUDO_INTENSITY and back.grid == 3
    np.testing.assert_array_equal(predict_gaze(back, X), predict_gaze(model, X))


def test_huber_values_and_smoothness():
    assert huber_loss(0.0, 1.0) == 0.0
    assert huber_loss(1.5, 1.5) == pytest.approx(0.5 * 1.5**2)
    assert huber_loss(-4.0, 2.0) == pytest.approx(1.5 * 4.0)
    for d in (0.3, 1.0, 7.0):
        h = 1e-7
        left = (huber_loss(d, d) - huber_loss(d - h, d)) / h
        right = (huber_loss(d + h, d) - huber_loss(d, d)) / h
        assert abs(huber_loss(d + 1e-12, d) - huber_loss(d - 1e-12, d)) < 1e-9
        assert abs(left - right) < 1e-6
    with pytest.raises(NonPositiveDelta):
        huber_loss(1.0, 0.0)


def _scene_features(scene, modality, g=4):
    # ideal per-pixel channels, free of demosaicking cross-talk
    ch = PolarizationChannels(*(polarizer_samples(scene.s0_true, scene.dolp_true, scene.aolp_true, a)
                                for a in (0, 45, 90, 135)))
    return extract_features(form_input(ch, modality), g)


def test_unpolarized_scenes_give_identical_models():
    feats = {PET: [], PSEUDO_INTENSITY: []}
    gazes = np.random.default_rng(9).uniform(-10, 10, (30, 2))
    for g in gazes:
        sc = generate_scene(SceneParams(48, 48, gaze=tuple(g)))
        sc = GroundTruthScene(sc.s0_true, np.zeros_like(sc.dolp_true), sc.aolp_true, sc.gaze, sc.region_map)
        for m in feats:
            feats[m].append(_scene_features(sc, m))
    pet = fit_standin_regressor(np.array(feats[PET]), gazes, modality=PET, grid=4)
    ref = fit_standin_regressor(np.array(feats[PSEUDO_INTENSITY]), gazes, modality=PSEUDO_INTENSITY, grid=4)
    np.testing.assert_array_equal(np.array(feats[PET]), np.array(feats[PSEUDO_INTENSITY]))
    np.testing.assert_allclose(predict_gaze(pet, feats[PET]), predict_gaze(ref, feats[PSEUDO_INTENSITY]), atol=1e-12)


def test_polarization_only_texture_favours_pet():
    feats = {PET: [], PSEUDO_INTENSITY: []}
    gazes = np.random.default_rng(10).uniform(-10, 10, (40, 2))
    for g in gazes:
        sc = generate_scene(SceneParams(48, 48, gaze=tuple(g), intensity_contrast=0.0))
        sc.s0_true[:] = 0.6  # gaze-invariant intensity
        for m in feats:
            feats[m].append(_scene_features(sc, m))
    loss = {m: fit_standin_regressor(np.array(f), gazes, modality=m, grid=4).training_loss for m, f in feats.items()}
    assert loss[PET] < loss[PSEUDO_INTENSITY]
