import math

import numpy as np
import pytest
from scipy import ndimage

from petkit.demosaic import demosaic_bilinear
from petkit.mosaic_io import load_gaze_dataset, read_raw_frame
from petkit.stokes import PHYSICAL_X2, ProductConfig, products_from_channels
from petkit.synth import (
    CORNEA_HIGHLIGHT,
    IRIS,
    PUPIL,
    SCLERA,
    GroundTruthScene,
    NoiseModel,
    ProtocolConfig,
    SceneParams,
    cornea_px_per_deg,
    generate_dataset,
    generate_scene,
    polarizer_samples,
    protocol_targets,
    simulate_pfa_capture,
)


def test_malus_samples():
    got = [float(polarizer_samples(2.0, 1.0, 0.0, a)) for a in (0, 45, 90, 135)]
    np.testing.assert_allclose(got, [2, 1, 0, 1], atol=1e-15)
    got = [float(polarizer_samples(3.0, 0.0, 0.7, a)) for a in (0, 45, 90, 135)]
    np.testing.assert_allclose(got, [1.5] * 4, atol=1e-15)


def test_extinction_mixes_orthogonal_state():
    # extinction e: fully polarized light at 0 deg leaks (1 - e) into the 90 deg sample
    got = [float(polarizer_samples(2.0, 1.0, 0.0, a, extinction=0.9)) for a in (0, 90)]
    np.testing.assert_allclose(got, [1.8, 0.2], atol=1e-15)


def test_scene_deterministic_and_in_range():
    p = SceneParams(128, 96, gaze=(5, -3), subject_seed=4)
    a, b = generate_scene(p), generate_scene(p)
    for name in ("s0_true", "dolp_true", "aolp_true", "region_map"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.shape == (96, 128)
    assert a.dolp_true.min() >= 0 and a.dolp_true.max() <= 1
    assert np.all((a.aolp_true > -math.pi / 2) & (a.aolp_true <= math.pi / 2))


def test_region_statistics():
    sc = generate_scene(SceneParams(256, 256, subject_seed=2))
    sclera = sc.region_map == SCLERA
    assert sclera.sum() > 1000
    assert sc.dolp_true[sclera].min() >= 0.05 - 1e-12 and sc.dolp_true[sclera].max() <= 0.6 + 1e-12
    iris = sc.region_map == IRIS
    assert sc.dolp_true[iris].max() < 0.05
    pupil = sc.region_map == PUPIL
    assert np.all(sc.dolp_true[pupil] == 0)
    assert sc.s0_true[pupil].max() < 0.1


def _pattern_center(scene):
    # least-squares point closest to all lines through cornea pixels along
    # their local AoLP direction (the pattern is azimuthal about its centre)
    ys, xs = np.nonzero(scene.region_map == CORNEA_HIGHLIGHT)
    a = scene.aolp_true[ys, xs]
    n = np.stack([-np.sin(a), np.cos(a)], axis=1)  # line normals
    p = np.stack([xs, ys], axis=1).astype(float)
    A = n.T @ n
    b = (n * (n * p).sum(1, keepdims=True)).sum(0)
    return np.linalg.solve(A, b)


def test_cornea_center_tracks_gaze_linearly():
    p0 = SceneParams(256, 256, gaze=(0, 0))
    p1 = SceneParams(256, 256, gaze=(10, 0))
    c0, c1 = _pattern_center(generate_scene(p0)), _pattern_center(generate_scene(p1))
    np.testing.assert_allclose(c0, generate_scene(p0).cornea_center, atol=1e-6)
    np.testing.assert_allclose(c1 - c0, [10 * cornea_px_per_deg(p0), 0.0], atol=1e-6)
    c2 = _pattern_center(generate_scene(SceneParams(256, 256, gaze=(0, 6))))
    np.testing.assert_allclose(c2 - c0, [0.0, -6 * cornea_px_per_deg(p0)], atol=1e-6)


def test_subject_textures_decorrelated():
    a = generate_scene(SceneParams(256, 256, subject_seed=1))
    b = generate_scene(SceneParams(256, 256, subject_seed=2))
    both = (a.region_map == SCLERA) & (b.region_map == SCLERA)
    x, y = a.dolp_true[both], b.dolp_true[both]
    ncc = np.mean((x - x.mean()) * (y - y.mean())) / (x.std() * y.std())
    assert ncc < 0.5


def test_texture_rides_with_gaze():
    # sclera texture under gaze shift equals the shifted texture of gaze 0
    p0, p1 = SceneParams(256, 256), SceneParams(256, 256, gaze=(3, 0))
    a, b = generate_scene(p0), generate_scene(p1)
    dx = 3 * 2.0  # GAZE_PX_PER_DEG at unit scale
    both = (a.region_map == SCLERA)[:, :-int(dx)] & (b.region_map == SCLERA)[:, int(dx):]
    np.testing.assert_allclose(b.dolp_true[:, int(dx):][both], a.dolp_true[:, :-int(dx)][both], atol=1e-9)


def test_eye_relief_magnifies_about_center():
    a = generate_scene(SceneParams(256, 256, eye_relief_scale=1.0))
    b = generate_scene(SceneParams(256, 256, eye_relief_scale=1.2))
    assert (b.region_map > 0).sum() > 1.3 * (a.region_map > 0).sum()
    with pytest.raises(ValueError):
        SceneParams(eye_relief_scale=1.5)
    with pytest.raises(ValueError):
        SceneParams(pupil_radius=0)


def _piecewise_scene(shape=(32, 32)):
    h, w = shape
    s0 = np.full(shape, 0.8)
    dolp = np.zeros(shape)
    aolp = np.zeros(shape)
    dolp[:, : w // 2], aolp[:, : w // 2] = 0.3, 0.4
    dolp[:, w // 2:], aolp[:, w // 2:] = 0.55, -1.2
    s0[: h // 2] = 0.5
    return GroundTruthScene(s0, dolp, aolp, (0.0, 0.0), np.ones(shape, np.uint8))


def test_round_trip_on_constant_texture_pixels():
    sc = _piecewise_scene()
    ch = demosaic_bilinear(simulate_pfa_capture(sc, bit_depth=None))
    lit = products_from_channels(ch, ProductConfig(epsilon=1e-12))
    phys = products_from_channels(ch, ProductConfig(epsilon=1e-12, dolp_convention=PHYSICAL_X2))
    # pixels whose 5x5 neighbourhood has constant truth
    flat = np.ones(sc.shape, bool)
    for plane in (sc.s0_true, sc.dolp_true, sc.aolp_true):
        flat &= ndimage.maximum_filter(plane, 5) == ndimage.minimum_filter(plane, 5)
    flat &= phys.mask
    assert flat.sum() > 200
    assert np.max(np.abs(phys.dolp - sc.dolp_true)[flat]) < 1e-6
    assert np.max(np.abs(lit.dolp - 0.5 * sc.dolp_true)[flat]) < 1e-6
    assert np.max(np.abs(phys.aolp - sc.aolp_true)[flat]) < 1e-6
    assert np.max(np.abs(phys.intensity - sc.s0_true / 2)[flat]) < 1e-9


def test_capture_quantized_and_clamped():
    sc = _piecewise_scene()
    sc.s0_true[:] = 5.0  # saturates
    f = simulate_pfa_capture(sc, bit_depth=12)
    assert f.data.dtype == np.uint16 and f.data.max() == 4095
    f = simulate_pfa_capture(_piecewise_scene(), noise=NoiseModel(read_noise_dn=1e4, rng_seed=1))
    assert f.data.min() == 0 and f.data.max() == 4095


def test_noise_is_seeded():
    sc = generate_scene(SceneParams(64, 64))
    nm = NoiseModel(read_noise_dn=3, shot_noise=True, rng_seed=7)
    assert simulate_pfa_capture(sc, noise=nm) == simulate_pfa_capture(sc, noise=nm)
    assert simulate_pfa_capture(sc, noise=nm) != simulate_pfa_capture(sc, noise=NoiseModel(3, True, rng_seed=8))


def test_aolp_error_grows_with_read_noise():
    sc = generate_scene(SceneParams(128, 128, subject_seed=3))
    strong = sc.dolp_true >= 0.05
    errs = []
    for rn in (0.0, 4.0, 16.0, 64.0):
        per_seed = []
        for seed in range(4):
            p = products_from_channels(demosaic_bilinear(simulate_pfa_capture(sc, noise=NoiseModel(rn, rng_seed=seed))))
            d = np.mod(p.aolp - sc.aolp_true + math.pi / 2, math.pi) - math.pi / 2
            per_seed.append(np.mean(np.abs(d)[strong & p.mask]))
        errs.append(np.mean(per_seed))
    assert all(a <= b for a, b in zip(errs, errs[1:]))


def test_protocol_geometry():
    ring = protocol_targets(ProtocolConfig("ring20"))
    assert len(ring) == 9
    assert all(abs(math.hypot(y, p) - 20) < 1e-9 for y, p in ring)
    rs = protocol_targets(ProtocolConfig("random_saccade", seed=5))
    assert len(rs) == 20
    assert all(abs(y) <= 15 and abs(p) <= 10 for y, p in rs)
    assert rs == protocol_targets(ProtocolConfig("random_saccade", seed=5))
    assert rs != protocol_targets(ProtocolConfig("random_saccade", seed=6))
    fp = protocol_targets(ProtocolConfig("fp18"))
    assert len(fp) == 18
    assert all(abs((y / 15) ** 2 + (p / 10) ** 2 - 1) < 1e-9 for y, p in fp[:9])
    assert all(abs(math.hypot(y, p) - 5) < 1e-9 for y, p in fp[9:])
    with pytest.raises(ValueError):
        ProtocolConfig("ring20", n_targets=10)


def test_generate_dataset(tmp_path):
    conds = [{"tag": "nominal"}, {"tag": "slip", "eye_relief_scale": 1.1}, {"tag": "dilated", "pupil_radius": 20}]
    ds = generate_dataset(ProtocolConfig("ring20"), SceneParams(32, 32), conds, tmp_path,
                          noise=NoiseModel(2, True, rng_seed=3), threads=2)
    assert len(ds.participants[0].records) == 27
    back = load_gaze_dataset(tmp_path / "manifest.json")
    assert [r.condition_tag for r in back.participants[0].records] == [c["tag"] for c in conds for _ in range(9)]
    assert back.metadata["monitor_distance_cm"] == 48.0
    rec = back.participants[0].records[0]
    assert rec.sequence_name == "NW_RING20"
    assert read_raw_frame(back.resolve(rec)).width == 32
