import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from petkit.demosaic import PolarizationChannels
from petkit.input_former import (
    PET,
    PSEUDO_INTENSITY,
    form_input,
    form_pet_input,
    form_pseudo_intensity_input,
)
from petkit.stokes import products_from_channels


def const_channels(*values, shape=(4, 5)):
    return PolarizationChannels(*(np.full(shape, float(v)) for v in values))


def test_pet_unnormalized_keeps_planes():
    mi = form_pet_input(const_channels(4, 3, 2, 1), normalize="none")
    assert mi.modality == PET
    assert [p[0, 0] for p in mi.planes] == [4, 3, 2, 1]


def test_constant_planes_standardize_to_zero():
    mi = form_pet_input(const_channels(4, 3, 2, 1))
    assert np.all(mi.planes == 0)


def test_standardized_statistics():
    rng = np.random.default_rng(0)
    mi = form_pet_input(PolarizationChannels.from_stack(rng.random((4, 30, 40)) * 1000))
    for p in mi.planes:
        assert abs(p.mean()) < 1e-9
        assert abs(p.var() - 1) < 1e-6


def test_pseudo_mean_value():
    mi = form_pseudo_intensity_input(const_channels(4, 3, 2, 1), normalize="none")
    assert mi.modality == PSEUDO_INTENSITY
    assert np.all(mi.planes == 2.5)


def test_unpolarized_inputs_coincide():
    rng = np.random.default_rng(1)
    plane = rng.random((16, 16))
    ch = PolarizationChannels(plane, plane.copy(), plane.copy(), plane.copy())
    for norm in ("none", "per_channel_standardize"):
        np.testing.assert_array_equal(form_input(ch, PET, norm).planes, form_input(ch, PSEUDO_INTENSITY, norm).planes)


def test_pseudo_equals_stokes_intensity():
    rng = np.random.default_rng(2)
    ch = PolarizationChannels.from_stack(rng.random((4, 12, 12)) * 4000)
    mi = form_pseudo_intensity_input(ch, normalize="none")
    np.testing.assert_allclose(mi.planes[0], products_from_channels(ch).intensity, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 6, 6), elements=st.floats(0, 4095)), st.sampled_from(["none", "per_channel_standardize"]))
def test_pseudo_idempotent(stack, norm):
    mi = form_pseudo_intensity_input(PolarizationChannels.from_stack(stack), norm)
    again = form_pseudo_intensity_input(PolarizationChannels.from_stack(mi.planes), norm)
    np.testing.assert_allclose(again.planes, mi.planes, atol=1e-9)
    assert all(np.array_equal(mi.planes[0], p) for p in mi.planes)


def test_pseudo_destroys_polarization():
    # same per-pixel channel sum, very different DoLP
    a = const_channels(2, 1, 0, 1)
    b = const_channels(1, 1, 1, 1)
    assert products_from_channels(a).dolp[0, 0] > 0.4 and products_from_channels(b).dolp[0, 0] == 0
    np.testing.assert_array_equal(form_pseudo_intensity_input(a, "none").planes,
                                  form_pseudo_intensity_input(b, "none").planes)
