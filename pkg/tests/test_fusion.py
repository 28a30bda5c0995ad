import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polhdr.crf import Crf, apply_crf, invert_crf
from polhdr.fusion import (FLAG_ALL_SATURATED, FLAG_OK, FusionConfig, FusionError, fuse_ideb, fuse_levels,
                           gaussian_weight, saturation_mask)
from polhdr.imgcore import LdrImage, PolarQuad
from polhdr.polar import PolState, forward_quad
from polhdr.synth import quad_irradiance, simulate_capture


def quad_from_levels(levels, t0=1.0, crf=None):
    return PolarQuad({a: LdrImage(np.full((2, 2), v, dtype=np.uint8)) for a, v in zip((0, 45, 90, 135), levels)},
                     t0, crf)


def test_gaussian_weight_values():
    assert gaussian_weight(0.5) == 1.0
    assert gaussian_weight(0.0) == pytest.approx(math.exp(-3.125), rel=1e-12)
    assert gaussian_weight(1.0) == pytest.approx(0.0439369336, rel=1e-8)


@given(st.floats(0, 0.5))
def test_gaussian_weight_symmetric(d):
    assert gaussian_weight(0.5 - d) == pytest.approx(gaussian_weight(0.5 + d), rel=1e-12)


def test_float_path_exact(small_scene, gamma_crf):
    irr = quad_irradiance(small_scene)
    t0 = 0.99 / max(float(i.max()) for i in irr)
    levels = [apply_crf(gamma_crf, i * t0, quantize=False) for i in irr]
    fused = fuse_levels(levels, t0, gamma_crf)
    i0 = small_scene.radiance.data
    assert np.all(fused.flags == FLAG_OK)
    assert np.max(np.abs(fused.ideb.data - i0) / i0) <= 1e-9


def test_single_pixel_value():
    crf = Crf("gamma", 2.2)
    t0 = 1.0
    levels = [apply_crf(crf, v * t0) for v in forward_quad(0.4, PolState(0.5, 45.0))]
    fused = fuse_ideb(quad_from_levels(levels, t0), crf)
    assert abs(fused.ideb.data[0, 0, 0] - 0.4) <= 2 * crf.quantization_step / t0


def test_all_zero_is_ok_zero(linear_crf):
    fused = fuse_ideb(quad_from_levels((0, 0, 0, 0)), linear_crf)
    assert np.all(fused.ideb.data == 0)
    assert np.all(fused.flags == FLAG_OK)


def test_all_saturated_flag(gamma_crf):
    fused = fuse_ideb(quad_from_levels((255, 255, 254, 255), t0=2.0), gamma_crf)
    assert np.all(fused.flags == FLAG_ALL_SATURATED)
    assert np.all(fused.ideb.data == 2 * invert_crf(gamma_crf, 255) / 2.0)


def test_degenerate_unreachable_at_default_sigma():
    # the smallest possible weight is exp(-3.125) >> epsilon
    assert gaussian_weight(0.0) > FusionConfig().epsilon_denominator


def scalar_ideb(l0, l45, l90, l135, t0, crf, sigma=0.2):
    m = crf.max_level
    w1 = math.exp(-(((l0 + l90) / (2 * m) - 0.5) ** 2) / (2 * sigma ** 2))
    w2 = math.exp(-(((l45 + l135) / (2 * m) - 0.5) ** 2) / (2 * sigma ** 2))
    g = lambda z: crf.white_level * (z / m) ** crf.gamma  # noqa: E731
    return (w1 * (g(l0) + g(l90)) + w2 * (g(l45) + g(l135))) / ((w1 + w2) * t0)


def test_matches_scalar_oracle(rng, gamma_crf):
    levels = rng.integers(0, 250, size=(4, 6, 5))
    fused = fuse_levels(list(levels), 0.7, gamma_crf)
    for y in range(6):
        for x in range(5):
            ref = scalar_ideb(*levels[:, y, x], 0.7, gamma_crf)
            assert fused.ideb.data[y, x] == pytest.approx(ref, rel=1e-12)


def test_fully_polarized_at_zero_degrees(gamma_crf):
    # rho = 1, theta = 0: the 90 degree orientation is dark, the 0 degree one carries everything
    t0 = 1.0
    levels = [apply_crf(gamma_crf, v * t0) for v in forward_quad(0.6, PolState(1.0, 0.0))]
    assert levels[2] == 0
    fused = fuse_ideb(quad_from_levels(levels, t0), gamma_crf)
    assert fused.ideb.data[0, 0, 0] == pytest.approx(scalar_ideb(*levels, t0, gamma_crf), rel=1e-12)
    assert abs(fused.ideb.data[0, 0, 0] - 0.6) <= 2 * gamma_crf.quantization_step


def test_saturation_mask(gamma_crf):
    assert saturation_mask(quad_from_levels((255, 255, 255, 255))).sum() == 0
    assert saturation_mask(quad_from_levels((255, 10, 255, 255))).all()
    assert saturation_mask(quad_from_levels((254, 254, 254, 254))).sum() == 0
    assert saturation_mask(quad_from_levels((254, 254, 254, 254)), FusionConfig(saturation_level=255)).all()


def test_recoverable_shrinks_with_exposure(small_scene, gamma_crf):
    counts = [saturation_mask(simulate_capture(small_scene, t, gamma_crf)).sum() for t in (0.1, 1, 10, 100, 1000)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_threads_bit_identical(small_scene, gamma_crf):
    quad = simulate_capture(small_scene, 1.153, gamma_crf)
    a = fuse_ideb(quad, threads=1)
    b = fuse_ideb(quad, threads=4)
    np.testing.assert_array_equal(a.ideb.data, b.ideb.data)
    np.testing.assert_array_equal(a.flags, b.flags)


def test_errors(gamma_crf):
    quad = quad_from_levels((1, 2, 3, 4))
    with pytest.raises(FusionError):
        fuse_ideb(quad)
    with pytest.raises(FusionError):
        fuse_ideb(quad, Crf("gamma", 2.2, bit_depth=16))
    with pytest.raises(FusionError):
        fuse_levels([np.zeros(3)] * 3 + [np.zeros(4)], 1.0, gamma_crf)
    with pytest.raises(ValueError):
        FusionConfig(sigma=0)


@settings(max_examples=100)
@given(st.floats(1e-3, 0.9), st.floats(0, 1), st.floats(0, 180, exclude_max=True))
def test_quantized_close(i0, rho, theta):
    crf = Crf("gamma", 1.0)
    levels = [apply_crf(crf, v) for v in forward_quad(i0, PolState(rho, theta))]
    fused = fuse_ideb(quad_from_levels(levels), crf)
    # two half-level errors per pair: at most one step, ties land exactly on it
    assert abs(fused.ideb.data[0, 0, 0] - i0) <= crf.quantization_step * (1 + 1e-12)
