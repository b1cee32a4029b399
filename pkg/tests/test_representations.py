"""Edge maps, convolution kernels, edge-based fields, and NGF."""

import numpy as np
import pytest

from fieldreg import (
    ConfigError,
    EdgeMap,
    GridGeometry,
    NoiseEstimate,
    ParameterError,
    RepresentationConfig,
    ScalarVolume,
    build_vfc_kernel,
    edge_map_squared_gradient,
    estimate_noise,
    field_roughness,
    head_slice,
    invert_contrast,
    make_representation,
    ngf,
    normalize_field,
    vfc_field,
)

from conftest import random_volume


# Tap magnitudes frozen from the 1/(r^gamma) law; the 1e-8 center guard
# shifts these by less than 1e-9 relative.
KNOWN_MAGNITUDES = {
    (1, 2.5): 1.0,
    (1, 3.0): 1.0,
    (1, 4.0): 1.0,
    (2, 2.5): 0.17677669529663687,
    (2, 3.0): 0.125,
    (2, 4.0): 0.0625,
    (3, 2.5): 0.06415002990995841,
    (3, 3.0): 0.037037037037037035,
    (3, 4.0): 0.012345679012345678,
}


def direct_sum_field_oracle(em_values, kernel):
    """Field as an explicit sum of kernel copies, one per edge voxel.

    Quadratic-cost reference for the convolution identity; only usable
    on tiny grids.
    """
    dims = em_values.shape
    n = len(dims)
    R = kernel.support_radius
    out = np.zeros(dims + (n,))
    for src in np.argwhere(em_values != 0.0):
        w = em_values[tuple(src)]
        for tap in np.ndindex(*kernel.vectors.shape[:-1]):
            offset = np.array(tap) - R
            dst = src + offset
            if np.all(dst >= 0) and np.all(dst < dims):
                out[tuple(dst)] += w * kernel.vectors[tap]
    return out


# ---------------------------------------------------------------- edge map

def test_edge_map_constant_is_zero():
    g = GridGeometry((6, 6, 6))
    em = edge_map_squared_gradient(ScalarVolume(g, np.full((6, 6, 6), 2.0)))
    np.testing.assert_array_equal(em.values, 0.0)


def test_edge_map_ramp_interior_value(ramp2d):
    em = edge_map_squared_gradient(ramp2d)
    # slope 2 along axis 0 -> squared gradient magnitude of 4
    np.testing.assert_allclose(em.values[1:-1, :], 4.0, atol=1e-12)


def test_edge_map_contrast_inversion_exact(rng):
    v = random_volume(rng, (7, 7))
    flipped = invert_contrast(v)
    a = edge_map_squared_gradient(v)
    b = edge_map_squared_gradient(flipped)
    np.testing.assert_array_equal(a.values, b.values)


def test_edge_map_nonnegative(rng):
    v = random_volume(rng, (6, 6, 6))
    em = edge_map_squared_gradient(v)
    assert np.all(em.values >= 0.0)
    assert isinstance(em, EdgeMap)


# ---------------------------------------------------------------- kernel

def test_kernel_unit_distance_tap():
    k = build_vfc_kernel(support_radius=4, gamma=3.0, n_axes=3)
    R = k.support_radius
    tap = k.vectors[R + 1, R, R]
    np.testing.assert_allclose(tap, [-1.0, 0.0, 0.0], atol=1e-7)


def test_kernel_distance_two_magnitude():
    k = build_vfc_kernel(support_radius=4, gamma=3.0, n_axes=3)
    R = k.support_radius
    tap = k.vectors[R + 2, R, R]
    np.testing.assert_allclose(tap, [-0.125, 0.0, 0.0], atol=1e-8)


def test_kernel_center_tap_zero():
    k = build_vfc_kernel(support_radius=3, gamma=3.0, n_axes=2)
    np.testing.assert_array_equal(k.vectors[3, 3], [0.0, 0.0])


@pytest.mark.parametrize("gamma", [2.5, 3.0, 4.0])
def test_kernel_known_magnitudes(gamma):
    k = build_vfc_kernel(support_radius=4, gamma=gamma, n_axes=3)
    R = k.support_radius
    mags = k.magnitudes()
    for r in (1, 2, 3):
        assert mags[R, R, R + r] == pytest.approx(KNOWN_MAGNITUDES[(r, gamma)], rel=1e-7)


def test_kernel_points_toward_center():
    k = build_vfc_kernel(support_radius=3, gamma=2.5, n_axes=2)
    R = k.support_radius
    for i in range(2 * R + 1):
        for j in range(2 * R + 1):
            off = np.array([i - R, j - R], dtype=float)
            v = k.vectors[i, j]
            if np.any(off) and np.linalg.norm(off) <= R:
                assert np.dot(v, -off) > 0.0


def test_kernel_magnitudes_strictly_decreasing():
    k = build_vfc_kernel(support_radius=6, gamma=3.0, n_axes=3)
    R = k.support_radius
    mags = [k.magnitudes()[R, R, R + r] for r in range(1, R + 1)]
    assert all(a > b for a, b in zip(mags, mags[1:]))


def test_kernel_spherical_support():
    k = build_vfc_kernel(support_radius=3, gamma=3.0, n_axes=2)
    # corner taps lie outside the inscribed sphere and must be zero
    np.testing.assert_array_equal(k.vectors[0, 0], [0.0, 0.0])
    np.testing.assert_array_equal(k.vectors[-1, -1], [0.0, 0.0])


def test_kernel_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        build_vfc_kernel(support_radius=0)
    with pytest.raises(ParameterError):
        build_vfc_kernel(gamma=0.0)
    with pytest.raises(ParameterError):
        build_vfc_kernel(epsilon_center=0.0)
    with pytest.raises(ParameterError):
        build_vfc_kernel(n_axes=4)


# ---------------------------------------------------------------- field

def test_field_of_zero_edge_map_is_zero():
    g = GridGeometry((9, 9))
    em = EdgeMap(g, np.zeros((9, 9)))
    k = build_vfc_kernel(support_radius=3, gamma=3.0, n_axes=2)
    f = vfc_field(em, k)
    np.testing.assert_array_equal(f.values, 0.0)


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_field_impulse_response_is_kernel(method):
    g = GridGeometry((11, 11, 11))
    vals = np.zeros((11, 11, 11))
    vals[5, 5, 5] = 1.0
    em = EdgeMap(g, vals)
    k = build_vfc_kernel(support_radius=5, gamma=3.0, n_axes=3)
    f = vfc_field(em, k, method=method)
    np.testing.assert_allclose(f.values, k.vectors, atol=1e-5)


def test_field_two_impulses_match_direct_sum():
    g = GridGeometry((13, 13))
    vals = np.zeros((13, 13))
    vals[6, 3] = 1.0
    vals[6, 9] = 1.0
    em = EdgeMap(g, vals)
    k = build_vfc_kernel(support_radius=4, gamma=3.0, n_axes=2)
    f = vfc_field(em, k)
    want = direct_sum_field_oracle(vals, k)
    np.testing.assert_allclose(f.values, want, atol=1e-8)
    # midpoint between equal impulses: pulls cancel along the joining axis
    assert abs(f.values[6, 6, 1]) < 1e-8


def test_field_fft_and_direct_agree(rng):
    vals = rng.uniform(0.0, 1.0, (12, 10, 9))
    em = EdgeMap(GridGeometry((12, 10, 9)), vals)
    k = build_vfc_kernel(support_radius=4, gamma=2.5, n_axes=3)
    a = vfc_field(em, k, method="fft")
    b = vfc_field(em, k, method="direct")
    scale = np.abs(b.values).max()
    np.testing.assert_allclose(a.values, b.values, atol=1e-5 * scale)


def test_field_oversized_kernel_rejected():
    g = GridGeometry((8, 8))
    em = EdgeMap(g, np.ones((8, 8)))
    k = build_vfc_kernel(support_radius=8, gamma=3.0, n_axes=2)
    with pytest.raises(ConfigError):
        vfc_field(em, k)


def test_field_dimension_mismatch_rejected():
    em = EdgeMap(GridGeometry((8, 8)), np.ones((8, 8)))
    k = build_vfc_kernel(support_radius=2, gamma=3.0, n_axes=3)
    with pytest.raises(Exception):
        vfc_field(em, k)


# ---------------------------------------------------------------- normalize

def test_normalize_zero_vector_stays_zero():
    g = GridGeometry((2, 2))
    f = normalize_field(
        __import__("fieldreg").VectorField(g, np.zeros((2, 2, 2))), floor=0.1
    )
    np.testing.assert_array_equal(f.values, 0.0)


def test_normalize_large_magnitude_near_unit():
    from fieldreg import VectorField

    g = GridGeometry((2, 2))
    vals = np.zeros((2, 2, 2))
    vals[..., 0] = 5000.0
    f = normalize_field(VectorField(g, vals), floor=1.0)
    mags = np.sqrt(np.sum(f.values**2, axis=-1))
    np.testing.assert_allclose(mags, 1.0, atol=1e-6)


def test_normalize_floor_magnitude_hits_half_power():
    from fieldreg import VectorField

    g = GridGeometry((2, 2))
    vals = np.zeros((2, 2, 2))
    vals[..., 1] = 0.25
    f = normalize_field(VectorField(g, vals), floor=0.25)
    mags = np.sqrt(np.sum(f.values**2, axis=-1))
    np.testing.assert_allclose(mags, 1.0 / np.sqrt(2.0), atol=1e-12)


def test_normalize_rejects_nonpositive_floor(rng):
    from fieldreg import VectorField

    f = VectorField(GridGeometry((2, 2)), np.ones((2, 2, 2)))
    with pytest.raises(ParameterError):
        normalize_field(f, floor=0.0)


# ---------------------------------------------------------------- ngf

def test_ngf_constant_volume_zero_field():
    g = GridGeometry((6, 6))
    f = ngf(ScalarVolume(g, np.full((6, 6), 3.0)), NoiseEstimate(0.0))
    np.testing.assert_array_equal(f.values, 0.0)


def test_ngf_step_edge_unit_vectors():
    g = GridGeometry((16, 16))
    vals = np.zeros((16, 16))
    vals[8:, :] = 100.0
    f = ngf(ScalarVolume(g, vals), NoiseEstimate(1e-3))
    # rows adjacent to the step see the full gradient, far exceeding eps
    np.testing.assert_allclose(f.values[8, 4], [1.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(f.values[7, 4], [1.0, 0.0], atol=1e-6)


def test_ngf_contrast_inversion_flips_sign(rng):
    v = random_volume(rng, (8, 8))
    noise = NoiseEstimate(0.05)
    a = ngf(v, noise)
    b = ngf(invert_contrast(v), noise)
    np.testing.assert_array_equal(b.values, -a.values)


# ---------------------------------------------------------------- noise

def test_estimate_noise_constant_zero():
    g = GridGeometry((5, 5))
    est = estimate_noise(ScalarVolume(g, np.full((5, 5), 9.0)))
    assert est.epsilon_ngf == 0.0


def test_estimate_noise_ramp(ramp2d):
    est = estimate_noise(ramp2d, eta=0.1)
    assert est.epsilon_ngf == pytest.approx(0.2, rel=1e-12)


def test_estimate_noise_scales_linearly(rng):
    v = random_volume(rng, (8, 8))
    doubled = ScalarVolume(v.geometry, 2.0 * v.values)
    a = estimate_noise(v, eta=0.1)
    b = estimate_noise(doubled, eta=0.1)
    assert b.epsilon_ngf == pytest.approx(2.0 * a.epsilon_ngf, rel=1e-12)


# ---------------------------------------------------------------- dispatch

def test_representation_constant_volume_zero():
    g = GridGeometry((12, 12))
    v = ScalarVolume(g, np.full((12, 12), 1.5))
    f = make_representation(v, RepresentationConfig(kind="vfc", kernel_radius=4))
    np.testing.assert_array_equal(f.values, 0.0)


def test_representation_contrast_inversion_identical(noisy_slice):
    cfg = RepresentationConfig(kind="vfc", gamma=3.0, kernel_radius=8)
    a = make_representation(noisy_slice, cfg)
    b = make_representation(invert_contrast(noisy_slice), cfg)
    assert np.max(np.abs(a.values - b.values)) <= 1e-9


def test_representation_radius_capped_for_small_grids():
    # default radius 50 on a 12^2 grid must not raise
    g = GridGeometry((12, 12))
    v = ScalarVolume(g, np.arange(144, dtype=np.float64).reshape(12, 12))
    f = make_representation(v, RepresentationConfig(kind="vfc"))
    assert f.values.shape == (12, 12, 2)


def test_representation_kind_validated():
    with pytest.raises(ConfigError):
        RepresentationConfig(kind="curvature")


def test_roughness_decreases_with_gamma(noisy_slice):
    rough = []
    for gamma in (4.5, 4.0, 3.5, 3.0, 2.5):
        cfg = RepresentationConfig(kind="vfc", gamma=gamma, kernel_radius=10)
        rough.append(field_roughness(make_representation(noisy_slice, cfg)))
    assert all(a >= b for a, b in zip(rough, rough[1:]))


def test_vectors_point_toward_straight_edge():
    # noiseless step edge: vectors on both sides within 10 voxels all
    # carry a positive component toward the edge plane
    g = GridGeometry((48, 48))
    vals = np.zeros((48, 48))
    vals[24:, :] = 1.0
    v = ScalarVolume(g, vals)
    f = make_representation(v, RepresentationConfig(kind="vfc", gamma=3.0, kernel_radius=12))
    for row in range(14, 24):
        assert f.values[row, 24, 0] > 0.0  # below the edge, pointing down
    for row in range(25, 35):
        assert f.values[row, 24, 0] < 0.0  # above the edge, pointing up


def test_roughness_uniform_field_is_zero():
    from fieldreg import VectorField

    g = GridGeometry((6, 6))
    vals = np.zeros((6, 6, 2))
    vals[..., 0] = 1.0
    assert field_roughness(VectorField(g, vals)) == 0.0
