import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nearfield_aud.geometry import (
    SPEED_OF_LIGHT,
    ArrayLayout,
    DeploymentRegion,
    NearFieldError,
    fresnel_distance,
    rayleigh_distance,
    sample_user_field,
)

F_BASE = 1.71e9
LAM_BASE = SPEED_OF_LIGHT / F_BASE


def base_region():
    return DeploymentRegion(20.0, 80.0, layout=ArrayLayout(32, F_BASE))


def test_wavelength_and_positions():
    lay = ArrayLayout(32, F_BASE)
    assert lay.wavelength == pytest.approx(0.1753172269005848, rel=1e-14)
    pos = lay.element_positions
    assert pos.shape == (32, 2)
    assert np.all(pos[:, 0] == 0)
    np.testing.assert_allclose(np.diff(pos[:, 1]), lay.wavelength, rtol=1e-12)
    np.testing.assert_allclose(pos.mean(axis=0), 0.0, atol=1e-12)
    assert lay.aperture == pytest.approx(31 * lay.wavelength, rel=1e-12)


@given(st.integers(1, 80), st.floats(1e8, 1e11))
def test_aperture_is_m_minus_one_wavelengths(m, f):
    lay = ArrayLayout(m, f)
    assert lay.aperture == pytest.approx((m - 1) * lay.wavelength, rel=1e-9, abs=1e-12)
    assert np.allclose(lay.element_positions.mean(axis=0), 0.0, atol=1e-9 * max(1, m) * lay.wavelength)


def test_rayleigh_distance_values():
    # two elements one wavelength apart, lam = 1 m
    assert rayleigh_distance(ArrayLayout(2, SPEED_OF_LIGHT)) == pytest.approx(2.0, rel=1e-12)
    # 2 (31 lam)^2 / lam = 1922 lam
    assert rayleigh_distance(ArrayLayout(32, F_BASE)) == pytest.approx(1922 * LAM_BASE, rel=1e-12)
    assert rayleigh_distance(ArrayLayout(32, F_BASE)) == pytest.approx(336.9597101, rel=1e-8)
    # 2 (63 lam)^2 / lam = 7938 lam
    assert rayleigh_distance(ArrayLayout(64, F_BASE)) == pytest.approx(1391.668147, rel=1e-8)


def test_fresnel_distance_values():
    assert fresnel_distance(ArrayLayout(16, F_BASE)) == pytest.approx(6.3147065, rel=1e-6)
    assert fresnel_distance(ArrayLayout(32, F_BASE)) == pytest.approx(18.7611227, rel=1e-6)


def test_region_rejects_bad_bounds():
    with pytest.raises(ValueError):
        DeploymentRegion(80.0, 20.0)
    with pytest.raises(ValueError):
        DeploymentRegion(0.0, 20.0)
    with pytest.raises(ValueError):
        DeploymentRegion(20.0, 80.0, 1.0, -1.0)


def test_region_near_field_checks():
    base_region()
    # r_max beyond the Rayleigh distance of a 16-element array (78.9 m)
    with pytest.raises(NearFieldError, match="Rayleigh"):
        DeploymentRegion(20.0, 80.0, layout=ArrayLayout(16, F_BASE))
    # r_min inside the reactive boundary of a 64-element array (54.4 m)
    with pytest.raises(NearFieldError, match="reactive"):
        DeploymentRegion(20.0, 80.0, layout=ArrayLayout(64, F_BASE))
    DeploymentRegion(55.0, 80.0, layout=ArrayLayout(64, F_BASE))


def test_zero_error_gives_exact_estimates():
    uf = sample_user_field(base_region(), 50, 0.0, np.random.default_rng(1))
    assert np.array_equal(uf.true_positions, uf.estimated_positions)


def test_sample_field_rejects_bad_arguments():
    with pytest.raises(ValueError):
        sample_user_field(base_region(), 0, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_user_field(base_region(), 3, -1.0, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.floats(0.0, 20.0))
def test_field_bounds_and_error_magnitude(seed, n, sigma):
    region = base_region()
    uf = sample_user_field(region, n, sigma, np.random.default_rng(seed))
    assert uf.n_users == n
    assert uf.radii.min() >= region.r_min and uf.radii.max() <= region.r_max
    assert uf.angles.min() >= region.theta_min and uf.angles.max() <= region.theta_max
    r = np.linalg.norm(uf.true_positions, axis=1)
    np.testing.assert_allclose(r, uf.radii, rtol=1e-12)
    disp = np.linalg.norm(uf.estimated_positions - uf.true_positions, axis=1)
    np.testing.assert_allclose(disp, np.abs(uf.radial_errors), rtol=1e-9, atol=1e-12)


def test_field_is_reproducible():
    a = sample_user_field(base_region(), 24, 3.0, np.random.default_rng(99))
    b = sample_user_field(base_region(), 24, 3.0, np.random.default_rng(99))
    for name in ("true_positions", "estimated_positions", "radial_errors", "error_angles"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_error_magnitude_is_half_normal():
    sigma = 0.5
    uf = sample_user_field(base_region(), 100_000, sigma, np.random.default_rng(2024))
    disp = np.linalg.norm(uf.estimated_positions - uf.true_positions, axis=1)
    expected = sigma * math.sqrt(2 / math.pi)  # 0.39894
    assert disp.mean() == pytest.approx(expected, rel=0.01)


def test_polar_draws_are_uniform():
    region = base_region()
    uf = sample_user_field(region, 100_000, 0.0, np.random.default_rng(5))
    assert uf.radii.mean() == pytest.approx(50.0, rel=0.01)
    assert uf.angles.mean() == pytest.approx(0.0, abs=0.01)
