import numpy as np
import pytest

from gapkin import rng
from gapkin.velocity import (InverseCdfTable, SpeedMeasure,
                             cosine_direction_from_uniforms, hemisphere_flux,
                             polar_integrate, sample_isotropic_direction,
                             sphere_area)


def test_sphere_constants():
    assert abs(sphere_area(2) - 2.0 * np.pi) < 1e-15
    assert abs(sphere_area(3) - 4.0 * np.pi) < 1e-15
    # int over the hemisphere of the normal cosine
    assert abs(hemisphere_flux(2) - 2.0) < 1e-15
    assert abs(hemisphere_flux(3) - np.pi) < 1e-15


def test_speed_measure_validation():
    with pytest.raises(ValueError):
        SpeedMeasure(0.0, 3.0, 2)
    with pytest.raises(ValueError):
        SpeedMeasure(3.0, 0.5, 2)
    with pytest.raises(ValueError):
        SpeedMeasure(0.5, 3.0, 4)
    with pytest.raises(ValueError):
        SpeedMeasure(0.5, 3.0, 2, weight_type="exp")


def test_weight_profiles_and_derivatives():
    rho = np.linspace(0.5, 3.0, 7)
    sm = SpeedMeasure(0.5, 3.0, 2, weight_type="power", weight_params=(2.0,))
    assert np.allclose(sm.weight(rho), rho ** 2)
    assert np.allclose(sm.weight_deriv(rho), 2.0 * rho)
    sm = SpeedMeasure(0.5, 3.0, 2, weight_type="stretched_exp",
                      weight_params=(0.3, 1.5))
    h = 1e-6
    fd = (sm.weight(rho + h) - sm.weight(rho - h)) / (2.0 * h)
    assert np.allclose(sm.weight_deriv(rho), fd, rtol=1e-8)
    sm = SpeedMeasure(0.5, 3.0, 2, weight_type="gaussian_growth",
                      weight_params=(-0.4,))
    fd = (sm.weight(rho + h) - sm.weight(rho - h)) / (2.0 * h)
    assert np.allclose(sm.weight_deriv(rho), fd, rtol=1e-8)


def test_total_mass_closed_forms():
    sm = SpeedMeasure(0.5, 3.0, 2)
    assert abs(sm.total_mass() - 2.0 * np.pi * (9.0 - 0.25) / 2.0) < 1e-10
    sm3 = SpeedMeasure(0.5, 3.0, 3)
    assert abs(sm3.total_mass()
               - 4.0 * np.pi * (27.0 - 0.125) / 3.0) < 1e-9
    smp = SpeedMeasure(0.5, 3.0, 2, weight_type="power", weight_params=(2.0,))
    assert abs(smp.total_mass() - 2.0 * np.pi * (81.0 - 0.0625) / 4.0) < 1e-9


def test_mean_speed_time_uniform_disk():
    # E[1/rho] under rho drho on [0.5, 3] is 2.5 / 4.375 = 4/7
    sm = SpeedMeasure(0.5, 3.0, 2)
    assert abs(sm.mean_speed_time() - 4.0 / 7.0) < 1e-12


def test_polar_integrate_against_closed_forms():
    sm = SpeedMeasure(0.5, 3.0, 2)
    val = polar_integrate(sm, lambda v: np.ones(v.shape[:-1]))
    assert abs(val - sm.total_mass()) < 1e-9
    # int |v_x|^2 over the annulus = pi (rmax^4 - r0^4) / 4
    val = polar_integrate(sm, lambda v: v[..., 0] ** 2)
    assert abs(val - np.pi * (81.0 - 0.0625) / 4.0) < 1e-8
    sm3 = SpeedMeasure(0.5, 3.0, 3)
    val = polar_integrate(sm3, lambda v: v[..., 2] ** 2)
    # int |v_z|^2 = (4 pi / 3) (rmax^5 - r0^5) / 5
    assert abs(val - 4.0 * np.pi / 3.0 * (243.0 - 0.03125) / 5.0) < 1e-7


def test_inverse_cdf_table_quantiles():
    tab = InverseCdfTable.from_density(lambda r: r, 0.5, 3.0)
    # F(rho) = (rho^2 - 0.25) / 8.75
    assert abs(tab.sample(np.array([0.5]))[0] - np.sqrt(4.625)) < 1e-6
    assert abs(tab.sample(np.array([0.0]))[0] - 0.5) < 1e-9
    assert abs(tab.sample(np.array([1.0 - 1e-12]))[0] - 3.0) < 1e-6
    u = np.linspace(0.001, 0.999, 101)
    s = tab.sample(u)
    assert np.all(np.diff(s) > 0)
    assert np.all((s >= 0.5) & (s <= 3.0))


def test_cosine_direction_mean_2d():
    # the argument is the emission axis: returned sigma satisfy sigma.n > 0
    axis = np.tile(np.array([0.0, 1.0]), (20000, 1))
    u = rng.stream_uniforms(11, "test.cos2", np.arange(20000), 1)[:, 0]
    dirs = cosine_direction_from_uniforms(axis, u)
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)
    c = dirs @ np.array([0.0, 1.0])
    assert np.all(c > 0)
    # cosine-law mean cosine is pi/4
    assert abs(np.mean(c) - np.pi / 4.0) < 0.01


def test_cosine_direction_mean_3d():
    axis = np.tile(np.array([0.0, 0.0, 1.0]), (20000, 1))
    U = rng.stream_uniforms(11, "test.cos3", np.arange(20000), 2)
    dirs = cosine_direction_from_uniforms(axis, U[:, 0], U[:, 1])
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)
    c = dirs[:, 2]
    assert np.all(c > 0)
    # cosine-law mean cosine in 3d is 2/3
    assert abs(np.mean(c) - 2.0 / 3.0) < 0.01


def test_isotropic_direction():
    rs = np.random.default_rng(3)
    d2 = sample_isotropic_direction(2, rs, 5000)
    d3 = sample_isotropic_direction(3, rs, 5000)
    assert np.allclose(np.linalg.norm(d2, axis=-1), 1.0)
    assert np.allclose(np.linalg.norm(d3, axis=-1), 1.0)
    assert np.max(np.abs(np.mean(d2, axis=0))) < 0.05
    assert np.max(np.abs(np.mean(d3, axis=0))) < 0.05
