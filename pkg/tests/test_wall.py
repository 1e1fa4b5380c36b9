import numpy as np
import pytest
from scipy.integrate import quad

from gapkin.geometry import DomainGeometry, boundary_grid
from gapkin.velocity import SpeedMeasure, hemisphere_flux
from gapkin.wall import (DegenerateKernelError, DiffuseKernel,
                         PartlyDiffuseWall, beta_constants, gamma,
                         maxwell_density, normalized_eval,
                         resample_from_uniforms, speed_table,
                         validate_kernel_integrability)

SM2 = SpeedMeasure(0.5, 3.0, 2)
SM3 = SpeedMeasure(0.5, 3.0, 3)
X2 = np.array([1.0, 0.0])


def test_maxwell_density_values():
    assert abs(maxwell_density(1.0, 1.0, 2)
               - np.exp(-0.5) / (2.0 * np.pi)) < 1e-15
    assert abs(maxwell_density(1.0, 1.0, 3)
               - np.exp(-0.5) / (2.0 * np.pi) ** 1.5) < 1e-15
    assert abs(maxwell_density(2.0, 0.5, 2)
               - np.exp(-4.0) / np.pi) < 1e-15


def test_gamma_against_quadrature():
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0)
    oracle, _ = quad(lambda r: 2.0 * r ** 2 * maxwell_density(r, 1.0, 2),
                     0.5, 3.0)
    assert abs(gamma(k, X2) - oracle) < 1e-12
    ku = DiffuseKernel(sm=SM2, kind="uniform")
    assert abs(gamma(ku, X2) - 2.0 * (27.0 - 0.125) / 3.0) < 1e-10
    k3 = DiffuseKernel(sm=SM3, kind="maxwell", theta=1.0)
    oracle3, _ = quad(lambda r: np.pi * r ** 3 * maxwell_density(r, 1.0, 3),
                      0.5, 3.0)
    assert abs(gamma(k3, np.array([1.0, 0.0, 0.0])) - oracle3) < 1e-12


def test_normalized_kernel_is_stochastic():
    # kappa_d int rho^d w(rho) k(x, rho) drho = 1 for every x
    for sm, x in ((SM2, X2), (SM3, np.array([0.0, 1.0, 0.0]))):
        k = DiffuseKernel(sm=sm, kind="maxwell", theta=0.8)
        rho, w = sm.radial_quad(96)
        vals = normalized_eval(k, x, rho)
        total = hemisphere_flux(sm.dim) * np.sum(
            w * rho ** sm.dim * sm.weight(rho) * vals)
        assert abs(total - 1.0) < 1e-12


def test_per_node_theta_profile():
    geom = DomainGeometry((1.0, 1.0))
    bg = boundary_grid(geom, 16)
    theta = np.linspace(0.5, 1.5, 16)
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=theta, grid=bg)
    assert not k.constant_theta
    got = k.theta_at(bg.nodes)
    assert np.allclose(got, theta)
    with pytest.raises(ValueError):
        DiffuseKernel(sm=SM2, kind="maxwell", theta=theta)


def test_speed_table_quantiles_uniform_kernel():
    ku = DiffuseKernel(sm=SM2, kind="uniform")
    tab = speed_table(ku, X2)
    # outgoing density rho^2 on [0.5, 3]: median (0.125 + 26.875/2)^(1/3)
    med = (0.125 + (27.0 - 0.125) / 2.0) ** (1.0 / 3.0)
    assert abs(tab.sample(np.array([0.5]))[0] - med) < 1e-5
    s = tab.sample(np.linspace(0.0, 1.0 - 1e-12, 64))
    assert np.all((s >= 0.5) & (s <= 3.0))
    assert np.all(np.diff(s) > 0)


def test_degenerate_kernel_raises():
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1e-5)
    with pytest.raises(DegenerateKernelError):
        gamma(k, X2)


def test_integrability_report_maxwell_passes():
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0)
    rep = validate_kernel_integrability(k)
    assert rep["admissible"]
    names = [c["name"] for c in rep["checks"]]
    assert "tail_decay_growth_ratio" in names
    ku = DiffuseKernel(sm=SM3, kind="uniform")
    assert not validate_kernel_integrability(ku)["admissible"]


def test_integrability_fails_for_fast_weight_growth():
    # weight e^(rho^2) outruns the Maxwell factor e^(-rho^2/2)
    sm = SpeedMeasure(0.5, 3.0, 2, weight_type="gaussian_growth",
                      weight_params=(1.0,))
    k = DiffuseKernel(sm=sm, kind="maxwell", theta=1.0)
    rep = validate_kernel_integrability(k)
    assert not rep["admissible"]
    # weight e^(-rho^2) keeps the tail decaying
    sm = SpeedMeasure(0.5, 3.0, 2, weight_type="gaussian_growth",
                      weight_params=(-1.0,))
    k = DiffuseKernel(sm=sm, kind="maxwell", theta=1.0)
    assert validate_kernel_integrability(k)["admissible"]


def test_beta_constants_cases():
    geom = DomainGeometry((1.0, 1.0))
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0)
    # constant alpha = 0.5: c = (1 + 0)^2 - 0.25 = 3/4 exactly
    c, depth, ok = beta_constants(
        PartlyDiffuseWall(diffuse=k, alpha=0.5), geom)
    assert c == 0.75
    assert ok
    assert abs(depth - 0.03596025905647261) < 1e-15
    assert abs(depth + (0.5 / 4.0) * np.log(0.75)) < 1e-15
    # fully diffuse: c = 0, infinite depth
    c, depth, ok = beta_constants(
        PartlyDiffuseWall(diffuse=k, alpha=0.0), geom)
    assert c == 0.0 and np.isinf(depth) and ok
    # pure reflection: c = 1, no strip
    c, depth, ok = beta_constants(
        PartlyDiffuseWall(diffuse=k, alpha=1.0), geom)
    assert c == 1.0 and depth == 0.0 and not ok
    # oscillation pushes c above 1: beta in [0.4, 0.6]
    bg = boundary_grid(geom, 64)
    kg = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0, grid=bg)
    beta = 0.5 + 0.1 * np.sin(3.0 * np.arange(64) * (2.0 * np.pi / 64))
    c, depth, ok = beta_constants(
        PartlyDiffuseWall(diffuse=kg, alpha=1.0 - beta), geom)
    assert abs(c - 1.08) < 1e-9
    assert not ok and depth == 0.0


def test_reflection_laws():
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0)
    n = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[1.0, 0.5], [-0.3, 2.0]])
    spec = PartlyDiffuseWall(diffuse=k, alpha=1.0, reflection="specular")
    got = spec.reflect(v, n)
    assert np.allclose(got, [[-1.0, 0.5], [-0.3, -2.0]])
    bb = PartlyDiffuseWall(diffuse=k, alpha=1.0, reflection="bounce_back")
    assert np.allclose(bb.reflect(v, n), -v)
    with pytest.raises(ValueError):
        PartlyDiffuseWall(diffuse=k, alpha=1.0, reflection="mirror")
    with pytest.raises(ValueError):
        PartlyDiffuseWall(diffuse=k, alpha=1.5)


def test_resample_from_uniforms_invariants():
    from gapkin import rng
    geom = DomainGeometry((1.0, 1.0))
    k = DiffuseKernel(sm=SM2, kind="maxwell", theta=1.0)
    n = 4000
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    pts = geom.boundary_point(th)
    normals = geom.normal(pts)
    v_in = 1.5 * normals        # arriving head-on
    U = rng.event_uniforms(3, "test.resample", np.arange(n), 0, 4)
    v_out, n_refl, n_tang = resample_from_uniforms(k, pts, normals, v_in, U)
    assert n_refl == 0 and n_tang == 0
    speeds = np.linalg.norm(v_out, axis=-1)
    assert np.all((speeds >= 0.5) & (speeds <= 3.0))
    # outgoing directions point into the domain
    assert np.all(np.sum(v_out * normals, axis=-1) < 0)
    # deterministic reflection branch fires exactly on U[:, 0] < alpha
    pd = PartlyDiffuseWall(diffuse=k, alpha=0.3, reflection="specular")
    v_out, n_refl, _ = resample_from_uniforms(pd, pts, normals, v_in, U)
    assert n_refl == int(np.count_nonzero(U[:, 0] < 0.3))
    refl = U[:, 0] < 0.3
    assert np.allclose(v_out[refl], -v_in[refl])   # head-on specular reverses
