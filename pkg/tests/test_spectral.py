import numpy as np
import pytest

from gapkin import spectral
from gapkin.geometry import DomainGeometry, chord_length
from gapkin.velocity import SpeedMeasure
from gapkin.wall import DiffuseKernel, PartlyDiffuseWall, beta_constants, \
    maxwell_density

GEOM = DomainGeometry((1.0, 1.0))
SM = SpeedMeasure(0.5, 3.0, 2)
KERNEL = DiffuseKernel(sm=SM, kind="maxwell", theta=1.0)


def grids96():
    return spectral.operator_grids(GEOM, SM, boundary_nodes=96,
                                   speed_nodes=16)


def test_speed_grid_moment_sums():
    sg = spectral.speed_grid(SM, 32)
    assert abs(np.sum(sg.flux) - (27.0 - 0.125) / 3.0) < 1e-12
    assert abs(np.sum(sg.coarea) - (9.0 - 0.25) / 2.0) < 1e-12


def test_w0_is_stochastic_with_perron_one():
    op = spectral.assemble_W(0.0, GEOM, SM, KERNEL, grids96())
    assert abs(op.norm_L1() - 1.0) < 1e-12
    assert op.column_mass_defect() < 1e-12
    mu, vec = op.leading_eig()
    assert abs(mu - 1.0) < 1e-12
    assert np.min(vec.real) > 0
    assert np.max(np.abs(vec.imag)) == 0


def test_operator_norm_contracts_for_positive_re():
    n0 = spectral.assemble_W(0.0, GEOM, SM, KERNEL, grids96()).norm_L1()
    n5 = spectral.assemble_W(0.5, GEOM, SM, KERNEL, grids96()).norm_L1()
    n10 = spectral.assemble_W(1.0, GEOM, SM, KERNEL, grids96()).norm_L1()
    assert n0 > n5 > n10 > 0
    assert n5 < 1.0
    # powers contract geometrically
    op = spectral.assemble_W(0.5, GEOM, SM, KERNEL, grids96())
    assert op.norm_L1(power=3) <= op.norm_L1() ** 3 + 1e-12


def test_full_trace_oracle_matches_reduced_operator():
    for lam, tol in ((0.0, 1e-10), (0.4, 5e-4)):
        full = spectral.assemble_MH_full(lam, GEOM, SM, KERNEL,
                                         nodes=64, speed_nodes=12)
        red = spectral.assemble_W(lam, GEOM, SM, KERNEL,
                                  boundary_nodes=64, speed_nodes=12)
        mf, _ = full.leading_eig()
        mr, _ = red.leading_eig()
        assert abs(complex(mf) - complex(mr)) < tol


def test_resolvent_series_sums_to_one_over_lambda():
    # mass conservation: the free flight plus all rebound generations of a
    # unit-mass initial density integrate e^(-lam t) to exactly 1/lam
    lam = 1.0
    grids = grids96()
    phase_mass = GEOM.volume * SM.total_mass()

    def f(x, v):
        return np.ones(np.asarray(x).shape[:-1]) / phase_mass

    def g(x, v):
        return np.ones(np.asarray(x).shape[:-1])

    grid, sg = grids.boundary, grids.speed
    tab = spectral.pair_tables(grid, grids.subnodes)
    Jw = tab.e0() * grid.weights[None, :]
    L = chord_length(grid.nodes[:, None, :], grid.nodes[None, :, :])
    # chordwise int_0^L (1 - e^(-lam (L-s)/rho)) / lam ds, closed form
    rho = sg.rho[:, None, None]
    inner = L / lam - (rho / lam ** 2) * (1.0 - np.exp(-lam * L / rho))
    free = float(np.einsum("l,j,ji,lji->", sg.coarea, grid.weights, Jw,
                           inner)) / phase_mass
    total = free
    for n in range(60):
        term = spectral.resolvent_term(n, lam, f, g, GEOM, SM, KERNEL,
                                       grids).real
        total += term
        if abs(term) < 1e-12:
            break
    assert abs(total - 1.0 / lam) < 1e-3 / lam


def test_resolvent_term_zero_density_and_bound():
    grids = grids96()

    def zero(x, v):
        return np.zeros(np.asarray(x).shape[:-1])

    def g(x, v):
        return np.full(np.asarray(x).shape[:-1], 2.0)

    assert spectral.resolvent_term(1, 0.7, zero, g, GEOM, SM, KERNEL,
                                   grids) == 0.0

    def f(x, v):
        return np.ones(np.asarray(x).shape[:-1])

    f_l1 = GEOM.volume * SM.total_mass()
    for n in (0, 2):
        term = spectral.resolvent_term(n, 0.7, f, g, GEOM, SM, KERNEL, grids)
        assert abs(term) <= spectral.resolvent_term_bound(0.7, 2.0, f_l1)
    with pytest.raises(spectral.LaplaceDomainError):
        spectral.resolvent_term_bound(-0.1, 1.0, 1.0)


def test_invariant_density_is_maxwell_and_uniform():
    grids = grids96()
    psi, inv, residual = spectral.invariant_density(grids, KERNEL, GEOM, SM)
    assert residual < 1e-10
    assert abs(inv.total_mass() - 1.0) < 1e-12
    # x-independent: every boundary node carries the same speed profile
    assert np.max(np.std(psi, axis=0) / np.mean(psi, axis=0)) < 1e-10
    # Maxwell in speed: profile ratio to the closed form is constant
    ratio = psi[0] / maxwell_density(inv.sgrid.rho, 1.0, 2)
    assert np.max(np.abs(ratio / ratio[0] - 1.0)) < 1e-10


def test_invariant_evaluate_shapes_and_lookup():
    grids = grids96()
    _, inv, _ = spectral.invariant_density(grids, KERNEL, GEOM, SM)
    x = np.array([0.3, 0.1])
    v = np.array([0.8, 0.0])
    val = inv.evaluate(x, v)
    assert np.ndim(val) == 0 or val.shape == (1,)
    xs = np.tile(x, (5, 1))
    vs = np.tile(v, (5, 1))
    flat = inv.evaluate(xs, vs)
    assert flat.shape == (5,)
    batch = inv.evaluate(xs.reshape(5, 1, 2), vs.reshape(5, 1, 2))
    assert batch.shape == (5, 1)
    assert np.allclose(flat, np.ravel(batch))
    # x-independence of the interior lift
    other = inv.evaluate(np.array([[-0.2, -0.4]]), v[None, :])
    assert np.allclose(other, flat[0])


def test_invariant_sampler_moments():
    grids = grids96()
    _, inv, _ = spectral.invariant_density(grids, KERNEL, GEOM, SM)
    pos, vel = inv.sample(20000, seed=5)
    assert np.all(GEOM.implicit(pos) <= 1e-12)
    speeds = np.linalg.norm(vel, axis=-1)
    assert np.all((speeds >= 0.5) & (speeds <= 3.0))
    # positions are uniform: E |x|^2 = 1/2 on the unit disk
    assert abs(np.mean(np.sum(pos ** 2, axis=-1)) - 0.5) < 0.01
    # speed marginal rho M(rho) on [0.5, 3]
    rho, q = SM.radial_quad(96)
    wgt = rho * maxwell_density(rho, 1.0, 2)
    mean_rho = np.sum(q * rho * wgt) / np.sum(q * wgt)
    assert abs(np.mean(speeds) - mean_rho) < 0.02


def test_scan_reference_strip():
    scan = spectral.scan_spectrum(GEOM, SM, KERNEL, re_range=(-1.5, 0.25),
                                  im_max=3.0, resolution=(13, 9), nodes=64)
    assert scan.root_count == scan.refined_root_count
    assert not scan.gap_is_lower_bound
    # the stationary root sits at the origin
    assert min(abs(r["lam"]) for r in scan.roots) < 1e-9
    # leading nonzero pair and the next real root
    assert abs(scan.gap - 1.1267) < 5e-3
    assert min(abs(r["lam"] - (-1.1267 + 1.5578j)) for r in scan.roots) < 5e-3
    assert min(abs(r["lam"] - (-1.3288)) for r in scan.roots) < 5e-3
    assert all(r["residual"] < 1e-8 for r in scan.roots)


def test_scan_small_strip_gap_is_lower_bound():
    scan = spectral.scan_spectrum(GEOM, SM, KERNEL, re_range=(-0.2, 0.1),
                                  im_max=0.3, resolution=(7, 5), nodes=48)
    assert scan.root_count == 1
    assert abs(scan.roots[0]["lam"]) < 1e-9
    assert scan.gap_is_lower_bound
    assert scan.gap == 0.2


def test_scan_partly_diffuse_specular_disk():
    wall = PartlyDiffuseWall(diffuse=KERNEL, alpha=0.5, reflection="specular")
    _, lb, ok = beta_constants(wall, GEOM)
    assert ok
    scan = spectral.scan_spectrum(GEOM, SM, wall, re_range=(-0.9 * lb, 0.02),
                                  im_max=0.1, resolution=(5, 5), nodes=48,
                                  speed_nodes=16, subnodes=3)
    assert scan.root_count == 1
    # the discretized stationary root sits within the zero tolerance
    assert abs(scan.roots[0]["lam"]) < 1e-4
    assert scan.gap_is_lower_bound
    # shrinking the zero tolerance reclassifies it as a nonzero root
    strict = spectral.scan_spectrum(GEOM, SM, wall,
                                    re_range=(-0.9 * lb, 0.02), im_max=0.1,
                                    resolution=(5, 5), nodes=48,
                                    speed_nodes=16, subnodes=3,
                                    zero_tol=1e-12)
    assert not strict.gap_is_lower_bound
    assert strict.gap < 1e-4


def test_scan_partly_diffuse_bounce_back_ellipse():
    ell = DomainGeometry((1.3, 0.7))
    wall = PartlyDiffuseWall(diffuse=KERNEL, alpha=0.5,
                             reflection="bounce_back")
    _, lb, _ = beta_constants(wall, ell)
    scan = spectral.scan_spectrum(ell, SM, wall, re_range=(-0.9 * lb, 0.02),
                                  im_max=0.05, resolution=(3, 3), nodes=48,
                                  speed_nodes=16, subnodes=3)
    assert scan.root_count == 1
    assert abs(scan.roots[0]["lam"]) < 1e-6


def test_scan_refusals():
    wall = PartlyDiffuseWall(diffuse=KERNEL, alpha=1.0, reflection="specular")
    with pytest.raises(spectral.SpectralError):
        spectral.scan_spectrum(GEOM, SM, wall, re_range=(-0.02, 0.02),
                               im_max=0.1, resolution=(3, 3), nodes=32)
    ell = DomainGeometry((1.3, 0.7))
    wall = PartlyDiffuseWall(diffuse=KERNEL, alpha=0.5, reflection="specular")
    with pytest.raises(spectral.SpectralError):
        spectral.scan_spectrum(ell, SM, wall, re_range=(-0.02, 0.02),
                               im_max=0.1, resolution=(3, 3), nodes=32)


def test_decay_bound_products_along_vertical_line():
    frozen = {1.0: 0.4890414615, 10.0: 0.8595780292,
              100.0: 0.4645072371, 1000.0: 0.4019330544}
    for eta, want in frozen.items():
        lam = 1.0 + 1j * eta
        got = spectral.decay_bound_n2(lam, GEOM, SM, KERNEL) * abs(lam)
        assert abs(got - want) < 1e-6


def test_tail_bound_inequality():
    op = spectral.assemble_W(1.0 + 5.0j, GEOM, SM, KERNEL,
                             boundary_nodes=128, speed_nodes=20)
    for N in (4, 6):
        chk = spectral.tail_bound_check(op, N, 0.926)
        assert chk["holds"]
        assert 0 < chk["lhs"] < chk["rhs"]
        assert chk["N"] == N
    # the tail norm itself is below the single-power norm
    assert op.tail_sum_norm(6) < op.norm_L1()


def test_truncated_kernel_norm_vanishes_quadratically():
    vals = [spectral.truncated_kernel_norm(e, GEOM, alpha=1.0)
            for e in (0.2, 0.1, 0.05)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert abs(vals[0] / vals[1] - 4.0) < 0.1
    assert abs(vals[1] / vals[2] - 4.0) < 0.1
    ball = DomainGeometry((1.0, 1.0, 1.0))
    v1 = spectral.truncated_kernel_norm(0.1, ball, alpha=1.0)
    v2 = spectral.truncated_kernel_norm(0.05, ball, alpha=1.0)
    assert abs(v1 / v2 - 4.0) < 0.01
