"""Diffuse and partly diffuse wall reflection.

The diffuse law re-emits a particle hitting the wall at x with velocity
density  k(x, |v|, |v_in|) |v.n(x)| m(dv)  over inward velocities.  Shipped
kernels have the separable form k(x, rho, rho_in) = G(x, rho) / gamma(x)
(independent of the incoming speed), with G a Maxwellian of wall temperature
theta(x) or a uniform profile, and gamma the flux normalization making the
law stochastic.  A partly diffuse wall reflects with probability alpha(x)
(specular or bounce-back) and re-emits diffusely otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .velocity import (InverseCdfTable, SpeedMeasure, hemisphere_flux,
                       cosine_direction_from_uniforms)

log = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-12


class DegenerateKernelError(ValueError):
    pass


def maxwell_density(rho, theta, dim):
    """Gaussian velocity density (2 pi theta)^(-d/2) exp(-rho^2 / 2 theta)."""
    rho = np.asarray(rho, dtype=float)
    return (2.0 * np.pi * theta) ** (-0.5 * dim) * np.exp(-rho * rho / (2.0 * theta))


@dataclass
class DiffuseKernel:
    """Separable diffuse wall kernel G(x, rho) / gamma(x).

    kind is "maxwell" (G = Maxwellian at temperature theta) or "uniform"
    (G = 1).  theta is a scalar, or an array of per-node values tied to a
    boundary grid (piecewise constant on the grid cells).
    """

    sm: SpeedMeasure
    kind: str = "maxwell"
    theta: object = 1.0
    grid: object = None                     # required for per-node theta
    _tables: dict = field(default_factory=dict, repr=False)
    _gamma_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("maxwell", "uniform"):
            raise ValueError(f"unknown wall kernel {self.kind!r}")
        if np.ndim(self.theta) > 0 and self.grid is None:
            raise ValueError("per-node theta requires a boundary grid")

    @property
    def constant_theta(self) -> bool:
        return self.kind == "uniform" or np.ndim(self.theta) == 0

    def theta_at(self, x):
        """Wall temperature at boundary points (nearest grid cell for fields)."""
        if np.ndim(self.theta) == 0:
            shape = np.asarray(x).shape[:-1]
            return np.broadcast_to(float(self.theta), shape)
        idx = self.grid.nearest_node(x)
        return np.asarray(self.theta)[idx]

    def emission_profile(self, x, rho):
        """G(x, rho); broadcasts x points against speeds rho."""
        rho = np.asarray(rho, dtype=float)
        if self.kind == "uniform":
            return np.ones(rho.shape)
        th = self.theta_at(x)
        if np.ndim(th) > 0 and rho.ndim > 0:
            th = np.asarray(th)[..., None]
        return maxwell_density(rho, th, self.sm.dim)

    def emission_profile_deriv(self, x, rho):
        """d/drho of G(x, rho)."""
        rho = np.asarray(rho, dtype=float)
        if self.kind == "uniform":
            return np.zeros(rho.shape)
        th = self.theta_at(x)
        if np.ndim(th) > 0 and rho.ndim > 0:
            th = np.asarray(th)[..., None]
        return -(rho / th) * maxwell_density(rho, th, self.sm.dim)

    def _theta_key(self, x):
        return float(self.theta) if np.ndim(self.theta) == 0 else \
            float(self.theta_at(np.atleast_2d(x))[0])


def gamma(wall, x):
    """Flux normalization gamma(x) = kappa_d int rho^d weight(rho) G(x, rho) drho.

    Vectorized over boundary points.  Raises DegenerateKernelError if the
    value falls below GAMMA_FLOOR anywhere.
    """
    sm = wall.sm
    rho, w = sm.radial_quad(max(sm.nquad, 96))
    scalar = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    G = wall.emission_profile(x, rho[None, :])
    G = np.broadcast_to(G, (x.shape[0], rho.size))
    vals = hemisphere_flux(sm.dim) * np.sum(
        w * rho ** sm.dim * sm.weight(rho) * G, axis=-1)
    if np.any(vals < GAMMA_FLOOR):
        raise DegenerateKernelError("flux normalization below floor; "
                                    "kernel is degenerate at some wall point")
    return float(vals[0]) if scalar else vals


def normalized_eval(wall, x, rho, rho_in=None):
    """Normalized kernel k(x, rho, rho_in) = G(x, rho) / gamma(x).

    The shipped kernels do not depend on the incoming speed rho_in; the
    argument is kept for the general contract.  For a single point x the
    result has the shape of rho; for a batch of points x the point axis
    must broadcast against rho.
    """
    scalar_x = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.atleast_1d(gamma(wall, x))
    G = wall.emission_profile(x, np.asarray(rho, dtype=float))
    if scalar_x:
        return G / g[0]
    g = g.reshape(g.shape + (1,) * (np.ndim(G) - 1))
    return G / g


def speed_table(wall, x):
    """Inverse-CDF table for the outgoing speed density rho^d weight(rho) G(x, rho)."""
    key = wall._theta_key(x) if wall.kind == "maxwell" else "uniform"
    tab = wall._tables.get(key)
    if tab is None:
        sm = wall.sm
        xx = np.atleast_2d(np.asarray(x, dtype=float))[:1]

        def h(rho):
            G = np.asarray(wall.emission_profile(xx, rho[None, :]))[0]
            return rho ** sm.dim * sm.weight(rho) * G

        tab = InverseCdfTable.from_density(h, sm.r0, sm.rmax, sm.cdf_resolution)
        wall._tables[key] = tab
    return tab


# ---------------------------------------------------------------------------
# integrability report for the kernel/weight pairing


def validate_kernel_integrability(wall, growth_tol=1e-9):
    """Check the kernel/speed-weight integrability conditions on the
    truncated annulus.

    The limit condition at infinite speed is replaced by a truncation-growth
    test: the integrand rho^(d+2) k(y,s,rho) k(y,rho,s') weight(rho) evaluated
    with the analytic profile extensions must not grow between rho = rmax and
    rho = 2*rmax.  The remaining conditions (finiteness of the slow-speed
    kernel value, of the weighted derivative integral, and of the
    incoming-slot derivative product) are reported as computed values.
    Returns a report dict with per-check entries and an overall flag.
    """
    sm = wall.sm
    d = sm.dim
    thetas = [float(wall.theta)] if np.ndim(wall.theta) == 0 else \
        sorted(set(float(t) for t in np.asarray(wall.theta).ravel()))
    if wall.kind == "uniform":
        thetas = [None]
    checks = []

    def tail_integrand(rho, th):
        G = 1.0 if th is None else maxwell_density(rho, th, d)
        return rho ** (d + 2) * G * sm.weight(rho)

    worst_ratio = 0.0
    for th in thetas:
        v1 = tail_integrand(sm.rmax, th)
        v2 = tail_integrand(2.0 * sm.rmax, th)
        worst_ratio = max(worst_ratio, v2 / max(v1, 1e-300))
    checks.append(dict(name="tail_decay_growth_ratio", value=worst_ratio,
                       passed=bool(worst_ratio <= 1.0 + growth_tol)))

    # slow-speed kernel value sup k(y, r0, .)
    rho, w = sm.radial_quad(96)
    sup_k = 0.0
    sup_int3 = 0.0
    sup_int4 = 0.0
    for th in thetas:
        G0 = 1.0 if th is None else maxwell_density(sm.r0, th, d)
        Gr = np.ones_like(rho) if th is None else maxwell_density(rho, th, d)
        dGr = np.zeros_like(rho) if th is None else -(rho / th) * Gr
        gam = hemisphere_flux(d) * float(np.sum(w * rho ** d * sm.weight(rho) * Gr))
        if gam < GAMMA_FLOOR:
            raise DegenerateKernelError("flux normalization below floor")
        k = Gr / gam
        dk = dGr / gam
        sup_k = max(sup_k, G0 / gam)
        integ = rho ** (d + 1) * (rho * k * np.abs(sm.weight_deriv(rho))
                                  + rho * sm.weight(rho) * np.abs(dk)
                                  + k * sm.weight(rho))
        sup_int3 = max(sup_int3, float(np.sum(w * integ)))
        moment = float(np.sum(w * rho ** (d + 2) * sm.weight(rho) * k))
        # separable kernels have zero derivative in the incoming-speed slot
        dk_in_sup = 0.0
        sup_int4 = max(sup_int4, moment * dk_in_sup)
    checks.append(dict(name="slow_speed_kernel_sup", value=sup_k,
                       passed=bool(np.isfinite(sup_k))))
    checks.append(dict(name="weighted_derivative_integral", value=sup_int3,
                       passed=bool(np.isfinite(sup_int3))))
    checks.append(dict(name="incoming_slot_derivative_product", value=sup_int4,
                       passed=bool(np.isfinite(sup_int4))))
    return dict(checks=checks, admissible=all(c["passed"] for c in checks))


# ---------------------------------------------------------------------------
# partly diffuse wall


@dataclass
class PartlyDiffuseWall:
    """Convex combination of a deterministic reflection law (probability
    alpha(x)) and the diffuse law (probability 1 - alpha(x))."""

    diffuse: DiffuseKernel
    alpha: object = 0.0                 # scalar or per-node array
    reflection: str = "specular"        # or "bounce_back"

    def __post_init__(self):
        if self.reflection not in ("specular", "bounce_back"):
            raise ValueError(f"unknown reflection law {self.reflection!r}")
        a = np.asarray(self.alpha, dtype=float)
        if np.any(a < 0) or np.any(a > 1):
            raise ValueError("alpha must lie in [0, 1]")
        if np.ndim(self.alpha) > 0 and self.diffuse.grid is None:
            raise ValueError("per-node alpha requires a boundary grid")

    @property
    def sm(self):
        return self.diffuse.sm

    def alpha_at(self, x):
        if np.ndim(self.alpha) == 0:
            return np.broadcast_to(float(self.alpha), np.asarray(x).shape[:-1])
        idx = self.diffuse.grid.nearest_node(x)
        return np.asarray(self.alpha)[idx]

    def reflect(self, v_in, normals):
        """Inverse image of the reflection map, applied pathwise: specular
        keeps the tangential component, bounce-back reverses the velocity."""
        if self.reflection == "bounce_back":
            return -v_in
        vn = np.sum(v_in * normals, axis=-1, keepdims=True)
        return v_in - 2.0 * vn * normals


def beta_constants(wall, geom):
    """Admissibility constants of a partly diffuse wall.

    With beta = 1 - alpha the contraction factor is
    c_beta = (1 + osc(beta))^2 - (sup beta)^2 and the certified root-free
    strip depth is lambda_beta = -(r0 / 2 diameter) * log(c_beta).
    Returns (c_beta, lambda_beta, admissible); admissible is c_beta < 1,
    in which case the discrete-spectrum alternative holds on the strip
    Re lam > -lambda_beta.  c_beta <= 0 yields an infinite depth; c_beta
    >= 1 yields depth 0 and admissible False (no exception).
    """
    beta = 1.0 - np.atleast_1d(np.asarray(wall.alpha, dtype=float))
    osc = float(beta.max() - beta.min())
    sup = float(beta.max())
    c = (1.0 + osc) ** 2 - sup ** 2
    r0 = wall.sm.r0
    D = geom.diameter
    if c <= 0.0:
        depth = np.inf
    elif c >= 1.0:
        depth = 0.0
    else:
        depth = -(r0 / (2.0 * D)) * np.log(c)
    return c, depth, bool(c < 1.0)


# ---------------------------------------------------------------------------
# outgoing velocity resampling


def resample_from_uniforms(wall, points, normals, v_in, U):
    """Vectorized wall interaction.

    U holds four uniform draws per event: reflection branch, speed, and two
    direction draws.  Tangential arrivals (|v_in.n| below 1e-12 relative)
    take the diffuse branch and are counted in the returned diagnostics.
    Returns (v_out, n_reflected, n_tangential).
    """
    points = np.atleast_2d(points)
    normals = np.atleast_2d(normals)
    v_in = np.atleast_2d(v_in)
    n, d = v_in.shape
    dk = wall if isinstance(wall, DiffuseKernel) else wall.diffuse
    pd = wall if isinstance(wall, PartlyDiffuseWall) else None

    speed_in = np.linalg.norm(v_in, axis=-1)
    vn = np.sum(v_in * normals, axis=-1)
    tangential = np.abs(vn) < 1e-12 * np.maximum(speed_in, 1.0)
    n_tang = int(np.count_nonzero(tangential))
    if n_tang:
        log.warning("%d tangential wall arrivals routed to the diffuse branch",
                    n_tang)

    if pd is not None and np.ndim(pd.alpha) == 0 and float(pd.alpha) == 0.0:
        pd = None
    if pd is not None:
        alpha = pd.alpha_at(points)
        refl = (U[:, 0] < alpha) & ~tangential
    else:
        refl = np.zeros(n, dtype=bool)

    v_out = np.empty_like(v_in)
    if np.any(refl):
        v_out[refl] = pd.reflect(v_in[refl], normals[refl])
    diff = ~refl
    if np.any(diff):
        if dk.constant_theta:
            tab = speed_table(dk, points[:1])
            speeds = tab.sample(U[diff, 1])
        else:
            idx = dk.grid.nearest_node(points[diff])
            speeds = np.empty(int(np.count_nonzero(diff)))
            for node in np.unique(idx):
                sel = idx == node
                tab = speed_table(dk, dk.grid.nodes[node][None, :])
                speeds[sel] = tab.sample(U[diff, 1][sel])
        inward = -normals[diff]
        if d == 2:
            dirs = cosine_direction_from_uniforms(inward, U[diff, 2])
        else:
            dirs = cosine_direction_from_uniforms(inward, U[diff, 2], U[diff, 3])
        v_out[diff] = speeds[:, None] * dirs
    return v_out, int(np.count_nonzero(refl)), n_tang


def resample_outgoing(wall, x, v_in, rng, geom=None):
    """Draw one outgoing velocity at wall point x for incoming velocity v_in.

    Diffuse branch: speed density proportional to
    k(x, rho, |v_in|) rho^d weight(rho), direction cosine-law inward.
    For a PartlyDiffuseWall the deterministic branch fires with probability
    alpha(x).  geom is needed to evaluate the normal; if omitted, the wall's
    grid geometry is used.
    """
    if geom is None:
        dk = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall
        if dk.grid is None:
            raise ValueError("geom is required when the wall has no grid")
        geom = dk.grid.geom
    g = geom
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v_in = np.atleast_2d(np.asarray(v_in, dtype=float))
    U = rng.random((x.shape[0], 4))
    v_out, _, _ = resample_from_uniforms(wall, x, g.normal(x), v_in, U)
    return v_out[0] if v_out.shape[0] == 1 else v_out
