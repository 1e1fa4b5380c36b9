"""Speed measure and velocity sampling.

Velocities live on the annulus r0 <= |v| <= rmax with a radially symmetric
reference measure  m(dv) = weight(|v|) dv.  In polar form the speed marginal
is |S^(d-1)| rho^(d-1) weight(rho) drho.  The module provides the weight
profiles, polar integration, inverse-CDF speed sampling, and cosine-law
(Lambertian) hemisphere direction sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


def sphere_area(d):
    """|S^(d-1)|: 2*pi for d=2, 4*pi for d=3."""
    return 2.0 * np.pi if d == 2 else 4.0 * np.pi


def hemisphere_flux(d):
    """kappa_d = int_{sigma.n>0} sigma.n dsigma: 2 for d=2, pi for d=3."""
    return 2.0 if d == 2 else np.pi


@dataclass(frozen=True)
class SpeedMeasure:
    """Truncated speed annulus [r0, rmax] with a radial weight profile.

    weight_type is one of "power" (rho^m), "stretched_exp" (exp(a*rho^s)),
    "gaussian_growth" (exp(b*rho^2)); "constant" is power with m = 0.
    """

    r0: float
    rmax: float
    dim: int
    weight_type: str = "constant"
    weight_params: tuple = ()
    nquad: int = 64
    cdf_resolution: int = 4096

    def __post_init__(self):
        if not (0.0 < self.r0 < self.rmax):
            raise ValueError("need 0 < r0 < rmax")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.weight_type not in ("constant", "power", "stretched_exp",
                                    "gaussian_growth"):
            raise ValueError(f"unknown weight profile {self.weight_type!r}")

    # -- weight profile ------------------------------------------------------

    def weight(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.weight_type in ("constant",):
            return np.ones_like(rho)
        if self.weight_type == "power":
            (m,) = self.weight_params
            return rho ** m
        if self.weight_type == "stretched_exp":
            a, s = self.weight_params
            return np.exp(a * rho ** s)
        b, = self.weight_params
        return np.exp(b * rho * rho)

    def weight_deriv(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.weight_type in ("constant",):
            return np.zeros_like(rho)
        if self.weight_type == "power":
            (m,) = self.weight_params
            return m * rho ** (m - 1.0) if m != 0 else np.zeros_like(rho)
        if self.weight_type == "stretched_exp":
            a, s = self.weight_params
            return a * s * rho ** (s - 1.0) * np.exp(a * rho ** s)
        b, = self.weight_params
        return 2.0 * b * rho * np.exp(b * rho * rho)

    # -- quadrature ----------------------------------------------------------

    def radial_quad(self, n=None):
        """Gauss-Legendre nodes/weights for plain drho on [r0, rmax]."""
        n = n or self.nquad
        gx, gw = leggauss(n)
        mid = 0.5 * (self.r0 + self.rmax)
        hw = 0.5 * (self.rmax - self.r0)
        return mid + hw * gx, hw * gw

    def total_mass(self):
        """m(V) = |S^(d-1)| int rho^(d-1) weight drho."""
        rho, w = self.radial_quad()
        return sphere_area(self.dim) * float(
            np.sum(w * rho ** (self.dim - 1) * self.weight(rho)))

    def mean_speed_time(self):
        """Average of 1/|v| under the speed marginal (for flight-time scales)."""
        rho, w = self.radial_quad()
        z = rho ** (self.dim - 1) * self.weight(rho)
        return float(np.sum(w * z / rho) / np.sum(w * z))


def polar_integrate(sm, psi, angular=128):
    """Integrate psi(v) against m(dv) over the annulus in polar form.

    psi takes an (..., d) velocity array.  Uses the speed marginal
    |S^(d-1)| rho^(d-1) weight(rho) drho and a uniform (d=2) or Gauss-in-cos
    times uniform (d=3) direction rule.
    """
    rho, wr = sm.radial_quad()
    if sm.dim == 2:
        th = (np.arange(angular) + 0.5) * (2.0 * np.pi / angular)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        wd = np.full(angular, 2.0 * np.pi / angular)
    else:
        npol = max(8, angular // 4)
        gu, wu = leggauss(npol)
        phi = (np.arange(angular) + 0.5) * (2.0 * np.pi / angular)
        U, PH = np.meshgrid(gu, phi, indexing="ij")
        st = np.sqrt(1.0 - U**2)
        dirs = np.stack([st * np.cos(PH), st * np.sin(PH), U], axis=-1).reshape(-1, 3)
        wd = (np.broadcast_to(wu[:, None], U.shape) * (2.0 * np.pi / angular)).ravel()
    V = rho[:, None, None] * dirs[None, :, :]
    vals = psi(V)
    rad = wr * rho ** (sm.dim - 1) * sm.weight(rho)
    return float(np.einsum("r,a,ra->", rad, wd, vals))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class InverseCdfTable:
    """Tabulated inverse CDF on [r0, rmax] with linear interpolation."""

    grid: np.ndarray
    cdf: np.ndarray

    @classmethod
    def from_density(cls, h, r0, rmax, resolution=4096):
        grid = np.linspace(r0, rmax, resolution)
        vals = np.asarray(h(grid), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("density must be finite and nonnegative")
        c = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1])
                                             * np.diff(grid))])
        if c[-1] <= 0:
            raise ValueError("density integrates to zero")
        return cls(grid, c / c[-1])

    def sample(self, u):
        """Map uniforms in [0,1) through the inverse CDF."""
        return np.interp(u, self.cdf, self.grid)


def sample_speed(sm, h, rng, n=1, table=None):
    """Draw n speeds with density proportional to h(rho) on [r0, rmax].

    rng is a numpy Generator.  A prebuilt InverseCdfTable can be passed to
    avoid rebuilding it in hot loops.
    """
    if table is None:
        table = InverseCdfTable.from_density(h, sm.r0, sm.rmax, sm.cdf_resolution)
    return table.sample(rng.random(n))


def cosine_direction_from_uniforms(normals, u1, u2=None):
    """Cosine-law directions sigma with sigma.n > 0 from uniform draws.

    d=2: the angle to the normal is arcsin(2u - 1).  d=3: cos(angle) = sqrt(u),
    azimuth 2*pi*u2.  Vectorized over rows of `normals`.
    """
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    d = normals.shape[-1]
    u1 = np.asarray(u1, dtype=float)
    if d == 2:
        th = np.arcsin(2.0 * u1 - 1.0)
        tang = np.stack([-normals[..., 1], normals[..., 0]], axis=-1)
        return (np.cos(th)[..., None] * normals + np.sin(th)[..., None] * tang)
    a = np.where(np.abs(normals[..., [0]]) < 0.9,
                 np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    t1 = np.cross(normals, a)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(normals, t1)
    ct = np.sqrt(u1)
    st = np.sqrt(np.maximum(1.0 - u1, 0.0))
    phi = 2.0 * np.pi * np.asarray(u2, dtype=float)
    return (ct[..., None] * normals
            + (st * np.cos(phi))[..., None] * t1
            + (st * np.sin(phi))[..., None] * t2)


def sample_cosine_direction(normal, dim, rng, n=1):
    """Draw n unit directions with density |sigma.n| / kappa_d on the
    half-sphere sigma.n > 0."""
    normals = np.broadcast_to(np.asarray(normal, dtype=float), (n, dim))
    if dim == 2:
        return cosine_direction_from_uniforms(normals, rng.random(n))
    return cosine_direction_from_uniforms(normals, rng.random(n), rng.random(n))


def sample_isotropic_direction(dim, rng, n=1):
    """Uniform directions on the full unit sphere."""
    if dim == 2:
        th = 2.0 * np.pi * rng.random(n)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    u = 2.0 * rng.random(n) - 1.0
    phi = 2.0 * np.pi * rng.random(n)
    st = np.sqrt(np.maximum(1.0 - u * u, 0.0))
    return np.stack([st * np.cos(phi), st * np.sin(phi), u], axis=-1)
