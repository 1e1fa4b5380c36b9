"""Convex domain geometry.

Shapes are quadrics (disk, ball, axis-aligned ellipse), described by the
implicit equation sum_k (x_k / s_k)^2 = 1.  The module provides ray exit
times, outward normals, boundary quadrature grids, the boundary pair form
factor that converts hemisphere direction integrals into boundary integrals,
and the curvature (flatness) constant of the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

# Residual tolerance on the implicit boundary equation after an exit-time solve.
EXIT_RESIDUAL_TOL = 1e-12
# Launches from the boundary with |v_hat . n| below this are treated as tangential.
TANGENT_TOL = 1e-12


class GeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class DomainGeometry:
    """Bounded convex quadric domain { x : sum (x_k/s_k)^2 < 1 }."""

    scales: tuple

    @property
    def dim(self) -> int:
        return len(self.scales)

    @property
    def diameter(self) -> float:
        return 2.0 * max(self.scales)

    @property
    def volume(self) -> float:
        s = np.prod(self.scales)
        return float(np.pi * s if self.dim == 2 else 4.0 * np.pi * s / 3.0)

    @property
    def is_round(self) -> bool:
        return len(set(self.scales)) == 1

    # -- implicit form ------------------------------------------------------

    def implicit(self, x):
        """Q(x) = |x/s|^2 - 1, negative inside, zero on the boundary."""
        x = np.asarray(x, dtype=float)
        s = np.asarray(self.scales)
        return np.sum((x / s) ** 2, axis=-1) - 1.0

    def contains(self, x, tol=0.0):
        return self.implicit(x) < tol

    def normal(self, x):
        """Outward unit normal at boundary points (gradient direction of Q)."""
        x = np.asarray(x, dtype=float)
        s2 = np.asarray(self.scales) ** 2
        g = x / s2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def snap(self, x):
        """Radially project points onto the boundary (used after wall hits)."""
        x = np.asarray(x, dtype=float)
        s = np.asarray(self.scales)
        r = np.sqrt(np.sum((x / s) ** 2, axis=-1))
        return x / r[..., None]

    # -- ray exit times ------------------------------------------------------

    def exit_time(self, x, v, forward=True):
        """Time until the ray x + t*v (t > 0) leaves the domain.

        Vectorized over leading axes.  Points are accepted inside or on the
        boundary; a boundary start moving outward or tangentially exits at
        time 0.  The quadratic root is polished with one Newton step so the
        hit point satisfies |Q| <= EXIT_RESIDUAL_TOL.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not forward:
            v = -v
        s = np.asarray(self.scales)
        xs = x / s
        vs = v / s
        a = np.sum(vs * vs, axis=-1)
        b = np.sum(xs * vs, axis=-1)           # half the linear coefficient
        c = np.sum(xs * xs, axis=-1) - 1.0
        if np.any(c > 1e-9):
            raise GeometryError("exit_time called with a point outside the domain")
        disc = b * b - a * c
        t = (-b + np.sqrt(np.maximum(disc, 0.0))) / a
        # Newton polish on Q(x + t v); one step suffices from the exact root.
        q = a * t * t + 2.0 * b * t + c
        dq = 2.0 * (a * t + b)
        t = t - np.where(np.abs(dq) > 0, q / np.where(dq == 0, 1.0, dq), 0.0)
        t = np.maximum(t, 0.0)
        # Boundary starts: outward or tangential launches exit immediately.
        on_boundary = np.abs(c) <= 1e-14 + TANGENT_TOL
        vnorm = np.sqrt(np.sum(v * v, axis=-1))
        cosang = 2.0 * b / np.where(vnorm > 0, vnorm, 1.0)   # ~ v_hat . n scaled
        t = np.where(on_boundary & (cosang >= -TANGENT_TOL), 0.0, t)
        res = np.abs(a * t * t + 2.0 * b * t + c)
        if np.any(res > EXIT_RESIDUAL_TOL * 10):
            raise GeometryError("exit_time residual exceeded tolerance")
        return t

    # -- boundary parametrization (d = 2) -------------------------------------

    def boundary_point(self, t):
        """Boundary point for parameter t in [0, 2*pi) (d=2 shapes only)."""
        a, b = self.scales
        t = np.asarray(t, dtype=float)
        return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)

    def param_speed(self, t):
        a, b = self.scales
        t = np.asarray(t, dtype=float)
        return np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2)

    def boundary_param(self, x):
        """Parameter of a boundary point (d=2): angle of the scaled point."""
        x = np.asarray(x, dtype=float)
        a, b = self.scales
        return np.arctan2(x[..., 1] / b, x[..., 0] / a) % (2.0 * np.pi)

    def boundary_measure(self):
        """Total surface measure |dOmega| (perimeter or area)."""
        if self.dim == 3:
            return 4.0 * np.pi * self.scales[0] ** 2
        if self.is_round:
            return 2.0 * np.pi * self.scales[0]
        gx, gw = leggauss(64)
        t = (gx + 1.0) * np.pi
        return float(np.sum(gw * np.pi * self.param_speed(t)))


def make_geometry(kind, **kw):
    """Factory: disk(radius), ball(radius), ellipse(a, b)."""
    if kind == "disk":
        r = float(kw["radius"])
        return DomainGeometry((r, r))
    if kind == "ball":
        r = float(kw["radius"])
        return DomainGeometry((r, r, r))
    if kind == "ellipse":
        return DomainGeometry((float(kw["a"]), float(kw["b"])))
    raise ValueError(f"unknown domain type {kind!r}")


# ---------------------------------------------------------------------------
# boundary grids


@dataclass
class BoundaryGrid:
    """Quadrature grid on the boundary.

    nodes/normals/weights approximate the surface measure: sum(weights)
    equals |dOmega|.  For d=2 the grid is uniform in the curve parameter with
    nodes at cell centers; cell edges are kept so operators can integrate
    kernels over cells.  For d=3 (ball) the grid is Gauss in cos(theta) times
    uniform in the azimuth.
    """

    geom: DomainGeometry
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    params: np.ndarray = None          # d=2: cell-center parameters
    cell_edges: np.ndarray = None      # d=2: parameter cell edges, len n+1
    _caches: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.weights)

    def nearest_node(self, x):
        """Index of the grid node nearest to boundary points x (by parameter)."""
        if self.geom.dim == 2:
            t = self.geom.boundary_param(x)
            n = len(self)
            h = 2.0 * np.pi / n
            return (np.asarray(t / h, dtype=np.int64)) % n
        d2 = np.sum((np.asarray(x)[..., None, :] - self.nodes) ** 2, axis=-1)
        return np.argmin(d2, axis=-1)


def boundary_grid(geom, n, n_azimuth=None):
    """Build a boundary quadrature grid with n nodes (d=2) or
    n polar times n_azimuth nodes (d=3)."""
    if geom.dim == 2:
        h = 2.0 * np.pi / n
        edges = h * np.arange(n + 1)
        params = edges[:-1] + 0.5 * h
        nodes = geom.boundary_point(params)
        normals = geom.normal(nodes)
        if geom.is_round:
            weights = np.full(n, h * geom.scales[0])
        else:
            # integrate the parametrization speed over each cell
            gx, gw = leggauss(8)
            tq = params[:, None] + 0.5 * h * gx[None, :]
            weights = 0.5 * h * np.sum(gw[None, :] * geom.param_speed(tq), axis=1)
        return BoundaryGrid(geom, nodes, normals, weights, params, edges)
    if geom.dim == 3:
        if not geom.is_round:
            raise GeometryError("d=3 supports the ball only")
        R = geom.scales[0]
        m = n_azimuth or 2 * n
        gu, wu = leggauss(n)                      # u = cos(theta)
        phi = (np.arange(m) + 0.5) * (2.0 * np.pi / m)
        u, p = np.meshgrid(gu, phi, indexing="ij")
        st = np.sqrt(1.0 - u**2)
        nodes = R * np.stack([st * np.cos(p), st * np.sin(p), u], axis=-1)
        nodes = nodes.reshape(-1, 3)
        weights = (R * R * (2.0 * np.pi / m) * np.broadcast_to(wu[:, None], u.shape)).ravel()
        return BoundaryGrid(geom, nodes, geom.normal(nodes), weights.copy())
    raise GeometryError("unsupported dimension")


# ---------------------------------------------------------------------------
# pair form factor


def jacobian_formula(geom, x, y):
    """Defining form of the pair form factor,

        1_visible(y) * |(x-y).n(x)| * |(x-y).n(y)| / |x-y|^(d+1),

    with visibility meaning (x-y).n(x) > 0 and (y-x).n(y) > 0.  Subject to
    cancellation for |x-y| -> 0; prefer `jacobian` which uses closed forms
    on round shapes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = geom.dim
    diff = x - y
    r = np.linalg.norm(diff, axis=-1)
    nx = geom.normal(x)
    ny = geom.normal(y)
    px = np.sum(diff * nx, axis=-1)
    py = -np.sum(diff * ny, axis=-1)
    vis = (px > 0) & (py > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.abs(px) * np.abs(py) / r ** (d + 1)
    return np.where(vis & (r > 0), val, 0.0)


def jacobian(geom, x, y):
    """Pair form factor J(x, y) for boundary points, vectorized.

    On a circle of radius R this is |x-y| / (4 R^2); on a sphere it is the
    constant 1 / (4 R^2) (both normal projections equal |x-y|^2 / 2R).  The
    ellipse uses the defining formula.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if geom.is_round:
        R = geom.scales[0]
        if geom.dim == 2:
            return np.linalg.norm(x - y, axis=-1) / (4.0 * R * R)
        out = np.full(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]),
                      1.0 / (4.0 * R * R))
        same = np.linalg.norm(x - y, axis=-1) == 0.0
        return np.where(same, out, out)   # constant, including the diagonal limit
    return jacobian_formula(geom, x, y)


def chord_length(x, y):
    return np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)


# ---------------------------------------------------------------------------
# direction-to-boundary change of variables check


def _hemisphere_quad(n, order_polar=64, order_azim=128):
    """Quadrature for int_{sigma.n>0} g(sigma) |sigma.n| dsigma.

    Returns (directions, weights) with the |sigma.n| factor folded into the
    weights.  n is the unit normal.
    """
    n = np.asarray(n, dtype=float)
    d = len(n)
    if d == 2:
        tang = np.array([-n[1], n[0]])
        gx, gw = leggauss(order_polar)
        th = 0.5 * np.pi * gx
        w = 0.5 * np.pi * gw * np.cos(th)
        dirs = np.cos(th)[:, None] * n + np.sin(th)[:, None] * tang
        return dirs, w
    # d = 3: mu = sigma.n in (0,1), azimuth uniform
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, a); t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    gmu, wmu = leggauss(order_polar)
    mu = 0.5 * (gmu + 1.0)
    wmu = 0.5 * wmu
    phi = (np.arange(order_azim) + 0.5) * (2.0 * np.pi / order_azim)
    MU, PH = np.meshgrid(mu, phi, indexing="ij")
    st = np.sqrt(1.0 - MU**2)
    dirs = (MU[..., None] * n + st[..., None] * (np.cos(PH)[..., None] * t1
            + np.sin(PH)[..., None] * t2)).reshape(-1, 3)
    w = (np.broadcast_to(wmu[:, None], MU.shape) * (2.0 * np.pi / order_azim)
         * MU).ravel()
    return dirs, w.copy()


def _boundary_integral_with_refinement(geom, x, fn, n_cells=256, nsub=6, depth=4):
    """integrate fn(y) J(x, y) over the boundary, x on the boundary.

    The integrand direction (x - y)/|x - y| is discontinuous at y = x, so the
    cell containing x is split there and graded dyadically toward x.
    """
    if geom.dim == 2:
        tx = float(geom.boundary_param(x))
        h = 2.0 * np.pi / n_cells
        edges = (tx + h * np.arange(n_cells + 1))  # start the mesh at the singular point
        gx, gw = leggauss(nsub)
        total = 0.0
        segs = []
        for i in range(n_cells):
            a, b = edges[i], edges[i + 1]
            if i == 0 or i == n_cells - 1:
                # grade toward the singular endpoint
                pts = np.geomspace(1e-9, 1.0, depth + 1)
                sub = a + (b - a) * pts if i == 0 else b - (b - a) * pts[::-1]
                sub = np.concatenate([[a], sub]) if i == 0 else np.concatenate([sub, [b]])
                for j in range(len(sub) - 1):
                    segs.append((sub[j], sub[j + 1]))
            else:
                segs.append((a, b))
        for a, b in segs:
            t = 0.5 * (a + b) + 0.5 * (b - a) * gx
            y = geom.boundary_point(t)
            J = jacobian(geom, x, y)
            val = fn(y) * J * geom.param_speed(t)
            total += 0.5 * (b - a) * np.sum(gw * val)
        return total
    # d = 3 ball: J is constant; grade the polar wedge toward y = x.
    R = geom.scales[0]
    # rotate so x is the north pole; integrate over (u = cos(polar), azimuth)
    ex = np.asarray(x) / R
    a = np.array([1.0, 0.0, 0.0]) if abs(ex[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(ex, a); t1 /= np.linalg.norm(t1)
    t2 = np.cross(ex, t1)
    gxn, gwn = leggauss(nsub)
    phi = (np.arange(64) + 0.5) * (2.0 * np.pi / 64)
    total = 0.0
    # u in [-1, 1], singular at u = 1: split [ -1, 1-eps ladder ]
    brk = 1.0 - np.geomspace(1e-12, 2.0, 24)
    brk = np.concatenate([[-1.0], brk[::-1][brk[::-1] > -1.0], [1.0]])
    brk = np.unique(np.clip(brk, -1.0, 1.0))
    for j in range(len(brk) - 1):
        a_, b_ = brk[j], brk[j + 1]
        u = 0.5 * (a_ + b_) + 0.5 * (b_ - a_) * gxn
        wu = 0.5 * (b_ - a_) * gwn
        st = np.sqrt(np.maximum(1.0 - u**2, 0.0))
        Y = R * (u[:, None, None] * ex + st[:, None, None]
                 * (np.cos(phi)[None, :, None] * t1 + np.sin(phi)[None, :, None] * t2))
        J = jacobian(geom, np.asarray(x), Y)
        total += np.sum(wu[:, None] * (2.0 * np.pi / 64) * R * R * fn(Y) * J)
    return total


def change_of_variables_check(geom, g, x=None, n_cells=256, nsub=6):
    """Check the hemisphere-to-boundary change of variables at a point x.

    Returns (lhs, rhs) where
      lhs = int_{sigma.n(x)>0} g(sigma) |sigma.n(x)| dsigma
      rhs = int_boundary g((x-y)/|x-y|) J(x, y) dpi(y).
    """
    if x is None:
        x = geom.boundary_point(0.3) if geom.dim == 2 else \
            geom.snap(np.array([0.3, 0.4, 0.8]) * geom.scales[0])
    x = np.asarray(x, dtype=float)
    nx = geom.normal(x)
    dirs, w = _hemisphere_quad(nx)
    lhs = float(np.sum(w * g(dirs)))

    def fn(y):
        diff = x - y
        r = np.linalg.norm(diff, axis=-1, keepdims=True)
        r = np.where(r > 0, r, 1.0)
        return g(diff / r)

    rhs = float(_boundary_integral_with_refinement(geom, x, fn, n_cells, nsub))
    return lhs, rhs


# ---------------------------------------------------------------------------
# flatness constant


def flatness_constant(geom, samples=512, alpha=1.0, polish=True):
    """Estimate  sup_{x != y}  |(x-y).n(x)| / |x-y|^(1+alpha)  over the boundary.

    Returns (alpha_used, C_estimate).  For a circle of radius R with
    alpha = 1 the ratio is identically 1/(2R).  alpha is a reporting
    parameter (boundary regularity exponent); the supported shapes are
    smooth so any alpha in (0, 1] yields a finite value.
    """
    if geom.is_round and alpha == 1.0:
        return alpha, 1.0 / (2.0 * geom.scales[0])

    # below rmin the quotient is a 0/0 dominated by roundoff; the
    # coincidence limit y -> x is probed separately at finite offsets
    rmin = 1e-6 * geom.diameter

    def ratio(tx, ty):
        x = geom.boundary_point(tx)
        y = geom.boundary_point(ty)
        r = np.linalg.norm(x - y, axis=-1)
        num = np.abs(np.sum((x - y) * geom.normal(x), axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = num / r ** (1.0 + alpha)
        return np.where(r > rmin, q, 0.0)

    if geom.dim == 3:
        # round case handled above; only balls are supported in 3d
        raise GeometryError("flatness_constant with alpha != 1 is 2d-only")

    t = (np.arange(samples) + 0.5) * (2.0 * np.pi / samples)
    TX, TY = np.meshgrid(t, t, indexing="ij")
    vals = ratio(TX.ravel(), TY.ravel())
    best = float(np.max(vals))
    if not polish:
        return alpha, best
    k = int(np.argmax(vals))
    tx0, ty0 = TX.ravel()[k], TY.ravel()[k]
    from scipy.optimize import minimize
    res = minimize(lambda p: -ratio(p[0], p[1]), np.array([tx0, ty0]),
                   method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000})
    cand = -res.fun if res.fun < 0 else best
    # the sup may be attained in the coincidence limit y -> x; probe it
    tc = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    for eps in (1e-3, 1e-4, 1e-5):
        cand = max(cand, float(np.max(ratio(tc, tc + eps))))
    return alpha, max(best, float(cand))
