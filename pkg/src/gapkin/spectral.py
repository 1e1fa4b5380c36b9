"""Boundary trace operators and spectral diagnostics.

Between two wall collisions a particle moves on a straight chord, so the
collision-to-collision transfer at Laplace parameter lam acts on isotropic
boundary data u(y, rho) (boundary point, speed) as

    (W(lam) u)(x, s) = k(x, s) int rho^d w(rho) int J(x, y)
                         exp(-lam |x-y| / rho) u(y, rho) dpi(y) drho

on L1 of nu(dy, drho) = kappa_d rho^d w(rho) drho pi(dy), with J the boundary
pair form factor and k the normalized emission kernel.  The shipped kernels
are separable (k does not depend on the incoming speed), so W factors through
the scalar collision flux and its nonzero spectrum equals that of an n-by-n
matrix over boundary cells; everything here exploits that factorization and
never materializes the dense product-grid matrix.

The module provides: the reduced operator W(lam) with exact L1 norms of its
powers, an independently assembled full-trace operator on outgoing rays used
as an oracle, the twice-collided kernel decay bound n2(lam) and the resolvent
tail inequality built from it, strip scans locating roots of "1 is an
eigenvalue of W(lam)", the invariant density with a stationary sampler, the
Laplace-side resolvent terms, and the short-chord truncation norm.  All
reductions run in fixed order, so results are deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from . import rng as _rng
from .geometry import BoundaryGrid, boundary_grid, chord_length, jacobian
from .velocity import InverseCdfTable, SpeedMeasure, hemisphere_flux
from .wall import DegenerateKernelError, DiffuseKernel, PartlyDiffuseWall

# Largest boundary*speed node count for which a dense kernel matrix may be built.
DENSE_CAP = 6000
# Largest stored entry count (speed * boundary^2) for the full-trace oracle.
FULL_GRID_CAP = 1 << 26


class SpectralError(RuntimeError):
    pass


class LaplaceDomainError(ValueError):
    """Laplace parameter outside the domain of the requested quantity."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class SpeedGrid:
    """Gauss-Legendre speed nodes with the recurring weight combinations.

    flux[l] approximates rho^d w(rho) drho on the node (the outgoing-flux
    measure without the kappa_d factor); coarea[l] approximates
    rho^(d-1) w(rho) drho (the Lebesgue speed marginal).
    """

    sm: SpeedMeasure
    rho: np.ndarray
    q: np.ndarray
    flux: np.ndarray
    coarea: np.ndarray

    def __len__(self):
        return self.rho.size


def speed_grid(sm, n=48):
    rho, q = sm.radial_quad(n)
    wr = sm.weight(rho)
    return SpeedGrid(sm=sm, rho=rho, q=q,
                     flux=q * rho ** sm.dim * wr,
                     coarea=q * rho ** (sm.dim - 1) * wr)


@dataclass
class OperatorGrids:
    """Grid bundle for operator assembly.

    boundary/speed carry the production resolution of W; the oracle fields
    size the full-trace cross-check operator, whose direction nodes are tied
    to its boundary cells (one direction per backward footpoint cell, which
    keeps the discrete flight map exactly measure preserving).
    """

    boundary: BoundaryGrid
    speed: SpeedGrid
    subnodes: int = 4
    oracle_boundary: BoundaryGrid = None
    oracle_speed: SpeedGrid = None


def operator_grids(geom, sm, boundary_nodes=256, speed_nodes=48, subnodes=4,
                   oracle_nodes=128, oracle_speed_nodes=16):
    return OperatorGrids(
        boundary=boundary_grid(geom, boundary_nodes),
        speed=speed_grid(sm, speed_nodes),
        subnodes=subnodes,
        oracle_boundary=boundary_grid(geom, oracle_nodes),
        oracle_speed=speed_grid(sm, oracle_speed_nodes))


# ---------------------------------------------------------------------------
# cell-pair quadrature tables
#
# E_l[i, j] is the cell-pair average of J(x, y) exp(-lam |x-y| / rho_l) over
# cell_i x cell_j, divided by the two cell weights.  Off-diagonal pairs use a
# product Gauss rule on sub-nodes; the diagonal cell is split along x = y into
# two congruent triangles mapped by (u, v) -> (u, u v) with Jacobian
# proportional to u, which resolves the |x-y| kink (the integrand is swap
# symmetric, so one triangle is integrated and doubled).


@dataclass
class PairTables:
    grid: BoundaryGrid
    sub: int
    SJ: np.ndarray = None       # d=2: sub-pair weights * J, diagonal blocks zeroed
    L: np.ndarray = None        # sub-pair (d=2) or node (d=3) distances
    dJW: np.ndarray = None      # d=2 diagonal cells: triangle weights * J
    dL: np.ndarray = None
    J0: float = 0.0             # d=3 sphere: constant form factor
    _e0: np.ndarray = None
    _e_chord: np.ndarray = None

    def _reduce(self, factor, dfactor):
        """Cell-pair sums of SJ*factor with diagonal dJW*dfactor, / weights."""
        n = len(self.grid)
        w = self.grid.weights
        R = (self.SJ * factor).reshape(n, self.sub, n, self.sub).sum(axis=(1, 3))
        ii = np.arange(n)
        R[ii, ii] += (self.dJW * dfactor).sum(axis=1)
        return R / (w[:, None] * w[None, :])

    def ematrices(self, lam, rhos):
        """Stack of E matrices, one per speed node."""
        rhos = np.asarray(rhos, dtype=float)
        cplx = bool(np.iscomplexobj(lam)) and complex(lam).imag != 0.0
        n = len(self.grid)
        out = np.empty((rhos.size, n, n), dtype=complex if cplx else float)
        for l, rho in enumerate(rhos):
            z = complex(lam) / rho if cplx else float(np.real(lam)) / rho
            if self.grid.geom.dim == 3:
                out[l] = self.J0 * np.exp(-z * self.L)
            elif z == 0:
                out[l] = self.e0()
            else:
                out[l] = self._reduce(np.exp(-z * self.L), np.exp(-z * self.dL))
        return out

    def ecolumns(self, lam, rhos, j=0):
        """Column j of each E matrix (cheap path for circulant assemblies)."""
        E = self.ematrices_block(lam, rhos, j)
        return E

    def ematrices_block(self, lam, rhos, j):
        n = len(self.grid)
        w = self.grid.weights
        cplx = bool(np.iscomplexobj(lam)) and complex(lam).imag != 0.0
        if self.grid.geom.dim == 3:
            cols = np.empty((len(rhos), n), dtype=complex if cplx else float)
            for l, rho in enumerate(rhos):
                z = complex(lam) / rho if cplx else float(np.real(lam)) / rho
                cols[l] = self.J0 * np.exp(-z * self.L[:, j])
            return cols
        s = self.sub
        sl = slice(j * s, (j + 1) * s)
        SJ = self.SJ[:, sl]
        L = self.L[:, sl]
        cols = np.empty((len(rhos), n), dtype=complex if cplx else float)
        for l, rho in enumerate(rhos):
            z = complex(lam) / rho if cplx else float(np.real(lam)) / rho
            col = (SJ * np.exp(-z * L)).reshape(n, s, s).sum(axis=(1, 2))
            col[j] += (self.dJW[j] * np.exp(-z * self.dL[j])).sum()
            cols[l] = col / (w * w[j])
        return cols

    def e0(self):
        """E at lam = 0 (pure form-factor cell averages)."""
        if self._e0 is None:
            if self.grid.geom.dim == 3:
                self._e0 = np.full(self.L.shape, self.J0)
            else:
                self._e0 = self._reduce(1.0, 1.0)
        return self._e0

    def chord_kernel(self):
        """Cell averages of J(x, y) |x - y| (first chord moment)."""
        if self._e_chord is None:
            if self.grid.geom.dim == 3:
                self._e_chord = self.J0 * self.L
            else:
                self._e_chord = self._reduce(self.L, self.dL)
        return self._e_chord

    def min_retained_chord(self):
        pos = self.L[self.L > 0]
        m = float(pos.min()) if pos.size else 0.0
        if self.dL is not None:
            m = min(m, float(self.dL.min()))
        return m


def pair_tables(grid, sub=4, diag_order=10):
    key = ("pair_tables", sub, diag_order)
    cached = grid._caches.get(key)
    if cached is not None:
        return cached
    geom = grid.geom
    n = len(grid)
    if geom.dim == 3:
        R = geom.scales[0]
        L = chord_length(grid.nodes[:, None, :], grid.nodes[None, :, :])
        tab = PairTables(grid=grid, sub=1, L=L, J0=1.0 / (4.0 * R * R))
        grid._caches[key] = tab
        return tab
    edges = grid.cell_edges
    h = np.diff(edges)
    gx, gw = leggauss(sub)
    t = grid.params[:, None] + 0.5 * h[:, None] * gx[None, :]
    ws = 0.5 * h[:, None] * gw[None, :] * geom.param_speed(t)
    X = geom.boundary_point(t).reshape(n * sub, 2)
    WS = ws.reshape(n * sub)
    J = jacobian(geom, X[:, None, :], X[None, :, :])
    SJ = WS[:, None] * WS[None, :] * J
    L = chord_length(X[:, None, :], X[None, :, :])
    ii = np.arange(n)
    SJ.reshape(n, sub, n, sub)[ii, :, ii, :] = 0.0
    # diagonal cells: triangle {param_y <= param_x}, doubled by swap symmetry
    m = diag_order
    gu, wu = leggauss(m)
    u, wu = 0.5 * (gu + 1.0), 0.5 * wu
    v, wv = u, wu
    hc = h[:, None, None]
    U = np.broadcast_to(u[None, :, None], (n, m, m))
    tx = edges[:-1][:, None, None] + hc * U
    ty = edges[:-1][:, None, None] + hc * U * v[None, None, :]
    Xd = geom.boundary_point(tx)
    Yd = geom.boundary_point(ty)
    wt = 2.0 * hc * hc * U * (wu[:, None] * wv[None, :])[None, :, :] \
        * geom.param_speed(tx) * geom.param_speed(ty)
    tab = PairTables(grid=grid, sub=sub, SJ=SJ, L=L,
                     dJW=(wt * jacobian(geom, Xd, Yd)).reshape(n, m * m),
                     dL=chord_length(Xd, Yd).reshape(n, m * m))
    grid._caches[key] = tab
    return tab


# ---------------------------------------------------------------------------
# kernel operators


@dataclass
class KernelOperator:
    """Dense kernel-against-measure operator: (A u)_i = sum_j K[i,j] m_j u_j."""

    matrix: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray
    lam: complex = 0.0

    def apply(self, u):
        return self.matrix @ (self.source_weights * np.ravel(u))


def _emission_table(kernel, grid, sgrid):
    """out[i, l] = k(x_i, rho_l), normalized with the grid's own speed rule.

    Using the same quadrature for the normalization keeps the discrete
    operator exactly stochastic at lam = 0.
    """
    kd = hemisphere_flux(sgrid.sm.dim)
    G = np.asarray(kernel.emission_profile(grid.nodes, sgrid.rho[None, :]))
    G = np.broadcast_to(G, (len(grid), len(sgrid))).astype(float)
    gam = kd * (G @ sgrid.flux)
    if np.any(gam < 1e-12):
        raise DegenerateKernelError("flux normalization vanishes on the grid")
    return G / gam[:, None]


def _as_diffuse(kernel):
    if isinstance(kernel, PartlyDiffuseWall):
        if np.any(np.asarray(kernel.alpha) != 0.0):
            raise SpectralError(
                "W(lam) is the pure-diffuse reduction; partly diffuse walls "
                "enter through the orbit sums in scan_spectrum")
        return kernel.diffuse
    return kernel


@dataclass
class WallOperator:
    """Reduced transfer operator W(lam) in factored form.

    E[l] holds the cell-pair chord kernel at speed rho_l, out the emission
    table.  The operator acts as (W u)[i, s] = out[i, s] * F[i] with
    F = sum_l flux_l E[l] (w * u[:, l]), so its nonzero spectrum is that of
    the boundary matrix T[i, j] = w_j sum_l flux_l E[l][i, j] out[j, l].
    """

    grid: BoundaryGrid
    sgrid: SpeedGrid
    lam: complex
    E: np.ndarray
    out: np.ndarray
    _T: np.ndarray = field(default=None, repr=False)

    @property
    def kd(self):
        return hemisphere_flux(self.sgrid.sm.dim)

    @property
    def shape(self):
        n, ns = len(self.grid), len(self.sgrid)
        return (n * ns, n * ns)

    def source_weights(self):
        """nu cell masses on the (boundary, speed) grid."""
        return self.kd * self.grid.weights[:, None] * self.sgrid.flux[None, :]

    def mass(self, u):
        return np.sum(self.source_weights() * u)

    def apply(self, u):
        u = np.asarray(u)
        F = np.zeros(len(self.grid), dtype=np.result_type(u, self.E))
        for l in range(len(self.sgrid)):
            F += self.sgrid.flux[l] * (self.E[l] @ (self.grid.weights * u[:, l]))
        return self.out * F[:, None]

    def boundary_matrix(self):
        if self._T is None:
            T = np.einsum("l,lij,jl->ij", self.sgrid.flux, self.E, self.out,
                          optimize=True)
            self._T = T * self.grid.weights[None, :]
        return self._T

    def eigvals(self):
        return sla.eigvals(self.boundary_matrix())

    def leading_eig(self):
        """Largest-modulus eigenvalue and its lift to the (node, speed) grid."""
        T = self.boundary_matrix()
        vals, vecs = np.linalg.eig(T)
        k = int(np.argmax(np.abs(vals)))
        c = vecs[:, k]
        if abs(c.imag).max() < 1e-12 * abs(c.real).max():
            c = c.real
            c = c * np.sign(c.sum())
        mu = vals[k]
        if abs(mu.imag) < 1e-12 * max(1.0, abs(mu.real)):
            mu = mu.real
        u = self.out * np.asarray(c)[:, None]
        return mu, u / np.abs(self.mass(np.abs(u)))

    def norm_L1(self, power=1):
        """Exact L1(nu) operator norm of W(lam)^power.

        The kernel of W^n against nu is out[i,s] (T^(n-1) E_l)[i,j] / kd, so
        the norm is a weighted maximum column sum of |T^(n-1) E_l|.
        """
        M = None
        if power > 1:
            M = np.linalg.matrix_power(self.boundary_matrix(), power - 1)
        best = 0.0
        w = self.grid.weights
        for l in range(len(self.sgrid)):
            A = self.E[l] if M is None else M @ self.E[l]
            best = max(best, float(np.max(w @ np.abs(A))))
        return best / self.kd

    def tail_sum_norm(self, N):
        """Exact L1(nu) norm of sum_{k >= N} W(lam)^k (needs r_sigma(T) < 1)."""
        T = self.boundary_matrix()
        if np.max(np.abs(sla.eigvals(T))) >= 1.0:
            raise SpectralError("geometric tail requires spectral radius < 1 "
                                f"(lam={self.lam})")
        S = sla.solve(np.eye(len(self.grid)) - T,
                      np.linalg.matrix_power(T, N - 1))
        w = self.grid.weights
        best = 0.0
        for l in range(len(self.sgrid)):
            best = max(best, float(np.max(w @ np.abs(S @ self.E[l]))))
        return best / self.kd

    def column_mass_defect(self):
        """Max deviation of the lam=0 column masses from exact stochasticity."""
        w = self.grid.weights
        col = np.array([np.max(np.abs(w @ self.E[l] / self.kd - 1.0))
                        for l in range(len(self.sgrid))])
        emis = np.abs(self.kd * (self.out * self.sgrid.flux[None, :]).sum(1) - 1.0)
        return float(max(col.max(), emis.max()))

    def dense(self):
        n, ns = len(self.grid), len(self.sgrid)
        if n * ns > DENSE_CAP:
            raise SpectralError(
                f"dense kernel matrix of size {n * ns} exceeds the cap "
                f"{DENSE_CAP}; use the factored interface")
        K = np.empty((n * ns, n * ns), dtype=self.E.dtype)
        for s in range(ns):
            for l in range(ns):
                K[s::ns, l::ns] = self.out[:, s][:, None] * self.E[l] / self.kd
        # weights interleaved to match the (node, speed) flattening above
        mw = (self.kd * np.repeat(self.grid.weights, ns)
              * np.tile(self.sgrid.flux, n))
        return KernelOperator(matrix=K, source_weights=mw, target_weights=mw,
                              lam=self.lam)


def assemble_W(lam, geom, sm, kernel, grids=None, boundary_nodes=256,
               speed_nodes=48, subnodes=4):
    """Assemble the reduced transfer operator W(lam)."""
    kernel = _as_diffuse(kernel)
    if grids is None:
        grids = OperatorGrids(boundary=boundary_grid(geom, boundary_nodes),
                              speed=speed_grid(sm, speed_nodes),
                              subnodes=subnodes)
    grid, sgrid = grids.boundary, grids.speed
    tab = pair_tables(grid, grids.subnodes)
    E = tab.ematrices(lam, sgrid.rho)
    out = _emission_table(kernel, grid, sgrid)
    if not np.all(np.isfinite(E)):
        raise SpectralError(f"operator assembly produced non-finite entries "
                            f"at lam={lam}")
    return WallOperator(grid=grid, sgrid=sgrid, lam=complex(lam), E=E, out=out)


def operator_norm_L1(op, power=1):
    """Exact L1 -> L1 operator norm: max over source cells of the weighted
    absolute column sum of the kernel."""
    if isinstance(op, WallOperator):
        return op.norm_L1(power)
    if power != 1:
        raise ValueError("powers are only supported for factored operators")
    return float(np.max(op.target_weights @ np.abs(op.matrix)))


# ---------------------------------------------------------------------------
# full-trace oracle


@dataclass
class FullTraceOperator:
    """Brute-force discretization of one flight plus one collision on the
    outgoing trace, used as an oracle for W(lam).

    States live on (node b, speed l, backward footpoint j): the trace at x_b
    of a ray launched from x_j.  Directions are labeled by footpoint cells,
    with weights given by pair-integrated form factors, so the flight map
    preserves the discrete trace measure exactly; the transport factor
    exp(-lam L / rho) is applied at node level, independent of the cell-pair
    construction inside W.
    """

    grid: BoundaryGrid
    sgrid: SpeedGrid
    lam: complex
    Jw: np.ndarray              # (N, N) footpoint weights, row sums = kappa_d
    L: np.ndarray               # (N, N) node chord lengths
    out: np.ndarray
    TRo: np.ndarray             # (ns, N, N) transport * emission, [l, j, b]

    @property
    def size(self):
        n, ns = len(self.grid), len(self.sgrid)
        return n * ns * n

    def collision_flux(self, phi):
        """Incoming scalar flux at each node: the H contraction."""
        return np.einsum("l,jk,jlk->j", self.sgrid.flux, self.Jw, phi,
                         optimize=True)

    def apply(self, phi):
        C = self.collision_flux(phi)
        return (self.TRo * C[None, :, None]).transpose(2, 0, 1)

    def mass(self, phi):
        return np.einsum("b,l,bk,blk->", self.grid.weights, self.sgrid.flux,
                         self.Jw, phi, optimize=True)

    def leading_eig(self, tol=1e-12, maxiter=None):
        n, ns = len(self.grid), len(self.sgrid)
        dim = n * ns * n

        def mv(x):
            return self.apply(x.reshape(n, ns, n)).ravel()

        op = LinearOperator((dim, dim), matvec=mv, dtype=complex)
        v0 = np.ones(dim, dtype=complex)
        try:
            vals, vecs = eigs(op, k=1, which="LM", v0=v0, tol=tol,
                              maxiter=maxiter or 100 * dim)
        except ArpackNoConvergence as exc:
            raise SpectralError(
                f"eigensolver failed to converge at lam={self.lam}") from exc
        return vals[0], vecs[:, 0].reshape(n, ns, n)


def assemble_MH_full(lam, geom, sm, kernel, grids=None, nodes=128,
                     speed_nodes=16, cap=FULL_GRID_CAP):
    """Assemble the full-trace oracle operator at lam."""
    kernel = _as_diffuse(kernel)
    if grids is not None:
        grid, sgrid = grids.oracle_boundary, grids.oracle_speed
    else:
        grid, sgrid = boundary_grid(geom, nodes), speed_grid(sm, speed_nodes)
    n, ns = len(grid), len(sgrid)
    if n * n * ns > cap:
        raise SpectralError(f"full-grid operator with {n * n * ns} entries "
                            f"exceeds the cap {cap}")
    tab = pair_tables(grid, 4)
    Jw = tab.e0() * grid.weights[None, :]
    L = chord_length(grid.nodes[:, None, :], grid.nodes[None, :, :])
    out = _emission_table(kernel, grid, sgrid)
    TRo = np.empty((ns, n, n), dtype=complex)
    for l, rho in enumerate(sgrid.rho):
        TRo[l] = np.exp(-complex(lam) * L / rho) * out[:, l][:, None]
    return FullTraceOperator(grid=grid, sgrid=sgrid, lam=complex(lam),
                             Jw=Jw, L=L, out=out, TRo=TRo)


# ---------------------------------------------------------------------------
# kernel decay bound


def _phi_factor(kernel, y, Ls, lam):
    """Speed-averaged transport factor of the twice-collided kernel,

        Phi(y, L) = (1 / gamma(y)) int rho^d w(rho) G(y, rho) e^(-lam L/rho) drho,

    with panel count tied to the phase span so oscillations are resolved.
    """
    sm = kernel.sm
    kd = hemisphere_flux(sm.dim)
    span = abs(complex(lam).imag) * float(np.max(Ls)) * (1.0 / sm.r0 - 1.0 / sm.rmax)
    npan = int(np.ceil(span / (2.0 * np.pi))) + 4
    edges = np.linspace(sm.r0, sm.rmax, npan + 1)
    gx, gw = leggauss(8)
    mid = 0.5 * (edges[:-1] + edges[1:])
    hw = 0.5 * np.diff(edges)
    rho = (mid[:, None] + hw[:, None] * gx[None, :]).ravel()
    qw = (hw[:, None] * gw[None, :]).ravel()
    prof = rho ** sm.dim * sm.weight(rho) * \
        np.asarray(kernel.emission_profile(y, rho))
    gam = kd * float(np.sum(qw * prof))
    ph = np.exp(-complex(lam) * np.asarray(Ls)[..., None] / rho)
    return (ph @ (qw * prof)) / gam


def decay_bound_n2(lam, geom, sm, kernel, nodes=256, sup_samples=16):
    """Quadrature value of the twice-collided kernel bound

        n2(lam) = sup_y int J(x, y) |Phi(y, |x-y|)| dpi(x).

    The incoming-velocity integral of the kernel collapses to 1 by the
    emission normalization, leaving the boundary integral above.  The bound
    controls the squared collision operator and decays like 1/|lam|.
    """
    kernel = _as_diffuse(kernel)
    if complex(lam) == 0:
        raise LaplaceDomainError("n2 needs lam != 0; at lam = 0 the bound "
                                 "degenerates to the trivial value 1")
    lam = complex(lam)
    grid = boundary_grid(geom, nodes)
    if geom.is_round and kernel.constant_theta:
        targets = [0]
    else:
        step = max(1, len(grid) // sup_samples)
        targets = list(range(0, len(grid), step))
    best = 0.0
    for j in targets:
        y = grid.nodes[j]
        Ls = chord_length(grid.nodes, y)
        J = jacobian(geom, grid.nodes, y)
        phi = _phi_factor(kernel, y, Ls, lam)
        best = max(best, float(np.sum(grid.weights * J * np.abs(phi))))
    return best


def discrete_n2(op):
    """n2 read off the assembled operator (consistency route): the weighted
    column sums of the speed-contracted kernel sum_s flux_s out[m,s] E_s[i,m]."""
    G = np.einsum("s,ms,sim->im", op.sgrid.flux, op.out, op.E, optimize=True)
    return float(np.max(op.grid.weights @ np.abs(G)))


def tail_bound_check(op, N, constant):
    """Check the resolvent-series tail inequality at op.lam.

    The tail sum_{n>=N} Xi H (M H)^n G factors through sum_{k>=N} W^k, whose
    L1 norm is computed exactly from the factored representation; with
    |Xi| <= 1/Re lam and |H G| <= 1 the measured tail bound is compared to
    constant^floor(N/2) |lam|^-floor(N/2) / (Re lam (1 - e^(-D Re lam / r0))).
    """
    lam = complex(op.lam)
    if lam.real <= 0:
        raise LaplaceDomainError("the tail bound needs Re lam > 0")
    D = op.grid.geom.diameter
    r0 = op.sgrid.sm.r0
    half = N // 2
    lhs = op.tail_sum_norm(N) / lam.real
    rhs = constant ** half * abs(lam) ** (-half) \
        / (lam.real * (1.0 - np.exp(-D * lam.real / r0)))
    return {"N": N, "lam": lam, "lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs)}


# ---------------------------------------------------------------------------
# spectrum scans


@dataclass
class SpectralScan:
    re: np.ndarray
    im: np.ndarray
    dist: np.ndarray            # (n_im, n_re) min_i |mu_i - 1|
    perron: np.ndarray          # leading real eigenvalue on the im = 0 row
    roots: list
    gap: float
    gap_is_lower_bound: bool
    nodes: int
    refined_nodes: int
    root_count: int
    refined_root_count: int
    meta: dict


class _DiffuseFamily:
    """lam -> eigenvalues of the boundary matrix, pure diffuse wall."""

    def __init__(self, geom, sm, kernel, nodes, speed_nodes, subnodes):
        self.grid = boundary_grid(geom, nodes)
        self.sgrid = speed_grid(sm, speed_nodes)
        self.tab = pair_tables(self.grid, subnodes)
        self.out = _emission_table(kernel, self.grid, self.sgrid)
        self.nodes = nodes

    def matrix(self, lam):
        E = self.tab.ematrices(lam, self.sgrid.rho)
        T = np.einsum("l,lij,jl->ij", self.sgrid.flux, E, self.out,
                      optimize=True)
        return T * self.grid.weights[None, :]

    def eigvals(self, lam):
        return sla.eigvals(self.matrix(lam))


class _OrbitFamily:
    """lam -> eigenvalues for a partly diffuse wall via reflection orbit sums.

    The reflected part is summed as a Neumann series over the number p of
    consecutive specular (or bounce-back) reflections before the next diffuse
    emission; each orbit contributes its form factor and accumulated chord
    length.  Specular orbits are closed form on the disk (equal-chord
    billiard); bounce-back orbits retrace the same chord on any shape.
    """

    def __init__(self, geom, sm, wall, nodes, speed_nodes, subnodes,
                 re_floor, series_tol=1e-8, max_orbit=200):
        if np.ndim(wall.alpha) > 0:
            raise SpectralError("strip scans support constant alpha only")
        alpha = float(wall.alpha)
        if not wall.diffuse.constant_theta:
            raise SpectralError("orbit scans support constant wall "
                                "temperature only")
        self.geom, self.sm = geom, sm
        self.alpha, self.beta = alpha, 1.0 - alpha
        self.reflection = wall.reflection
        if self.reflection == "specular" and not (geom.dim == 2 and geom.is_round):
            raise SpectralError("specular orbit sums are closed form on the "
                                "disk only; use bounce_back elsewhere")
        self.grid = boundary_grid(geom, nodes)
        self.sgrid = speed_grid(sm, speed_nodes)
        self.tab = pair_tables(self.grid, subnodes)
        self.out = _emission_table(wall.diffuse, self.grid, self.sgrid)
        self.nodes = nodes
        growth = alpha * np.exp(abs(re_floor) * geom.diameter / sm.r0)
        if growth >= 1.0:
            depth = sm.r0 * np.log(1.0 / alpha) / geom.diameter
            raise SpectralError(
                f"orbit series diverges at Re lam = {re_floor:g}; the "
                f"admissible strip depth for alpha={alpha:g} is {depth:g}")
        self.P = min(max_orbit,
                     int(np.ceil(np.log(series_tol) / np.log(growth))))
        if self.reflection == "specular":
            R = geom.scales[0]
            n = len(self.grid)
            diffs = 2.0 * np.pi * np.arange(n) / n
            self._orbits = []
            for p in range(1, self.P + 1):
                delta = (diffs[:, None] + 2.0 * np.pi * np.arange(p + 1)[None, :]) \
                    / (p + 1)
                half = np.sin(0.5 * delta)
                self._orbits.append((p, half / (2.0 * R * (p + 1)),
                                     (p + 1) * 2.0 * R * half))

    def matrix(self, lam):
        if self.reflection == "specular":
            c = self._circulant_column(lam)
            n = c.size
            idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
            return c[idx]
        return self._bounce_back_matrix(lam)

    def eigvals(self, lam):
        if self.reflection == "specular":
            return np.fft.fft(self._circulant_column(lam))
        return sla.eigvals(self._bounce_back_matrix(lam))

    def _circulant_column(self, lam):
        lam = complex(lam)
        w = self.grid.weights
        flux, rho = self.sgrid.flux, self.sgrid.rho
        E0 = self.tab.ematrices_block(lam, rho, 0)
        col = np.zeros(len(self.grid), dtype=complex)
        for l in range(len(rho)):
            orbit = E0[l].astype(complex)
            for p, J, L in self._orbits:
                orbit += self.alpha ** p * \
                    np.sum(J * np.exp(-lam * L / rho[l]), axis=1)
            col += flux[l] * self.out[0, l] * orbit
        return self.beta * w[0] * col

    def _bounce_back_matrix(self, lam):
        lam = complex(lam)
        w = self.grid.weights
        flux, rho = self.sgrid.flux, self.sgrid.rho
        n = len(self.grid)
        T = np.zeros((n, n), dtype=complex)
        for l in range(len(rho)):
            M = self.tab.ematrices(lam, [rho[l]])[0].astype(complex)
            for p in range(1, self.P + 1):
                Ep = self.tab.ematrices((p + 1) * lam, [rho[l]])[0]
                if p % 2 == 0:
                    M += self.alpha ** p * Ep
                else:
                    # odd p returns the mass to the source node; as a density
                    # in the w-weighted node basis the atom carries 1/w_j
                    M += self.alpha ** p * np.diag((Ep @ w) / w)
            T += flux[l] * (M * self.out[:, l][None, :])
        return self.beta * T * w[None, :]


def _local_minima(dist):
    padded = np.pad(dist, 1, constant_values=np.inf)
    best = np.full(dist.shape, np.inf)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            sh = padded[1 + di:1 + di + dist.shape[0],
                        1 + dj:1 + dj + dist.shape[1]]
            best = np.minimum(best, sh)
    return dist <= best


def _polish_root(family, seed, step, tol=1e-11, maxiter=40):
    def fval(lam):
        ev = family.eigvals(lam)
        return ev[int(np.argmin(np.abs(ev - 1.0)))] - 1.0

    x0, x1 = complex(seed), complex(seed) + 0.25 * step
    f0, f1 = fval(x0), fval(x1)
    for _ in range(maxiter):
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not np.isfinite(x2) or abs(x2 - seed) > 50.0 * abs(step):
            return None
        x0, f0, x1 = x1, f1, x2
        f1 = fval(x1)
        if abs(f1) < tol:
            return {"lam": x1, "residual": abs(f1)}
    return {"lam": x1, "residual": abs(f1)} if abs(f1) < 1e-6 else None


def _dedupe(roots, tol=1e-4):
    kept = []
    for r in sorted(roots, key=lambda r: r["residual"]):
        if all(abs(r["lam"] - k["lam"]) > tol * max(1.0, abs(k["lam"]))
               for k in kept):
            kept.append(r)
    return sorted(kept, key=lambda r: (-r["lam"].real, abs(r["lam"].imag)))


def scan_spectrum(geom, sm, wall, re_range=(-1.5, 0.25), im_max=3.0,
                  resolution=(37, 15), nodes=128, speed_nodes=20, subnodes=3,
                  refine_factor=1.5, refine="roots", seed_factor=10.0,
                  zero_tol=1e-4):
    """Scan the strip [re_range] x [0, im_max] for roots of "1 is an
    eigenvalue of W(lam)" and estimate the spectral gap.

    Only the upper half strip is scanned (eigenvalues come in conjugate
    pairs).  Grid local minima of min_i |mu_i - 1| below a resolution-scaled
    threshold seed a secant polish; polished roots are re-polished on a
    refine_factor denser boundary grid and reported with the shift as an
    error bar.  refine="full" rescans the whole field at the refined
    resolution (used for root-count stability checks), "roots" only
    re-polishes.
    """
    if isinstance(wall, PartlyDiffuseWall) and np.any(np.asarray(wall.alpha) != 0):
        if np.all(np.asarray(wall.alpha) >= 1.0):
            from .wall import beta_constants
            c_beta, _, _ = beta_constants(wall, geom)
            raise SpectralError(
                "pure reflection (alpha = 1) admits no spectral strip: the "
                f"admissibility constant is c_beta = {c_beta:g} >= 1")

        def build(nn):
            return _OrbitFamily(geom, sm, wall, nn, speed_nodes, subnodes,
                                re_floor=re_range[0])
        mode = {"wall": "partly_diffuse", "alpha": float(wall.alpha),
                "reflection": wall.reflection}
    else:
        kernel = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall

        def build(nn):
            return _DiffuseFamily(geom, sm, kernel, nn, speed_nodes, subnodes)
        mode = {"wall": "diffuse"}

    fam = build(nodes)
    n_re, n_im = resolution
    res = np.linspace(re_range[0], re_range[1], n_re)
    ims = np.linspace(0.0, im_max, n_im) if im_max > 0 else np.array([0.0])
    dist = np.empty((ims.size, res.size))
    perron = np.empty(res.size)
    for i, b in enumerate(ims):
        for j, a in enumerate(res):
            ev = fam.eigvals(a + 1j * b if b else a)
            dist[i, j] = float(np.min(np.abs(ev - 1.0)))
            if i == 0:
                perron[j] = float(np.max(ev.real))

    step = complex(res[1] - res[0] if res.size > 1 else 0.05,
                   ims[1] - ims[0] if ims.size > 1 else 0.05)
    thr = seed_factor * max(step.real, step.imag)

    def locate(family):
        found = []
        for i, j in zip(*np.nonzero(_local_minima(dist) & (dist < thr))):
            got = _polish_root(family, res[j] + 1j * ims[i], step)
            if got is not None \
                    and re_range[0] - 0.5 * step.real <= got["lam"].real \
                    <= re_range[1] + 0.5 * step.real \
                    and -0.5 * step.imag <= got["lam"].imag \
                    <= im_max + 0.5 * step.imag:
                if got["lam"].real > 1e-8:
                    warnings.warn(f"root polished to Re lam > 0 at "
                                  f"{got['lam']:.3g}; dropped", RuntimeWarning)
                    continue
                found.append(got)
        return _dedupe(found)

    roots = locate(fam)
    refined_nodes = int(round(nodes * refine_factor))
    fam_hi = build(refined_nodes)
    if refine == "full":
        dist_lo = dist.copy()
        for i, b in enumerate(ims):
            for j, a in enumerate(res):
                dist[i, j] = float(np.min(np.abs(
                    fam_hi.eigvals(a + 1j * b if b else a) - 1.0)))
        roots_hi = locate(fam_hi)
        dist = dist_lo
    else:
        roots_hi = []
        for r in roots:
            got = _polish_root(fam_hi, r["lam"], 0.1 * step)
            if got is not None:
                roots_hi.append(got)
        roots_hi = _dedupe(roots_hi)
    for r in roots:
        near = min(roots_hi, key=lambda q: abs(q["lam"] - r["lam"]),
                   default=None)
        r["refined_lam"] = near["lam"] if near is not None else None
        r["delta"] = abs(near["lam"] - r["lam"]) if near is not None else np.inf

    # the stationary root sits O(quadrature error) from the origin, up to
    # ~1e-5 for node-level orbit families; anything inside zero_tol is it
    nonzero = [r for r in roots if abs(r["lam"]) > zero_tol]
    if nonzero:
        gap = min(-r["lam"].real for r in nonzero)
        lower = False
    else:
        gap = -re_range[0]
        lower = True
    return SpectralScan(re=res, im=ims, dist=dist, perron=perron, roots=roots,
                        gap=float(gap), gap_is_lower_bound=lower, nodes=nodes,
                        refined_nodes=refined_nodes, root_count=len(roots),
                        refined_root_count=len(roots_hi), meta=mode)


# ---------------------------------------------------------------------------
# invariant density


def _interp_rows(xs, rows, x):
    """Linear interpolation of per-row tables rows[k, :] at abscissae x[k]."""
    idx = np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 2)
    x0, x1 = xs[idx], xs[idx + 1]
    t = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    k = np.arange(rows.shape[0]) if rows.ndim > 1 else 0
    lo = rows[k, idx] if rows.ndim > 1 else rows[idx]
    hi = rows[k, idx + 1] if rows.ndim > 1 else rows[idx + 1]
    return lo * (1.0 - t) + hi * t


@dataclass
class InvariantDensity:
    """Stationary phase density, factored over backward footpoints.

    emission[j, l] is the invariant collision density u(y_j, rho_l) (the
    re-emitted trace), normalized so the lifted interior density
    Psi(x, v) = u(foot(x, v), |v|) has unit mass against dx w(|v|) dv; the
    lift uses the flux-tube identity, whose cell masses involve the first
    chord moment coarea[j] = int J(y_j, x) |x - y_j| dpi(x).
    """

    grid: BoundaryGrid
    sgrid: SpeedGrid
    wall: DiffuseKernel
    emission: np.ndarray
    flux_vector: np.ndarray
    coarea: np.ndarray
    residual: float
    messages: list

    @property
    def geom(self):
        return self.grid.geom

    def total_mass(self):
        m = self.grid.weights * self.coarea
        return float(np.sum(m[:, None] * self.emission * self.sgrid.coarea))

    def evaluate(self, x, v):
        """Psi(x, v) for interior points x and velocities v."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        x, v = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(v))
        shape = x.shape[:-1]
        x = x.reshape(-1, x.shape[-1])
        v = v.reshape(-1, v.shape[-1])
        speed = np.linalg.norm(v, axis=-1)
        tb = self.geom.exit_time(x, v, forward=False)
        foot = x - tb[:, None] * v
        idx = self.grid.nearest_node(self.geom.snap(foot))
        vals = _interp_rows(self.sgrid.rho, self.emission[idx], speed)
        return vals.reshape(shape)

    __call__ = evaluate

    def _speed_sampler(self, theta_key, x_repr):
        tab = getattr(self, "_speed_tabs", None)
        if tab is None:
            tab = self._speed_tabs = {}
        if theta_key not in tab:
            sm = self.sgrid.sm
            k = self.wall

            def dens(rho):
                prof = np.asarray(k.emission_profile(x_repr, rho))
                return rho ** (sm.dim - 1) * sm.weight(rho) * prof

            tab[theta_key] = InverseCdfTable.from_density(dens, sm.r0, sm.rmax)
        return tab[theta_key]

    def _direction_table(self):
        tab = getattr(self, "_dir_tab", None)
        if tab is None:
            if self.geom.dim == 2:
                tab = InverseCdfTable.from_density(
                    lambda t: 1.0 - np.cos(t), 0.0, 2.0 * np.pi)
            else:
                tab = InverseCdfTable.from_density(
                    lambda t: np.sin(0.5 * t) * np.sin(t), 0.0, np.pi)
            self._dir_tab = tab
        return tab

    def sample(self, n, seed=0):
        """Draw n stationary phase points (positions, velocities).

        Footpoint cells are drawn from the exact discrete masses; the speed
        uses the kernel profile (the emission factorizes through it exactly),
        the chord endpoint the closed-form round-domain law, and the position
        is uniform along the chord.
        """
        geom = self.geom
        if not geom.is_round:
            raise SpectralError("stationary sampling is implemented for "
                                "round domains")
        d = geom.dim
        U = _rng.stream_uniforms(seed, "invariant.sample", np.arange(n), 6)
        masses = self.grid.weights * self.coarea * \
            (self.emission @ self.sgrid.coarea)
        cdf = np.cumsum(masses)
        cdf /= cdf[-1]
        j = np.minimum(np.searchsorted(cdf, U[:, 0], side="right"),
                       len(self.grid) - 1)
        if d == 2:
            t = self.grid.cell_edges[j] + U[:, 1] * np.diff(self.grid.cell_edges)[j]
            y = geom.boundary_point(t)
        else:
            y = self.grid.nodes[j]
        if self.wall.constant_theta:
            keys = {(self.wall._theta_key(self.grid.nodes[0])
                     if self.wall.kind == "maxwell" else "uniform"):
                    slice(None)}
        else:
            th = np.asarray(self.wall.theta_at(self.grid.nodes))[j]
            keys = {k: np.nonzero(th == k)[0] for k in np.unique(th)}
        speed = np.empty(n)
        first = self.grid.nodes[0]
        for key, sel in keys.items():
            xr = first if isinstance(sel, slice) else self.grid.nodes[j[sel[0]]]
            speed[sel] = self._speed_sampler(key, xr).sample(U[sel, 2])
        delta = self._direction_table().sample(U[:, 3])
        R = geom.scales[0]
        if d == 2:
            te = t + delta
            xe = geom.boundary_point(te)
        else:
            # endpoint at polar angle delta from y, uniform azimuth
            ey = y / R
            a = np.where(np.abs(ey[:, :1]) < 0.9, [[1.0, 0.0, 0.0]],
                         [[0.0, 1.0, 0.0]])
            t1 = np.cross(ey, a)
            t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
            t2 = np.cross(ey, t1)
            phi = 2.0 * np.pi * U[:, 4]
            cd, sd = np.cos(delta)[:, None], np.sin(delta)[:, None]
            xe = R * (cd * ey + sd * (np.cos(phi)[:, None] * t1
                                      + np.sin(phi)[:, None] * t2))
        chord = xe - y
        clen = np.linalg.norm(chord, axis=-1, keepdims=True)
        sigma = chord / clen
        pos = y + U[:, 5][:, None] * chord
        return pos, speed[:, None] * sigma


def invariant_density(grids, wall, geom=None, sm=None, power_tol=1e-10,
                      maxiter=4000):
    """Invariant phase density from the Perron fixed point of W(0).

    Power iteration runs on the boundary flux vector (the speed profile is
    carried exactly by the emission table); on stagnation the subdominant
    eigenvalue is inspected and, within 1e-3 of 1, a dense solve takes over
    with a reducibility warning.  Returns the triple (emission table on the
    reduced grid, callable phase-density evaluator, fixed-point residual);
    the evaluator is an InvariantDensity carrying the grids and a stationary
    sampler.
    """
    kernel = _as_diffuse(wall)
    geom = geom or grids.boundary.geom
    sm = sm or grids.speed.sm
    W = assemble_W(0.0, geom, sm, kernel, grids)
    T = W.boundary_matrix()
    w = W.grid.weights
    c = np.full(len(W.grid), 1.0 / len(W.grid))
    messages = []
    history = []
    converged = False
    for it in range(maxiter):
        c2 = T @ c
        c2 /= np.sum(np.abs(c2) * w)
        res = float(np.sum(np.abs(c2 - c) * w))
        c = c2
        history.append(res)
        if res < power_tol:
            converged = True
            break
        if it >= 60 and res > 0.9 * history[-50]:
            break
    if not converged:
        vals, vecs = np.linalg.eig(T)
        order = np.argsort(-np.abs(vals))
        sub = abs(vals[order[1]]) if len(order) > 1 else 0.0
        if sub > 1.0 - 1e-3:
            messages.append(
                f"power iteration stagnated (subdominant eigenvalue "
                f"{sub:.6f}); the wall may be reducible, dense solve used")
            warnings.warn(messages[-1], RuntimeWarning)
        cbest = np.real(vecs[:, order[0]])
        c = cbest * np.sign(cbest.sum())
        c /= np.sum(np.abs(c) * w)
    u = W.out * c[:, None]
    ru = W.apply(u)
    residual = float(np.sum(np.abs(ru - u) * W.source_weights())
                     / np.sum(np.abs(u) * W.source_weights()))
    tab = pair_tables(W.grid, grids.subnodes)
    coarea = w @ tab.chord_kernel()
    inv = InvariantDensity(grid=W.grid, sgrid=W.sgrid, wall=kernel,
                           emission=u, flux_vector=c, coarea=coarea,
                           residual=residual, messages=messages)
    inv.emission = u / inv.total_mass()
    return inv.emission, inv, residual


# ---------------------------------------------------------------------------
# resolvent terms


def resolvent_term(n, lam, f, g, geom, sm, kernel, grids=None, chord_order=12):
    """One term <g, Xi H (M H)^n G f> of the resolvent rebound series.

    f is an interior phase density evaluator f(x, v) and g a bounded
    observable; both must broadcast over point arrays.  The inflow G f is
    integrated along backward chords, the collision operator applied n times
    on the full trace grid, and the interior lift paired with g along forward
    chords (the flux-tube identity turns the interior pairing into a
    boundary-footpoint integral).
    """
    lam = complex(lam)
    if lam.real <= 0:
        raise LaplaceDomainError("the resolvent series representation "
                                 "requires Re lam > 0")
    kernel = _as_diffuse(kernel)
    full = assemble_MH_full(lam, geom, sm, kernel, grids)
    grid, sgrid = full.grid, full.sgrid
    X, w = grid.nodes, grid.weights
    N, ns = len(grid), len(sgrid)
    L = full.L
    safe = np.where(L > 0, L, 1.0)
    gx, gw = leggauss(chord_order)
    tq = 0.5 * (gx + 1.0)
    wq = 0.5 * gw
    # chord points from X_a (t=0) to X_b (t=1)
    CH = X[:, None, None, :] * (1.0 - tq)[None, None, :, None] \
        + X[None, :, None, :] * tq[None, None, :, None]
    sig = (X[None, :, :] - X[:, None, :]) / safe[..., None]
    diag = np.arange(N)
    sig[diag, diag, :] = 0.0
    sig[diag, diag, 0] = 1.0       # placeholder; diagonal is masked below

    phi = np.zeros((N, ns, N), dtype=complex)
    off = L > 0
    for l, rho in enumerate(sgrid.rho):
        # G f on the trace: value at x_b arriving from x_j integrates f along
        # the backward ray, t_q the backward arc fraction from x_b toward x_j
        V = rho * sig                               # [j, b] direction j -> b
        pts = CH                                    # [b, j, q] from x_b to x_j
        vals = np.asarray(f(pts, np.broadcast_to(
            V.transpose(1, 0, 2)[:, :, None, :], pts.shape)))
        ph = np.exp(-lam * L[:, :, None] * tq / rho)
        acc = (vals * ph) @ wq * (L / rho)
        phi[:, l, :] = np.where(off, acc, 0.0)
    for _ in range(int(n)):
        phi = full.apply(phi)
    u = full.out * full.collision_flux(phi)[:, None]

    val = 0.0 + 0.0j
    for l, rho in enumerate(sgrid.rho):
        V = rho * sig                               # at footpoint j toward i
        vals = np.asarray(g(CH, np.broadcast_to(V[:, :, None, :], CH.shape)))
        ph = np.exp(-lam * L[:, :, None] * tq / rho)
        I = ((vals * ph) @ wq) * L                  # arc-length integral
        I = np.where(off, I, 0.0)
        val += sgrid.coarea[l] * np.sum(w * u[:, l] * ((full.Jw * I) @ np.ones(N)))
    return complex(val)


def resolvent_term_bound(lam, g_sup, f_l1):
    """A-priori magnitude bound |term| <= |g|_inf |f|_1 / Re lam."""
    lam = complex(lam)
    if lam.real <= 0:
        raise LaplaceDomainError("the resolvent series representation "
                                 "requires Re lam > 0")
    return g_sup * f_l1 / lam.real


# ---------------------------------------------------------------------------
# short-chord truncation


def truncated_kernel_norm(eps, geom, alpha=1.0, nodes=16384, sup_samples=32):
    """sup over boundary points y of int_{|x-y|<eps} |x-y|^(1+2 alpha - d) dpi(x),

    the L1 defect of truncating the form-factor kernel below chord length
    eps; it vanishes as eps -> 0, which is the mechanism making the twice-
    collided operator a limit of compact ones.
    """
    if not 0.0 < eps:
        raise ValueError("eps must be positive")
    expo = 1.0 + 2.0 * alpha - geom.dim
    if expo <= -1.0:
        raise ValueError(f"chord exponent {expo:g} is not integrable; "
                         "alpha must exceed (d-2)/2")
    if geom.dim == 2:
        if geom.is_round:
            # circle: both arcs around y, chord 2R sin(t/2) at angle offset t
            R = geom.scales[0]
            tmax = 2.0 * np.arcsin(min(1.0, eps / (2.0 * R)))
            gx, gw = leggauss(256)
            th = 0.5 * tmax * (gx + 1.0)
            wq = 0.5 * tmax * gw
            r = 2.0 * R * np.sin(0.5 * th)
            return float(2.0 * R * np.sum(wq * r ** expo))
        ts = (np.arange(nodes) + 0.5) * (2.0 * np.pi / nodes)
        X = geom.boundary_point(ts)
        wt = (2.0 * np.pi / nodes) * geom.param_speed(ts)
        best = 0.0
        for y in X[:: max(1, nodes // sup_samples)]:
            r = chord_length(X, y)
            m = (r < eps) & (r > 0)
            best = max(best, float(np.sum(wt[m] * r[m] ** expo)))
        return best
    # ball: rotationally symmetric around any y
    R = geom.scales[0]
    dmax = min(np.pi, 2.0 * np.arcsin(min(1.0, eps / (2.0 * R))))
    gx, gw = leggauss(256)
    th = 0.5 * dmax * (gx + 1.0)
    wq = 0.5 * dmax * gw
    r = 2.0 * R * np.sin(0.5 * th)
    m = r > 0
    return float(np.sum(wq[m] * 2.0 * np.pi * R * R * np.sin(th[m])
                        * r[m] ** expo))
