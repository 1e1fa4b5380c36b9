"""Event-driven Monte Carlo transport with wall rebounds.

Particles fly ballistically between wall hits; state is stored lazily as the
last event (position, time, velocity) plus the precomputed next hit time, so
advancing to a target time only touches particles whose hit falls before it.
Generation bookkeeping counts wall rebounds: a particle is in generation n on
the open time interval up to its (n+1)-th hit, and moves to generation n+1
exactly at the hit (strict-inequality convention).

Randomness is counter-based per (seed, particle, rebound), so trajectories
are independent of the block partition used by the worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .velocity import InverseCdfTable, sample_isotropic_direction
from .wall import resample_from_uniforms

BLOCK = 1 << 15
SNAP_TRAP = 1e-9           # wall snap displacement trap, relative to diameter
REBOUND_TRACK_DEFAULT = 8


class TransportError(RuntimeError):
    pass


class InsufficientDecayData(RuntimeError):
    pass


def resolve_threads(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("GAPKIN_THREADS")
    return max(1, int(env)) if env else 1


@dataclass
class Ensemble:
    geom: object
    sm: object
    wall: object
    seed: int
    x_last: np.ndarray
    t_last: np.ndarray
    v: np.ndarray
    next_hit: np.ndarray
    w: np.ndarray
    nreb: np.ndarray
    alive: np.ndarray
    death_time: np.ndarray
    absorbing: bool = False
    threads: int = 1
    t: float = 0.0
    rebound_times: np.ndarray = None     # (n, K) first K hit times
    tangential_events: int = 0

    def __len__(self):
        return self.w.size

    # ------------------------------------------------------------------
    def positions(self, t=None):
        """Particle positions at time t (defaults to the current frontier)."""
        t = self.t if t is None else float(t)
        if t > self.t + 1e-12 or np.any(self.t_last[self.alive] > t + 1e-12):
            raise TransportError("positions requested outside the advanced range")
        return self.x_last + (t - self.t_last)[:, None] * self.v

    def masses_by_generation(self, nbuckets):
        """Alive mass per generation; the last bucket lumps gen >= nbuckets-1."""
        out = np.zeros(nbuckets)
        gen = np.minimum(self.nreb[self.alive], nbuckets - 1)
        np.add.at(out, gen, self.w[self.alive])
        return out

    def alive_mass(self, t=None):
        t = self.t if t is None else float(t)
        return float(np.sum(self.w[self.death_time > t]))

    # ------------------------------------------------------------------
    def advance(self, t_target, consumer=None, max_generation=None):
        """Process all wall events up to and including t_target.

        consumer, if given, is called on each completed flight segment as
        consumer(idx, gen, t0, t1, x0, v, w) and must return a scalar; the
        per-block partial sums are reduced in fixed block order, so the total
        does not depend on the thread count.  Returns that total.
        """
        t_target = float(t_target)
        if t_target < self.t:
            raise TransportError("cannot advance backwards")
        n = len(self)
        blocks = [slice(i, min(i + BLOCK, n)) for i in range(0, n, BLOCK)]

        def run(sl):
            acc = 0.0
            while True:
                due = self.alive[sl] & (self.next_hit[sl] <= t_target)
                if not np.any(due):
                    break
                acc += self._process_events(sl, due, consumer, max_generation)
            return acc

        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                parts = list(ex.map(run, blocks))
        else:
            parts = [run(sl) for sl in blocks]
        self.t = t_target
        return sum(parts)

    def _process_events(self, sl, due, consumer, max_generation):
        idx = np.nonzero(due)[0] + sl.start
        t_hit = self.next_hit[idx]
        x_raw = self.x_last[idx] + (t_hit - self.t_last[idx])[:, None] * self.v[idx]
        x_hit = self.geom.snap(x_raw)
        miss = np.linalg.norm(x_hit - x_raw, axis=1)
        bad = miss > SNAP_TRAP * self.geom.diameter
        if np.any(bad):
            j = idx[np.argmax(miss)]
            raise TransportError(
                f"particle {j} missed the wall by {miss.max():.3e} "
                f"at t={t_hit[np.argmax(miss)]:.6g}")

        gen = self.nreb[idx]
        acc = 0.0
        if consumer is not None:
            acc = consumer(idx, gen, self.t_last[idx], t_hit,
                           self.x_last[idx], self.v[idx], self.w[idx])

        if self.rebound_times is not None:
            kmax = self.rebound_times.shape[1]
            slot = gen  # hit number gen+1 lands in column gen
            ok = slot < kmax
            self.rebound_times[idx[ok], slot[ok]] = t_hit[ok]

        if self.absorbing:
            self.alive[idx] = False
            self.death_time[idx] = t_hit
            self.next_hit[idx] = np.inf
            return acc

        if max_generation is not None:
            cut = gen + 1 > max_generation
            if np.any(cut):
                ci = idx[cut]
                self.alive[ci] = False
                self.death_time[ci] = t_hit[cut]
                self.next_hit[ci] = np.inf
                idx, t_hit, x_hit, gen = (idx[~cut], t_hit[~cut],
                                          x_hit[~cut], gen[~cut])
                if idx.size == 0:
                    return acc

        U = rng.event_uniforms(self.seed, "wall", idx, gen, 4)
        normals = self.geom.normal(x_hit)
        v_new, _, ntan = resample_from_uniforms(self.wall, x_hit, normals,
                                                self.v[idx], U)
        if ntan:
            self.tangential_events += ntan
        tau = self.geom.exit_time(x_hit, v_new)
        self.x_last[idx] = x_hit
        self.t_last[idx] = t_hit
        self.v[idx] = v_new
        self.nreb[idx] = gen + 1
        self.next_hit[idx] = t_hit + tau
        return acc


def initial_ensemble(geom, sm, wall, seed, n, kind="uniform",
                     position=None, velocity=None, weights=None,
                     absorbing=False, threads=None, track_rebounds=0):
    """Build an ensemble of n particles.

    kind "uniform" draws positions uniformly in the domain and velocities
    from the isotropic annulus measure weight(|v|) dv; kind "given" uses the
    supplied position/velocity arrays.
    """
    d = geom.dim
    threads = resolve_threads(threads)
    if kind == "uniform":
        U = rng.stream_uniforms(seed, "init.pos", np.arange(n), d + 1)
        radius = U[:, 0] ** (1.0 / d)
        dirs = _uniforms_to_direction(U[:, 1:], d)
        position = radius[:, None] * dirs * np.asarray(geom.scales)
        V = rng.stream_uniforms(seed, "init.vel", np.arange(n), d)
        tab = _speed_table_lebesgue(sm)
        speeds = tab.sample(V[:, 0])
        vdirs = _uniforms_to_direction(V[:, 1:], d)
        velocity = speeds[:, None] * vdirs
    elif kind == "given":
        position = np.asarray(position, dtype=float)
        velocity = np.asarray(velocity, dtype=float)
        if position.shape != (n, d) or velocity.shape != (n, d):
            raise ValueError("given arrays must have shape (n, dim)")
    else:
        raise ValueError(f"unknown initial condition {kind!r}")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    ens = Ensemble(
        geom=geom, sm=sm, wall=wall, seed=int(seed),
        x_last=position.copy(), t_last=np.zeros(n), v=velocity.copy(),
        next_hit=geom.exit_time(position, velocity),
        w=w, nreb=np.zeros(n, dtype=np.int64),
        alive=np.ones(n, dtype=bool), death_time=np.full(n, np.inf),
        absorbing=absorbing, threads=threads,
        rebound_times=np.full((n, track_rebounds), np.nan)
        if track_rebounds else None)
    return ens


def _uniforms_to_direction(U, d):
    if d == 2:
        phi = 2.0 * np.pi * U[:, 0]
        return np.stack([np.cos(phi), np.sin(phi)], axis=1)
    mu = 2.0 * U[:, 0] - 1.0
    phi = 2.0 * np.pi * U[:, 1]
    s = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    return np.stack([s * np.cos(phi), s * np.sin(phi), mu], axis=1)


_lebesgue_tables = {}


def _speed_table_lebesgue(sm):
    key = (sm.r0, sm.rmax, sm.dim, sm.weight_type, sm.weight_params)
    tab = _lebesgue_tables.get(key)
    if tab is None:
        tab = InverseCdfTable.from_density(
            lambda r: r ** (sm.dim - 1) * sm.weight(r),
            sm.r0, sm.rmax, sm.cdf_resolution)
        _lebesgue_tables[key] = tab
    return tab


def uniform_phase_density(geom, sm):
    """Constant value of the unit-mass uniform density on the phase annulus,
    with respect to dx weight(|v|) dv."""
    return 1.0 / (geom.volume * sm.total_mass())


# ---------------------------------------------------------------------------
# phase-space histograms on (radius, speed, direction cosine)


@dataclass
class PhaseGrid:
    """Product grid in (|x|, |v|, cos angle(x, v)) for disk/ball domains.

    Densities are taken with respect to dx weight(|v|) dv; ref holds the
    reference measure of each cell under that measure.
    """

    geom: object
    sm: object
    r_edges: np.ndarray
    rho_edges: np.ndarray
    mu_edges: np.ndarray
    ref: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.geom.is_round:
            raise ValueError("phase histograms require a disk or ball domain")
        d = self.geom.dim
        r, p, m = self.r_edges, self.rho_edges, self.mu_edges
        if d == 2:
            rmass = np.pi * np.diff(r ** 2)
            mumass = 2.0 * np.diff(np.arcsin(np.clip(m, -1.0, 1.0)))
        else:
            rmass = 4.0 * np.pi / 3.0 * np.diff(r ** 3)
            mumass = 2.0 * np.pi * np.diff(m)
        rhomass = np.empty(p.size - 1)
        gl_x, gl_w = np.polynomial.legendre.leggauss(16)
        for i in range(p.size - 1):
            a, b = p[i], p[i + 1]
            t = 0.5 * (b - a) * gl_x + 0.5 * (a + b)
            rhomass[i] = 0.5 * (b - a) * np.sum(
                gl_w * t ** (d - 1) * self.sm.weight(t))
        self.ref = rmass[:, None, None] * rhomass[None, :, None] \
            * mumass[None, None, :]

    @property
    def shape(self):
        return (self.r_edges.size - 1, self.rho_edges.size - 1,
                self.mu_edges.size - 1)


def phase_grid(geom, sm, nr=12, nrho=12, nmu=8):
    return PhaseGrid(geom, sm,
                     np.linspace(0.0, geom.scales[0], nr + 1),
                     np.linspace(sm.r0, sm.rmax, nrho + 1),
                     np.linspace(-1.0, 1.0, nmu + 1))


def histogram_density(grid, x, v, w):
    """Cell-averaged density (mass per reference measure) of weighted samples."""
    r = np.linalg.norm(x, axis=1)
    rho = np.linalg.norm(v, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.sum(x * v, axis=1) / (r * rho)
    mu = np.clip(np.nan_to_num(mu), -1.0, 1.0)
    r = np.minimum(r, grid.r_edges[-1])
    rho = np.clip(rho, grid.rho_edges[0], grid.rho_edges[-1])
    h, _ = np.histogramdd(
        np.stack([r, rho, mu], axis=1),
        bins=(grid.r_edges, grid.rho_edges, grid.mu_edges), weights=w)
    return h / grid.ref


def estimate_density(ens, grid, t=None):
    """Phase-space density of the ensemble at time t (advances if needed)."""
    t = ens.t if t is None else float(t)
    if t > ens.t:
        ens.advance(t)
    x = ens.positions(t)
    live = ens.death_time > t
    return histogram_density(grid, x[live], ens.v[live], ens.w[live])


def l1_distance(grid, f1, f2):
    return float(np.sum(np.abs(f1 - f2) * grid.ref))


def cell_average(grid, psi, order=4):
    """Cell averages of a smooth density psi(r, rho, mu) on the grid."""
    gx, gw = np.polynomial.legendre.leggauss(order)

    def nodes(edges, dens):
        a, b = edges[:-1], edges[1:]
        t = 0.5 * (b - a)[:, None] * gx[None, :] + 0.5 * (a + b)[:, None]
        wt = 0.5 * (b - a)[:, None] * gw[None, :] * dens(t)
        return t, wt

    d = grid.geom.dim
    if d == 2:
        rt, rw = nodes(grid.r_edges, lambda r: 2.0 * np.pi * r)
        # mu = sin(phi) removes the endpoint singularity of the cosine law
        phi = np.arcsin(np.clip(grid.mu_edges, -1.0, 1.0))
        ft, fw = nodes(phi, lambda f: 2.0 * np.ones_like(f))
        mt, mw = np.sin(ft), fw
    else:
        rt, rw = nodes(grid.r_edges, lambda r: 4.0 * np.pi * r ** 2)
        mt, mw = nodes(grid.mu_edges, lambda m: 2.0 * np.pi * np.ones_like(m))
    pt, pw = nodes(grid.rho_edges, lambda p: p ** (d - 1) * grid.sm.weight(p))
    vals = psi(rt[:, None, None, :, None, None],
               pt[None, :, None, None, :, None],
               mt[None, None, :, None, None, :])
    vals = np.broadcast_to(vals, grid.shape + (order, order, order))
    mass = np.einsum("ijkabc,ia,jb,kc->ijk", vals, rw, pw, mw)
    return mass / grid.ref


def bootstrap_null_l1(ens, grid, nboot=200, seed=0, t=None):
    """Null distribution of the L1 distance between consecutive bootstrap
    resamples of the ensemble at time t.  Returns the sorted distances."""
    t = ens.t if t is None else float(t)
    if t > ens.t:
        ens.advance(t)
    x = ens.positions(t)
    live = ens.death_time > t
    x, v, w = x[live], ens.v[live], ens.w[live]
    n = w.size
    gen = np.random.default_rng(seed)
    prev = None
    dists = []
    for _ in range(nboot + 1):
        pick = gen.integers(0, n, size=n)
        h = histogram_density(grid, x[pick], v[pick], w[pick])
        if prev is not None:
            dists.append(l1_distance(grid, h, prev))
        prev = h
    return np.sort(np.asarray(dists))


def fit_decay_rate(ts, vals, floor=0.0, min_points=4):
    """Least-squares exponential rate of vals(ts), ignoring points at or
    below 3x the noise floor.  Returns dict(rate, intercept, npoints)."""
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(vals, dtype=float)
    keep = vals > max(3.0 * floor, 0.0)
    if np.count_nonzero(keep) < min_points:
        raise InsufficientDecayData(
            f"only {np.count_nonzero(keep)} points above the noise floor")
    slope, intercept = np.polyfit(ts[keep], np.log(vals[keep]), 1)
    return dict(rate=-float(slope), intercept=float(intercept),
                npoints=int(np.count_nonzero(keep)))


# ---------------------------------------------------------------------------
# Laplace-transform functional of one rebound generation


def laplace_functional(ens, term_n, lam, g, gl_order=12):
    """Monte Carlo value of the pairing of g with the Laplace transform of
    the generation-(term_n + 1) evolution applied to the initial density.

    Advances the ensemble far enough that generation term_n + 1 is complete
    (its segments all end by (term_n + 2) flights of the horizon time) and
    accumulates the time integral of exp(-lam t) g along those segments.
    """
    target = term_n + 1
    horizon = ens.geom.diameter / ens.sm.r0
    gx, gw = np.polynomial.legendre.leggauss(gl_order)

    def consumer(idx, gen, t0, t1, x0, v, w):
        sel = gen == target
        if not np.any(sel):
            return 0.0
        t0, t1, x0, v, w = t0[sel], t1[sel], x0[sel], v[sel], w[sel]
        half = 0.5 * (t1 - t0)
        tq = t0[:, None] + half[:, None] * (gx[None, :] + 1.0)
        xq = x0[:, None, :] + (tq - t0[:, None])[:, :, None] * v[:, None, :]
        vq = np.broadcast_to(v[:, None, :], xq.shape)
        vals = np.exp(-lam * tq) * g(xq, vq)
        return np.sum(w * half * (vals @ gw))

    return ens.advance((target + 1) * horizon * (1.0 + 1e-12),
                       consumer=consumer, max_generation=target)
