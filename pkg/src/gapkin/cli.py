"""Command line interface: experiment orchestration and CSV emission.

Subcommands: geometry-check, validate-wall, simulate, spectrum, invariant,
laplace-check, acceptance.  Exit codes: 0 all checks pass, 1 a check failed,
2 configuration error.  Every CSV starts with a comment line carrying the
config hash and master seed, then a header row; numbers are written with
%.12g so outputs are byte-stable for a fixed config and seed.
"""

import argparse
import os
import sys
import time

import numpy as np

from .config import (ConfigError, load_config, make_geometry,
                     make_speed_measure, make_wall)
from .geometry import change_of_variables_check, flatness_constant
from .velocity import InverseCdfTable
from .wall import (DiffuseKernel, PartlyDiffuseWall, beta_constants,
                   validate_kernel_integrability)
from . import transport
from . import spectral

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and np.isnan(x):
        return "nan"
    if isinstance(x, (float, np.floating)):
        return "%.12g" % x
    return str(x)


def write_csv(path, header, rows, cfg):
    with open(path, "w") as fh:
        fh.write(f"# config {cfg.hash} seed {cfg.seed}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _prepare_outdir(cfg):
    """Create the output directory and echo the resolved config into it."""
    outdir = cfg["output"]["dir"]
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, f"{cfg['output']['name']}_config.ini")
    with open(path, "w") as fh:
        fh.write(f"# resolved config, hash {cfg.hash}\n")
        fh.write(cfg.resolved_text())
    return outdir


def _csv_path(cfg, outdir, stem):
    return os.path.join(outdir, f"{cfg['output']['name']}_{stem}.csv")


class Report:
    """Named checks with measured value, tolerance, and pass/fail."""

    def __init__(self, cfg, threads):
        self.rows = []
        print(f"gapkin | config {cfg.hash} seed {cfg.seed} "
              f"threads {threads}")

    def add(self, name, value, tol, passed, seconds, detail=""):
        self.rows.append((name, value, tol, bool(passed), seconds))
        mark = "PASS" if passed else "FAIL"
        msg = f"[{mark}] {name}: value={_fmt(value)} tol={_fmt(tol)} " \
              f"({seconds:.1f}s)"
        if detail:
            msg += f" {detail}"
        print(msg)

    def exit_code(self):
        return EXIT_PASS if all(r[3] for r in self.rows) else EXIT_FAIL


# ---------------------------------------------------------------------------
# subcommands


def cmd_geometry_check(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    rep = Report(cfg, threads)
    d = geom.dim
    funcs = [("const", lambda s: np.ones(s.shape[:-1])),
             ("coord0", lambda s: 1.0 + 0.5 * s[..., 0]),
             ("quad", lambda s: s[..., 0] ** 2 + 0.25 * s[..., 1]),
             ("smooth", lambda s: np.exp(0.3 * s[..., 0] - 0.2 * s[..., 1])),
             ("trig", lambda s: 1.5 + np.sin(s[..., 0]) * np.cos(s[..., 1]))]
    rows = []
    for name, g in funcs:
        t0 = time.time()
        lhs, rhs = change_of_variables_check(geom, g)
        err = abs(lhs - rhs)
        tol = 1e-6 if name == "const" and d == 2 else 1e-5
        rep.add(f"change_of_variables[{name}]", err, tol, err <= tol,
                time.time() - t0, detail=f"lhs={_fmt(lhs)} rhs={_fmt(rhs)}")
        rows.append((name, lhs, rhs, err))
    t0 = time.time()
    alpha_used, cflat = flatness_constant(geom)
    rep.add("flatness_constant", cflat, np.inf, np.isfinite(cflat),
            time.time() - t0, detail=f"alpha={alpha_used}")
    rows.append(("flatness", alpha_used, cflat, 0.0))
    write_csv(_csv_path(cfg, outdir, "geometry_check"),
              ["check", "lhs", "rhs", "error"], rows, cfg)
    return rep.exit_code()


def cmd_validate_wall(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    kernel = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall
    rep = Report(cfg, threads)
    t0 = time.time()
    report = validate_kernel_integrability(kernel)
    rows = []
    for chk in report["checks"]:
        rows.append((chk["name"], chk.get("value", np.nan), chk["passed"]))
        rep.add(f"integrability[{chk['name']}]", chk.get("value", np.nan),
                np.inf, chk["passed"], time.time() - t0)
        t0 = time.time()
    if isinstance(wall, PartlyDiffuseWall):
        c_beta, lam_beta, adm = beta_constants(wall, geom)
        rep.add("beta_admissible", c_beta, 1.0, adm, 0.0,
                detail=f"lambda_beta={_fmt(lam_beta)}")
        rows.append(("beta_admissible", c_beta, adm))
    write_csv(_csv_path(cfg, outdir, "validate_wall"),
              ["check", "value", "passed"], rows, cfg)
    return rep.exit_code()


def _make_initial(cfg, geom, sm, wall, threads):
    sim = cfg["sim"]
    n = sim["particles"]
    absorbing = sim["mode"] == "absorbing"
    track = max(sim["track_rebounds"], 0)
    kernel = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall
    if sim["initial"] == "uniform":
        return transport.initial_ensemble(
            geom, sm, wall, sim["seed"], n, kind="uniform",
            absorbing=absorbing, threads=threads, track_rebounds=track)
    if sim["initial"] == "pointcloud":
        par = sim["initial_params"]
        d = geom.dim
        if len(par) != 2 * d:
            raise ConfigError("pointcloud initial_params takes position then "
                              f"velocity ({2 * d} numbers for dim {d})")
        pos = np.tile(np.asarray(par[:d]), (n, 1))
        vel = np.tile(np.asarray(par[d:]), (n, 1))
        if not np.all(geom.contains(pos)):
            raise ConfigError("pointcloud start lies outside the domain")
        return transport.initial_ensemble(
            geom, sm, wall, sim["seed"], n, kind="given", position=pos,
            velocity=vel, absorbing=absorbing, threads=threads,
            track_rebounds=track)
    grids = _spectral_grids(cfg, geom, sm)
    _, inv, _ = spectral.invariant_density(
        grids, kernel, geom, sm, power_tol=cfg["spectral"]["power_tol"])
    pos, vel = inv.sample(n, seed=sim["seed"])
    return transport.initial_ensemble(
        geom, sm, wall, sim["seed"], n, kind="given", position=pos,
        velocity=vel, absorbing=absorbing, threads=threads,
        track_rebounds=track)


def _spectral_grids(cfg, geom, sm):
    spc = cfg["spectral"]
    return spectral.operator_grids(
        geom, sm, boundary_nodes=spc["boundary_nodes"],
        speed_nodes=spc["speed_nodes"],
        oracle_nodes=spc["direction_nodes"],
        oracle_speed_nodes=spc["oracle_speed_nodes"])


def _equilibrium_cells(grid, inv):
    """Cell averages of the invariant density on a phase histogram grid."""
    d = grid.geom.dim

    def psi(r, rho, mu):
        r, rho, mu = np.broadcast_arrays(r, rho, mu)
        x = np.zeros(r.shape + (d,))
        x[..., 0] = r
        v = np.zeros(r.shape + (d,))
        v[..., 0] = rho * mu
        v[..., 1] = rho * np.sqrt(np.clip(1.0 - mu ** 2, 0.0, None))
        return inv.evaluate(x, v)

    return transport.cell_average(grid, psi)


def cmd_simulate(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    kernel = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall
    sim = cfg["sim"]
    rep = Report(cfg, threads)

    t0 = time.time()
    ens = _make_initial(cfg, geom, sm, wall, threads)
    nbuckets = 8
    eq = grid = None
    if geom.is_round and isinstance(wall, DiffuseKernel):
        grid = transport.phase_grid(geom, sm)
        grids = _spectral_grids(cfg, geom, sm)
        _, inv, _ = spectral.invariant_density(
            grids, kernel, geom, sm, power_tol=cfg["spectral"]["power_tol"])
        eq = _equilibrium_cells(grid, inv)

    times = np.arange(0.0, sim["t_end"] + 0.5 * sim["record_dt"],
                      sim["record_dt"])
    rows = []
    l1s = []
    for t in times:
        ens.advance(t)
        gens = ens.masses_by_generation(nbuckets)
        if eq is not None:
            est = transport.estimate_density(ens, grid, t)
            l1 = transport.l1_distance(grid, est, eq)
        else:
            l1 = np.nan
        l1s.append(l1)
        rows.append((t, ens.alive_mass(t)) + tuple(gens) + (l1,))
    header = ["t", "total_mass"] + [f"gen{k}" for k in range(nbuckets - 1)] \
        + [f"gen{nbuckets - 1}plus", "l1_to_equilibrium"]
    write_csv(_csv_path(cfg, outdir, "simulate"), header, rows, cfg)
    rep.add("simulate_run", ens.t, np.inf, True, time.time() - t0,
            detail=f"{len(ens)} particles to t={_fmt(ens.t)}")

    # rebound vanishing: the k-th rebound happens before k D / r0
    if sim["track_rebounds"] > 0 and ens.rebound_times is not None:
        t0 = time.time()
        limit = geom.diameter / sm.r0
        K = ens.rebound_times.shape[1]
        worst = 0.0
        bad = None
        for k in range(1, K + 1):
            slack = ens.rebound_times[:, k - 1] - k * limit
            j = int(np.argmax(slack))
            if slack[j] > worst:
                worst, bad = slack[j], (j, k)
        ok = worst <= 1e-9
        detail = "" if ok else f"particle {bad[0]} rebound {bad[1]}"
        rep.add("rebound_vanishing", worst, 1e-9, ok, time.time() - t0,
                detail=detail)

    if sim["mode"] == "absorbing":
        t0 = time.time()
        horizon = geom.diameter / sm.r0
        late = [r[1] for r, t in zip(rows, times) if t >= horizon - 1e-12]
        gone = max(late) if late else 0.0
        rep.add("absorbing_vanish", gone, 0.0, gone == 0.0, time.time() - t0)
    elif eq is not None:
        try:
            t0 = time.time()
            band = transport.bootstrap_null_l1(ens, grid, nboot=100,
                                               seed=sim["seed"], t=times[-1])
            floor = band[int(0.5 * (len(band) - 1))]
            fit = transport.fit_decay_rate(times, np.asarray(l1s),
                                           floor=floor / 3.0)
            rep.add("decay_rate", fit["rate"], np.inf, fit["rate"] > 0,
                    time.time() - t0, detail=f"npoints={fit['npoints']}")
        except transport.InsufficientDecayData as e:
            print(f"decay fit skipped: {e}")
    return rep.exit_code()


def cmd_spectrum(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    spc = cfg["spectral"]
    rep = Report(cfg, threads)
    re_range = (spc["lambda_re_min"], spc["lambda_re_max"])
    if isinstance(wall, PartlyDiffuseWall):
        c_beta, lam_beta, adm = beta_constants(wall, geom)
        if not adm:
            print(f"spectrum refused: admissibility constant c_beta = "
                  f"{_fmt(c_beta)} >= 1 certifies no root-free strip",
                  file=sys.stderr)
            return EXIT_CONFIG
        floor = -0.9 * lam_beta
        if re_range[0] < floor:
            print(f"strip truncated: requested Re lam >= {_fmt(re_range[0])} "
                  f"exceeds the certified depth lambda_beta = "
                  f"{_fmt(lam_beta)}; scanning Re lam >= {_fmt(floor)}")
            re_range = (floor, re_range[1])
    t0 = time.time()
    try:
        scan = spectral.scan_spectrum(
            geom, sm, wall, re_range=re_range, im_max=spc["lambda_im_max"],
            resolution=tuple(spc["lambda_resolution"]),
            nodes=spc["direction_nodes"])
    except spectral.SpectralError as e:
        print(f"spectrum failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    rows = [(re, im, dv) for (re, im, dv) in
            zip(np.repeat(scan.re, len(scan.im)),
                np.tile(scan.im, len(scan.re)),
                scan.dist.ravel())]
    write_csv(_csv_path(cfg, outdir, "spectrum"),
              ["re_lambda", "im_lambda", "r_or_dist"], rows, cfg)
    for r in scan.roots:
        lam = r["lam"]
        delta = r.get("delta", np.nan)
        print(f"root: {lam.real:+.8f} {lam.imag:+.8f}i "
              f"residual={_fmt(r['residual'])} delta={_fmt(delta)}")
    bound = " (lower bound: no nonzero roots in the strip)" \
        if scan.gap_is_lower_bound else ""
    rep.add("spectral_gap", scan.gap, np.inf, scan.gap > 0,
            time.time() - t0,
            detail=f"roots={scan.root_count} "
                   f"refined={scan.refined_root_count}{bound}")
    return rep.exit_code()


def cmd_invariant(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    kernel = wall.diffuse if isinstance(wall, PartlyDiffuseWall) else wall
    rep = Report(cfg, threads)
    t0 = time.time()
    grids = _spectral_grids(cfg, geom, sm)
    psi, inv, residual = spectral.invariant_density(
        grids, kernel, geom, sm, power_tol=cfg["spectral"]["power_tol"])
    rows = [(j, inv.sgrid.rho[l], psi[j, l])
            for j in range(psi.shape[0]) for l in range(psi.shape[1])]
    write_csv(_csv_path(cfg, outdir, "invariant"),
              ["node", "speed", "value"], rows, cfg)
    rep.add("invariant_residual", residual, 1e-6, residual < 1e-6,
            time.time() - t0, detail=f"mass={_fmt(inv.total_mass())}")
    rep.add("invariant_positive", float(psi.min()), 0.0, psi.min() > 0, 0.0)
    for msg in inv.messages:
        print(f"note: {msg}")
    return rep.exit_code()


def cmd_laplace_check(cfg, threads):
    outdir = _prepare_outdir(cfg)
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    if isinstance(wall, PartlyDiffuseWall):
        print("laplace-check requires a pure diffuse wall", file=sys.stderr)
        return EXIT_CONFIG
    rep = Report(cfg, threads)
    sim = cfg["sim"]

    def g(x, v):
        x = np.asarray(x)
        return np.exp(-np.sum(x * x, axis=-1))

    phase_mass = geom.volume * sm.total_mass()

    def f(x, v):
        return np.ones(np.asarray(x).shape[:-1]) / phase_mass

    grids = _spectral_grids(cfg, geom, sm)
    rows = []
    for lam in (0.5, 1.0):
        for n in (0, 1):
            t0 = time.time()
            # the pairing consumes flight segments as they are generated, so
            # each term needs a fresh (seed-identical) ensemble
            ens = transport.initial_ensemble(geom, sm, wall, sim["seed"],
                                             sim["particles"], kind="uniform",
                                             threads=threads)
            mc = transport.laplace_functional(ens, n, lam, g)
            quad = spectral.resolvent_term(n, lam, f, g, geom, sm, wall,
                                           grids).real
            rel = abs(mc - quad) / abs(quad)
            rows.append((n, lam, mc, quad, rel))
            rep.add(f"laplace[n={n},lam={_fmt(lam)}]", rel, 0.05,
                    rel <= 0.05, time.time() - t0,
                    detail=f"mc={_fmt(mc)} quad={_fmt(quad)}")
    write_csv(_csv_path(cfg, outdir, "laplace_check"),
              ["n", "lambda", "monte_carlo", "quadrature", "rel_error"],
              rows, cfg)
    return rep.exit_code()


def cmd_acceptance(cfg, threads):
    outdir = _prepare_outdir(cfg)
    from . import checks
    rep = Report(cfg, threads)
    rows = []
    for fn in checks.ALL_CRITERIA:
        res = fn(cfg, threads)
        rep.add(res.name, res.value, res.tol, res.passed, res.seconds,
                detail=res.detail)
        rows.append((res.name, res.value, res.tol, res.passed, res.seconds))
    write_csv(_csv_path(cfg, outdir, "acceptance"),
              ["criterion", "value", "tolerance", "passed", "seconds"],
              rows, cfg)
    return rep.exit_code()


# ---------------------------------------------------------------------------


COMMANDS = [
    ("geometry-check", cmd_geometry_check,
     "change-of-variables and flatness checks"),
    ("validate-wall", cmd_validate_wall,
     "kernel integrability and admissibility checks"),
    ("simulate", cmd_simulate,
     "evolve an ensemble; write mass/distance time series"),
    ("spectrum", cmd_spectrum,
     "scan the complex strip for eigenvalue crossings"),
    ("invariant", cmd_invariant,
     "compute and tabulate the invariant density"),
    ("laplace-check", cmd_laplace_check,
     "Monte Carlo vs quadrature Laplace-term cross check"),
    ("acceptance", cmd_acceptance,
     "run the full acceptance suite"),
]


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gapkin",
        description="kinetic transport with diffuse boundary: simulation "
                    "and boundary-operator spectra")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in COMMANDS:
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", default=None, help="INI config path")
        q.add_argument("--out", default=None, help="output directory")
        q.add_argument("--seed", type=int, default=None,
                       help="master seed override")
        q.add_argument("--threads", type=int, default=None,
                       help="worker threads (default $GAPKIN_THREADS or 1)")
        q.set_defaults(func=fn)
    args = parser.parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides.setdefault("output", {})["dir"] = args.out
    if args.seed is not None:
        overrides.setdefault("sim", {})["seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads if args.threads is not None else \
        int(os.environ.get("GAPKIN_THREADS", "1") or 1)
    try:
        return args.func(cfg, threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
