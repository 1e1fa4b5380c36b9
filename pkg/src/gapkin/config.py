"""Run configuration: INI schema, defaults, validation, and object builders.

One structured text file drives every command.  Unknown sections or keys are
rejected before any computation, all randomness flows from the single master
seed in [sim], and the fully resolved configuration can be echoed back into
the output directory next to the results it produced.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import DomainGeometry, boundary_grid
from .velocity import SpeedMeasure
from .wall import DiffuseKernel, PartlyDiffuseWall


class ConfigError(ValueError):
    pass


def _floats(s):
    return tuple(float(tok) for tok in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(tok) for tok in s.replace(",", " ").split())


# section -> key -> (converter, default).  Defaults are the reference preset:
# unit disk, speeds in [0.5, 3] with constant weight, Maxwell wall at theta=1.
SCHEMA = {
    "domain": {
        "type": (str, "disk"),              # disk | ellipse | ball
        "radius": (float, 1.0),
        "a": (float, 1.0),
        "b": (float, 1.0),
        "dim": (int, 0),                    # 0 = inferred from type
    },
    "velocity": {
        "r0": (float, 0.5),
        "rmax": (float, 3.0),
        "weight_type": (str, "constant"),   # constant | power
        "weight_params": (_floats, ()),
        "quad_radial": (int, 64),
        "quad_angular": (int, 64),
    },
    "wall": {
        "type": (str, "maxwell"),           # maxwell | uniform
        "theta": (_floats, (1.0,)),         # constant or per-node samples
        "alpha": (_floats, (0.0,)),         # constant or per-node samples
        "reflection": (str, "specular"),    # specular | bounceback
    },
    "sim": {
        "particles": (int, 100000),
        "seed": (int, 12345),
        "t_end": (float, 40.0),
        "record_dt": (float, 0.5),
        "mode": (str, "evolve"),            # evolve | absorbing
        "initial": (str, "uniform"),        # uniform | pointcloud | invariant
        "initial_params": (_floats, ()),
        "track_rebounds": (int, 0),
    },
    "spectral": {
        "boundary_nodes": (int, 256),
        "speed_nodes": (int, 48),
        "direction_nodes": (int, 128),      # full-grid oracle boundary nodes
        "oracle_speed_nodes": (int, 16),
        "lambda_re_min": (float, -1.5),
        "lambda_re_max": (float, 0.25),
        "lambda_im_max": (float, 3.0),
        "lambda_resolution": (_ints, (37, 15)),
        "power_tol": (float, 1e-10),
    },
    "output": {
        "dir": (str, "out"),
        "name": (str, "run"),
    },
}


@dataclass
class RunConfig:
    """Validated, fully resolved run configuration."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.sections[key]

    @property
    def seed(self):
        return self.sections["sim"]["seed"]

    def resolved_text(self):
        """Canonical INI text of the resolved configuration."""
        buf = io.StringIO()
        for sec in SCHEMA:
            buf.write(f"[{sec}]\n")
            for key in SCHEMA[sec]:
                val = self.sections[sec][key]
                if isinstance(val, tuple):
                    val = ",".join(f"{v:.12g}" if isinstance(v, float)
                                   else str(v) for v in val)
                buf.write(f"{key} = {val}\n")
            buf.write("\n")
        return buf.getvalue()

    @property
    def hash(self):
        """Experiment identity: all sections except [output], which only
        says where results are written."""
        text = "".join(line for line in
                       self.resolved_text().splitlines(keepends=True)
                       if not line.startswith(("[output]", "dir ", "name ")))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def load_config(path=None, overrides=None):
    """Parse and validate an INI config; None loads the pure defaults.

    overrides is a {section: {key: value}} mapping applied after the file
    (used for --seed / --out command-line overrides); values pass through
    the same converters as file entries.
    """
    sections = {sec: {k: d for k, (_, d) in keys.items()}
                for sec, keys in SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            read = cp.read(path)
        except configparser.Error as e:
            raise ConfigError(f"malformed config file: {e}")
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key '{key}' in section [{sec}]")
                conv = SCHEMA[sec][key][0]
                try:
                    sections[sec][key] = conv(raw)
                except ValueError:
                    raise ConfigError(
                        f"bad value for {sec}.{key}: {raw!r}")
    for sec, keys in (overrides or {}).items():
        for key, val in keys.items():
            conv = SCHEMA[sec][key][0]
            sections[sec][key] = conv(val) if isinstance(val, str) else val
    cfg = RunConfig(sections)
    _validate(cfg)
    return cfg


def _validate(cfg):
    dom = cfg["domain"]
    if dom["type"] not in ("disk", "ellipse", "ball"):
        raise ConfigError(f"unknown domain type {dom['type']!r}")
    want = 3 if dom["type"] == "ball" else 2
    if dom["dim"] == 0:
        dom["dim"] = want
    elif dom["dim"] != want:
        raise ConfigError(f"{dom['type']} domains require dim = {want}")
    if dom["radius"] <= 0 or dom["a"] <= 0 or dom["b"] <= 0:
        raise ConfigError("domain sizes must be positive")
    vel = cfg["velocity"]
    if not 0 < vel["r0"] < vel["rmax"]:
        raise ConfigError("velocity requires 0 < r0 < rmax")
    wal = cfg["wall"]
    if wal["type"] not in ("maxwell", "uniform"):
        raise ConfigError(f"unknown wall type {wal['type']!r}")
    if wal["reflection"] not in ("specular", "bounceback"):
        raise ConfigError(f"unknown reflection law {wal['reflection']!r}")
    if any(a < 0 or a > 1 for a in wal["alpha"]):
        raise ConfigError("wall alpha samples must lie in [0, 1]")
    if any(t <= 0 for t in wal["theta"]):
        raise ConfigError("wall theta samples must be positive")
    sim = cfg["sim"]
    if sim["mode"] not in ("evolve", "absorbing"):
        raise ConfigError(f"unknown sim mode {sim['mode']!r}")
    if sim["initial"] not in ("uniform", "pointcloud", "invariant"):
        raise ConfigError(f"unknown initial condition {sim['initial']!r}")
    if sim["particles"] <= 0 or sim["t_end"] <= 0 or sim["record_dt"] <= 0:
        raise ConfigError("sim sizes and times must be positive")
    spc = cfg["spectral"]
    if len(spc["lambda_resolution"]) != 2:
        raise ConfigError("lambda_resolution takes two integers")
    if spc["lambda_re_min"] >= spc["lambda_re_max"]:
        raise ConfigError("lambda strip requires re_min < re_max")


# ---------------------------------------------------------------------------
# object builders


def make_geometry(cfg):
    dom = cfg["domain"]
    if dom["type"] == "disk":
        return DomainGeometry(scales=(dom["radius"], dom["radius"]))
    if dom["type"] == "ball":
        return DomainGeometry(scales=(dom["radius"],) * 3)
    return DomainGeometry(scales=(dom["a"], dom["b"]))


def make_speed_measure(cfg):
    vel = cfg["velocity"]
    return SpeedMeasure(r0=vel["r0"], rmax=vel["rmax"],
                        dim=cfg["domain"]["dim"],
                        weight_type=vel["weight_type"],
                        weight_params=vel["weight_params"],
                        nquad=vel["quad_radial"])


def make_wall(cfg, geom=None, sm=None):
    """Build the wall operator; per-node theta/alpha samples are laid on a
    boundary grid with one node per sample."""
    geom = geom if geom is not None else make_geometry(cfg)
    sm = sm if sm is not None else make_speed_measure(cfg)
    wal = cfg["wall"]
    theta = wal["theta"]
    grid = None
    if len(theta) > 1:
        grid = boundary_grid(geom, len(theta))
        theta_val = np.asarray(theta)
    else:
        theta_val = float(theta[0])
    kernel = DiffuseKernel(sm=sm, kind=wal["type"], theta=theta_val, grid=grid)
    alpha = wal["alpha"]
    if len(alpha) == 1 and alpha[0] == 0.0:
        return kernel
    if len(alpha) > 1:
        if kernel.grid is None or len(kernel.grid) != len(alpha):
            kernel = DiffuseKernel(sm=sm, kind=wal["type"], theta=theta_val,
                                   grid=boundary_grid(geom, len(alpha)))
        alpha_val = np.asarray(alpha)
    else:
        alpha_val = float(alpha[0])
    reflection = {"bounceback": "bounce_back"}.get(
        wal["reflection"], wal["reflection"])
    return PartlyDiffuseWall(diffuse=kernel, alpha=alpha_val,
                             reflection=reflection)
