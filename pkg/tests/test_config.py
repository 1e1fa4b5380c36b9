import os

import numpy as np
import pytest

from gapkin.config import (ConfigError, load_config, make_geometry,
                           make_speed_measure, make_wall)
from gapkin.geometry import DomainGeometry
from gapkin.wall import DiffuseKernel, PartlyDiffuseWall


def write(tmp_path, text):
    p = os.path.join(str(tmp_path), "c.ini")
    with open(p, "w") as fh:
        fh.write(text)
    return p


def test_defaults_reference_preset():
    cfg = load_config(None)
    assert cfg["domain"]["type"] == "disk"
    assert cfg["domain"]["radius"] == 1.0
    assert cfg["velocity"]["r0"] == 0.5
    assert cfg["velocity"]["rmax"] == 3.0
    assert cfg["wall"]["type"] == "maxwell"
    assert cfg.seed == 12345
    geom = make_geometry(cfg)
    assert geom.scales == (1.0, 1.0)
    sm = make_speed_measure(cfg)
    assert (sm.r0, sm.rmax, sm.dim) == (0.5, 3.0, 2)
    wall = make_wall(cfg, geom, sm)
    assert isinstance(wall, DiffuseKernel)
    assert wall.kind == "maxwell" and wall.theta == (1.0,)[0]


def test_file_values_and_overrides(tmp_path):
    p = write(tmp_path, "[sim]\nparticles = 777\nseed = 5\n"
                        "[domain]\ntype = ellipse\na = 1.3\nb = 0.7\n")
    cfg = load_config(p)
    assert cfg["sim"]["particles"] == 777
    assert cfg.seed == 5
    assert make_geometry(cfg).scales == (1.3, 0.7)
    cfg2 = load_config(p, overrides={"sim": {"seed": 9}})
    assert cfg2.seed == 9


def test_unknown_section_and_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[sims]\nparticles = 10\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[sim]\nnparticles = 10\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[sim]\nparticles = ten\n"))
    with pytest.raises(ConfigError):
        load_config(os.path.join(str(tmp_path), "missing.ini"))


def test_validation_errors(tmp_path):
    bad = ["[velocity]\nr0 = 3.0\nrmax = 0.5\n",
           "[velocity]\nr0 = 0.0\n",
           "[wall]\nalpha = 1.5\n",
           "[wall]\ntheta = -1.0\n",
           "[domain]\ntype = disk\nradius = -2.0\n",
           "[sim]\nparticles = 0\n",
           "[spectral]\nlambda_re_min = 0.5\nlambda_re_max = 0.1\n",
           "[sim]\nmode = frozen\n"]
    for text in bad:
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, text))


def test_hash_excludes_output_location(tmp_path):
    base = load_config(None)
    moved = load_config(None, overrides={"output": {"dir": "elsewhere",
                                                    "name": "x"}})
    assert base.hash == moved.hash
    reseeded = load_config(None, overrides={"sim": {"seed": 1}})
    assert base.hash != reseeded.hash


def test_resolved_text_roundtrip(tmp_path):
    cfg = load_config(write(tmp_path, "[sim]\nparticles = 321\n"
                                      "[wall]\ntheta = 0.8\n"))
    p = os.path.join(str(tmp_path), "resolved.ini")
    with open(p, "w") as fh:
        fh.write(cfg.resolved_text())
    again = load_config(p)
    assert again.hash == cfg.hash
    assert again["sim"]["particles"] == 321


def test_make_wall_variants(tmp_path):
    cfg = load_config(write(tmp_path, "[wall]\nalpha = 0.5\n"
                                      "reflection = bounceback\n"))
    geom = make_geometry(cfg)
    sm = make_speed_measure(cfg)
    wall = make_wall(cfg, geom, sm)
    assert isinstance(wall, PartlyDiffuseWall)
    assert wall.reflection == "bounce_back"
    assert float(wall.alpha) == 0.5
    # per-node theta profile gets a grid of matching size
    cfg = load_config(write(tmp_path, "[wall]\ntheta = 0.8,1.0,1.2,1.0\n"))
    wall = make_wall(cfg, geom, sm)
    assert isinstance(wall, DiffuseKernel)
    assert not wall.constant_theta
    assert len(wall.grid) == 4
    # uniform kernel ignores theta
    cfg = load_config(write(tmp_path, "[wall]\ntype = uniform\n"))
    wall = make_wall(cfg, geom, sm)
    assert wall.kind == "uniform"


def test_ball_domain_and_weights(tmp_path):
    cfg = load_config(write(tmp_path, "[domain]\ntype = ball\nradius = 2.0\n"
                                      "[velocity]\nweight_type = power\n"
                                      "weight_params = 1.5\n"))
    geom = make_geometry(cfg)
    assert geom.dim == 3 and geom.scales == (2.0, 2.0, 2.0)
    sm = make_speed_measure(cfg)
    assert sm.dim == 3
    assert np.allclose(sm.weight(np.array([2.0])), 2.0 ** 1.5)
