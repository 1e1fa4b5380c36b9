import os

import numpy as np

from gapkin import cli
from gapkin.config import load_config


def run(args, capsys=None):
    code = cli.main(args)
    return code


def read_lines(path):
    with open(path) as fh:
        return fh.read().splitlines()


def write(tmp_path, name, text):
    p = os.path.join(str(tmp_path), name)
    with open(p, "w") as fh:
        fh.write(text)
    return p


SMALL = ("[sim]\nparticles = 5000\nt_end = 5.0\nrecord_dt = 1.0\n"
         "track_rebounds = 2\n"
         "[spectral]\nboundary_nodes = 64\nspeed_nodes = 16\n"
         "direction_nodes = 48\noracle_speed_nodes = 10\n"
         "lambda_resolution = 7,5\nlambda_im_max = 2.0\n")


def test_geometry_check_exits_zero(tmp_path, capsys):
    out = os.path.join(str(tmp_path), "o")
    assert run(["geometry-check", "--out", out]) == 0
    text = capsys.readouterr().out
    assert "[PASS]" in text and "[FAIL]" not in text
    lines = read_lines(os.path.join(out, "run_geometry_check.csv"))
    assert lines[0].startswith("# config ")
    assert "seed" in lines[0]


def test_validate_wall_exits_zero(tmp_path):
    out = os.path.join(str(tmp_path), "o")
    assert run(["validate-wall", "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "run_validate_wall.csv"))


def test_simulate_writes_time_series(tmp_path, capsys):
    ini = write(tmp_path, "s.ini", SMALL)
    out = os.path.join(str(tmp_path), "o")
    assert run(["simulate", "--config", ini, "--out", out]) == 0
    lines = read_lines(os.path.join(out, "run_simulate.csv"))
    cfg = load_config(ini)
    assert lines[0] == f"# config {cfg.hash} seed {cfg.seed}"
    header = lines[1].split(",")
    assert header[0] == "t" and header[1] == "total_mass"
    assert "l1_to_equilibrium" in header
    rows = [ln.split(",") for ln in lines[2:]]
    assert len(rows) == 6          # t = 0..5 step 1
    assert float(rows[0][0]) == 0.0 and float(rows[-1][0]) == 5.0
    for r in rows:
        assert abs(float(r[1]) - 1.0) < 1e-9
    # generation 0 has died out by t >= 4 (horizon crossings)
    g0 = header.index("gen0")
    assert float(rows[4][g0]) == 0.0 and float(rows[5][g0]) == 0.0
    # the resolved config is echoed next to the results
    assert os.path.exists(os.path.join(out, "run_config.ini"))


def test_simulate_absorbing_mass_vanishes(tmp_path):
    ini = write(tmp_path, "a.ini", SMALL + "[output]\nname = abs\n")
    out = os.path.join(str(tmp_path), "o")
    assert run(["simulate", "--config", ini, "--out", out, "--seed", "7"]) == 0
    lines = read_lines(os.path.join(out, "abs_simulate.csv"))
    # the seed override lands in the comment line
    assert lines[0].endswith("seed 7")


def test_simulate_seed_and_thread_determinism(tmp_path):
    ini = write(tmp_path, "d.ini", SMALL)
    blobs = []
    for tag, extra in (("t1", ["--threads", "1"]), ("t2", ["--threads", "2"])):
        out = os.path.join(str(tmp_path), tag)
        assert run(["simulate", "--config", ini, "--out", out] + extra) == 0
        with open(os.path.join(out, "run_simulate.csv"), "rb") as fh:
            blobs.append(fh.read())
    assert blobs[0] == blobs[1]


def test_spectrum_reports_gap(tmp_path, capsys):
    ini = write(tmp_path, "sp.ini", SMALL)
    out = os.path.join(str(tmp_path), "o")
    assert run(["spectrum", "--config", ini, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "spectral_gap" in text
    lines = read_lines(os.path.join(out, "run_spectrum.csv"))
    assert lines[1].split(",")[:2] == ["re_lambda", "im_lambda"]
    assert len(lines) > 30


def test_invariant_residual_small(tmp_path):
    ini = write(tmp_path, "i.ini", SMALL)
    out = os.path.join(str(tmp_path), "o")
    assert run(["invariant", "--config", ini, "--out", out]) == 0
    lines = read_lines(os.path.join(out, "run_invariant.csv"))
    assert lines[1] == "node,speed,value"
    vals = np.array([float(ln.split(",")[2]) for ln in lines[2:]])
    assert np.all(vals > 0)


def test_config_errors_exit_two(tmp_path):
    bad = write(tmp_path, "bad.ini", "[nope]\nx = 1\n")
    assert run(["simulate", "--config", bad,
                "--out", os.path.join(str(tmp_path), "o")]) == 2
    bad2 = write(tmp_path, "bad2.ini", "[velocity]\nr0 = 9.0\n")
    assert run(["spectrum", "--config", bad2,
                "--out", os.path.join(str(tmp_path), "o")]) == 2


def test_pure_reflection_spectrum_exits_config_error(tmp_path, capsys):
    ini = write(tmp_path, "pr.ini", SMALL + "[wall]\nalpha = 1.0\n")
    out = os.path.join(str(tmp_path), "o")
    assert run(["spectrum", "--config", ini, "--out", out]) == 2
    captured = capsys.readouterr()
    text = captured.out + captured.err
    assert "admissib" in text or "alpha" in text


def test_partly_diffuse_strip_truncation_message(tmp_path, capsys):
    # a strip deeper than the admissible depth gets truncated with a message
    ini = write(tmp_path, "pd.ini", SMALL +
                "[wall]\nalpha = 0.5\nreflection = specular\n")
    out = os.path.join(str(tmp_path), "o")
    assert run(["spectrum", "--config", ini, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "truncat" in text
    assert "lower bound" in text
