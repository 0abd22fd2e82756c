import subprocess
import sys

import pytest

from eqlyte import cli
from eqlyte.io import read_config, read_table


def test_parse_mms_levels():
    cfg = cli.parse_args(["mms", "--levels", "4,8,16,32"])
    assert cfg.command == "mms" and cfg.levels == [4, 8, 16, 32]


@pytest.mark.parametrize("h", ["128", "1/128", "0.0078125"])
def test_parse_run_mesh_size(h):
    cfg = cli.parse_args(["run", "--dim", "1", "--h", h])
    assert (cfg.dim, cfg.h) == (1, 128)


def test_parse_sweep_khat():
    cfg = cli.parse_args(["sweep", "--khat", "0.1,1,10,100,1000"])
    assert cfg.khat == [0.1, 1.0, 10.0, 100.0, 1000.0]
    assert cli.parse_args(["sweep"]).khat == [0.1, 1.0, 10.0, 100.0, 1000.0]


def test_defaults_are_baseline_and_resolved():
    cfg = cli.parse_args(["run"])
    spec = cfg.mixture()
    assert (spec.M.tolist(), spec.z.tolist(), spec.y_avg.tolist()) == ([0.1, 0.1], [1, -1], [0.4, 0.4])
    assert (spec.chi, spec.Psi, spec.Lambda, spec.Khat, spec.n_avg) == (1.0, 1.0, 1000.0, 1.0, 1.0)
    assert cfg.h == 128
    assert cli.parse_args(["sweep"]).h == 512
    assert cli.parse_args(["run", "--dim", "3"]).h == 16


def test_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("voltage = 0.5\ndim = 2\nLambda = 200\n")
    cfg = cli.parse_args(["run", "--config", str(p), "--voltage", "0.25"])
    assert (cfg.voltage, cfg.dim, cfg.Lambda) == (0.25, 2, 200.0)


@pytest.mark.parametrize("argv", [["run", "--bogus"], ["run", "--dim", "x"], ["run", "--dim", "4"],
                                  ["nope"], ["run", "--config", "/no/such/file"],
                                  ["annulus", "--r-in", "2", "--r-out", "1"],
                                  ["run", "--h", "1/3.5"], ["sweep", "--khat", "1,-1"]])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("colour = blue\n")
    assert cli.main(["run", "--config", str(p)]) == cli.EXIT_CONFIG


def test_mms_success(tmp_path):
    out = tmp_path / "mms"
    assert cli.main(["mms", "--levels", "4,8", "--out", str(out)]) == cli.EXIT_OK
    tab = read_table(out / "convergence.csv")
    assert list(tab) == ["h", "err_yC", "ord_yC", "err_yA", "ord_yA", "err_phi", "ord_phi",
                         "err_n", "ord_n"]
    man = read_config(out / "manifest.cfg")
    assert man["report.level8.converged"] == "True"


def test_solver_failure_exit_3(tmp_path):
    out = tmp_path / "f"
    assert cli.main(["run", "--h", "32", "--max-iter", "1", "--out", str(out)]) == cli.EXIT_SOLVER
    man = read_config(out / "manifest.cfg")
    assert man["report.converged"] == "False"
    assert "report.iterations" in man and "report.residual_norm" in man


def test_io_failure_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--h", "32", "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_manifest_complete_and_round_trips(tmp_path):
    out = tmp_path / "a"
    assert cli.main(["run", "--h", "64", "--voltage", "0.5", "--out", str(out)]) == 0
    man = read_config(out / "manifest.cfg")
    for f in cli.RunConfig.__dataclass_fields__:
        assert f in man, f
    first = read_table(out / "compressible_1d_nodes.csv")
    again = tmp_path / "b"
    assert cli.main(["run", "--config", str(out / "manifest.cfg"), "--out", str(again)]) == 0
    second = read_table(again / "compressible_1d_nodes.csv")
    for k in first:
        assert (first[k] == second[k]).all()
    a, b = read_config(again / "manifest.cfg"), man
    strip = lambda d: {k: v for k, v in d.items() if k != "out" and k != "report.wall_time"}
    assert strip(a) == strip(b)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "eqlyte", "annulus", "--r-in", "3"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert "r_in" in proc.stderr
