import subprocess
import sys

import pytest

from follicle_hmp.cli import builtin_names, load_config, main


def run(tmp_path, *args, name="out"):
    return main([*args, "--out", str(tmp_path / name)])


def test_simulate_default_echoes_exit(tmp_path, capsys):
    assert run(tmp_path, "simulate") == 0
    assert "t_hat0 = 1.1609095769" in capsys.readouterr().out
    for f in ("trajectory.csv", "moment.csv", "summary.txt", "trajectory.png"):
        assert (tmp_path / "out" / f).exists()
    first = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[0]
    assert first.startswith("# follicle-hmp 0.1.0 simulate config-sha256=")


def test_simulate_density(tmp_path):
    assert run(tmp_path, "simulate", "--config", "builtin:uniform_density.ini", "--grid", "51") == 0
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert "total_mass" in summary and "unexited_fraction = 0.0" in summary


def test_malformed_csv_exit_2(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("x1,x2,x3\n0,0,1\n0,oops,1\n")
    (tmp_path / "c.ini").write_text("[model]\ncs = 7\n[problem]\nensemble = bad.csv\n")
    assert run(tmp_path, "simulate", "--config", str(tmp_path / "c.ini")) == 2
    assert "row 3" in capsys.readouterr().err


def test_bad_horizon_rejected_before_work(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[model]\ncs = 7\nt0 = 2\nt1 = 1\n[problem]\nensemble = builtin:single.csv\n")
    assert run(tmp_path, "simulate", "--config", str(tmp_path / "c.ini")) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "t1 must exceed t0" in err
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("text, needle", [
    ("[model]\ncs = 7\nbogus = 1\n", "line 3"),
    ("[model]\ncs = 7\n[problem]\nensemble = builtin:single.csv\n[sweep]\ngrid = many\n", "line 6"),
    ("[model]\ncs = 7\n[extra]\na = 1\n", "line 3"),
    ("[model]\ncs = 7\nw = 0.4\n[problem]\nensemble = builtin:single.csv\n", "w = 0.4"),
    ("[model\n", "parse"),
])
def test_config_errors(tmp_path, capsys, text, needle):
    (tmp_path / "c.ini").write_text(text)
    assert run(tmp_path, "sweep", "--config", str(tmp_path / "c.ini")) == 2
    assert needle in capsys.readouterr().err


def test_sweep_outputs_and_determinism(tmp_path):
    args = ("sweep", "--config", "builtin:two_masses.ini", "--grid", "513")
    assert run(tmp_path, *args, name="a") == 0
    assert run(tmp_path, *args, "--threads", "2", name="b") == 0
    for f in ("sweep.csv", "sweep.svg", "sweep_summary.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "sweep.png").exists()
    summary = (tmp_path / "a" / "sweep_summary.txt").read_text()
    assert "segments = 0:" in summary and " 2:" in summary


def test_sweep_with_falsification(tmp_path):
    (tmp_path / "c.ini").write_text("[model]\ncs = 7\n[problem]\nensemble = builtin:single.csv\n"
                                   "[sweep]\ngrid = 257\nfalsify = 50\n")
    assert run(tmp_path, "sweep", "--config", str(tmp_path / "c.ini"), "--seed", "5") == 0
    text = (tmp_path / "out" / "sweep_summary.txt").read_text()
    assert "falsify_violations = 0" in text


def test_verify_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "verify", name="ok") == 0
    (tmp_path / "far.ini").write_text("[model]\ncs = 7\n[problem]\nensemble = builtin:single.csv\n"
                                     "[verify]\ntstar = 0.6\n")
    assert run(tmp_path, "verify", "--config", str(tmp_path / "far.ini"), name="far") == 1
    assert "phi_positive_after_switch" in capsys.readouterr().out
    assert run(tmp_path, "verify", "--config", "builtin:two_masses_short.ini", name="short") == 0
    assert "theorem hypotheses not satisfied" in (tmp_path / "short" / "certificate.txt").read_text()
    assert run(tmp_path, "verify", "--config", "builtin:uniform_density.ini", name="dens") == 2


def test_converge_single_dirac_levels_identical(tmp_path):
    (tmp_path / "c.ini").write_text("[model]\ncs = 1\n[problem]\nensemble = builtin:single.csv\n"
                                   "[converge]\nschedule = 100,1000\n")
    assert run(tmp_path, "converge", "--config", str(tmp_path / "c.ini")) == 0
    rows = (tmp_path / "out" / "dirac.csv").read_text().splitlines()[2:]
    assert len({r.split(",")[2] for r in rows}) == 1
    mollified = (tmp_path / "out" / "mollified.csv").read_text().splitlines()
    assert mollified[1] == "i,A_i,Delta_i,bracket_lo,bracket_hi,inside,layer_width"
    assert all(r.split(",")[5] == "true" for r in mollified[2:])


def test_list_and_usage(capsys):
    assert main(["--list"]) == 0
    assert "table1_single.ini" in capsys.readouterr().out
    assert "two_masses.csv" in builtin_names()
    assert main([]) == 2


def test_load_config_builtin():
    cfg = load_config("builtin:two_masses_short.ini")
    assert cfg.params.t1 == 1.4 and len(cfg.problem) == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "follicle_hmp.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
