"""Command line interface: subcommands, overrides, and exit codes."""

import subprocess
import sys

import pytest

from hsfluct.cli import main

BASE = """
[scaling]
d = 2
mu = 200
horizon = 0.05

[profile]
kind = maxwellian

[ensemble]
replicas = 6

[run]
out = {out}
"""


def write_cfg(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def test_simulate_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, BASE.format(out=out))
    assert main(["simulate", "--config", cfg]) == 0
    assert (out / "trajectory.bin").exists()
    report = (out / "report.csv").read_text()
    assert "energy_drift" in report
    assert "pass" in report
    assert "PASS" in capsys.readouterr().out


def test_out_and_seed_overrides(tmp_path):
    cfg = write_cfg(tmp_path, BASE.format(out=tmp_path / "ignored"))
    other = tmp_path / "actual"
    assert main(["ensemble", "--config", cfg, "--out", str(other),
                 "--seed", "5"]) == 0
    first = (other / "ensemble.csv").read_text()
    assert main(["ensemble", "--config", cfg, "--out", str(other),
                 "--seed", "6"]) == 0
    assert (other / "ensemble.csv").read_text() != first


def test_dsmc_writes_moments(tmp_path):
    out = tmp_path / "d"
    cfg = write_cfg(tmp_path, BASE.format(out=out) + """
[study]
dsmc_particles = 2000
snapshots = 3
""")
    assert main(["dsmc", "--config", cfg]) == 0
    lines = (out / "dsmc_moments.csv").read_text().strip().split("\n")
    assert lines[0] == "time,mean_vx,mean_v2,mean_v4"
    assert len(lines) == 4


def test_fbe_writes_pairings(tmp_path):
    out = tmp_path / "f"
    cfg = write_cfg(tmp_path, BASE.format(out=out) + """
[grid]
m = 12
vmax = 4.0
design = 6

[study]
spde_replicas = 16
spde_dt = 0.01
solver_dt = 0.01
snapshots = 2
""")
    assert main(["fbe", "--config", cfg]) == 0
    text = (out / "fbe_pairings.csv").read_text()
    assert text.startswith("time,mean_vx,var_vx,mean_v2,var_v2")


def test_experiment_pass_gives_zero(tmp_path):
    out = tmp_path / "e"
    cfg = write_cfg(tmp_path, BASE.format(out=out)
                    .replace("out =", "experiment = cumulants\nout ="))
    assert main(["experiment", "cumulants", "--config", cfg]) == 0
    assert (out / "report.csv").exists()


def test_statistical_failure_gives_one(tmp_path):
    # tiny ensembles cannot meet the 5 percent variance band, so this
    # exercises the failed-tolerance exit path deterministically
    out = tmp_path / "x"
    text = BASE.format(out=out).replace("replicas = 6", "replicas = 24")
    cfg = write_cfg(tmp_path, text + """
[grid]
m = 12
vmax = 4.0
design = 6

[study]
spde_replicas = 24
spde_dt = 0.01
""")
    code = main(["experiment", "clt-equilibrium", "--config", cfg,
                 "--seed", "1"])
    assert code == 1


def test_bad_config_gives_two(tmp_path, capsys):
    cfg = write_cfg(tmp_path, BASE.format(out=tmp_path) + "\nnonsense = 1\n")
    assert main(["simulate", "--config", cfg]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_gives_two(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 2
    assert "error:" in capsys.readouterr().err


def test_config_error_reports_line(tmp_path, capsys):
    bad = BASE.format(out=tmp_path).replace("d = 2", "d = 9")
    cfg = write_cfg(tmp_path, bad)
    assert main(["simulate", "--config", cfg]) == 2
    assert "line" in capsys.readouterr().err


def test_unknown_experiment_rejected(tmp_path):
    cfg = write_cfg(tmp_path, BASE.format(out=tmp_path))
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "made-up", "--config", cfg])
    assert exc.value.code == 2


def test_console_script_entry(tmp_path):
    cfg = write_cfg(tmp_path, BASE.format(out=tmp_path / "c"))
    proc = subprocess.run(
        [sys.executable, "-m", "hsfluct.cli", "experiment", "cumulants",
         "--config", cfg],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert "cumulants: PASS" in proc.stdout
