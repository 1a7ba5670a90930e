import json
import subprocess
import sys

import pytest

from circlediff.cli import COMMANDS, main
from circlediff.io import read_csv


def run(tmp_path, *argv):
    code = main([*argv, "--out", str(tmp_path)])
    return code, sorted(tmp_path.glob(f"{argv[0]}-*.csv"))


def manifest_of(csv_path):
    return json.loads(csv_path.with_name(csv_path.name[:-4] + ".manifest.json").read_text())


def test_su11_example(tmp_path, capsys):
    code, files = run(tmp_path, "su11-check", "--n", "2", "--r", "0.5", "--N", "512")
    assert code == 0 and len(files) == 1
    meta, rows = read_csv(files[0])
    assert meta["command"] == "su11-check" and len(rows) == 1
    row = rows[0]
    assert float(row["det_a2"]) == pytest.approx(0.75 ** 0.125, rel=1e-9)
    assert float(row["target_tabulated"]) == pytest.approx(0.75 ** 0.25)
    out = json.loads(capsys.readouterr().out)
    assert out["command"] == "su11-check"


def test_cocycle_identity_example(tmp_path, capsys):
    code, files = run(tmp_path, "cocycle-identity", "--trials", "100", "--seed", "7")
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] and summary["max_residual"] < 1e-8


def test_beta_sweep_small(tmp_path):
    code, files = run(tmp_path, "beta-sweep", "--c", "2", "--h", "0", "--betas", "1,0.5",
                      "--samples", "6", "--N", "16", "--table-samples", "4")
    assert code == 0
    names = {f.name.split(".")[1] if f.name.count(".") > 1 else "main" for f in files}
    assert {"main", "tails", "mellin"} <= names
    assert manifest_of(files[0])["summary"]["passed"] is None


def test_virasoro_and_s2(tmp_path):
    assert run(tmp_path, "virasoro-check")[0] == 0
    assert run(tmp_path, "s2-check", "--r", "0.5", "--N", "64", "--tol", "1e-3")[0] == 0


@pytest.mark.parametrize("argv", [
    ["weld", "--family", "moebius", "--n", "2", "--r", "0.6", "--N", "32"],
    ["weld", "--family", "nu-beta", "--modes", "32", "--N", "16", "--seed", "1"],
    ["blocks", "--family", "moebius", "--r", "0.3", "--N", "4"],
    ["det", "--family", "moebius", "--n", "3", "--r", "0.4", "--N", "64", "--spin", "periodic"],
    ["sample", "--samples", "2", "--modes", "16", "--grid", "32", "--seed", "3"],
])
def test_single_map_commands(tmp_path, argv):
    code, files = run(tmp_path, *argv)
    assert code == 0
    meta, rows = read_csv(files[0])
    assert rows


def test_manifest_fields(tmp_path):
    _, files = run(tmp_path, "cocycle-det", "--pairs", "2", "--N", "32", "--seed", "4")
    m = manifest_of(files[0])
    assert {"config", "seed", "versions", "wall_time_seconds", "outputs", "summary"} <= set(m)
    assert m["seed"] == 4 and m["config"]["pairs"] == 2 and m["config"]["command"] == "cocycle-det"
    assert "numpy" in m["versions"] and "circlediff" in m["versions"]


def test_idempotent_output(tmp_path):
    argv = ["support-check", "--samples", "5", "--N", "16", "--modes", "32", "--seed", "9"]
    _, files = run(tmp_path, *argv)
    first = files[0].read_bytes()
    _, again = run(tmp_path, *argv)
    assert again == files and files[0].read_bytes() == first
    assert b"\r\n" not in first


def test_seed_changes_fingerprint(tmp_path):
    _, a = run(tmp_path, "sample", "--samples", "1", "--modes", "8", "--grid", "16", "--seed", "1")
    _, b = run(tmp_path, "sample", "--samples", "1", "--modes", "8", "--grid", "16", "--seed", "2")
    assert len(b) == 2 and a[0] in b


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[run]\nseed = 5\n[cocycle-det]\npairs = 3\nN = 32\n")
        out = tmp_path / "out"
        assert main(["cocycle-det", "--config", str(cfg), "--pairs", "2", "--out", str(out)]) == 0
        m = manifest_of(next(out.glob("*.csv")))
        assert m["config"]["pairs"] == 2 and m["config"]["N"] == 32 and m["seed"] == 5

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[su11-check]\nradius = 0.5\n")
        assert main(["su11-check", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "su11-check.radius: unknown key" in capsys.readouterr().err

    def test_field_diagnostics(self, tmp_path, capsys):
        code = main(["su11-check", "--r", "1.5", "--N", "abc", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 2 and "r:" in err and "N: cannot parse" in err
        assert not list(tmp_path.glob("*.csv"))

    def test_decreasing_schedule_required(self, tmp_path):
        assert main(["beta-sweep", "--betas", "0.5,1", "--out", str(tmp_path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["s2-check", "--config", str(tmp_path / "nope.ini")]) == 2

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CIRCLEDIFF_OUT", str(tmp_path / "env"))
        assert main(["virasoro-check"]) == 0
        assert list((tmp_path / "env").glob("virasoro-check-*.csv"))


def test_numeric_failure_exit_and_record(tmp_path, capsys):
    code = main(["det", "--family", "moebius", "--r", "0.9999999", "--N", "64",
                 "--out", str(tmp_path)])
    assert code == 3
    m = json.loads(next(tmp_path.glob("*.manifest.json")).read_text())
    assert m["error"]["type"] and m["outputs"] == []


def test_every_command_has_help():
    for name in COMMANDS:
        with pytest.raises(SystemExit) as e:
            main([name, "--help"])
        assert e.value.code == 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "circlediff.cli", "virasoro-check", "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["passed"]
