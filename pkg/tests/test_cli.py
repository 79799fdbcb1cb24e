import json

import pytest

from epflow.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, emit_report, load_config, main

AFFINE = """
[run]
scenario = affine
[gas]
delta = 0.1
[affine]
A0 = 1, 0.2, 0, 0, 1, 0, 0, 0, 1
A1 = 1.2, 0.1, 0, -0.05, 1, 0.1, 0, 0.05, 0.8
t_end = 20
samples = 20
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_affine_run_and_report(tmp_path, capsys):
    cfg = write(tmp_path, AFFINE)
    out = tmp_path / "run"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    for f in ("trajectory.csv", "summary.jsonl", "invariants.txt", "config.ini"):
        assert (out / f).exists()
    recs = [json.loads(line) for line in (out / "summary.jsonl").read_text().splitlines()]
    assert recs[0] == {"kind": "run", "scenario": "affine"}
    inv = [r for r in recs if r["kind"] == "invariant"]
    assert inv and all(r["passed"] for r in inv)
    assert main(["report", str(out)]) == EXIT_OK
    text = (out / "report.md").read_text()
    assert "energy drift" in text and "det Lambda" in text
    assert text in capsys.readouterr().out


def test_outputs_are_deterministic(tmp_path):
    cfg = write(tmp_path, AFFINE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["run", cfg, "--out", str(b), "--threads", "2"]) == EXIT_OK
    for f in ("trajectory.csv", "summary.jsonl", "invariants.txt"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_free_motion_scenario(tmp_path):
    cfg = write(tmp_path, AFFINE.replace("delta = 0.1", "delta = 0"))
    out = tmp_path / "run"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    assert "exact linear motion" in (out / "invariants.txt").read_text()


@pytest.mark.parametrize("text", [
    "[run]\nscenario = nonsense\n",
    "[run]\nscenario = affine\n[gas]\ngamma = 0.9\n",
    "[run]\nscenario = affine\n[gas]\nbogus = 1\n",
    "[nosection]\nx = 1\n",
    "[run]\nscenario = radial\n[gas]\ngamma = 1.7\n",
    "[run]\nscenario = radial\n[gas]\ndelta = 0\n",
    "[run]\nscenario = radial\n[affine]\nA1 = 1, 0, 0, 0, 2, 0, 0, 0, 1\n",
    "[run]\nscenario = affine\n[affine]\nA0 = 1, 0, 0, 0, 1, 0, 0, 0, -1\n",
    "[run]\nscenario = affine\n[affine]\nA0 = 1, 2, 3\n",
    "[run]\nscenario = radial\n[stepper]\norder = 3\n",
    "[run]\nthreads = 0\n",
    "not an ini file",
])
def test_config_errors(tmp_path, text, capsys):
    assert main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()
    assert "config error" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "absent.ini")]) == EXIT_CONFIG


def test_numerical_abort(tmp_path):
    text = "[run]\nscenario = radial\n[perturbation]\ntheta_amp = 0.5\ntau_max = 0.2\n[grid]\nn_radial = 8\n"
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == EXIT_ABORT
    recs = [json.loads(line) for line in (out / "summary.jsonl").read_text().splitlines()]
    assert any(r["kind"] == "abort" and r["error"] == "AprioriViolation" for r in recs)
    assert "Numerical abort" in emit_report(out)


def test_report_missing_artifacts(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "missing artifacts" in capsys.readouterr().err


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, AFFINE), out=tmp_path / "x", threads=3)
    assert cfg.threads == 3 and cfg.out == tmp_path / "x"
    assert cfg.params().delta == 0.1


def test_defaults_listing(capsys):
    assert main(["defaults"]) == EXIT_OK
    assert "[field_validation]" in capsys.readouterr().out


def test_norms_scenario(tmp_path):
    text = "[run]\nscenario = norms\n[grid]\nn_radial = 8\nn_polar = 4\nn_azimuthal = 8\n"
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    rows = (out / "norms.csv").read_text().splitlines()
    assert rows[0].startswith("gamma,gamma_class")
    assert len(rows) == 5
    assert "Weight condition" in emit_report(out)


def test_field_validation_scenario(tmp_path):
    text = "[run]\nscenario = field_validation\n[gas]\ngamma = 2\n[field_validation]\nlevels = 8x4x8, 10x4x8\n"
    out = tmp_path / "run"
    assert main(["run", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert "Psi-bar(0)" in (out / "invariants.txt").read_text()


def test_acceptance_scenario_single(tmp_path, capsys):
    text = "[run]\nscenario = acceptance\n[acceptance]\ncriteria = 1\n"
    assert main(["run", write(tmp_path, text), "--out", str(tmp_path / "acc")]) == EXIT_OK
    assert "PASS [ 1]" in capsys.readouterr().out
    bad = "[run]\nscenario = acceptance\n[acceptance]\ncriteria = 99\n"
    assert main(["run", write(tmp_path, bad, "bad.ini"), "--out", str(tmp_path / "bad")]) == EXIT_CONFIG
    assert not (tmp_path / "bad").exists()
