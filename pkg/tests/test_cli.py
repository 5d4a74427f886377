import json

import pytest

from cutwan import cli, theory_lab

SMALL = {"d": 2, "N_r": 48, "N_b": 24, "n_T": 4, "u_layers": 3, "u_hid-dim1": 6,
         "u_hid-dim2": 4, "v_layers": 2, "v_hid-dim": 8, "N_max": 2, "epsilon": 1e-9}


@pytest.fixture
def config(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUT_ROOT_ENV, raising=False)
    path = tmp_path / "cfg.json"
    assert cli.main(["preset", "ex1", "--out", str(path)]) == cli.EXIT_OK
    raw = json.loads(path.read_text())
    raw.update(SMALL)
    path.write_text(json.dumps(raw))
    return path


def test_preset_to_stdout(capsys):
    assert cli.main(["preset", "ex2", "--d", "3"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["preset"] == "ex2" and cfg["d"] == 3 and cfg["beta"] == 1e7
    assert cli.main(["preset", "ex7"]) == cli.EXIT_ERROR


def test_run_writes_outputs_and_reports_max_iterations(config, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", str(config), "--out", str(out)]) == cli.EXIT_MAX_ITER
    rows = (out / "history.csv").read_text().splitlines()
    assert rows[0] == "step,loss,rel_error,seconds" and len(rows) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stop_reason"] == "max-iterations" and summary["steps"] == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"history.csv", "summary.json"}
    assert manifest["config"]["N_max"] == 2 and len(manifest["input_hash"]) == 64


def test_run_is_byte_identical(config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", str(config), "--out", str(a)])
    cli.main(["run", str(config), "--out", str(b)])
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["input_hash"] == mb["input_hash"]
    assert ma["outputs"]["history.csv"]["sha256"] == mb["outputs"]["history.csv"]["sha256"]


def test_run_tolerance_met_exits_zero(config, tmp_path):
    raw = json.loads(config.read_text())
    raw["epsilon"] = "inf"
    config.write_text(json.dumps(raw))
    assert cli.main(["run", str(config), "--out", str(tmp_path / "o")]) == cli.EXIT_OK


def test_run_multiple_seeds(config, tmp_path):
    out = tmp_path / "multi"
    raw = json.loads(config.read_text())
    raw["N_max"] = 1
    config.write_text(json.dumps(raw))
    assert cli.main(["run", str(config), "--seeds", "1,2", "--out", str(out)]) == cli.EXIT_MAX_ITER
    h1 = (out / "seed-1" / "history.csv").read_text()
    h2 = (out / "seed-2" / "history.csv").read_text()
    assert h1 != h2
    assert json.loads((out / "seed-2" / "summary.json").read_text())["seed"] == 2
    assert cli.main(["run", str(config), "--seeds", "1,x"]) == cli.EXIT_ERROR


def test_out_root_env(config, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path / "root"))
    raw = json.loads(config.read_text())
    raw["N_max"] = 1
    config.write_text(json.dumps(raw))
    cli.main(["run", str(config)])
    assert (tmp_path / "root" / "ex1-xnode-recursive-cwan" / "history.csv").exists()


def test_bad_configs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"preset": "ex1",\n "d": }')
    assert cli.main(["run", str(bad)]) == cli.EXIT_ERROR
    assert "line 2" in capsys.readouterr().err
    bad.write_text('{"preset": "ex1", "colour": 1}')
    assert cli.main(["run", str(bad)]) == cli.EXIT_ERROR
    assert "colour" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "absent.json")]) == cli.EXIT_ERROR


def test_verify_passes_and_writes_csv(tmp_path, capsys):
    out = tmp_path / "verify.csv"
    assert cli.main(["verify", "--out", str(out)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "FAIL" not in text and text.count("PASS") == 12
    assert out.read_text().splitlines()[0] == "check,expected,observed,pass"


def test_verify_detects_a_broken_supremum(monkeypatch, capsys):
    real = theory_lab.stabilized_sup
    monkeypatch.setattr(theory_lab, "stabilized_sup", lambda w, op, g: 1.01 * real(w, op, g))
    assert cli.main(["verify"]) == cli.EXIT_VERIFY
    assert "FAIL" in capsys.readouterr().out


def test_plot(config, tmp_path):
    run = tmp_path / "r"
    cli.main(["run", str(config), "--out", str(run)])
    svg = tmp_path / "fig.svg"
    assert cli.main(["plot", str(run / "history.csv"), "--out", str(svg)]) == cli.EXIT_OK
    assert svg.read_text().lstrip().startswith("<?xml")
    pdf = tmp_path / "fig.out"
    assert cli.main(["plot", str(run / "history.csv"), str(run / "history.csv"), "--out", str(pdf),
                     "--labels", "a,b", "--format", "pdf"]) == cli.EXIT_OK
    assert pdf.read_bytes()[:4] == b"%PDF"


def test_plot_rejects_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "h.csv"
    bad.write_text("step,loss\n1,2\n")
    assert cli.main(["plot", str(bad), "--out", str(tmp_path / "x.svg")]) == cli.EXIT_ERROR
    assert "missing column" in capsys.readouterr().err
    bad.write_text("step,loss,rel_error,seconds\n1,0.5,abc,\n")
    assert cli.main(["plot", str(bad), "--out", str(tmp_path / "x.svg")]) == cli.EXIT_ERROR
    assert "line 2" in capsys.readouterr().err
    bad.write_text("step,loss,rel_error,seconds\n")
    assert cli.main(["plot", str(bad), "--out", str(tmp_path / "x.svg")]) == cli.EXIT_ERROR
