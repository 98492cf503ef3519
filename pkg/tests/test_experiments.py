import json
import subprocess
import sys

import pytest

from adiapump.cli import main
from adiapump.errors import BudgetExceeded, ConfigInvalid, MismatchedRuns
from adiapump.experiments import RunConfig, compare, config_hash, load_config, run, worker_count, write_output
from adiapump.model import DEMO_MODEL_FILE


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_bpt_run_shape(tmp_path):
    cfg = RunConfig.from_dict({"kind": "bpt", "model": "demo", "params": {"n_epochs": 101}})
    out = run(cfg)
    lines = out.files["bpt.csv"].splitlines()
    assert lines[0].startswith("# adiapump 0.1.0 config_sha256=" + config_hash(cfg))
    assert lines[1] == "s,dQ0_ds,dQ1_ds"
    assert len(lines) == 2 + 101
    assert all(len(l.split(",")) == 3 for l in lines[1:])
    assert out.passed


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = write(tmp_path, "bad.json", {"kind": "bpt", "model": "demo", "colour": 1})
    out = tmp_path / "out"
    assert main(["bpt", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "ConfigInvalid" in capsys.readouterr().err


def test_unknown_param_rejected():
    with pytest.raises(ConfigInvalid):
        RunConfig.from_dict({"kind": "evolve", "model": "demo", "params": {"epsilon": 0.1}})
    with pytest.raises(ConfigInvalid):
        RunConfig.from_dict({"kind": "evolve", "model": "demo", "params": {"eps": -0.1}})
    with pytest.raises(ConfigInvalid):
        RunConfig.from_dict({"kind": "nonsense"})


def test_config_kind_must_match_subcommand(tmp_path):
    cfg = write(tmp_path, "c.json", {"kind": "bpt", "model": "demo"})
    with pytest.raises(ConfigInvalid):
        load_config(cfg, "smatrix")


def test_model_file_doubles_as_config(tmp_path):
    out = tmp_path / "sm"
    assert main(["smatrix", "--config", str(DEMO_MODEL_FILE), "--out", str(out), "--quiet"]) == 0
    assert (out / "smatrix.csv").exists() and (out / "timings.json").exists()


def test_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, "c.json", {"kind": "smatrix", "model": "demo",
                                     "params": {"s": {"start": 0, "stop": 1, "num": 5}}})
    for d in ("a", "b"):
        assert main(["smatrix", "--config", str(cfg), "--out", str(tmp_path / d), "--quiet"]) == 0
    for name in ("smatrix.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_compare_identical_and_swapped(tmp_path):
    cfg = RunConfig.from_dict({"kind": "bpt", "model": "demo", "params": {"n_epochs": 101}})
    write_output(run(cfg), tmp_path / "b")
    s = json.loads((tmp_path / "b" / "summary.json").read_text())
    rep = compare(s, s)
    assert rep.rows[0]["max_rel_err"] == 0.0 and rep.passed
    swapped = dict(s, lead_labels=s["lead_labels"][::-1])
    with pytest.raises(MismatchedRuns):
        compare(s, swapped)
    other = dict(s, model_sha256="0" * 64)
    with pytest.raises(MismatchedRuns):
        compare(s, other)


def test_budget_exceeded_writes_nothing(tmp_path):
    cfg = write(tmp_path, "c.json", {"kind": "evolve", "model": "demo", "budget_seconds": 0.01,
                                     "params": {"eps": 0.16, "ammeter": 20}})
    out = tmp_path / "out"
    with pytest.raises(BudgetExceeded):
        run(load_config(cfg, "evolve"))
    assert main(["evolve", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_evolve_cli_and_compare(tmp_path):
    b, e, c = tmp_path / "b", tmp_path / "e", tmp_path / "c"
    assert main(["bpt", "--config", str(DEMO_MODEL_FILE), "--out", str(b), "--quiet"]) == 0
    assert main(["evolve", "--config", str(DEMO_MODEL_FILE), "--eps", "0.16", "--ammeter", "20",
                 "--kind", "position", "--filter", "off", "--out", str(e), "--quiet"]) == 0
    head = (e / "currents.csv").read_text().splitlines()[1].split(",")
    assert head[:7] == ["s", "I0_raw", "I1_raw", "I0_baseline", "I1_baseline", "I0_subtracted", "I1_subtracted"]
    meta = json.loads((e / "summary.json").read_text())
    assert meta["plan"]["lead_length"] >= 20 + 4 + 50
    assert "tolerances" in meta
    # eps = 0.16 is far from adiabatic: the comparison verdict fails and so does the exit status
    assert main(["compare", "--bpt", str(b), "--dynamics", str(e), "--out", str(c), "--quiet"]) == 1
    assert (c / "per_epoch.csv").exists()


def test_lab_cli(tmp_path):
    out = tmp_path / "lab"
    assert main(["lab", "--check", "pull_through", "--out", str(out), "--quiet"]) == 0
    d = json.loads((out / "lab.json").read_text())
    assert {"check", "lhs", "rhs", "error", "refinement_trend"} <= set(d)
    assert d["refinement_trend"] is True


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("ADIAPUMP_THREADS", "2")
    assert worker_count(10) == 2
    assert worker_count(1) == 1


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "adiapump.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("smatrix", "bpt", "evolve", "sweep-eps", "sweep-ammeter", "lab", "compare"):
        assert sub in r.stdout
