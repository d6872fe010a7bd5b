import json
from pathlib import Path

import pytest

from lagtransit.cli import COMMANDS, load_config, main

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json"))


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = json.loads(path.read_text())
    assert cfg["command"] in COMMANDS
    assert load_config(str(path), cfg["command"]) == cfg


def test_lagrange_command(tmp_path, capsys):
    cfg = _write(tmp_path, {"command": "lagrange", "model": {"model": "cr3bp", "mu": 0.3}})
    rc, out, _ = _run(["lagrange", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert rc == 0
    report = json.loads(out)
    pts = json.loads((tmp_path / "lagrange.json").read_text())["points"]
    assert pts["l3"] < -0.3 < pts["l1"] < 0.7 < pts["l2"]
    assert report["outputs"]["mu"] == 0.3 and report["command"] == "lagrange"


@pytest.mark.parametrize(
    "cfg",
    [
        {"model": {"model": "cr3bp", "mu": 0.0}},
        {"model": {"model": "cr3bp"}, "bogus": 1},
        {"command": "find-po"},
    ],
    ids=["mu-zero", "unknown-key", "wrong-command"],
)
def test_invalid_input_exit_code(tmp_path, capsys, cfg):
    rc, _, err = _run(["lagrange", "--config", _write(tmp_path, cfg)], capsys)
    assert rc == 2
    assert "error" in json.loads(err)


def test_unreadable_config_and_bad_subcommand(tmp_path, capsys):
    assert _run(["lagrange", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2
    assert _run(["no-such-command"], capsys)[0] == 2
    assert _run(["monodromy", "--threads", "0"], capsys)[0] == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, {"model": {"model": "bcp"}, "max_iter": 1, "guess": [0.8376, 0.0, 0.0, 0.8277]})
    rc, _, err = _run(["find-po", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert rc == 3
    assert json.loads(err)["error"] == "ConvergenceError"


def test_monodromy_is_idempotent(tmp_path, capsys):
    cfg = _write(tmp_path, {"model": {"model": "bcp"}})
    texts = []
    for run in ("a", "b"):
        rc, out, _ = _run(["monodromy", "--config", cfg, "--out", str(tmp_path / run)], capsys)
        assert rc == 0
        texts.append((tmp_path / run / "normal_form.json").read_text())
    assert texts[0] == texts[1]
    rec = json.loads(texts[0])
    assert rec["sigma"] == pytest.approx(4.2874e8, rel=1e-3)
    assert rec["psi"] == pytest.approx(3.0273, abs=1e-3)


def test_transit_demo_small(tmp_path, capsys):
    cfg = _write(
        tmp_path,
        {"model": {"model": "bcp"}, "h": 1e-6, "c": 1e-4, "side": "n1", "samples": 3, "phases": [0.0]},
    )
    rc, out, _ = _run(["transit-demo", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert rc == 0
    assert json.loads(out)["outputs"]["mismatches"] == 0
    summary = json.loads((tmp_path / "transit_summary.json").read_text())
    assert summary["mismatches"] == []


def test_short_continuation_command(tmp_path, capsys):
    cfg = _write(
        tmp_path, {"model": {"model": "er3bp"}, "parameter": "e", "eps_schedule": [0.0, 0.05]}
    )
    rc, out, _ = _run(["continue", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert rc == 0
    lines = (tmp_path / "family.jsonl").read_text().splitlines()
    assert [json.loads(l)["eps_e"] for l in lines] == [0.0, 0.05]
