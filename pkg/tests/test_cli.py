import csv
import json

import pytest

from edgesched.cli import main


def strip_measured(obj):
    if isinstance(obj, dict):
        return {k: strip_measured(v) for k, v in obj.items() if k != "measured"}
    if isinstance(obj, list):
        return [strip_measured(v) for v in obj]
    return obj


def test_generate_full_preset(tmp_path):
    out = tmp_path / "s.json"
    assert main(["generate", "--preset", "paper", "-o", str(out)]) == 0
    assert len(json.loads(out.read_text())["users"]) == 52


def test_generate_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["generate", "--users", "4", "--servers", "2", "--seed", "1", "-o", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_needs_output(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--users", "4"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_run_unknown_algorithm(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--alg", "nope"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_run_edf_deterministic(tmp_path, capsys):
    sc = tmp_path / "s.json"
    main(["generate", "--preset", "tiny", "-o", str(sc)])
    outs = []
    for d in ("r1", "r2"):
        assert main(["run", "--alg", "edf", "--scenario", str(sc), "--out-dir", str(tmp_path / d)]) == 0
        outs.append(json.loads((tmp_path / d / "run-edf-seed0.json").read_text()))
    assert "hit_ratio=" in capsys.readouterr().out
    assert strip_measured(outs[0])["result"] == strip_measured(outs[1])["result"]


def test_run_missing_scenario(tmp_path, capsys):
    assert main(["run", "--alg", "edf", "--scenario", str(tmp_path / "missing.json")]) != 0
    assert "error" in capsys.readouterr().err


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EDGESCHED_SEED", "11")
    assert main(["run", "--alg", "edf", "--preset", "tiny", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "run-edf-seed11.json").exists()


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 4, "experiment": {"u_th": 0.7}}))
    assert main(["run", "--alg", "edf", "--preset", "tiny", "--config", str(cfg), "--uth", "0.9",
                 "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "run-edf-seed4.json").read_text())
    assert doc["config"]["u_th"] == 0.9


def test_failed_run_leaves_nothing(tmp_path):
    # an episode budget below the convergence window is rejected
    assert main(["run", "--alg", "arl", "--preset", "tiny", "--episodes", "5", "--out-dir", str(tmp_path / "o"),
                 "--debug-log", str(tmp_path / "dbg.jsonl")]) != 0
    assert not (tmp_path / "dbg.jsonl").exists()
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_compare_rows(tmp_path):
    sc = tmp_path / "tiny.json"
    main(["generate", "--preset", "tiny", "-o", str(sc)])
    out = tmp_path / "cmp"
    assert main(["compare", "--reps", "3", "--scenario", str(sc), "--episodes", "100", "--hidden", "16", "16",
                 "--out-dir", str(out)]) == 0
    with open(out / "compare.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["row"] == "run"]
    assert len(rows) == 12
    doc = json.loads((out / "compare.json").read_text())
    assert doc["repetitions"] == 3 and len(doc["runs"]) == 12
    assert doc["config"]["flags"]["reps"] == 3
    assert (out / "compare.svg").exists()
    assert not [p for p in out.iterdir() if p.name.startswith(".")]
