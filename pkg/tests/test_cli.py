import csv
import io
import json

import pytest

from almanac.cli import main
from almanac.examples import patience_game
from almanac.game import game_to_json
from almanac.hoa import import_hoa


@pytest.fixture
def files(tmp_path):
    game = tmp_path / "game.json"
    game.write_text(json.dumps(game_to_json(patience_game())))
    tasks = tmp_path / "tasks.json"
    tasks.write_text(json.dumps([{"formula": "F psi", "weight": 1.0, "owners": [0]}]))
    return tmp_path, game, tasks


def test_check_lasso(capsys):
    assert main(["check-lasso", "F a", "--prefix", "{}", "--cycle", "{a}"]) == 0
    assert capsys.readouterr().out.strip() == "true true"
    assert main(["check-lasso", "G a", "--cycle", "{a}{}"]) == 0
    assert capsys.readouterr().out.strip() == "false false"


def test_translate_writes_hoa(tmp_path):
    out = tmp_path / "f.hoa"
    assert main(["translate", "F G a", "-o", str(out)]) == 0
    a = import_hoa(out.read_text())
    assert a.has_eps


def test_exit_codes(files, capsys):
    tmp, game, tasks = files
    assert main([]) == 2
    assert main(["unknown"]) == 2
    assert main(["translate", "F ("]) == 3
    bad = tmp / "bad.json"
    bad.write_text("{not json")
    assert main(["product", str(bad), str(tasks)]) == 3
    assert main(["product", str(game), str(tasks), "--max-states", "1"]) == 4
    assert main(["translate", "G F a & G F b & (a U b)", "--max-states", "2"]) == 4


def test_product_stats(files, capsys):
    _, game, tasks = files
    assert main(["product", str(game), str(tasks), "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["states"] == 3 and stats["actions"] == 6 and stats["eps_edges"] == 0


def test_train_then_eval(files, capsys):
    tmp, game, tasks = files
    policy = tmp / "policy.json"
    diags = tmp / "diag.csv"
    assert main(["train", str(game), str(tasks), "--episodes", "300", "--seed", "1", "--policy", str(policy), "--diagnostics", str(diags)]) == 0
    data = json.loads(policy.read_text())
    assert data["states"][0]["state"] == "(s0,q1_0)"
    assert data["states"][0]["actions"] == ["(a)", "(b)"]
    rows = list(csv.DictReader(io.StringIO(diags.read_text())))
    assert len(rows) == 300
    capsys.readouterr()
    assert main(["eval", str(game), str(tasks), str(policy), "--optimum"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["optimum"] == pytest.approx(0.1)
    assert 0.0 <= report["gap"] <= 0.1 + 1e-9


def test_eval_rejects_bad_policy(files):
    tmp, game, tasks = files
    policy = tmp / "policy.json"
    policy.write_text(json.dumps({"states": [{"probs": [0.5, 0.6]}] * 3}))
    assert main(["eval", str(game), str(tasks), str(policy)]) == 3


def test_benchmark_cells(tmp_path, capsys):
    md = tmp_path / "table.md"
    assert main(["benchmark", "--states", "2,3", "--agents", "1", "--specs", "1", "--games", "1", "--episodes", "20", "--markdown", str(md)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 2
    assert md.read_text().startswith("**1 spec**")


def test_golden(capsys):
    assert main(["golden"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "1.450000" in out and "1.035714" in out
