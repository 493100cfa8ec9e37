import numpy as np
import pytest

from almanac.automata import ltl_to_ldba
from almanac.harness import (
    TEMPLATES, ExperimentConfig, ResultTable, config_from_dict, config_to_dict, golden_checks,
    run_benchmark, sample_spec, sample_spec_text, sample_weights,
)
from almanac.ltl import PropositionTable, parse_ltl


def test_sample_spec_is_seeded():
    a = [sample_spec_text(2, np.random.default_rng(5)) for _ in range(3)]
    assert len(set(a)) == 1
    draws = {sample_spec_text(3, np.random.default_rng(k)) for k in range(200)}
    assert len(draws) > 10


@pytest.mark.parametrize("template", TEMPLATES)
def test_templates_translate(template):
    f = parse_ltl(template.format(a="p0", b="p1"), PropositionTable())
    a = ltl_to_ldba(f)
    assert not a.violations()
    assert a.n_states < 50


def test_sample_spec_returns_formula():
    f = sample_spec(2, np.random.default_rng(0))
    assert {p.name for p in __import__("almanac.ltl", fromlist=["atoms"]).atoms(f)} <= {"p0", "p1"}


def test_weights_on_simplex():
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = sample_weights(2, rng)
        assert w.sum() == pytest.approx(1.0)
        assert (w >= 0).all()


def test_empty_grid():
    table = run_benchmark(ExperimentConfig(states=(), agents=(1,), specs=(1,)))
    assert table.cells == []
    assert table.to_csv().strip().count("\n") == 0


def test_small_benchmark_is_deterministic_and_shaped():
    cfg = ExperimentConfig(states=(2, 3), agents=(1, 2), specs=(1,), games=2, episodes=40, seed=3)
    t1 = run_benchmark(cfg)
    t2 = run_benchmark(cfg)
    assert t1.to_csv() == t2.to_csv()
    assert t1.games_csv() == t2.games_csv()
    assert len(t1.cells) == 4
    assert len(t1.to_csv().strip().splitlines()) == 5
    for g in t1.games:
        assert g.error is None
        assert 0.0 <= g.gap <= 1.0
    md = t1.to_markdown()
    assert "| agents | 2 | 3 |" in md


def test_two_spec_cell_runs():
    cfg = ExperimentConfig(states=(2,), agents=(1,), specs=(2,), games=2, episodes=30, seed=0)
    table = run_benchmark(cfg)
    assert all(len(g.specs) == 2 for g in table.games)
    assert table.cell(2, 1, 2).mean_gap is not None


def test_failures_are_isolated():
    cfg = ExperimentConfig(states=(2,), agents=(1,), specs=(1,), games=2, episodes=10, product_limit=1)
    table = run_benchmark(cfg)
    assert all(g.error for g in table.games)
    assert table.cell(2, 1, 1).mean_gap is None
    assert "--" in table.to_markdown()


def test_config_dict_round_trip():
    cfg = ExperimentConfig(states=(2, 4), games=3, learner={"reset_prob": 0.1})
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_golden_checks_pass():
    checks = golden_checks()
    assert checks and all(c.passed for c in checks)
