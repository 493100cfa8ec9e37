import json

import numpy as np
import pytest

from almanac.automata import AlphabetMismatch, CapacityError
from almanac.examples import patience_game, persistence_automaton, response_automaton, separation_game, two_spec_game
from almanac.game import _check_rows, ValidationReport, deterministic_policy, random_game
from almanac.product import (
    EpsDeclaration, TaskError, accepting_visit_bound, build_product, gamma_condition_witness,
    make_task, normalize_weights, reward_and_discount, tasks_from_json, tasks_to_json,
)


def patience_product():
    return build_product(patience_game(), [make_task("F psi", 1.0, (0,))])


def test_patience_product_layout():
    p = patience_product()
    assert p.n_states == 3
    assert [p.state_name(s) for s in range(3)] == ["(s0,q1_0)", "(s1,q1_1)", "(s2,q1_0)"]
    assert p.accepting[:, 0].tolist() == [False, True, False]
    assert p.initial.tolist() == [1.0, 0.0, 0.0]
    succ, prob = p.row(0, 1)
    assert dict(zip(succ.tolist(), prob.tolist())) == {1: 0.1, 2: 0.9}


def test_initial_state_does_not_read_first_label():
    # s0 is labelled psi in the two-spec game; the automaton still starts in q0
    p = build_product(two_spec_game(), [make_task("F psi", 1.0, (0,))])
    assert p.states[np.flatnonzero(p.initial)[0]].tolist() == [0, 0]


def test_rows_are_distributions():
    g = random_game(6, 2, 2, 2, 0.5, seed=4)
    p = build_product(g, [make_task("F G p0", 0.5, (0,)), make_task("G F p1", 0.5, (1,))])
    rep = ValidationReport()
    _check_rows(p, rep)
    assert rep.ok, rep.violations


def test_eps_rows_are_point_masses_on_same_base_state():
    rng = np.random.default_rng(0)
    for seed in range(10):
        g = random_game(int(rng.integers(2, 8)), 2, 2, 2, 0.4, seed=seed)
        p = build_product(g, [make_task("F G p0", 1.0, (0, 1)), make_task("F G p1 | G F p0", 1.0, (1,))])
        for r in np.flatnonzero(p.eps_rows):
            s = int(p.row_state()[r])
            succ, prob = p.succ[p.row_ptr[r] : p.row_ptr[r + 1]], p.prob[p.row_ptr[r] : p.row_ptr[r + 1]]
            assert prob.tolist() == [1.0]
            assert p.states[succ[0], 0] == p.states[s, 0]
            assert not np.array_equal(p.states[succ[0]], p.states[s])


def test_eps_actions_belong_to_the_controller():
    g = two_spec_game()
    p = build_product(g, [make_task("F G phi", 0.5, (0,), persistence_automaton()), make_task("G (chi -> F psi)", 0.5, (0,), response_automaton())])
    for s in range(p.n_states):
        assert all(not isinstance(c, EpsDeclaration) for c in p.agent_actions[s][1])
        eps = [c for c in p.agent_actions[s][0] if isinstance(c, EpsDeclaration)]
        assert bool(eps) == (p.states[s, 1] == 0)
    assert any("eps[0->1]" in p.action_name(s, a) for s in range(p.n_states) for a in range(p.n_actions(s)))


def test_task_validation():
    g = patience_game()
    with pytest.raises(TaskError):
        build_product(g, [make_task("F psi", 1.0, (3,))])
    with pytest.raises(TaskError):
        build_product(g, [make_task("F G psi", 1.0, ())])
    with pytest.raises(AlphabetMismatch):
        build_product(g, [make_task("F zeta", 1.0, (0,))])
    with pytest.raises(CapacityError):
        build_product(g, [make_task("F psi", 1.0, (0,))], max_states=2)
    with pytest.raises(TaskError):
        normalize_weights([make_task("F psi", 0.0)])


def test_weights_are_normalized():
    p = build_product(separation_game(), [make_task("F chi", 2.0), make_task("F psi", 6.0)])
    assert p.weights.tolist() == [0.25, 0.75]


def test_tasks_json_round_trip():
    tasks = [make_task("F chi", 0.5, (0,)), make_task("G (chi -> F psi)", 0.5, (0, 1))]
    data = json.loads(json.dumps(tasks_to_json(tasks)))
    back = tasks_from_json(data)
    assert [t.text for t in back] == [t.text for t in tasks]
    assert [t.owners for t in back] == [(0,), (0, 1)]
    with pytest.raises(TaskError):
        tasks_from_json([{"weight": 1.0}])


def test_reward_and_discount():
    p = patience_product()
    assert reward_and_discount(p, 1, 0, 0.9) == (1, 0.9)
    assert reward_and_discount(p, 0, 0, 0.9) == (0, 1.0)
    with pytest.raises(ValueError):
        reward_and_discount(p, 0, 0, 1.0)


def test_visit_bound_and_gamma_condition():
    p = patience_product()
    always_a = deterministic_policy(p, [0, 0, 0])
    always_b = deterministic_policy(p, [1, 0, 0])
    assert accepting_visit_bound(p, always_b, 0) == 0
    assert gamma_condition_witness(p, 0.9, always_a, always_b)
    with pytest.raises(ValueError):
        gamma_condition_witness(p, 0.9, always_b, always_a)


def test_visit_bound_counts_transient_accepting_states():
    # "F G phi" style: an accepting state passed through before a rejecting sink
    from almanac.game import make_game

    g = make_game([("a",)], ("p",), [0, 1, 0], {(0, (0,)): {1: 1.0}, (1, (0,)): {2: 1.0}, (2, (0,)): {2: 1.0}})
    p = build_product(g, [make_task("G F p", 1.0, (0,))])
    pol = deterministic_policy(p, [0] * p.n_states)
    assert accepting_visit_bound(p, pol, 0) >= 1
