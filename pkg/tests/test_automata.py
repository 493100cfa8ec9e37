import numpy as np
import pytest
from hypothesis import given, settings

from almanac.automata import (
    AlphabetMismatch, BreakpointState, CapacityError, Ldba, ldba_accepts_lasso, ltl_to_ldba,
    ltl_to_nba, nba_accepts_lasso, nba_to_ldba,
)
from almanac.examples import persistence_automaton
from almanac.ltl import LassoWord, PropositionTable, eval_lasso, parse_letters, parse_ltl, to_nnf
from helpers import formulas, lassos, random_formula, random_lasso

AP3 = ("a", "b", "c")


def lasso(prefix, cycle, props):
    return LassoWord(parse_letters(prefix, props), parse_letters(cycle, props), len(props))


def test_eventually_nba_and_ldba():
    props = PropositionTable("a")
    f = parse_ltl("F a", props)
    nba = ltl_to_nba(to_nnf(f))
    assert nba.n_states == 2
    assert nba_accepts_lasso(nba, lasso("", "{a}", props))
    assert not nba_accepts_lasso(nba, lasso("", "{}", props))
    a = ltl_to_ldba(f)
    assert ldba_accepts_lasso(a, lasso("{}", "{a}", props))
    assert not ldba_accepts_lasso(a, lasso("", "{}", props))


def test_letter_deterministic_nba_gives_empty_initial_part():
    a = ltl_to_ldba(parse_ltl("F a"))
    assert a.initial_part == frozenset()
    assert not a.has_eps


def test_persistence_has_accepting_loop_and_permanent_exit():
    props = PropositionTable(["phi"])
    a = ltl_to_ldba(parse_ltl("F G phi", props))
    assert a.has_eps
    assert ldba_accepts_lasso(a, lasso("{phi}", "{phi}", props))
    assert not ldba_accepts_lasso(a, lasso("{phi}", "{}", props))
    assert not ldba_accepts_lasso(a, lasso("", "{phi}{}", props))
    # once in the accepting part, reading ¬phi leads to a state that never accepts again
    for q in a.accepting:
        dead = a.step(q, 0)
        assert dead not in a.accepting
        assert all(a.step(dead, letter) == dead for letter in range(2))


def test_hand_built_persistence_automaton_is_valid():
    a = persistence_automaton().check()
    props = PropositionTable(["phi", "chi", "psi"])
    assert ldba_accepts_lasso(a, lasso("{chi}", "{phi}", props))
    assert not ldba_accepts_lasso(a, lasso("", "{phi}{psi}", props))


def test_breakpoint_state_requires_subset():
    BreakpointState(frozenset({1, 2}), frozenset({1}))
    with pytest.raises(ValueError):
        BreakpointState(frozenset({1}), frozenset({2}))


def test_capacity_limit():
    f = parse_ltl("G F a & G F b & G F c & (a U (b U c))")
    with pytest.raises(CapacityError):
        ltl_to_ldba(f, max_states=3)


def test_alphabet_mismatch():
    a = ltl_to_ldba(parse_ltl("F a"))
    with pytest.raises(AlphabetMismatch):
        ldba_accepts_lasso(a, LassoWord((), (0,), 2))


def test_violations_report_clauses():
    delta = np.zeros((2, 2), dtype=np.int64)
    delta[1] = 1
    bad = Ldba(("a",), delta, ((1,), (0,)), frozenset({1}), frozenset({0}))
    assert any("δ(q,ε) = ∅ for every q ∈ Q_A" in v for v in bad.violations())
    leaky = Ldba(("a",), np.array([[0, 1], [0, 1]]), ((1,), ()), frozenset({1}), frozenset({0}))
    assert any("δ(q,α) ⊆ Q_A" in v for v in leaky.violations())
    wrong_f = Ldba(("a",), np.array([[0, 0], [1, 1]]), ((1,), ()), frozenset({0}), frozenset({0}))
    assert any("F ⊆ Q_A" in v for v in wrong_f.violations())
    with pytest.raises(ValueError):
        bad.check()


def test_random_pairs_agree_with_semantics():
    rng = np.random.default_rng(5)
    for _ in range(300):
        f = random_formula(rng, int(rng.integers(1, 13)))
        a = ltl_to_ldba(f, AP3)
        assert not a.violations()
        for _ in range(3):
            w = random_lasso(rng)
            assert ldba_accepts_lasso(a, w) == eval_lasso(f, w), (f, w)


@settings(max_examples=150, deadline=None)
@given(formulas, lassos)
def test_tableau_nba_matches_semantics(f, w):
    nba = ltl_to_nba(to_nnf(f), AP3)
    assert nba_accepts_lasso(nba, w) == eval_lasso(f, w)


@settings(max_examples=150, deadline=None)
@given(formulas, lassos)
def test_ldba_matches_semantics(f, w):
    a = ltl_to_ldba(f, AP3)
    assert not a.violations()
    assert ldba_accepts_lasso(a, w) == eval_lasso(f, w)


def test_ldba_initial_part_is_letter_closed_and_accepting_part_deterministic():
    rng = np.random.default_rng(9)
    for _ in range(100):
        a = ltl_to_ldba(random_formula(rng, int(rng.integers(3, 13))), AP3)
        q_a = a.accepting_part
        for q in q_a:
            assert not a.eps[q]
            assert all(int(t) in q_a for t in a.delta[q])
        assert a.accepting <= q_a


def test_nba_to_ldba_on_nondeterministic_nba():
    nba = ltl_to_nba(to_nnf(parse_ltl("F G a")))
    assert not nba.is_deterministic()
    a = nba_to_ldba(nba).check()
    assert a.initial_part
