import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from almanac.examples import patience_game, separation_game, two_spec_game
from almanac.game import deterministic_policy, induced_chain, random_game, uniform_policy
from almanac.product import build_product, make_task
from almanac.verify import (
    CapacityExceeded, VerificationError, brute_force_optimal, bscc_decomposition, end_component_optimum,
    evaluate_error, exact_hasty_value, exact_patient_value, maximal_end_components,
    monte_carlo_satisfaction, oracle_optimum, satisfaction_probability,
)

SPECS = ["F p0", "G F p0", "F G p1", "p0 U p1", "G (p0 -> F p1)", "F p0 & F p1"]


def patience_product():
    return build_product(patience_game(), [make_task("F psi", 1.0, (0,))])


def random_product(seed, n_specs=1, agents=1):
    rng = np.random.default_rng(seed)
    g = random_game(int(rng.integers(2, 6)), agents, 2, 2, 0.4, seed=seed)
    tasks = [make_task(SPECS[int(rng.integers(len(SPECS)))], 1.0, (0,)) for _ in range(n_specs)]
    return build_product(g, tasks)


def random_policy(p, rng):
    return np.concatenate([rng.dirichlet(np.ones(p.n_actions(s))) for s in range(p.n_states)])


def value_iteration(p, policy, discount, j, iters=20000):
    """Least fixed point of ``V = P (R + Γ V)`` by iteration from zero."""
    chain = induced_chain(p, policy).toarray()
    r = p.accepting[:, j].astype(float)
    g = np.where(p.accepting[:, j], discount, 1.0) if discount is not None else None
    v = np.zeros(p.n_states)
    for _ in range(iters):
        v = chain @ (r + g * v)
    return v


def test_patience_values():
    p = patience_product()
    always_b = deterministic_policy(p, [1, 0, 0])
    assert satisfaction_probability(p, always_b).weighted == pytest.approx(0.1)
    assert satisfaction_probability(p, deterministic_policy(p, [0, 0, 0])).weighted == 0.0
    assert exact_patient_value(p, always_b, 0.9, 0) == pytest.approx([1.0, 10.0, 0.0])
    assert exact_hasty_value(p, always_b, 0.9, 0) == pytest.approx([1.0, 10.0, 0.0])


def test_patient_value_times_one_minus_gamma_is_satisfaction():
    for seed in range(10):
        p = random_product(seed)
        pol = random_policy(p, np.random.default_rng(seed))
        rep = satisfaction_probability(p, pol)
        v = exact_patient_value(p, pol, 0.999, 0)
        assert p.initial @ v * (1 - 0.999) == pytest.approx(rep.per_spec[0], abs=5e-3)


def test_exact_values_match_value_iteration():
    for seed in range(8):
        p = random_product(seed)
        pol = random_policy(p, np.random.default_rng(100 + seed))
        assert np.allclose(exact_patient_value(p, pol, 0.8, 0), value_iteration(p, pol, 0.8, 0), atol=1e-6)
        chain = induced_chain(p, pol).toarray()
        r = p.accepting[:, 0].astype(float)
        u = np.linalg.solve(np.eye(p.n_states) - 0.7 * chain, chain @ r)
        assert np.allclose(exact_hasty_value(p, pol, 0.7, 0), u, atol=1e-9)


def test_bscc_decomposition():
    chain = sparse.csr_matrix(np.array([
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
    ]))
    acc = np.array([[False], [True], [False], [True]])
    (b,) = bscc_decomposition(chain, acc)
    assert b.members == frozenset({2, 3})
    assert b.intersects == (True,)


def test_monte_carlo_agrees_on_small_products():
    rng = np.random.default_rng(0)
    for seed in range(4):
        p = random_product(seed)
        pol = random_policy(p, rng)
        exact = satisfaction_probability(p, pol).per_spec
        mc = monte_carlo_satisfaction(p, pol, 20000, rng, horizon=400, window=200)
        assert np.abs(exact - mc).max() < 0.03


def test_brute_force_separation_game():
    g = separation_game()
    weighted = build_product(g, [make_task("F chi", 0.5), make_task("F psi", 0.5)])
    value, choice = brute_force_optimal(weighted)
    assert value == pytest.approx(0.5) and choice[0] == 1
    conj = build_product(g, [make_task("F chi & F psi")])
    value, choice = brute_force_optimal(conj)
    assert value == pytest.approx(0.1) and choice[0] == 0


def test_end_component_optimum_matches_enumeration_for_one_spec():
    for seed in range(15):
        p = random_product(seed)
        bf, _ = brute_force_optimal(p)
        assert end_component_optimum(p) == pytest.approx(bf, abs=1e-7)


def test_end_component_optimum_dominates_deterministic_policies_for_two_specs():
    for seed in range(8):
        p = random_product(seed, n_specs=2)
        bf, _ = brute_force_optimal(p)
        assert end_component_optimum(p) >= bf - 1e-7


def test_two_spec_game_optimum():
    from almanac.examples import persistence_automaton, response_automaton

    g = two_spec_game()
    p = build_product(g, [make_task("F G phi", 0.5, (0,), persistence_automaton()), make_task("G (chi -> F psi)", 0.5, (0,), response_automaton())])
    # staying at s0 forever (psi only) satisfies the response spec but never phi;
    # staying at s2 (phi) after the jump satisfies both
    assert end_component_optimum(p) == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_optimum_bounds_every_policy(seed):
    p = random_product(seed % 1000)
    opt = oracle_optimum(p)
    pol = random_policy(p, np.random.default_rng(seed))
    assert satisfaction_probability(p, pol).weighted <= opt + 1e-9
    assert 0.0 <= evaluate_error(p, pol, optimum=opt) <= 1.0


def test_evaluate_error_rejects_impossible_optimum():
    p = patience_product()
    with pytest.raises(VerificationError):
        evaluate_error(p, deterministic_policy(p, [1, 0, 0]), optimum=0.05)


def test_brute_force_cap():
    p = random_product(1)
    with pytest.raises(CapacityExceeded):
        brute_force_optimal(p, cap=1)


def test_maximal_end_components_of_patience_product():
    p = patience_product()
    mecs = {frozenset(m.tolist()): set(r.tolist()) for m, r in maximal_end_components(p)}
    assert mecs == {frozenset({0}): {0}, frozenset({1}): {2, 3}, frozenset({2}): {4, 5}}


def test_report_json():
    p = patience_product()
    rep = satisfaction_probability(p, uniform_policy(p))
    rep.optimum = 0.1
    data = json.loads(rep.to_json())
    assert data["weighted"] == pytest.approx(0.1)
    assert data["gap"] == pytest.approx(0.0, abs=1e-12)
