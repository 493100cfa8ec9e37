"""Small hand-built games and automata used for reproductions and tests."""

from __future__ import annotations

import numpy as np

from .automata import Ldba
from .game import MarkovGame, make_game


def patience_game() -> MarkovGame:
    """One agent, actions ``a``/``b``. From ``s0``, ``a`` loops and ``b`` reaches
    ``s1`` (labelled ``psi``) with probability 0.1 or the dead end ``s2`` with 0.9;
    ``s1`` and ``s2`` loop under every action.

    Under ``F psi`` the optimum is 0.1 via ``b``, yet state-discounted Q-learning
    can lock onto ``a``.
    """
    loop = lambda s: {s: 1.0}  # noqa: E731
    return make_game(
        actions=[("a", "b")],
        ap=("psi",),
        labels=[(), ("psi",), ()],
        transitions={
            (0, (0,)): loop(0),
            (0, (1,)): {1: 0.1, 2: 0.9},
            (1, (0,)): loop(1),
            (1, (1,)): loop(1),
            (2, (0,)): loop(2),
            (2, (1,)): loop(2),
        },
    )


def separation_game() -> MarkovGame:
    """One agent at ``s0`` choosing ``a`` (0.1 to ``s3`` labelled ``chi, psi``,
    0.9 to the unlabelled ``s4``) or ``b`` (0.5 each to ``s1`` labelled ``chi``
    and ``s2`` labelled ``psi``); every other state is absorbing.

    ``b`` maximises ``0.5 Pr(F chi) + 0.5 Pr(F psi)`` (0.5 vs 0.1) while ``a``
    maximises ``Pr(F chi & F psi)`` (0.1 vs 0).
    """
    trans = {(0, (0,)): {3: 0.1, 4: 0.9}, (0, (1,)): {1: 0.5, 2: 0.5}}
    for s in range(1, 5):
        for a in range(2):
            trans[(s, (a,))] = {s: 1.0}
    return make_game(
        actions=[("a", "b")],
        ap=("chi", "psi"),
        labels=[(), ("chi",), ("psi",), ("chi", "psi"), ()],
        transitions=trans,
    )


def two_spec_game() -> MarkovGame:
    """Two agents; joint moves are named after the single action that matters.

    ``s0`` (``psi``): ``a`` loops, ``b`` goes to ``s1`` w.p. 0.1 and ``s2`` w.p. 0.9.
    ``s1`` (``chi``): ``c`` stays w.p. 0.4 and moves to ``s2`` w.p. 0.6.
    ``s2`` (``phi``): ``d`` goes to ``s1``, ``e`` stays, ``f`` returns to ``s0``.
    Agent 0 picks the move from its three options per state (unused ones repeat
    the last move); agent 1 has a single no-op action.
    """
    moves = {
        0: [{0: 1.0}, {1: 0.1, 2: 0.9}, {1: 0.1, 2: 0.9}],
        1: [{1: 0.4, 2: 0.6}] * 3,
        2: [{1: 1.0}, {2: 1.0}, {0: 1.0}],
    }
    trans = {(s, (a, 0)): dist for s, row in moves.items() for a, dist in enumerate(row)}
    return make_game(
        actions=[("m0", "m1", "m2"), ("noop",)],
        ap=("phi", "chi", "psi"),
        labels=[("psi",), ("chi",), ("phi",)],
        transitions=trans,
    )


def persistence_automaton() -> Ldba:
    """Hand-written LDBA for ``F G phi`` over ``(phi, chi, psi)``: ``q0`` waits on
    every letter and may jump by ε to the accepting ``q1``, which loops on ``phi``
    and falls into the rejecting ``q2`` otherwise."""
    letters = np.arange(8)
    phi = (letters & 1).astype(bool)
    delta = np.zeros((3, 8), dtype=np.int64)
    delta[0] = 0
    delta[1] = np.where(phi, 1, 2)
    delta[2] = 2
    return Ldba(("phi", "chi", "psi"), delta, ((1,), (), ()), frozenset({1}), frozenset({0}), 0)


def response_automaton() -> Ldba:
    """Deterministic automaton for ``G(chi -> F psi)`` over ``(phi, chi, psi)``:
    the accepting ``q0`` stays while no request is open, ``q1`` waits for ``psi``."""
    letters = np.arange(8)
    chi = (letters >> 1 & 1).astype(bool)
    psi = (letters >> 2 & 1).astype(bool)
    delta = np.zeros((2, 8), dtype=np.int64)
    delta[0] = np.where(chi & ~psi, 1, 0)
    delta[1] = np.where(psi, 0, 1)
    return Ldba(("phi", "chi", "psi"), delta, ((), ()), frozenset({0}), frozenset(), 0)
