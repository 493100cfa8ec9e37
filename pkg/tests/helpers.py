"""Random formula and lasso generators shared by the test modules."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from almanac.ltl import And, Atom, FalseF, Next, Not, Or, Proposition, Release, TrueF, Until, LassoWord

PROPS = tuple(Proposition(i, n) for i, n in enumerate("abc"))


def random_formula(rng: np.random.Generator, size: int, n_props: int = 3):
    """Formula with exactly ``size`` nodes over the first ``n_props`` propositions."""
    if size <= 1:
        k = int(rng.integers(n_props + 2))
        if k == n_props:
            return TrueF()
        if k == n_props + 1:
            return FalseF()
        return Atom(PROPS[k])
    if size == 2 or rng.random() < 0.4:
        op = (Not, Next)[int(rng.integers(2))]
        return op(random_formula(rng, size - 1, n_props))
    left = int(rng.integers(1, size - 1))
    op = (And, Or, Until, Release)[int(rng.integers(4))]
    return op(random_formula(rng, left, n_props), random_formula(rng, size - 1 - left, n_props))


def random_lasso(rng: np.random.Generator, width: int = 3, max_len: int = 6) -> LassoWord:
    prefix = rng.integers(1 << width, size=int(rng.integers(0, max_len + 1)))
    cycle = rng.integers(1 << width, size=int(rng.integers(1, max_len + 1)))
    return LassoWord(tuple(prefix), tuple(cycle), width)


def _formulas(n_props: int = 3):
    leaves = st.sampled_from([Atom(p) for p in PROPS[:n_props]] + [TrueF(), FalseF()])

    def extend(children):
        return st.one_of(
            children.map(Not),
            children.map(Next),
            st.tuples(children, children).map(lambda t: And(*t)),
            st.tuples(children, children).map(lambda t: Or(*t)),
            st.tuples(children, children).map(lambda t: Until(*t)),
            st.tuples(children, children).map(lambda t: Release(*t)),
        )

    return st.recursive(leaves, extend, max_leaves=5)


formulas = _formulas()
letters = st.integers(0, 7)
lassos = st.builds(
    LassoWord,
    st.lists(letters, max_size=6).map(tuple),
    st.lists(letters, min_size=1, max_size=6).map(tuple),
    st.just(3),
)
