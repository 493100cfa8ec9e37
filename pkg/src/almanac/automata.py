"""Büchi automata: tableau translation from LTL, limit-determinisation and lasso acceptance.

Letters are bitmasks over the automaton's ``ap`` tuple; bit ``i`` is ``ap[i]``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ltl import (
    And,
    Atom,
    FalseF,
    Formula,
    LassoWord,
    Next,
    Not,
    Or,
    Release,
    TrueF,
    Until,
    atoms,
    is_nnf,
    to_nnf,
)

MAX_AP = 8
DEFAULT_STATE_LIMIT = 1 << 16


class CapacityError(RuntimeError):
    """An automaton construction exceeded its configured state budget."""


class AlphabetMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Nba:
    """Nondeterministic Büchi automaton with explicit per-letter successor sets."""

    n_states: int
    initial: int
    ap: tuple[str, ...]
    delta: tuple[tuple[frozenset[int], ...], ...]
    accepting: frozenset[int]

    @property
    def width(self) -> int:
        return len(self.ap)

    def successors(self, q: int, letter: int) -> frozenset[int]:
        return self.delta[q][letter]

    def is_deterministic(self) -> bool:
        return all(len(s) <= 1 for row in self.delta for s in row)


@dataclass(frozen=True)
class BreakpointState:
    reach: frozenset[int]
    breakpoint: frozenset[int]

    def __post_init__(self):
        if not self.breakpoint <= self.reach:
            raise ValueError("breakpoint must be a subset of reach")


@dataclass(frozen=True, eq=False)
class Ldba:
    """Limit-deterministic Büchi automaton.

    ``delta[q, letter]`` is the unique letter successor; ``eps[q]`` lists the
    ε-targets of ``q`` (only non-empty for states of ``initial_part``).
    """

    ap: tuple[str, ...]
    delta: np.ndarray
    eps: tuple[tuple[int, ...], ...]
    accepting: frozenset[int]
    initial_part: frozenset[int]
    initial: int = 0
    names: tuple[str, ...] = field(default=())

    @property
    def n_states(self) -> int:
        return int(self.delta.shape[0])

    @property
    def width(self) -> int:
        return len(self.ap)

    @property
    def accepting_part(self) -> frozenset[int]:
        return frozenset(range(self.n_states)) - self.initial_part

    @property
    def has_eps(self) -> bool:
        return any(self.eps)

    def step(self, q: int, letter: int) -> int:
        return int(self.delta[q, letter])

    def violations(self) -> list[str]:
        """Clauses of the LDBA definition that this automaton breaks."""
        out = []
        n, k = self.n_states, 1 << self.width
        if self.delta.shape != (n, k):
            out.append(f"|δ(q,α)| = 1 for every state q and letter α (table shape {self.delta.shape})")
        elif n and (self.delta.min() < 0 or self.delta.max() >= n):
            out.append("|δ(q,α)| = 1 for every state q and letter α (successor out of range)")
        if not 0 <= self.initial < max(n, 1):
            out.append("initial state in range")
        if len(self.eps) != n:
            out.append("ε-table covers every state")
        q_a = self.accepting_part
        for q in sorted(q_a):
            if q < len(self.eps) and self.eps[q]:
                out.append(f"δ(q,ε) = ∅ for every q ∈ Q_A (state {q})")
                break
        if self.delta.shape == (n, k):
            for q in sorted(q_a):
                bad = [int(t) for t in self.delta[q] if int(t) not in q_a]
                if bad:
                    out.append(f"δ(q,α) ⊆ Q_A for every q ∈ Q_A and letter α (state {q} → {bad[0]})")
                    break
        for q_eps in self.eps:
            for t in q_eps:
                if not 0 <= t < n:
                    out.append(f"ε-target {t} out of range")
        if not self.accepting <= q_a:
            out.append(f"F ⊆ Q_A (states {sorted(self.accepting - q_a)})")
        return out

    def check(self) -> "Ldba":
        bad = self.violations()
        if bad:
            raise ValueError("LDBA invariant violated: " + "; ".join(bad))
        return self

    def structurally_equal(self, other: "Ldba") -> bool:
        return (
            self.ap == other.ap
            and self.initial == other.initial
            and np.array_equal(self.delta, other.delta)
            and tuple(tuple(sorted(e)) for e in self.eps) == tuple(tuple(sorted(e)) for e in other.eps)
            and self.accepting == other.accepting
            and self.initial_part == other.initial_part
        )


def formula_ap(f: Formula) -> tuple[str, ...]:
    """Alphabet whose bit ``i`` is the proposition with table id ``i``."""
    props = atoms(f)
    width = max((p.id for p in props), default=-1) + 1
    names = [f"_p{i}" for i in range(width)]
    for p in props:
        names[p.id] = p.name
    return tuple(names)


# ---------------------------------------------------------------------------
# Tableau translation


class _Tableau:
    """Obligation-set expansion of an NNF formula into transition-labelled moves."""

    def __init__(self, formula: Formula):
        self.untils: list[Until] = []
        self._collect(formula)
        self._cache: dict[frozenset, list[tuple[int, int, frozenset, frozenset]]] = {}

    def _collect(self, f: Formula) -> None:
        if isinstance(f, Until) and f not in self.untils:
            self.untils.append(f)
        for c in f.children():
            self._collect(c)

    def expand(self, obligations: frozenset) -> list[tuple[int, int, frozenset, frozenset]]:
        """All ways to discharge ``obligations`` now.

        Each move is ``(pos_mask, neg_mask, next_obligations, fulfilled_untils)``.
        """
        if obligations in self._cache:
            return self._cache[obligations]
        moves: list[tuple[int, int, frozenset, frozenset]] = []
        stack = [(list(obligations), 0, 0, frozenset(), frozenset())]
        while stack:
            todo, pos, neg, nxt, pending = stack.pop()
            while todo:
                f = todo.pop()
                if isinstance(f, TrueF):
                    continue
                if isinstance(f, FalseF):
                    break
                if isinstance(f, Atom):
                    pos |= 1 << f.prop.id
                    if pos & neg:
                        break
                    continue
                if isinstance(f, Not):
                    neg |= 1 << f.arg.prop.id
                    if pos & neg:
                        break
                    continue
                if isinstance(f, And):
                    todo += [f.left, f.right]
                    continue
                if isinstance(f, Next):
                    nxt = nxt | {f.arg}
                    continue
                if isinstance(f, Or):
                    stack.append((todo + [f.right], pos, neg, nxt, pending))
                    todo.append(f.left)
                    continue
                if isinstance(f, Until):
                    stack.append((todo + [f.left], pos, neg, nxt | {f}, pending | {f}))
                    todo.append(f.right)
                    continue
                if isinstance(f, Release):
                    stack.append((todo + [f.right], pos, neg, nxt | {f}, pending))
                    todo += [f.left, f.right]
                    continue
                raise TypeError(f"formula not in NNF: {f!r}")
            else:
                fulfilled = frozenset(u for u in self.untils if u not in pending)
                moves.append((pos, neg, frozenset(nxt), fulfilled))
        self._cache[obligations] = moves
        return moves


def _prune_dominated(targets: list[tuple[frozenset, frozenset]]) -> list[tuple[frozenset, frozenset]]:
    """Drop a move when another asks for fewer obligations and fulfils more."""
    unique = list(dict.fromkeys(targets))
    kept = []
    for i, (g, f) in enumerate(unique):
        dominated = any(
            j != i and g2 <= g and f2 >= f and (g2, f2) != (g, f)
            for j, (g2, f2) in enumerate(unique)
        )
        if not dominated:
            kept.append((g, f))
    return kept


def ltl_to_nba(
    f: Formula,
    ap: Sequence[str] | None = None,
    max_states: int = DEFAULT_STATE_LIMIT,
) -> Nba:
    """Tableau construction with generalized acceptance degeneralized by a counter.

    States are ``(obligations, counter)``; the counter advances past each Until
    whose eventuality is fulfilled on the incoming move, in a fixed order, and a
    state is accepting when the counter has passed all of them.
    """
    if not is_nnf(f):
        raise ValueError("ltl_to_nba expects a formula in negation normal form")
    ap = tuple(ap) if ap is not None else formula_ap(f)
    if len(ap) > MAX_AP:
        raise CapacityError(f"alphabet of {len(ap)} propositions exceeds limit {MAX_AP}")
    used = max((p.id for p in atoms(f)), default=-1)
    if used >= len(ap):
        raise AlphabetMismatch(f"formula uses proposition id {used} outside alphabet {ap}")
    tab = _Tableau(f)
    k = len(tab.untils)
    n_letters = 1 << len(ap)

    start = (frozenset({f}), 0)
    index = {start: 0}
    order = [start]
    delta: list[tuple[frozenset[int], ...]] = []
    queue = deque([start])
    while queue:
        obligations, counter = queue.popleft()
        moves = tab.expand(obligations)
        row = []
        for letter in range(n_letters):
            options = [
                (nxt, ful)
                for pos, neg, nxt, ful in moves
                if pos & letter == pos and not neg & letter
            ]
            succ = set()
            for nxt, ful in _prune_dominated(options):
                c = 0 if counter == k else counter
                while c < k and tab.untils[c] in ful:
                    c += 1
                key = (nxt, c)
                if key not in index:
                    if len(order) >= max_states:
                        raise CapacityError(f"NBA exceeds {max_states} states")
                    index[key] = len(order)
                    order.append(key)
                    queue.append(key)
                succ.add(index[key])
            row.append(frozenset(succ))
        delta.append(tuple(row))
    accepting = frozenset(i for i, (_, c) in enumerate(order) if c == k)
    return Nba(len(order), 0, ap, tuple(delta), accepting)


# ---------------------------------------------------------------------------
# Limit-determinisation


def _nba_sccs(b: Nba) -> tuple[list[int], list[bool]]:
    """SCC id per state and whether each SCC contains a cycle."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    rows, cols = [], []
    for q in range(b.n_states):
        for t in set().union(*b.delta[q]):
            rows.append(q)
            cols.append(t)
    mat = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(b.n_states, b.n_states))
    _, comp = connected_components(mat, directed=True, connection="strong")
    sizes = np.bincount(comp, minlength=comp.max() + 1 if len(comp) else 0)
    nontrivial = [bool(s > 1) for s in sizes]
    for q, t in zip(rows, cols):
        if q == t:
            nontrivial[comp[q]] = True
    return comp.tolist(), nontrivial


def nba_to_ldba(b: Nba, max_states: int = DEFAULT_STATE_LIMIT) -> Ldba:
    """Limit-determinise ``b``.

    A letter-deterministic NBA is returned as a deterministic automaton plus a
    rejecting sink. Otherwise the initial part is the subset construction of
    ``b`` and every subset may jump by ε into the breakpoint state
    ``({q}, ∅)`` for each accepting ``q`` on a cycle; breakpoint states follow
    ``reach' = δ(reach, α)``, ``bp' = δ(bp, α) ∪ (reach' ∩ F)`` and are
    accepting when ``bp' = reach'``, after which the breakpoint restarts empty.
    """
    n_letters = 1 << b.width
    if b.is_deterministic():
        sink = b.n_states
        delta = np.full((b.n_states + 1, n_letters), sink, dtype=np.int64)
        for q in range(b.n_states):
            for a in range(n_letters):
                s = b.delta[q][a]
                if s:
                    delta[q, a] = next(iter(s))
        ldba = Ldba(
            ap=b.ap,
            delta=delta,
            eps=tuple(() for _ in range(b.n_states + 1)),
            accepting=b.accepting,
            initial_part=frozenset(),
            initial=b.initial,
        )
        return _trim(ldba)

    comp, nontrivial = _nba_sccs(b)
    jumpable = {q for q in b.accepting if nontrivial[comp[q]]}

    def post(states: frozenset[int], a: int) -> frozenset[int]:
        out: set[int] = set()
        for q in states:
            out |= b.delta[q][a]
        return frozenset(out)

    # initial part: subset construction
    init = frozenset({b.initial})
    sub_index = {init: 0}
    subsets = [init]
    queue = deque([init])
    sub_delta: list[list[int]] = []
    while queue:
        s = queue.popleft()
        row = []
        for a in range(n_letters):
            t = post(s, a)
            if t not in sub_index:
                sub_index[t] = len(subsets)
                subsets.append(t)
                queue.append(t)
                if len(subsets) > max_states:
                    raise CapacityError(f"LDBA initial part exceeds {max_states} states")
            row.append(sub_index[t])
        sub_delta.append(row)

    # accepting part: breakpoint construction; None is the rejecting sink
    bp_index: dict[BreakpointState | None, int] = {}
    bp_states: list[BreakpointState | None] = []
    bp_delta: list[list[int]] = []
    queue2: deque = deque()

    def bp_id(state: BreakpointState | None) -> int:
        if state not in bp_index:
            bp_index[state] = len(bp_states)
            bp_states.append(state)
            queue2.append(state)
            if len(bp_states) + len(subsets) > max_states:
                raise CapacityError(f"LDBA exceeds {max_states} states")
        return bp_index[state]

    for q in sorted(jumpable):
        bp_id(BreakpointState(frozenset({q}), frozenset()))
    while queue2:
        st = queue2.popleft()
        row = []
        for a in range(n_letters):
            if st is None:
                row.append(bp_id(None))
                continue
            reach = post(st.reach, a)
            if not reach:
                row.append(bp_id(None))
                continue
            base = frozenset() if st.breakpoint == st.reach else st.breakpoint
            bp = post(base, a) | (reach & b.accepting)
            row.append(bp_id(BreakpointState(reach, bp)))
        bp_delta.append(row)

    n_i = len(subsets)
    delta = np.array(
        [row for row in sub_delta] + [[n_i + t for t in row] for row in bp_delta],
        dtype=np.int64,
    ).reshape(n_i + len(bp_states), n_letters)
    eps = []
    for s in subsets:
        eps.append(tuple(n_i + bp_index[BreakpointState(frozenset({q}), frozenset())] for q in sorted(s & jumpable)))
    eps += [() for _ in bp_states]
    accepting = frozenset(
        n_i + i
        for i, st in enumerate(bp_states)
        if st is not None and st.breakpoint == st.reach
    )
    ldba = Ldba(
        ap=b.ap,
        delta=delta,
        eps=tuple(eps),
        accepting=accepting,
        initial_part=frozenset(range(n_i)),
        initial=0,
    )
    return _trim(ldba)


def _trim(a: Ldba) -> Ldba:
    """Merge states that cannot reach an accepting cycle into one sink, drop
    unreachable states, and renumber in breadth-first order from the initial state."""
    n = a.n_states
    succ = [set(a.delta[q].tolist()) | set(a.eps[q]) for q in range(n)]
    # states on an accepting cycle or able to reach one
    pred = [set() for _ in range(n)]
    for q in range(n):
        for t in succ[q]:
            pred[t].add(q)
    good = set()
    for f in a.accepting:
        # f lies on a cycle iff f is reachable from one of its successors
        seen, stack = set(), list(succ[f])
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(succ[x])
        if f in seen:
            good.add(f)
    live = set(good)
    stack = list(good)
    while stack:
        x = stack.pop()
        for p in pred[x]:
            if p not in live:
                live.add(p)
                stack.append(p)

    order: list[int] = []
    index: dict[int, int] = {}
    SINK = -1

    def canon(q: int) -> int:
        return q if q in live else SINK

    start = canon(a.initial)
    queue = deque([start])
    index[start] = 0
    order.append(start)
    while queue:
        q = queue.popleft()
        targets = [canon(int(t)) for t in a.delta[q]] if q != SINK else [SINK]
        if q != SINK:
            targets += [t for t in a.eps[q] if t in live]
        for t in targets:
            if t not in index:
                index[t] = len(order)
                order.append(t)
                queue.append(t)
    n_letters = 1 << a.width
    new_delta = np.empty((len(order), n_letters), dtype=np.int64)
    new_eps = []
    for i, q in enumerate(order):
        if q == SINK:
            new_delta[i] = i
            new_eps.append(())
        else:
            new_delta[i] = [index[canon(int(t))] for t in a.delta[q]]
            new_eps.append(tuple(sorted(index[t] for t in a.eps[q] if t in live)))
    initial_part = frozenset(i for i, q in enumerate(order) if q != SINK and q in a.initial_part)
    accepting = frozenset(i for i, q in enumerate(order) if q != SINK and q in a.accepting)
    return Ldba(a.ap, new_delta, tuple(new_eps), accepting, initial_part, 0)


def ltl_to_ldba(
    f: Formula,
    ap: Sequence[str] | None = None,
    max_states: int = DEFAULT_STATE_LIMIT,
) -> Ldba:
    ap = tuple(ap) if ap is not None else formula_ap(f)
    return nba_to_ldba(ltl_to_nba(to_nnf(f), ap, max_states), max_states).check()


# ---------------------------------------------------------------------------
# Lasso acceptance


def ldba_accepts_lasso(a: Ldba, w: LassoWord) -> bool:
    """Exact acceptance of ``prefix . cycle^omega``.

    Builds the graph over (automaton state, folded word position) with letter
    moves and ε-jumps, and accepts iff an accepting node reachable from the
    start lies on a cycle.
    """
    if w.width != a.width:
        raise AlphabetMismatch(f"word width {w.width} != automaton width {a.width}")
    n = len(w)
    letters = [w.letter(i) for i in range(n)]
    succ_pos = [w.successor(i) for i in range(n)]

    def moves(node: tuple[int, int]):
        q, i = node
        yield (int(a.delta[q, letters[i]]), succ_pos[i])
        for t in a.eps[q]:
            yield (t, i)

    start = (a.initial, 0)
    reach = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for u in moves(v):
            if u not in reach:
                reach.add(u)
                stack.append(u)
    for v in reach:
        if v[0] not in a.accepting:
            continue
        seen: set = set()
        stack = list(moves(v))
        while stack:
            x = stack.pop()
            if x == v:
                return True
            if x in seen:
                continue
            seen.add(x)
            stack.extend(moves(x))
    return False


def nba_accepts_lasso(b: Nba, w: LassoWord) -> bool:
    """Same graph search for an NBA (used to test the tableau stage on its own)."""
    if w.width != b.width:
        raise AlphabetMismatch(f"word width {w.width} != automaton width {b.width}")
    n = len(w)
    letters = [w.letter(i) for i in range(n)]
    succ_pos = [w.successor(i) for i in range(n)]

    def moves(node):
        q, i = node
        for t in b.delta[q][letters[i]]:
            yield (t, succ_pos[i])

    start = (b.initial, 0)
    reach = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for u in moves(v):
            if u not in reach:
                reach.add(u)
                stack.append(u)
    for v in reach:
        if v[0] not in b.accepting:
            continue
        seen: set = set()
        stack = list(moves(v))
        while stack:
            x = stack.pop()
            if x == v:
                return True
            if x in seen:
                continue
            seen.add(x)
            stack.extend(moves(x))
    return False
