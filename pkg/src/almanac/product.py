"""Product of a Markov game with one LDBA per task formula.

Product states are tuples ``(s, q¹, …, qᵐ)``. At each product state every agent
chooses a base action or, for automata it controls, an ε declaration naming
one jump target per automaton; joint actions are the Cartesian product of the
agents' choices in row-major order.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .automata import AlphabetMismatch, CapacityError, Ldba, ltl_to_ldba
from .game import MarkovGame, RowModel
from .hoa import import_hoa
from .ltl import Formula, PropositionTable, parse_ltl, to_text

DEFAULT_PRODUCT_LIMIT = 100_000


class TaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpecTask:
    automaton: Ldba
    weight: float = 1.0
    owners: tuple[int, ...] = (0,)
    formula: Formula | None = None
    text: str = ""

    @property
    def controller(self) -> int | None:
        """The single agent allowed to declare ε-jumps for this automaton."""
        return self.owners[0] if self.owners else None


def make_task(
    formula: str | Formula,
    weight: float = 1.0,
    owners: Sequence[int] = (0,),
    automaton: Ldba | str | None = None,
) -> SpecTask:
    """Build a task; the automaton is translated from the formula unless given
    (as an :class:`Ldba` or HOA text)."""
    if isinstance(formula, str):
        text = formula
        f = parse_ltl(formula, PropositionTable())
    else:
        f = formula
        text = to_text(formula)
    if isinstance(automaton, str):
        automaton = import_hoa(automaton)
    if automaton is None:
        from .ltl import atoms

        props = sorted(atoms(f), key=lambda p: p.id)
        ap = [f"_p{i}" for i in range(max((p.id for p in props), default=-1) + 1)]
        for p in props:
            ap[p.id] = p.name
        automaton = ltl_to_ldba(f, ap)
    return SpecTask(automaton, float(weight), tuple(int(o) for o in owners), f, text)


def normalize_weights(tasks: Sequence[SpecTask]) -> list[SpecTask]:
    total = sum(t.weight for t in tasks)
    if not tasks:
        return []
    if total <= 0 or any(t.weight < 0 for t in tasks):
        raise TaskError("task weights must be non-negative with positive sum")
    return [SpecTask(t.automaton, t.weight / total, t.owners, t.formula, t.text) for t in tasks]


def tasks_from_json(data: list[dict[str, Any]] | str) -> list[SpecTask]:
    if isinstance(data, str):
        data = json.loads(data)
    if not isinstance(data, list):
        raise TaskError("task file must hold a JSON list")
    tasks = []
    for k, item in enumerate(data):
        try:
            tasks.append(
                make_task(
                    item["formula"],
                    float(item.get("weight", 1.0)),
                    item.get("owners", [0]),
                    item.get("automaton"),
                )
            )
        except KeyError as exc:
            raise TaskError(f"task {k}: missing field {exc}") from None
    return tasks


def tasks_to_json(tasks: Sequence[SpecTask]) -> list[dict[str, Any]]:
    return [{"formula": t.text, "weight": t.weight, "owners": list(t.owners)} for t in tasks]


@dataclass(frozen=True)
class EpsDeclaration:
    """An agent's ε action: jump automaton ``j`` to state ``target`` for each pair."""

    jumps: tuple[tuple[int, int], ...]

    def __str__(self) -> str:
        return "eps[" + ",".join(f"{j}->{t}" for j, t in self.jumps) + "]"


@dataclass(eq=False)
class ProductGame(RowModel):
    """Explicit reachable product with per-spec reward and discount tables."""

    base: MarkovGame
    tasks: tuple[SpecTask, ...]
    states: np.ndarray  # (n, 1 + m): base state then automaton states
    agent_actions: list[tuple[tuple[object, ...], ...]]  # per state, per agent
    local_index: np.ndarray  # (n_rows, n_agents): per-agent choice of each joint row
    state_ptr: np.ndarray
    row_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    initial: np.ndarray
    accepting: np.ndarray  # (n, m) bool: q^j ∈ F^j
    eps_rows: np.ndarray  # (n_rows,) bool
    index: dict[tuple[int, ...], int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        self.n_states = len(self.states)

    @property
    def n_agents(self) -> int:
        return self.base.n_agents

    @property
    def n_specs(self) -> int:
        return len(self.tasks)

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.tasks])

    def agent_counts(self, s: int) -> tuple[int, ...]:
        return tuple(len(a) for a in self.agent_actions[s])

    def state_of(self, base: int, *autos: int) -> int:
        return self.index[(base, *autos)]

    def rewards(self) -> np.ndarray:
        return self.accepting.astype(float)

    def discounts(self, gamma_v: float) -> np.ndarray:
        return np.where(self.accepting, gamma_v, 1.0)

    def action_name(self, s: int, a: int) -> str:
        r = self.state_ptr[s] + a
        parts = []
        for i, k in enumerate(self.local_index[r]):
            choice = self.agent_actions[s][i][k]
            parts.append(str(choice) if isinstance(choice, EpsDeclaration) else self.base.actions[i][choice])
        return "(" + ",".join(parts) + ")"

    def state_name(self, s: int) -> str:
        comps = self.states[s]
        return f"(s{comps[0]}," + ",".join(f"q{j + 1}_{q}" for j, q in enumerate(comps[1:])) + ")"

    def stats(self) -> dict[str, int]:
        return {
            "states": int(self.n_states),
            "actions": int(self.n_rows),
            "transitions": int(len(self.succ)),
            "eps_edges": int(self.eps_rows.sum()),
            "max_joint_actions": int(np.diff(self.state_ptr).max()) if self.n_states else 0,
        }


def _letter_table(task: SpecTask, g: MarkovGame) -> np.ndarray:
    """Automaton letter read at each base state."""
    a = task.automaton
    missing = [p for p in a.ap if p not in g.ap and not p.startswith("_p")]
    if missing:
        raise AlphabetMismatch(f"propositions {missing} of {task.text or 'automaton'} not in game AP {g.ap}")
    letters = np.zeros(g.n_states, dtype=np.int64)
    for bit, name in enumerate(a.ap):
        if name in g.ap:
            k = g.ap.index(name)
            letters |= ((g.labels >> k) & 1) << bit
    return letters


def build_product(
    g: MarkovGame,
    tasks: Sequence[SpecTask],
    normalize: bool = True,
    max_states: int = DEFAULT_PRODUCT_LIMIT,
) -> ProductGame:
    """Breadth-first construction of the reachable product from ``ζ⊗``."""
    tasks = tuple(normalize_weights(tasks) if normalize else tasks)
    m = len(tasks)
    for j, t in enumerate(tasks):
        if any(not 0 <= o < g.n_agents for o in t.owners):
            raise TaskError(f"task {j}: owners {t.owners} outside agents 0..{g.n_agents - 1}")
        if t.automaton.has_eps and not t.owners:
            raise TaskError(f"task {j}: automaton has ε-jumps but no owning agent")
        bad = t.automaton.violations()
        if bad:
            raise TaskError(f"task {j}: " + "; ".join(bad))
    letters = [_letter_table(t, g) for t in tasks]
    autos = [t.automaton for t in tasks]
    controlled = [[j for j, t in enumerate(tasks) if t.controller == i and autos[j].has_eps] for i in range(g.n_agents)]

    start_autos = tuple(a.initial for a in autos)
    index: dict[tuple[int, ...], int] = {}
    states: list[tuple[int, ...]] = []
    queue: deque = deque()

    def intern(key: tuple[int, ...]) -> int:
        if key not in index:
            if len(states) >= max_states:
                raise CapacityError(f"product exceeds {max_states} states")
            index[key] = len(states)
            states.append(key)
            queue.append(key)
        return index[key]

    initial_mass: dict[int, float] = {}
    for s in np.flatnonzero(g.initial > 0):
        initial_mass[intern((int(s), *start_autos))] = float(g.initial[s])

    agent_actions: list[tuple[tuple[object, ...], ...]] = []
    state_counts: list[int] = []
    local_rows: list[tuple[int, ...]] = []
    rows: list[list[tuple[int, float]]] = []
    eps_flags: list[bool] = []
    while queue:
        key = queue.popleft()
        s, qs = key[0], key[1:]
        per_agent = []
        for i in range(g.n_agents):
            choices: list[object] = list(range(len(g.actions[i])))
            jumpable = [j for j in controlled[i] if autos[j].eps[qs[j]]]
            for r in range(1, len(jumpable) + 1):
                for subset in itertools.combinations(jumpable, r):
                    for targets in itertools.product(*(autos[j].eps[qs[j]] for j in subset)):
                        choices.append(EpsDeclaration(tuple(zip(subset, targets))))
            per_agent.append(tuple(choices))
        agent_actions.append(tuple(per_agent))
        counts = [len(c) for c in per_agent]
        state_counts.append(int(np.prod(counts)))
        for combo in itertools.product(*(range(c) for c in counts)):
            local_rows.append(combo)
            chosen = [per_agent[i][k] for i, k in enumerate(combo)]
            decls = [c for c in chosen if isinstance(c, EpsDeclaration)]
            if decls:
                new_q = list(qs)
                for d in decls:
                    for j, t in d.jumps:
                        new_q[j] = t
                rows.append([(intern((s, *new_q)), 1.0)])
                eps_flags.append(True)
                continue
            joint = g.joint_index(chosen)
            succ, prob = g.row(s, joint)
            row: dict[int, float] = {}
            for t, p in zip(succ.tolist(), prob.tolist()):
                nq = tuple(int(autos[j].delta[qs[j], letters[j][t]]) for j in range(m))
                k = intern((t, *nq))
                row[k] = row.get(k, 0.0) + p
            rows.append(sorted(row.items()))
            eps_flags.append(False)

    n = len(states)
    state_ptr = np.zeros(n + 1, dtype=np.int64)
    state_ptr[1:] = np.cumsum(state_counts)
    row_ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    row_ptr[1:] = np.cumsum([len(r) for r in rows])
    succ_arr = np.array([t for r in rows for t, _ in r], dtype=np.int64)
    prob_arr = np.array([p for r in rows for _, p in r], dtype=float)
    init = np.zeros(n)
    for k, p in initial_mass.items():
        init[k] += p
    state_arr = np.array(states, dtype=np.int64).reshape(n, 1 + m)
    accepting = np.zeros((n, m), dtype=bool)
    for j, a in enumerate(autos):
        acc = np.zeros(a.n_states, dtype=bool)
        acc[list(a.accepting)] = True
        accepting[:, j] = acc[state_arr[:, 1 + j]]
    return ProductGame(
        base=g,
        tasks=tasks,
        states=state_arr,
        agent_actions=agent_actions,
        local_index=np.array(local_rows, dtype=np.int64).reshape(len(rows), g.n_agents),
        state_ptr=state_ptr,
        row_ptr=row_ptr,
        succ=succ_arr,
        prob=prob_arr,
        initial=init,
        accepting=accepting,
        eps_rows=np.array(eps_flags, dtype=bool),
        index=index,
    )


def reward_and_discount(p: ProductGame, state: int, j: int, gamma_v: float) -> tuple[int, float]:
    """``(1, γ_V)`` when the ``j``-th automaton component is accepting, else ``(0, 1)``."""
    if not 0 < gamma_v < 1:
        raise ValueError("gamma_v must lie in (0, 1)")
    return (1, gamma_v) if p.accepting[state, j] else (0, 1.0)


def accepting_visit_bound(p: ProductGame, policy: np.ndarray, j: int) -> float:
    """Largest number of visits to ``F^j`` on a run that visits it only finitely
    often (``inf`` when unbounded), over runs of the chain induced by ``policy``."""
    from scipy.sparse.csgraph import connected_components

    from .game import induced_chain

    chain = induced_chain(p, policy)
    n = p.n_states
    acc = p.accepting[:, j]
    adj = [chain.indices[chain.indptr[s] : chain.indptr[s + 1]].tolist() for s in range(n)]
    # Z: non-accepting states that can stay outside F^j forever
    sub = chain.copy().tolil()
    for s in np.flatnonzero(acc):
        sub[s, :] = 0
        sub[:, s] = 0
    sub = sub.tocsr()
    sub.eliminate_zeros()
    n_c, comp = connected_components(sub, directed=True, connection="strong")
    on_cycle = np.zeros(n, dtype=bool)
    sizes = np.bincount(comp, minlength=n_c)
    for s in range(n):
        if acc[s]:
            continue
        if sizes[comp[s]] > 1 or s in adj[s]:
            on_cycle[s] = True
    z = on_cycle.copy()
    changed = True
    while changed:
        changed = False
        for s in range(n):
            if not z[s] and not acc[s] and any(z[t] and not acc[t] for t in adj[s]):
                z[s] = True
                changed = True

    n_c, comp = connected_components(chain, directed=True, connection="strong")
    members: list[list[int]] = [[] for _ in range(n_c)]
    for s in range(n):
        members[comp[s]].append(s)
    weight = np.zeros(n_c)
    for c, mem in enumerate(members):
        k = int(acc[mem].sum())
        cyclic = len(mem) > 1 or mem[0] in adj[mem[0]]
        weight[c] = np.inf if (cyclic and k) else k
    succ_c = [set() for _ in range(n_c)]
    for s in range(n):
        for t in adj[s]:
            if comp[t] != comp[s]:
                succ_c[comp[s]].add(comp[t])
    # longest F-count on a path starting in each component and ending in Z
    from graphlib import TopologicalSorter

    longest = np.full(n_c, -np.inf)
    for c in TopologicalSorter({c: succ_c[c] for c in range(n_c)}).static_order():
        best = 0.0 if z[members[c]].any() else -np.inf
        for d in succ_c[c]:
            best = max(best, longest[d])
        if best > -np.inf:
            longest[c] = weight[c] + best
    starts = {comp[s] for s in np.flatnonzero(p.initial > 0)}
    best = max((longest[c] for c in starts), default=-np.inf)
    return max(best, 0.0)


def gamma_condition_witness(
    p: ProductGame,
    gamma_v: float,
    policy: np.ndarray,
    better_policy: np.ndarray,
) -> bool:
    """Check ``γ_V^f > (1 − aᵀw)/(1 − bᵀw)`` for a worse ``policy`` and a strictly
    better ``better_policy``, where ``a``/``b`` are their per-spec satisfaction
    probabilities and ``f`` bounds accepting visits on rejecting runs of ``policy``."""
    from .verify import satisfaction_probability

    if not 0 < gamma_v < 1:
        raise ValueError("gamma_v must lie in (0, 1)")
    w = p.weights
    a = satisfaction_probability(p, better_policy).per_spec
    b = satisfaction_probability(p, policy).per_spec
    aw, bw = float(a @ w), float(b @ w)
    if not aw > bw + 1e-12:
        raise ValueError(f"better_policy is not strictly better (aᵀw = {aw:.6g}, bᵀw = {bw:.6g})")
    f = max(accepting_visit_bound(p, policy, j) for j in range(p.n_specs))
    ratio = (1 - aw) / (1 - bw)
    if np.isinf(f):
        return False
    return bool(gamma_v**f > ratio)
