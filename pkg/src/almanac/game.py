"""Finite Markov games with labelled states.

Transitions are stored row-sparse: every (state, joint action) pair owns one
row ``row_ptr[r]:row_ptr[r+1]`` of the ``succ``/``prob`` arrays, and the rows of
state ``s`` are ``state_ptr[s]:state_ptr[s+1]``. Product games use the same
layout, so the verifier and learners work on either.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import sparse

PROB_TOL = 1e-9


class GameValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__("invalid game: " + "; ".join(report.violations))
        self.report = report


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    limit: int = 10

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        if len(self.violations) < self.limit:
            self.violations.append(message)

    def __bool__(self) -> bool:
        return self.ok


class RowModel:
    """Shared accessors for the row-sparse transition layout."""

    n_states: int
    state_ptr: np.ndarray
    row_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    initial: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.row_ptr) - 1

    def n_actions(self, s: int) -> int:
        return int(self.state_ptr[s + 1] - self.state_ptr[s])

    def row(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.state_ptr[s] + a
        lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
        return self.succ[lo:hi], self.prob[lo:hi]

    def row_state(self) -> np.ndarray:
        """State owning each row."""
        return np.repeat(np.arange(self.n_states), np.diff(self.state_ptr))

    def cumulative(self) -> np.ndarray:
        """Per-row cumulative probabilities, for inverse-CDF sampling."""
        cum = np.empty_like(self.prob)
        for r in range(self.n_rows):
            lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
            cum[lo:hi] = np.cumsum(self.prob[lo:hi])
            cum[hi - 1] = 1.0
        return cum


@dataclass(eq=False)
class MarkovGame(RowModel):
    """A Markov game ``(N, S, A, T, ζ, L)``.

    ``actions[i]`` names agent ``i``'s actions; joint actions are indexed in
    row-major (mixed radix) order over agents. ``labels[s]`` is a bitmask over
    ``ap``.
    """

    actions: tuple[tuple[str, ...], ...]
    ap: tuple[str, ...]
    labels: np.ndarray
    row_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        self.actions = tuple(tuple(a) for a in self.actions)
        self.ap = tuple(self.ap)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.succ = np.asarray(self.succ, dtype=np.int64)
        self.prob = np.asarray(self.prob, dtype=float)
        self.initial = np.asarray(self.initial, dtype=float)
        self.n_states = len(self.labels)
        self.state_ptr = np.arange(self.n_states + 1, dtype=np.int64) * self.n_joint

    @property
    def n_agents(self) -> int:
        return len(self.actions)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.actions)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.action_counts)) if self.actions else 1

    def joint_index(self, joint: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(joint), self.action_counts))

    def joint_decode(self, index: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(index, self.action_counts))

    def transition(self, s: int, joint: int | Sequence[int]) -> dict[int, float]:
        a = joint if isinstance(joint, (int, np.integer)) else self.joint_index(joint)
        succ, prob = self.row(s, int(a))
        return {int(t): float(p) for t, p in zip(succ, prob)}

    def label_names(self, s: int) -> set[str]:
        return {p for i, p in enumerate(self.ap) if self.labels[s] >> i & 1}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MarkovGame):
            return NotImplemented
        return (
            self.actions == other.actions
            and self.ap == other.ap
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.succ, other.succ)
            and np.array_equal(self.prob, other.prob)
            and np.array_equal(self.initial, other.initial)
        )


def make_game(
    actions: Sequence[Sequence[str]],
    ap: Sequence[str],
    labels: Sequence[int] | Sequence[Iterable[str]],
    transitions: dict[tuple[int, tuple[int, ...]], dict[int, float]],
    initial: dict[int, float] | None = None,
) -> MarkovGame:
    """Assemble a game from a ``(state, joint action tuple) -> {succ: prob}`` map.

    Labels may be bitmasks or collections of proposition names. Missing rows are
    left empty so :func:`validate` can report them.
    """
    ap = tuple(ap)
    counts = tuple(len(a) for a in actions)
    n_joint = int(np.prod(counts)) if counts else 1
    masks = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            masks.append(int(lab))
        else:
            masks.append(sum(1 << ap.index(p) for p in lab))
    n = len(masks)
    rows: list[list[tuple[int, float]]] = [[] for _ in range(n * n_joint)]
    for (s, joint), dist in transitions.items():
        ja = int(np.ravel_multi_index(tuple(joint), counts)) if counts else 0
        rows[s * n_joint + ja] = sorted((int(t), float(p)) for t, p in dist.items())
    row_ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    row_ptr[1:] = np.cumsum([len(r) for r in rows])
    succ = np.array([t for r in rows for t, _ in r], dtype=np.int64)
    prob = np.array([p for r in rows for _, p in r], dtype=float)
    init = np.zeros(n)
    for s, p in (initial or {0: 1.0}).items():
        init[s] = p
    return MarkovGame(tuple(tuple(a) for a in actions), ap, np.array(masks), row_ptr, succ, prob, init)


def validate(g: MarkovGame, limit: int = 10) -> ValidationReport:
    """Check the game invariants; the report lists the first ``limit`` violations."""
    rep = ValidationReport(limit=limit)
    if not 1 <= g.n_agents:
        rep.add("game needs at least one agent")
    if any(len(a) == 0 for a in g.actions):
        rep.add("every agent needs at least one action")
    if len(set(g.ap)) != len(g.ap):
        rep.add("proposition names must be unique")
    if np.any(g.labels < 0) or np.any(g.labels >= (1 << len(g.ap))):
        bad = int(np.flatnonzero((g.labels < 0) | (g.labels >= (1 << len(g.ap))))[0])
        rep.add(f"labelling width mismatch at state {bad} (|AP| = {len(g.ap)})")
    expected_rows = g.n_states * g.n_joint
    if g.n_rows != expected_rows:
        rep.add(f"transition table has {g.n_rows} rows, expected {expected_rows}")
        return rep
    _check_rows(g, rep)
    _check_dist(g.initial, g.n_states, "initial distribution", rep)
    return rep


def _check_rows(model: RowModel, rep: ValidationReport) -> None:
    row_state = model.row_state()
    for r in range(model.n_rows):
        lo, hi = model.row_ptr[r], model.row_ptr[r + 1]
        where = f"state {row_state[r]}, action {r - model.state_ptr[row_state[r]]}"
        if hi == lo:
            rep.add(f"transition undefined at {where}")
            continue
        succ, prob = model.succ[lo:hi], model.prob[lo:hi]
        if np.any(succ < 0) or np.any(succ >= model.n_states):
            rep.add(f"successor out of range at {where}")
        if len(set(succ.tolist())) != len(succ):
            rep.add(f"duplicate successor at {where}")
        if np.any(prob < 0) or not np.all(np.isfinite(prob)):
            rep.add(f"negative or non-finite probability at {where}")
        total = float(prob.sum())
        if abs(total - 1.0) > PROB_TOL:
            rep.add(f"row sum ≠ 1 at {where} (sum {total:.12g})")


def _check_dist(dist: np.ndarray, n: int, what: str, rep: ValidationReport) -> None:
    if dist.shape != (n,):
        rep.add(f"{what} has length {dist.shape}, expected {n}")
        return
    if np.any(dist < 0):
        rep.add(f"{what} has negative mass")
    if abs(float(dist.sum()) - 1.0) > PROB_TOL:
        rep.add(f"{what} sums to {float(dist.sum()):.12g}, not 1")


def random_game(
    n_states: int,
    n_agents: int,
    n_actions_per_agent: int,
    n_props: int,
    density: float,
    seed: int | np.random.Generator | None,
) -> MarkovGame:
    """Random game: each row has 1..ceil(density * n_states) distinct successors
    with normalised uniform weights; each proposition holds at each state with
    probability 1/2; the initial distribution is a point mass on state 0."""
    if n_states < 2:
        raise ValueError("n_states must be at least 2")
    if not 1 <= n_agents <= 5:
        raise ValueError("n_agents must be in 1..5")
    if n_actions_per_agent < 2:
        raise ValueError("each agent needs at least 2 actions")
    if not 0 <= n_props <= 8:
        raise ValueError("n_props must be in 0..8")
    if not 0 < density <= 1:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n_joint = n_actions_per_agent**n_agents
    max_k = max(1, math.ceil(density * n_states - 1e-12))
    labels = (rng.random((n_states, n_props)) < 0.5).astype(np.int64) @ (1 << np.arange(n_props, dtype=np.int64))
    lengths = rng.integers(1, max_k + 1, size=n_states * n_joint)
    row_ptr = np.zeros(len(lengths) + 1, dtype=np.int64)
    row_ptr[1:] = np.cumsum(lengths)
    succ = np.empty(row_ptr[-1], dtype=np.int64)
    prob = np.empty(row_ptr[-1])
    for r, k in enumerate(lengths):
        lo, hi = row_ptr[r], row_ptr[r + 1]
        targets = np.sort(rng.choice(n_states, size=k, replace=False))
        w = rng.random(k) + 1e-12
        succ[lo:hi] = targets
        prob[lo:hi] = w / w.sum()
    initial = np.zeros(n_states)
    initial[0] = 1.0
    actions = tuple(tuple(f"a{j}" for j in range(n_actions_per_agent)) for _ in range(n_agents))
    ap = tuple(f"p{j}" for j in range(n_props))
    return MarkovGame(actions, ap, labels, row_ptr, succ, prob, initial)


def sample_step(g: RowModel, state: int, joint_action: int, rng: np.random.Generator) -> int:
    if not 0 <= state < g.n_states:
        raise IndexError(f"state {state} out of range")
    if not 0 <= joint_action < g.n_actions(state):
        raise IndexError(f"action {joint_action} out of range at state {state}")
    succ, prob = g.row(state, joint_action)
    if len(succ) == 1:
        return int(succ[0])
    k = int(np.searchsorted(np.cumsum(prob), rng.random() * prob.sum(), side="right"))
    return int(succ[min(k, len(succ) - 1)])


def uniform_policy(model: RowModel) -> np.ndarray:
    """Row-indexed policy assigning equal mass to every action of each state."""
    counts = np.diff(model.state_ptr)
    return np.repeat(1.0 / counts, counts)


def deterministic_policy(model: RowModel, choice: Sequence[int]) -> np.ndarray:
    pol = np.zeros(model.n_rows)
    pol[model.state_ptr[:-1] + np.asarray(choice, dtype=np.int64)] = 1.0
    return pol


def check_policy(model: RowModel, policy: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.ndim == 2:
        counts = np.diff(model.state_ptr)
        if not np.all(counts == policy.shape[1]) or policy.shape[0] != model.n_states:
            raise ValueError(f"policy shape {policy.shape} does not match the action table")
        policy = policy.reshape(-1)
    if policy.shape != (model.n_rows,):
        raise ValueError(f"policy has {policy.shape} entries, expected {model.n_rows}")
    if np.any(policy < -tol) or not np.all(np.isfinite(policy)):
        raise ValueError("policy has negative or non-finite entries")
    sums = np.add.reduceat(policy, model.state_ptr[:-1])
    if np.any(np.abs(sums - 1) > tol):
        s = int(np.flatnonzero(np.abs(sums - 1) > tol)[0])
        raise ValueError(f"policy row at state {s} sums to {sums[s]}")
    return policy


def induced_chain(model: RowModel, policy: np.ndarray) -> sparse.csr_matrix:
    """Markov chain ``P[s, s'] = Σ_a π(a|s) T(s, a, s')`` as a sparse matrix."""
    policy = check_policy(model, policy)
    row_state = model.row_state()
    lengths = np.diff(model.row_ptr)
    src = np.repeat(row_state, lengths)
    weight = np.repeat(policy, lengths) * model.prob
    chain = sparse.coo_matrix((weight, (src, model.succ)), shape=(model.n_states, model.n_states))
    chain = chain.tocsr()
    chain.sum_duplicates()
    chain.eliminate_zeros()
    return chain


# ---------------------------------------------------------------------------
# JSON


def game_to_json(g: MarkovGame) -> dict[str, Any]:
    width = len(g.ap)
    transitions = []
    for s in range(g.n_states):
        for ja in range(g.n_joint):
            succ, prob = g.row(s, ja)
            transitions.append(
                {
                    "state": s,
                    "action": [g.actions[i][a] for i, a in enumerate(g.joint_decode(ja))],
                    "dist": [[int(t), float(p)] for t, p in zip(succ, prob)],
                }
            )
    return {
        "n_agents": g.n_agents,
        "actions": [list(a) for a in g.actions],
        "ap": list(g.ap),
        "states": [
            {"label": "".join("1" if int(lab) >> i & 1 else "0" for i in range(width))}
            for lab in g.labels
        ],
        "transitions": transitions,
        "initial": [[int(s), float(p)] for s, p in enumerate(g.initial) if p > 0],
    }


def game_from_json(data: dict[str, Any] | str) -> MarkovGame:
    """Load a game; ``label`` bitstrings list proposition ``i`` at character ``i``.

    ``actions`` is either one list shared by all agents or one list per agent;
    actions in transitions may be given by name or index.
    """
    if isinstance(data, str):
        data = json.loads(data)
    rep = ValidationReport()
    try:
        n_agents = int(data["n_agents"])
        raw_actions = data["actions"]
        ap = tuple(data.get("ap", []))
        states = data["states"]
        raw_transitions = data["transitions"]
    except (KeyError, TypeError, ValueError) as exc:
        rep.add(f"missing or malformed field: {exc}")
        raise GameValidationError(rep) from None
    if raw_actions and all(isinstance(a, list) for a in raw_actions):
        actions = tuple(tuple(str(x) for x in a) for a in raw_actions)
    else:
        actions = tuple(tuple(str(x) for x in raw_actions) for _ in range(n_agents))
    if len(actions) != n_agents:
        rep.add(f"{len(actions)} action lists for {n_agents} agents")
        raise GameValidationError(rep)
    labels = []
    for k, st in enumerate(states):
        bits = str(st.get("label", "")) if isinstance(st, dict) else str(st)
        if len(bits) != len(ap) or set(bits) - {"0", "1"}:
            rep.add(f"labelling width mismatch at state {k}: {bits!r} for {len(ap)} propositions")
            labels.append(0)
            continue
        labels.append(sum(1 << i for i, c in enumerate(bits) if c == "1"))
    n = len(labels)
    transitions: dict[tuple[int, tuple[int, ...]], dict[int, float]] = {}
    for tr in raw_transitions:
        try:
            s = int(tr["state"])
            joint = tuple(
                a if isinstance(a, int) else actions[i].index(str(a))
                for i, a in enumerate(tr["action"])
            )
            if len(joint) != n_agents:
                raise ValueError(f"joint action {tr['action']} has wrong arity")
            if not 0 <= s < n:
                raise ValueError(f"state {s} out of range")
            dist: dict[int, float] = {}
            for t, p in tr["dist"]:
                if int(t) in dist:
                    raise ValueError(f"duplicate successor {t}")
                dist[int(t)] = float(p)
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            rep.add(f"malformed transition {tr!r}: {exc}")
            continue
        transitions[(s, joint)] = dist
    initial = {int(s): float(p) for s, p in data.get("initial", [[0, 1.0]])}
    if any(not 0 <= s < n for s in initial):
        rep.add("initial distribution refers to unknown state")
    if not rep.ok:
        raise GameValidationError(rep)
    g = make_game(actions, ap, labels, transitions, initial)
    full = validate(g)
    if not full.ok:
        raise GameValidationError(full)
    return g
