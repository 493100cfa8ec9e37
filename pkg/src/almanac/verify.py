"""Exact analysis of product games under fixed memoryless policies."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .game import RowModel, check_policy, deterministic_policy, induced_chain
from .product import ProductGame

DEFAULT_POLICY_CAP = 10**7
ORACLE_ENUMERATION_CAP = 10**5
DENSE_LIMIT = 3000
RESIDUAL_TOL = 1e-10


class VerificationError(RuntimeError):
    pass


class CapacityExceeded(VerificationError):
    pass


@dataclass(frozen=True)
class Bscc:
    members: frozenset[int]
    intersects: tuple[bool, ...] = ()


@dataclass
class VerificationReport:
    per_spec: np.ndarray
    weights: np.ndarray
    per_state: np.ndarray | None = field(default=None, repr=False)
    optimum: float | None = None

    @property
    def weighted(self) -> float:
        return float(self.per_spec @ self.weights)

    @property
    def gap(self) -> float | None:
        return None if self.optimum is None else self.optimum - self.weighted

    def to_json(self) -> str:
        out = {
            "per_spec": [float(x) for x in self.per_spec],
            "weights": [float(x) for x in self.weights],
            "weighted": self.weighted,
        }
        if self.optimum is not None:
            out["optimum"] = float(self.optimum)
            out["gap"] = float(self.gap)
        return json.dumps(out, indent=2)


def _solve(a, b) -> np.ndarray:
    """Solve ``a x = b``; dense LU for desk-scale systems, sparse LU beyond."""
    n = a.shape[0]
    if n == 0:
        return np.zeros(0)
    if n <= DENSE_LIMIT:
        dense = a.toarray() if sparse.issparse(a) else np.asarray(a)
        try:
            x = np.linalg.solve(dense, b)
        except np.linalg.LinAlgError as exc:
            raise VerificationError(f"singular system: {exc}") from None
        res = float(np.abs(dense @ x - b).max(initial=0.0))
    else:
        from scipy.sparse.linalg import spsolve

        x = spsolve(sparse.csc_matrix(a), b)
        res = float(np.abs(a @ x - b).max(initial=0.0))
    if not np.all(np.isfinite(x)) or res > 1e-6:
        raise VerificationError(f"linear solve failed (residual {res:.3g})")
    return x


def bscc_decomposition(chain: sparse.spmatrix, accepting: np.ndarray | None = None) -> list[Bscc]:
    """Bottom strongly connected components of a Markov chain.

    ``accepting`` is an optional ``(n, m)`` boolean table; each component
    records whether it meets each column.
    """
    chain = sparse.csr_matrix(chain)
    n = chain.shape[0]
    if n == 0:
        return []
    n_c, comp = connected_components(chain, directed=True, connection="strong")
    coo = chain.tocoo()
    leaves = np.zeros(n_c, dtype=bool)
    mask = (coo.data > 0) & (comp[coo.row] != comp[coo.col])
    leaves[comp[coo.row[mask]]] = True
    out = []
    for c in range(n_c):
        if leaves[c]:
            continue
        members = np.flatnonzero(comp == c)
        flags = tuple(bool(x) for x in accepting[members].any(axis=0)) if accepting is not None else ()
        out.append(Bscc(frozenset(members.tolist()), flags))
    out.sort(key=lambda b: min(b.members))
    return out


def _backward_reach(chain: sparse.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """States with a positive-probability path into ``targets``."""
    rev = chain.T.tocsr()
    seen = targets.copy()
    frontier = list(np.flatnonzero(seen))
    while frontier:
        nxt = []
        for t in frontier:
            for s in rev.indices[rev.indptr[t] : rev.indptr[t + 1]]:
                if not seen[s]:
                    seen[s] = True
                    nxt.append(s)
        frontier = nxt
    return seen


def reach_probability(chain: sparse.csr_matrix, target: np.ndarray) -> np.ndarray:
    """Probability of eventually entering ``target`` from each state."""
    n = chain.shape[0]
    can = _backward_reach(chain, target)
    x = target.astype(float)
    unknown = can & ~target
    idx = np.flatnonzero(unknown)
    if len(idx):
        sub = chain[idx][:, idx]
        rhs = np.asarray(chain[idx][:, np.flatnonzero(target)].sum(axis=1)).ravel()
        x[idx] = _solve(sparse.identity(len(idx), format="csr") - sub, rhs)
    return np.clip(x, 0.0, 1.0) if n else x


def _dense_rows(model: RowModel) -> np.ndarray:
    """Transition rows as a dense ``(n_rows, n_states)`` array."""
    out = np.zeros((model.n_rows, model.n_states))
    edge_rows = np.repeat(np.arange(model.n_rows), np.diff(model.row_ptr))
    np.add.at(out, (edge_rows, model.succ), model.prob)
    return out


def _dense_satisfaction(chain: np.ndarray, accepting: np.ndarray) -> np.ndarray:
    """Per-state, per-spec probability of reaching an accepting bottom component."""
    n = chain.shape[0]
    graph = sparse.csr_matrix(chain > 0)
    n_c, comp = connected_components(graph, directed=True, connection="strong")
    out_edges = (chain > 0) & (comp[:, None] != comp[None, :])
    leaves = np.zeros(n_c, dtype=bool)
    leaves[comp[out_edges.any(axis=1)]] = True
    bottom = ~leaves[comp]
    m = accepting.shape[1]
    result = np.zeros((n, m))
    comp_acc = np.zeros((n_c, m), dtype=bool)
    np.logical_or.at(comp_acc, comp, accepting)
    for j in range(m):
        good = bottom & comp_acc[comp, j]
        if not good.any():
            continue
        can = _backward_reach(graph, good)
        unknown = np.flatnonzero(can & ~good)
        x = good.astype(float)
        if len(unknown):
            a = np.eye(len(unknown)) - chain[np.ix_(unknown, unknown)]
            rhs = chain[np.ix_(unknown, np.flatnonzero(good))].sum(axis=1)
            x[unknown] = _solve(a, rhs)
        result[:, j] = np.clip(x, 0.0, 1.0)
    return result


def satisfaction_probability(product: ProductGame, policy: np.ndarray) -> VerificationReport:
    """Per-spec probability of visiting ``F^j`` infinitely often from ``ζ⊗``:
    the probability of reaching a bottom component that meets ``F^j``."""
    chain = induced_chain(product, policy)
    m = product.n_specs
    if product.n_states <= DENSE_LIMIT:
        per_state = _dense_satisfaction(chain.toarray(), product.accepting)
    else:
        bsccs = bscc_decomposition(chain, product.accepting)
        per_state = np.zeros((product.n_states, m))
        for j in range(m):
            good = np.zeros(product.n_states, dtype=bool)
            for b in bsccs:
                if b.intersects[j]:
                    good[list(b.members)] = True
            per_state[:, j] = reach_probability(chain, good)
    per_spec = product.initial @ per_state
    return VerificationReport(np.clip(per_spec, 0, 1), product.weights, per_state)


def exact_patient_value(product: ProductGame, policy: np.ndarray, gamma_v: float, j: int) -> np.ndarray:
    """Fixed point of ``V(s) = Σ P(s,s')[R(s') + Γ(s')V(s')]`` with ``V = 0`` on
    states that cannot reach a reward of spec ``j``."""
    chain = induced_chain(product, policy)
    rew = product.accepting[:, j].astype(float)
    disc = np.where(product.accepting[:, j], gamma_v, 1.0)
    live = _backward_reach(chain, _predecessors(chain, rew > 0))
    v = np.zeros(product.n_states)
    idx = np.flatnonzero(live)
    if len(idx):
        sub = chain[idx][:, idx] @ sparse.diags(disc[idx])
        rhs = chain[idx] @ rew
        v[idx] = _solve(sparse.identity(len(idx), format="csr") - sub, rhs)
    return v


def _predecessors(chain: sparse.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """States with a one-step transition into ``targets`` (rewards are collected on entry)."""
    hit = np.asarray(chain[:, np.flatnonzero(targets)].sum(axis=1)).ravel() > 0
    return hit


def exact_hasty_value(product: ProductGame, policy: np.ndarray, gamma_u: float, j: int) -> np.ndarray:
    """Solve ``(I − γ_U P) U = P R`` for spec ``j``."""
    if not 0 < gamma_u < 1:
        raise ValueError("gamma_u must lie in (0, 1)")
    chain = induced_chain(product, policy)
    rew = product.accepting[:, j].astype(float)
    return _solve(sparse.identity(product.n_states, format="csr") - gamma_u * chain, chain @ rew)


def policy_space_size(model: RowModel) -> int:
    return int(np.prod(np.diff(model.state_ptr).astype(object)))


def brute_force_optimal(
    product: ProductGame,
    weights: Sequence[float] | None = None,
    cap: int = DEFAULT_POLICY_CAP,
) -> tuple[float, np.ndarray]:
    """Best deterministic memoryless product policy by enumeration.

    Returns the optimal weighted satisfaction probability and the per-state
    action choice; ties keep the lexicographically smallest encoding.
    """
    w = product.weights if weights is None else np.asarray(weights, dtype=float)
    counts = np.diff(product.state_ptr)
    size = policy_space_size(product)
    if size > cap:
        raise CapacityExceeded(f"{size} deterministic policies exceed the cap of {cap}")
    free = np.flatnonzero(counts > 1)
    rows = _dense_rows(product)
    base = product.state_ptr[:-1].copy()
    choice = np.zeros(product.n_states, dtype=np.int64)
    best_value, best_choice = -np.inf, choice.copy()
    for combo in itertools.product(*(range(counts[s]) for s in free)):
        choice[free] = combo
        per_state = _dense_satisfaction(rows[base + choice], product.accepting)
        value = float(product.initial @ per_state @ w)
        if value > best_value + 1e-12:
            best_value, best_choice = value, choice.copy()
    return best_value, best_choice


def maximal_end_components(model: RowModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Maximal end components as ``(states, allowed rows)`` pairs."""
    n = model.n_states
    row_state = model.row_state()
    allowed = np.ones(model.n_rows, dtype=bool)
    alive = np.ones(n, dtype=bool)
    lengths = np.diff(model.row_ptr)
    src_of_edge = np.repeat(np.arange(model.n_rows), lengths)
    while True:
        keep = allowed[src_of_edge]
        graph = sparse.csr_matrix(
            (np.ones(int(keep.sum())), (row_state[src_of_edge[keep]], model.succ[keep])), shape=(n, n)
        )
        _, comp = connected_components(graph, directed=True, connection="strong")
        leaving = np.zeros(model.n_rows, dtype=bool)
        bad_edge = comp[row_state[src_of_edge]] != comp[model.succ]
        bad_edge |= ~alive[model.succ]
        np.logical_or.at(leaving, src_of_edge, bad_edge)
        new_allowed = allowed & ~leaving & alive[row_state]
        has_row = np.zeros(n, dtype=bool)
        has_row[row_state[new_allowed]] = True
        new_alive = alive & has_row
        if np.array_equal(new_allowed, allowed) and np.array_equal(new_alive, alive):
            break
        allowed, alive = new_allowed, new_alive
    out = []
    for c in np.unique(comp[alive]):
        members = np.flatnonzero(alive & (comp == c))
        rows = np.flatnonzero(allowed & np.isin(row_state, members))
        out.append((members, rows))
    return out


def end_component_optimum(product: ProductGame, weights: Sequence[float] | None = None) -> float:
    """Supremum over all strategies of the weighted satisfaction probability.

    Inside a maximal end component a randomised strategy can visit every state
    infinitely often, so it collects the weight of every spec whose accepting set
    it meets; the optimum is the best expected collected weight, a maximal
    reachability problem solved as a linear program. For a single spec this
    equals the best deterministic memoryless value.
    """
    w = product.weights if weights is None else np.asarray(weights, dtype=float)
    n = product.n_states
    stop = np.zeros(n)
    for members, _ in maximal_end_components(product):
        gain = float(w @ product.accepting[members].any(axis=0))
        stop[members] = gain
    if n == 0:
        return 0.0
    row_state = product.row_state()
    lengths = np.diff(product.row_ptr)
    # x_s >= Σ_s' p x_s'  ->  -x_s + Σ p x_s' <= 0
    edge_rows = np.repeat(np.arange(product.n_rows), lengths)
    a = sparse.coo_matrix((product.prob, (edge_rows, product.succ)), shape=(product.n_rows, n)).tocsr()
    a = a - sparse.csr_matrix((np.ones(product.n_rows), (np.arange(product.n_rows), row_state)), shape=(product.n_rows, n))
    res = linprog(
        c=np.ones(n),
        A_ub=a,
        b_ub=np.zeros(product.n_rows),
        bounds=[(lo, float(w.sum())) for lo in stop],
        method="highs",
    )
    if res.status != 0:
        raise VerificationError(f"optimum LP failed: {res.message}")
    x = np.clip(res.x, stop, None)
    return float(product.initial @ x)


def evaluate_error(
    product: ProductGame,
    policy: np.ndarray,
    weights: Sequence[float] | None = None,
    optimum: float | None = None,
    cap: int = ORACLE_ENUMERATION_CAP,
) -> float:
    """Optimal minus learned weighted satisfaction probability.

    The optimum comes from enumeration when the deterministic policy space fits
    under ``cap`` and from the end-component linear program otherwise.
    """
    w = product.weights if weights is None else np.asarray(weights, dtype=float)
    learned = float(satisfaction_probability(product, policy).per_spec @ w)
    if optimum is None:
        optimum = oracle_optimum(product, w, cap)
    gap = optimum - learned
    if gap < -1e-9:
        raise VerificationError(f"learned value {learned} exceeds oracle optimum {optimum}")
    return max(gap, 0.0)


def oracle_optimum(product: ProductGame, weights: Sequence[float] | None = None, cap: int = ORACLE_ENUMERATION_CAP) -> float:
    """Enumerate deterministic policies when there are at most ``cap`` of them and
    one spec; otherwise solve the end-component linear program."""
    w = product.weights if weights is None else np.asarray(weights, dtype=float)
    if policy_space_size(product) <= cap and product.n_specs <= 1:
        return brute_force_optimal(product, w, cap)[0]
    return end_component_optimum(product, w)


def monte_carlo_satisfaction(
    product: ProductGame,
    policy: np.ndarray,
    runs: int,
    rng: np.random.Generator,
    horizon: int = 2000,
    window: int = 1000,
) -> np.ndarray:
    """Sampling estimate of per-spec satisfaction: a run counts as accepting for
    spec ``j`` if it visits ``F^j`` in the last ``window`` of ``horizon`` steps."""
    policy = check_policy(product, policy)
    chain = induced_chain(product, policy).toarray()
    cum = np.cumsum(chain, axis=1)
    cum[:, -1] = 1.0
    init_cum = np.cumsum(product.initial)
    init_cum[-1] = 1.0
    states = np.searchsorted(init_cum, rng.random(runs), side="right")
    seen = np.zeros((runs, product.n_specs), dtype=bool)
    for t in range(horizon):
        u = rng.random(runs)
        states = (cum[states] < u[:, None]).sum(axis=1)
        if t >= horizon - window:
            seen |= product.accepting[states]
    return seen.mean(axis=0)


__all__ = [
    "Bscc",
    "VerificationReport",
    "bscc_decomposition",
    "satisfaction_probability",
    "exact_patient_value",
    "exact_hasty_value",
    "brute_force_optimal",
    "end_component_optimum",
    "evaluate_error",
    "maximal_end_components",
    "monte_carlo_satisfaction",
    "oracle_optimum",
    "ORACLE_ENUMERATION_CAP",
    "reach_probability",
]
