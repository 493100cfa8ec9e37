"""Multi-agent natural actor-critic with patient and hasty critics, plus the
state-discounted Q-learning baseline.

Policies are softmax over logits. In ``global`` mode a single logit table over
(product state, joint action) is shared by all agents; in ``local`` mode agent
``i`` owns logits over (product state, own action). Critics are linear in a
state feature map, tabular (one-hot) by default.
"""

from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .game import RowModel, check_policy
from .product import ProductGame, SpecTask, build_product
from .game import MarkovGame


class LearnerDivergence(FloatingPointError):
    def __init__(self, message: str, diagnostics: list[dict]):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# Configuration and schedules


@dataclass
class Schedules:
    """Polynomial step sizes ``(1 + n)^-exponent``."""

    alpha: float = 0.6
    beta_v: float = 0.7
    beta_u: float = 0.8
    eta: float = 0.9
    iota: float = 0.85

    def __post_init__(self):
        exps = (self.alpha, self.beta_v, self.beta_u, self.eta)
        if not all(0.5 < e <= 1 for e in exps + (self.iota,)):
            raise ValueError("schedule exponents must lie in (0.5, 1]")
        if not all(a < b for a, b in zip(exps, exps[1:])):
            raise ValueError("exponents must increase: alpha < beta_v < beta_u < eta")

    @staticmethod
    def rate(exponent: float, n: int) -> float:
        return (1.0 + n) ** -exponent


@dataclass
class AlmanacConfig:
    gamma_v: float = 0.9
    gamma_u: float = 0.9
    reset_prob: float = 0.05
    episodes: int = 5000
    mode: str = "global"
    x_bound: float = 100.0
    lambda_max: float = 100.0
    theta_bound: float = 10.0
    tol_x: float = 1e-3
    window: int = 10
    max_inner: int = 25
    tol_l: float = 1e-3
    max_outer: int | None = None
    max_steps: int = 10_000
    natgrad_loss: str = "squared"
    gamma_weighting: str = "reweight"
    clock: str = "visits"
    seed: int = 0
    schedules: Schedules = field(default_factory=Schedules)

    def __post_init__(self):
        if isinstance(self.schedules, dict):
            self.schedules = Schedules(**self.schedules)
        if not 0 < self.gamma_v < 1 or not 0 < self.gamma_u < 1:
            raise ValueError("discounts must lie in (0, 1)")
        if not 0 < self.reset_prob <= 1:
            raise ValueError("reset_prob must lie in (0, 1]")
        if self.mode not in ("global", "local"):
            raise ValueError("mode must be 'global' or 'local'")
        if self.natgrad_loss not in ("squared", "absolute"):
            raise ValueError("natgrad_loss must be 'squared' or 'absolute'")
        if self.gamma_weighting not in ("reweight", "truncate"):
            raise ValueError("gamma_weighting must be 'reweight' or 'truncate'")
        if self.clock not in ("visits", "global"):
            raise ValueError("clock must be 'visits' or 'global'")
        for name in ("x_bound", "lambda_max", "theta_bound"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.episodes < 0 or self.window < 1 or self.max_inner < 1:
            raise ValueError("episodes, window and max_inner must be non-negative/positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str | dict) -> "AlmanacConfig":
        data = json.loads(text) if isinstance(text, str) else dict(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# Critics


class TabularCritic:
    """One value per (spec, product state)."""

    def __init__(self, n_specs: int, n_states: int):
        self.n_specs = n_specs
        self.table = [[0.0] * n_states for _ in range(n_specs)]

    def value(self, j: int, s: int) -> float:
        return self.table[j][s]

    def step(self, j: int, s: int, amount: float) -> None:
        self.table[j][s] += amount

    def values(self) -> np.ndarray:
        """``(n_states, n_specs)`` array of current estimates."""
        return np.array(self.table).T.copy()


class LinearCritic:
    """``V^j(s) = φ(s)ᵀ v^j`` for an arbitrary feature matrix."""

    def __init__(self, n_specs: int, features: np.ndarray):
        self.features = np.asarray(features, dtype=float)
        self.n_specs = n_specs
        self.weights = np.zeros((n_specs, self.features.shape[1]))

    def value(self, j: int, s: int) -> float:
        return float(self.features[s] @ self.weights[j])

    def step(self, j: int, s: int, amount: float) -> None:
        self.weights[j] += amount * self.features[s]

    def values(self) -> np.ndarray:
        return self.features @ self.weights.T


def patient_td_update(
    critic,
    j: int,
    buffer: dict[int, None],
    target_state: int,
    reward: float,
    alpha: Callable[[int], float],
    gamma_v: float,
) -> None:
    """Move every buffered state toward ``reward + γ_V V(target)``, then clear the buffer."""
    target_value = critic.value(j, target_state)
    for s in buffer:
        delta = reward + gamma_v * target_value - critic.value(j, s)
        critic.step(j, s, alpha(s) * delta)
    buffer.clear()


def hasty_td_update(critic, j: int, s: int, reward: float, s_next: int, alpha: float, gamma_u: float) -> float:
    """TD(0) step on the constant-discount critic; returns the TD error."""
    delta = reward + gamma_u * critic.value(j, s_next) - critic.value(j, s)
    critic.step(j, s, alpha * delta)
    return delta


# ---------------------------------------------------------------------------
# Actor


class Actor:
    """Softmax policy over one or more logit blocks.

    Block ``k`` stores, for product state ``s``, logits
    ``theta[k][offsets[k][s]:offsets[k][s+1]]``. Global mode has one block over
    joint actions; local mode has one block per agent over its own actions.
    """

    def __init__(self, model: RowModel, mode: str = "global", n_agents: int = 1, agent_counts=None):
        self.mode = mode
        self.n_states = model.n_states
        self.state_ptr = model.state_ptr
        if mode == "global":
            self.offsets = [np.asarray(model.state_ptr, dtype=np.int64)]
            self.counts_per_state = None
        else:
            counts = np.array([agent_counts(s) for s in range(model.n_states)], dtype=np.int64).reshape(
                model.n_states, n_agents
            )
            self.counts_per_state = counts
            self.offsets = []
            for i in range(n_agents):
                off = np.zeros(model.n_states + 1, dtype=np.int64)
                off[1:] = np.cumsum(counts[:, i])
                self.offsets.append(off)
        self.theta = [np.zeros(int(off[-1])) for off in self.offsets]
        self.refresh()

    @property
    def n_blocks(self) -> int:
        return len(self.theta)

    def params(self, agent: int) -> np.ndarray:
        """Agent ``agent``'s parameter vector (shared by every agent in global mode)."""
        return self.theta[0] if self.mode == "global" else self.theta[agent]

    def refresh(self) -> None:
        """Recompute cached probabilities after the logits change."""
        self.probs: list[np.ndarray] = []
        self.cum: list[list[list[float]]] = []
        for k, th in enumerate(self.theta):
            off = self.offsets[k]
            pr = np.empty_like(th)
            cum_rows = []
            for s in range(self.n_states):
                lo, hi = off[s], off[s + 1]
                z = th[lo:hi] - th[lo:hi].max()
                e = np.exp(z)
                pr[lo:hi] = e / e.sum()
                c = np.cumsum(pr[lo:hi]).tolist()
                c[-1] = 1.0
                cum_rows.append(c)
            self.probs.append(pr)
            self.cum.append(cum_rows)

    def block_probs(self, k: int, s: int) -> np.ndarray:
        off = self.offsets[k]
        return self.probs[k][off[s] : off[s + 1]]

    def joint_row(self, s: int, choices: Sequence[int]) -> int:
        """Row index of a joint action given each block's choice at ``s``."""
        if self.mode == "global":
            return int(self.state_ptr[s] + choices[0])
        idx = 0
        for i, c in enumerate(choices):
            idx = idx * int(self.counts_per_state[s, i]) + int(c)
        return int(self.state_ptr[s] + idx)

    def joint_policy(self) -> np.ndarray:
        """Row-indexed joint policy (product of local factors in local mode)."""
        if self.mode == "global":
            return self.probs[0].copy()
        out = np.empty(int(self.state_ptr[-1]))
        for s in range(self.n_states):
            p = np.ones(1)
            for k in range(self.n_blocks):
                p = np.outer(p, self.block_probs(k, s)).ravel()
            out[self.state_ptr[s] : self.state_ptr[s + 1]] = p
        return out

    def greedy_policy(self) -> np.ndarray:
        """Deterministic row-indexed policy taking each block's highest logit."""
        out = np.zeros(int(self.state_ptr[-1]))
        for s in range(self.n_states):
            choices = []
            for k in range(self.n_blocks):
                off = self.offsets[k]
                choices.append(int(np.argmax(self.theta[k][off[s] : off[s + 1]])))
            out[self.joint_row(s, choices)] = 1.0
        return out


def score(actor: Actor, s: int, a: int, block: int = 0) -> np.ndarray:
    """``∇_θ log π(a | s)`` for one logit block, as a dense vector."""
    th = actor.theta[block]
    off = actor.offsets[block]
    z = th[off[s] : off[s + 1]]
    p = np.exp(z - z.max())
    p /= p.sum()
    out = np.zeros_like(th)
    out[off[s] : off[s + 1]] = -p
    out[off[s] + a] += 1.0
    return out


def log_prob(actor: Actor, s: int, a: int, block: int = 0, theta: np.ndarray | None = None) -> float:
    th = actor.theta[block] if theta is None else theta
    off = actor.offsets[block]
    z = th[off[s] : off[s + 1]]
    m = z.max()
    return float(z[a] - m - math.log(np.exp(z - m).sum()))


# ---------------------------------------------------------------------------
# Natural gradient and multiplier


@dataclass
class NatGradState:
    x: list[np.ndarray]
    lam: list[float]
    level: list[float | None]
    sqnorm: list[float]
    x_bound: float = 100.0
    lambda_max: float = 100.0

    @classmethod
    def zeros(cls, actor: Actor, x_bound: float = 100.0, lambda_max: float = 100.0) -> "NatGradState":
        k = actor.n_blocks
        return cls([np.zeros_like(t) for t in actor.theta], [0.0] * k, [None] * k, [0.0] * k, x_bound, lambda_max)

    def norm(self, k: int) -> float:
        return float(np.linalg.norm(self.x[k]))


def project_ball(x: np.ndarray, radius: float) -> np.ndarray:
    n = float(np.linalg.norm(x))
    return x * (radius / n) if n > radius else x


def natgrad_update(
    ng: NatGradState,
    k: int,
    psi: np.ndarray,
    offset: int,
    deltas_v: Sequence[float],
    deltas_u: Sequence[float],
    weights_v: Sequence[float],
    weight_u: float,
    w: Sequence[float],
    beta_v: float,
    beta_u: float,
    loss: str = "squared",
) -> float:
    """One step on ``x^k`` along ``psi`` (the non-zero slice of the score, starting
    at ``offset``). ``weights_v[j]`` is the running discount product ``Γ^j_{1:t}``
    and ``weight_u`` is ``γ_U^t``. Returns the prediction ``ψᵀx`` before the step."""
    x = ng.x[k]
    seg = x[offset : offset + len(psi)]
    pred = float(psi @ seg)
    lam = ng.lam[k]
    coef = 0.0
    for j in range(len(w)):
        rv = deltas_v[j] - pred
        ru = deltas_u[j] - pred
        if loss == "absolute":
            rv = (rv > 0) - (rv < 0)
            ru = (ru > 0) - (ru < 0)
        coef += w[j] * ((beta_v + beta_u * lam) * weights_v[j] * rv + beta_u * weight_u * ru)
    if coef == 0.0:
        return pred
    old = float(seg @ seg)
    seg += coef * psi
    ng.sqnorm[k] += float(seg @ seg) - old
    if ng.sqnorm[k] > ng.x_bound**2:
        x *= ng.x_bound / math.sqrt(ng.sqnorm[k])
        ng.sqnorm[k] = float(x @ x)
    return pred


def lagrange_update(ng: NatGradState, k: int, loss_sample: float, eta: float) -> None:
    """``λ ← clip(λ + η (loss − l), 0, Λ_max)``; inactive until ``l`` is recorded."""
    level = ng.level[k]
    if level is None:
        return
    ng.lam[k] = min(max(ng.lam[k] + eta * (loss_sample - level), 0.0), ng.lambda_max)


def policy_update(actor: Actor, ng: NatGradState, iota: float, theta_bound: float = 10.0) -> None:
    for k in range(actor.n_blocks):
        np.clip(actor.theta[k] + iota * ng.x[k], -theta_bound, theta_bound, out=actor.theta[k])
    actor.refresh()


# ---------------------------------------------------------------------------
# Episode loop


class _Uniforms:
    """Block-buffered uniform draws from a numpy generator."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self.buf: list[float] = []
        self.i = 0

    def __call__(self) -> float:
        if self.i >= len(self.buf):
            self.buf = self.rng.random(self.block).tolist()
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u


@dataclass
class _Tables:
    state_ptr: list[int]
    row_succ: list[list[int]]
    row_cum: list[list[float]]
    reward: list[tuple[float, ...]]
    discount: list[tuple[float, ...]]
    init_states: list[int]
    init_cum: list[float]

    @classmethod
    def build(cls, p: ProductGame, gamma_v: float) -> "_Tables":
        succ, cum = [], []
        for r in range(p.n_rows):
            lo, hi = p.row_ptr[r], p.row_ptr[r + 1]
            succ.append(p.succ[lo:hi].tolist())
            c = np.cumsum(p.prob[lo:hi]).tolist()
            c[-1] = 1.0
            cum.append(c)
        rew = [tuple(float(x) for x in row) for row in p.accepting]
        disc = [tuple(gamma_v if x else 1.0 for x in row) for row in p.accepting]
        init = np.flatnonzero(p.initial > 0)
        ic = np.cumsum(p.initial[init]).tolist()
        ic[-1] = 1.0
        return cls(p.state_ptr.tolist(), succ, cum, rew, disc, init.tolist(), ic)


class _Learner:
    """Mutable state of one training run (critics, actor, counters, rngs)."""

    def __init__(self, p: ProductGame, cfg: AlmanacConfig, features: np.ndarray | None = None):
        self.p = p
        self.cfg = cfg
        self.m = p.n_specs
        self.w = [float(x) for x in p.weights]
        self.tab = _Tables.build(p, cfg.gamma_v)
        seq = np.random.SeedSequence(cfg.seed)
        env_seed, *agent_seeds = seq.spawn(1 + max(1, p.n_agents))
        self.env_u = _Uniforms(np.random.default_rng(env_seed))
        if cfg.mode == "global":
            # agents share one generator, so their sampled joint action coincides
            self.act_u = [_Uniforms(np.random.default_rng(agent_seeds[0]))]
        else:
            self.act_u = [_Uniforms(np.random.default_rng(s)) for s in agent_seeds[: p.n_agents]]
        self.actor = Actor(p, cfg.mode, p.n_agents, p.agent_counts)
        self.ng = NatGradState.zeros(self.actor, cfg.x_bound, cfg.lambda_max)
        if features is None:
            self.critic_v = TabularCritic(self.m, p.n_states)
            self.critic_u = TabularCritic(self.m, p.n_states)
        else:
            self.critic_v = LinearCritic(self.m, features)
            self.critic_u = LinearCritic(self.m, features)
        self.visits_v = [0] * p.n_states
        self.visits_u = [0] * p.n_states
        self.visits_x = [0] * p.n_states
        self.t = 0
        self.k = 0
        self.sched = cfg.schedules

    # step sizes ---------------------------------------------------------
    def _count(self, table: list[int], s: int) -> int:
        if self.cfg.clock == "global":
            return self.t
        n = table[s]
        table[s] = n + 1
        return n

    def _alpha_v(self, s: int) -> float:
        return Schedules.rate(self.sched.alpha, self._count(self.visits_v, s))

    # sampling -----------------------------------------------------------
    def _sample_initial(self) -> int:
        return self.tab.init_states[bisect_right(self.tab.init_cum, self.env_u())] if len(self.tab.init_states) > 1 else self.tab.init_states[0]

    def _choose(self, s: int, policy_cum: list[list[float]] | None) -> tuple[int, list[int]]:
        if policy_cum is not None:
            row_cum = policy_cum[s]
            a = min(bisect_right(row_cum, self.act_u[0]()), len(row_cum) - 1)
            return self.tab.state_ptr[s] + a, [a]
        actor = self.actor
        choices = []
        for k in range(actor.n_blocks):
            c = actor.cum[k][s]
            u = self.act_u[k]()
            choices.append(min(bisect_right(c, u), len(c) - 1))
        return actor.joint_row(s, choices), choices

    def _successor(self, row: int) -> int:
        succ = self.tab.row_succ[row]
        if len(succ) == 1:
            return succ[0]
        c = self.tab.row_cum[row]
        return succ[min(bisect_right(c, self.env_u()), len(succ) - 1)]

    # one episode -----------------------------------------------------------
    def episode(self, learn_actor: bool = True, start: int | None = None, policy_cum=None, drain: bool = False) -> dict:
        """Run one episode. With ``drain`` the episode, once its reset is drawn,
        continues until every patient buffer has been flushed, so no buffered
        state is discarded."""
        cfg, m, tab = self.cfg, self.m, self.tab
        cv, cu = self.critic_v, self.critic_u
        buffers: list[dict[int, None]] = [{} for _ in range(m)]
        gam_v = [1.0] * m
        gam_u = 1.0
        returns = [0.0] * m
        loss_v_sum = loss_u_sum = 0.0
        steps = 0
        s = self._sample_initial() if start is None else start
        truncate = cfg.gamma_weighting == "truncate"
        ending = False
        while True:
            for j in range(m):
                buffers[j][s] = None
            row, choices = self._choose(s, policy_cum)
            s2 = self._successor(row)
            rew = tab.reward[s2]
            disc = tab.discount[s2]
            n_u = self._count(self.visits_u, s)
            alpha_u = Schedules.rate(self.sched.alpha, n_u)
            deltas_v = [0.0] * m
            deltas_u = [0.0] * m
            for j in range(m):
                r = rew[j]
                returns[j] += r
                if r > 0 or cv.value(j, s2) == 0:
                    patient_td_update(cv, j, buffers[j], s2, r, self._alpha_v, cfg.gamma_v)
                deltas_u[j] = hasty_td_update(cu, j, s, r, s2, alpha_u, cfg.gamma_u)
                deltas_v[j] = r + disc[j] * cv.value(j, s2) - cv.value(j, s)
            if learn_actor:
                n_x = self._count(self.visits_x, s)
                beta_v = Schedules.rate(self.sched.beta_v, n_x)
                beta_u = Schedules.rate(self.sched.beta_u, n_x)
                eta = Schedules.rate(self.sched.eta, self.t)
                for k in range(self.actor.n_blocks):
                    off = int(self.actor.offsets[k][s])
                    pr = self.actor.block_probs(k, s)
                    psi = -pr.copy()
                    psi[choices[k]] += 1.0
                    pred = natgrad_update(
                        self.ng, k, psi, off, deltas_v, deltas_u, gam_v, gam_u, self.w,
                        beta_v, beta_u, cfg.natgrad_loss,
                    )
                    if cfg.natgrad_loss == "squared":
                        lv = sum(self.w[j] * gam_v[j] * (pred - deltas_v[j]) ** 2 for j in range(m))
                        lu = sum(self.w[j] * gam_u * (pred - deltas_u[j]) ** 2 for j in range(m))
                    else:
                        lv = sum(self.w[j] * gam_v[j] * abs(pred - deltas_v[j]) for j in range(m))
                        lu = sum(self.w[j] * gam_u * abs(pred - deltas_u[j]) for j in range(m))
                    lagrange_update(self.ng, k, lv, eta)
                    loss_v_sum += lv
                    loss_u_sum += lu
            for j in range(m):
                if truncate:
                    if disc[j] < 1.0 and self.env_u() >= disc[j]:
                        gam_v[j] = 0.0
                else:
                    gam_v[j] *= disc[j]
            gam_u *= cfg.gamma_u
            s = s2
            self.t += 1
            steps += 1
            if steps >= cfg.max_steps:
                break
            if not ending and self.env_u() < cfg.reset_prob:
                ending = True
            if ending and (not drain or not any(buffers)):
                break
        return {
            "returns": returns,
            "loss_v": loss_v_sum / steps,
            "loss_u": loss_u_sum / steps,
            "steps": steps,
        }

    def critic_episode(self, start: int | None, policy_cum: list[list[float]], drain: bool = False) -> int:
        """Critic-only episode with tabular critics under a fixed policy.

        Performs the same updates and consumes the same random draws as
        ``episode(learn_actor=False, ...)``, with the per-step calls inlined.
        Returns the number of steps taken.
        """
        cfg, m, tab = self.cfg, self.m, self.tab
        v_tab, u_tab = self.critic_v.table, self.critic_u.table
        visits_v, visits_u = self.visits_v, self.visits_u
        state_ptr, row_succ, row_cum, reward, discount = tab.state_ptr, tab.row_succ, tab.row_cum, tab.reward, tab.discount
        env, act = self.env_u, self.act_u[0]
        a_exp, gam_v, gam_u = -self.sched.alpha, cfg.gamma_v, cfg.gamma_u
        global_clock = cfg.clock == "global"
        truncate = cfg.gamma_weighting == "truncate"
        reset_prob, max_steps = cfg.reset_prob, cfg.max_steps
        buffers: list[dict[int, None]] = [{} for _ in range(m)]
        s = self._sample_initial() if start is None else start
        steps = 0
        ending = False
        while True:
            for buf in buffers:
                buf[s] = None
            c = policy_cum[s]
            row = state_ptr[s] + min(bisect_right(c, act()), len(c) - 1)
            succ = row_succ[row]
            s2 = succ[0] if len(succ) == 1 else succ[min(bisect_right(row_cum[row], env()), len(succ) - 1)]
            rew = reward[s2]
            if global_clock:
                alpha_u = (1.0 + self.t) ** a_exp
            else:
                n = visits_u[s]
                visits_u[s] = n + 1
                alpha_u = (1.0 + n) ** a_exp
            for j in range(m):
                r = rew[j]
                vj = v_tab[j]
                target = vj[s2]
                if r > 0 or target == 0:
                    target = r + gam_v * target
                    for b in buffers[j]:
                        if global_clock:
                            n = self.t
                        else:
                            n = visits_v[b]
                            visits_v[b] = n + 1
                        vj[b] += (1.0 + n) ** a_exp * (target - vj[b])
                    buffers[j].clear()
                uj = u_tab[j]
                uj[s] += alpha_u * (r + gam_u * uj[s2] - uj[s])
            if truncate:
                for d in discount[s2]:
                    if d < 1.0:
                        env()
            s = s2
            self.t += 1
            steps += 1
            if steps >= max_steps:
                break
            if not ending and env() < reset_prob:
                ending = True
            if ending and (not drain or not any(buffers)):
                break
        return steps


# ---------------------------------------------------------------------------
# Training


def run_almanac(
    problem: ProductGame | tuple[MarkovGame, Sequence[SpecTask]],
    config: AlmanacConfig | None = None,
    features: np.ndarray | None = None,
) -> tuple[Actor, list[dict], "_Learner"]:
    """Train on a product (or a game plus tasks) and return the actor,
    per-episode diagnostics and the final learner state."""
    cfg = config or AlmanacConfig()
    p = problem if isinstance(problem, ProductGame) else build_product(*problem)
    lr = _Learner(p, cfg, features)
    diags: list[dict] = []
    episode = 0
    while episode < cfg.episodes and (cfg.max_outer is None or lr.k < cfg.max_outer):
        changes: deque[float] = deque(maxlen=cfg.window)
        losses: deque[float] = deque(maxlen=cfg.window)
        prev_mean = None
        for k in range(lr.actor.n_blocks):
            lr.ng.level[k] = None
        inner = 0
        while episode < cfg.episodes:
            before = [x.copy() for x in lr.ng.x]
            info = lr.episode(learn_actor=True)
            episode += 1
            inner += 1
            change = max(float(np.abs(x - b).max(initial=0.0)) for x, b in zip(lr.ng.x, before))
            changes.append(change)
            losses.append(info["loss_v"])
            if len(losses) == cfg.window:
                mean = float(np.mean(losses))
                if prev_mean is not None and abs(mean - prev_mean) < cfg.tol_l:
                    for k in range(lr.actor.n_blocks):
                        if lr.ng.level[k] is None:
                            lr.ng.level[k] = mean
                prev_mean = mean
            row = {
                "episode": episode,
                "outer": lr.k,
                "steps": info["steps"],
                "loss_v": info["loss_v"],
                "loss_u": info["loss_u"],
            }
            for j, r in enumerate(info["returns"]):
                row[f"return_{j}"] = r
            for k in range(lr.actor.n_blocks):
                row[f"lambda_{k}"] = lr.ng.lam[k]
                row[f"xnorm_{k}"] = lr.ng.norm(k)
            diags.append(row)
            if not _finite(lr):
                raise LearnerDivergence(f"non-finite parameters after episode {episode}", diags)
            converged = len(changes) == cfg.window and float(np.mean(changes)) < cfg.tol_x
            if converged or inner >= cfg.max_inner:
                break
        policy_update(lr.actor, lr.ng, Schedules.rate(cfg.schedules.iota, lr.k), cfg.theta_bound)
        lr.k += 1
    return lr.actor, diags, lr


def _finite(lr: _Learner) -> bool:
    arrays = list(lr.actor.theta) + list(lr.ng.x) + [lr.critic_v.values(), lr.critic_u.values()]
    return all(np.all(np.isfinite(a)) for a in arrays) and all(math.isfinite(x) for x in lr.ng.lam)


def evaluate_critics(
    product: ProductGame,
    policy: np.ndarray,
    config: AlmanacConfig | None = None,
    episodes: int | None = None,
    starts: str = "initial",
    average_from: float | None = None,
    drain: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Run only the critics under a fixed row-indexed policy.

    ``starts='uniform'`` begins each episode at a uniformly drawn product state;
    ``starts='balanced'`` begins at the state with the fewest critic updates so
    far, which covers transient states that the policy rarely revisits.
    With ``average_from`` set (a fraction of the run), the returned estimates are
    iterate averages over the remaining episodes. ``drain`` is passed to each
    episode (see ``_Learner.episode``). Tabular critics run through the inlined
    ``_Learner.critic_episode`` loop, which gives identical results.
    Returns ``(v, u)``, each of shape ``(n_states, n_specs)``.
    """
    cfg = config or AlmanacConfig()
    policy = check_policy(product, policy)
    lr = _Learner(product, cfg)
    cum = []
    for s in range(product.n_states):
        c = np.cumsum(policy[product.state_ptr[s] : product.state_ptr[s + 1]]).tolist()
        c[-1] = 1.0
        cum.append(c)
    if starts not in ("initial", "uniform", "balanced"):
        raise ValueError("starts must be 'initial', 'uniform' or 'balanced'")
    n_ep = cfg.episodes if episodes is None else episodes
    start_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(8)[-1])
    fast = isinstance(lr.critic_v, TabularCritic)
    avg_v = avg_u = None
    n_avg = 0
    first_avg = n_ep if average_from is None else int(n_ep * average_from)
    for e in range(n_ep):
        if starts == "uniform":
            start = int(start_rng.integers(product.n_states))
        elif starts == "balanced":
            start = min(range(product.n_states), key=lr.visits_u.__getitem__)
        else:
            start = None
        if fast:
            lr.critic_episode(start, cum, drain)
        else:
            lr.episode(learn_actor=False, start=start, policy_cum=cum, drain=drain)
        if e >= first_avg:
            v, u = lr.critic_v.values(), lr.critic_u.values()
            if avg_v is None:
                avg_v, avg_u = v.copy(), u.copy()
            else:
                avg_v += v
                avg_u += u
            n_avg += 1
    if n_avg:
        return avg_v / n_avg, avg_u / n_avg
    return lr.critic_v.values(), lr.critic_u.values()


def diagnostics_csv(diags: list[dict]) -> str:
    if not diags:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(diags[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(diags)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Estimator wrappers


class Almanac(BaseEstimator):
    """Estimator interface: ``fit(product)`` trains, ``predict`` returns the greedy
    action index per product state, ``predict_proba`` the row-indexed policy."""

    def __init__(
        self,
        gamma_v: float = 0.9,
        gamma_u: float = 0.9,
        reset_prob: float = 0.05,
        episodes: int = 5000,
        mode: str = "global",
        x_bound: float = 100.0,
        lambda_max: float = 100.0,
        theta_bound: float = 10.0,
        tol_x: float = 1e-3,
        window: int = 10,
        max_inner: int = 25,
        tol_l: float = 1e-3,
        natgrad_loss: str = "squared",
        gamma_weighting: str = "reweight",
        clock: str = "visits",
        seed: int = 0,
    ):
        self.gamma_v = gamma_v
        self.gamma_u = gamma_u
        self.reset_prob = reset_prob
        self.episodes = episodes
        self.mode = mode
        self.x_bound = x_bound
        self.lambda_max = lambda_max
        self.theta_bound = theta_bound
        self.tol_x = tol_x
        self.window = window
        self.max_inner = max_inner
        self.tol_l = tol_l
        self.natgrad_loss = natgrad_loss
        self.gamma_weighting = gamma_weighting
        self.clock = clock
        self.seed = seed

    def config(self) -> AlmanacConfig:
        return AlmanacConfig(**self.get_params())

    def fit(self, product: ProductGame, features: np.ndarray | None = None) -> "Almanac":
        if not isinstance(product, ProductGame):
            raise TypeError("fit expects a ProductGame")
        self.actor_, self.diagnostics_, learner = run_almanac(product, self.config(), features)
        self.critic_v_ = learner.critic_v.values()
        self.critic_u_ = learner.critic_u.values()
        self.natgrad_ = learner.ng
        self.n_outer_ = learner.k
        self.product_ = product
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "actor_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before using this estimator")

    def predict_proba(self, greedy: bool = False) -> np.ndarray:
        self._check_fitted()
        return self.actor_.greedy_policy() if greedy else self.actor_.joint_policy()

    def predict(self, states: Sequence[int] | None = None) -> np.ndarray:
        """Greedy joint action index (within each state's action list)."""
        self._check_fitted()
        pol = self.actor_.greedy_policy()
        ptr = self.product_.state_ptr
        idx = np.array([int(np.argmax(pol[ptr[s] : ptr[s + 1]])) for s in range(self.product_.n_states)])
        return idx if states is None else idx[np.asarray(states)]

    def score(self, product: ProductGame | None = None, greedy: bool = True) -> float:
        """Weighted satisfaction probability of the learned policy."""
        from .verify import satisfaction_probability

        self._check_fitted()
        p = self.product_ if product is None else product
        return satisfaction_probability(p, self.predict_proba(greedy=greedy)).weighted


def q_learning_state_discount(
    product: ProductGame,
    gamma_v: float = 0.9,
    alpha: Callable[[int], float] = lambda n: 1.0 / (n + 1),
    script: Sequence[tuple[int, int, int]] | None = None,
    episodes: int = 0,
    reset_prob: float = 0.05,
    epsilon: float = 0.1,
    rng: np.random.Generator | int | None = None,
    spec: int = 0,
) -> list[np.ndarray]:
    """Q-learning with the state-dependent discount and no patience:
    ``Q(s,a) ← (1−α)Q(s,a) + α[R(s') + Γ(s') max Q(s',·)]``.

    ``alpha`` maps the number of earlier updates made at state ``s`` to a step
    size. A ``script`` of ``(state, action, next_state)`` triples replays a fixed
    trace; otherwise ``episodes`` ε-greedy episodes are sampled.
    """
    q = [np.zeros(product.n_actions(s)) for s in range(product.n_states)]
    counts = [0] * product.n_states
    rew = product.accepting[:, spec].astype(float)
    disc = np.where(product.accepting[:, spec], gamma_v, 1.0)

    def update(s: int, a: int, s2: int) -> None:
        step = alpha(counts[s])
        counts[s] += 1
        q[s][a] = (1 - step) * q[s][a] + step * (rew[s2] + disc[s2] * q[s2].max())

    if script is not None:
        for s, a, s2 in script:
            update(int(s), int(a), int(s2))
        return q
    gen = np.random.default_rng(rng)
    from .game import sample_step

    for _ in range(episodes):
        s = int(gen.choice(product.n_states, p=product.initial))
        while True:
            if gen.random() < epsilon:
                a = int(gen.integers(product.n_actions(s)))
            else:
                a = int(np.argmax(q[s]))
            s2 = sample_step(product, s, a, gen)
            update(s, a, s2)
            s = s2
            if gen.random() < reset_prob:
                break
    return q


class StateDiscountQLearning(BaseEstimator):
    """Estimator wrapper around :func:`q_learning_state_discount`."""

    def __init__(self, gamma_v: float = 0.9, episodes: int = 1000, reset_prob: float = 0.05, epsilon: float = 0.1, seed: int = 0):
        self.gamma_v = gamma_v
        self.episodes = episodes
        self.reset_prob = reset_prob
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, product: ProductGame, script: Sequence[tuple[int, int, int]] | None = None) -> "StateDiscountQLearning":
        self.q_ = q_learning_state_discount(
            product, self.gamma_v, script=script, episodes=self.episodes,
            reset_prob=self.reset_prob, epsilon=self.epsilon, rng=self.seed,
        )
        self.product_ = product
        return self

    def predict(self, states: Sequence[int] | None = None) -> np.ndarray:
        if not hasattr(self, "q_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit before using this estimator")
        idx = np.array([int(np.argmax(row)) for row in self.q_])
        return idx if states is None else idx[np.asarray(states)]
