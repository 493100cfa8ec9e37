"""Benchmark orchestration: random specs and games, per-cell optimality gaps,
CSV/markdown result tables and the appendix reproductions."""

from __future__ import annotations

import csv
import io
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .automata import CapacityError
from .game import random_game
from .learner import AlmanacConfig, run_almanac
from .ltl import Formula, PropositionTable, parse_ltl
from .product import DEFAULT_PRODUCT_LIMIT, build_product, make_task
from .verify import ORACLE_ENUMERATION_CAP, CapacityExceeded, evaluate_error, oracle_optimum

log = logging.getLogger(__name__)

WORKERS_ENV = "ALMANAC_WORKERS"

TEMPLATES = (
    "F {a}",
    "G {a}",
    "F G {a}",
    "G F {a}",
    "{a} U {b}",
    "G ({a} -> F {b})",
    "F {a} & F {b}",
    "F {a} | G {b}",
)


def sample_spec_text(
    n_props: int,
    rng: np.random.Generator,
    templates: Sequence[str] = TEMPLATES,
    prop_names: Sequence[str] | None = None,
) -> str:
    """Draw a template and fill it with random propositions (distinct when
    at least two are available)."""
    names = list(prop_names) if prop_names is not None else [f"p{i}" for i in range(n_props)]
    if not names:
        raise ValueError("need at least one proposition")
    template = templates[int(rng.integers(len(templates)))]
    if len(names) >= 2:
        a, b = rng.choice(len(names), size=2, replace=False)
    else:
        a = b = 0
    return template.format(a=names[a], b=names[b])


def sample_spec(
    n_props: int,
    rng: np.random.Generator,
    templates: Sequence[str] = TEMPLATES,
    prop_names: Sequence[str] | None = None,
) -> Formula:
    return parse_ltl(sample_spec_text(n_props, rng, templates, prop_names), PropositionTable())


def sample_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the probability simplex."""
    w = rng.dirichlet(np.ones(n))
    return w / w.sum()


@dataclass
class ExperimentConfig:
    states: tuple[int, ...] = (2, 4, 8, 16, 32)
    agents: tuple[int, ...] = (1, 2)
    specs: tuple[int, ...] = (1, 2)
    games: int = 10
    episodes: int = 5000
    n_actions: int = 2
    n_props: int = 2
    density: float = 0.3
    learner: dict = field(default_factory=dict)
    seed: int = 0
    policy_cap: int = ORACLE_ENUMERATION_CAP
    product_limit: int = DEFAULT_PRODUCT_LIMIT
    greedy: bool = True

    def cells(self) -> list[tuple[int, int, int]]:
        return [(m, a, n) for m in self.specs for a in self.agents for n in self.states]


@dataclass
class GameResult:
    n_states: int
    n_agents: int
    n_specs: int
    game: int
    gap: float | None
    optimum: float | None
    specs: tuple[str, ...]
    error: str | None = None


@dataclass
class CellResult:
    n_states: int
    n_agents: int
    n_specs: int
    games: list[GameResult]
    runtime: float = 0.0

    @property
    def gaps(self) -> list[float]:
        return [g.gap for g in self.games if g.gap is not None]

    @property
    def mean_gap(self) -> float | None:
        gaps = self.gaps
        return float(np.mean(gaps)) if gaps else None

    def within(self, tol: float) -> float | None:
        gaps = self.gaps
        return float(np.mean([g <= tol for g in gaps])) if gaps else None


@dataclass
class ResultTable:
    cells: list[CellResult]

    def cell(self, n_states: int, n_agents: int, n_specs: int = 1) -> CellResult:
        for c in self.cells:
            if (c.n_states, c.n_agents, c.n_specs) == (n_states, n_agents, n_specs):
                return c
        raise KeyError((n_states, n_agents, n_specs))

    @property
    def games(self) -> list[GameResult]:
        return [g for c in self.cells for g in c.games]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_specs", "n_agents", "n_states", "games", "evaluated", "mean_gap", "within_0.2", "failures"])
        for c in self.cells:
            mean, within = c.mean_gap, c.within(0.2)
            w.writerow([
                c.n_specs, c.n_agents, c.n_states, len(c.games), len(c.gaps),
                "" if mean is None else f"{mean:.6f}",
                "" if within is None else f"{within:.3f}",
                sum(g.error is not None for g in c.games),
            ])
        return buf.getvalue()

    def games_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n_specs", "n_agents", "n_states", "game", "gap", "optimum", "specs", "error"])
        for g in self.games:
            w.writerow([
                g.n_specs, g.n_agents, g.n_states, g.game,
                "" if g.gap is None else f"{g.gap:.6f}",
                "" if g.optimum is None else f"{g.optimum:.6f}",
                " ; ".join(g.specs), g.error or "",
            ])
        return buf.getvalue()

    def to_markdown(self) -> str:
        """One block per spec count: agents as rows, states as columns, ``--``
        where no gap could be computed."""
        out = []
        for m in sorted({c.n_specs for c in self.cells}):
            cells = [c for c in self.cells if c.n_specs == m]
            states = sorted({c.n_states for c in cells})
            agents = sorted({c.n_agents for c in cells})
            out.append(f"**{m} spec{'s' if m > 1 else ''}**\n")
            out.append("| agents | " + " | ".join(str(s) for s in states) + " |")
            out.append("|---|" + "---|" * len(states))
            for a in agents:
                row = []
                for s in states:
                    c = next((c for c in cells if c.n_states == s and c.n_agents == a), None)
                    mean = None if c is None else c.mean_gap
                    row.append("--" if mean is None else f"{mean:.2f}")
                out.append(f"| {a} | " + " | ".join(row) + " |")
            out.append("")
        return "\n".join(out)


def _job_seeds(seed: int, cell: tuple[int, int, int], game: int) -> list[np.random.SeedSequence]:
    n_specs, n_agents, n_states = cell
    return np.random.SeedSequence([seed, n_specs, n_agents, n_states, game]).spawn(3)


def run_game(config: ExperimentConfig, cell: tuple[int, int, int], game: int) -> GameResult:
    """Generate, train and score one game; failures are captured in the result."""
    n_specs, n_agents, n_states = cell
    game_seed, spec_seed, learn_seed = _job_seeds(config.seed, cell, game)
    spec_rng = np.random.default_rng(spec_seed)
    formulas: list[str] = []
    try:
        g = random_game(n_states, n_agents, config.n_actions, config.n_props, config.density, np.random.default_rng(game_seed))
        weights = sample_weights(n_specs, spec_rng) if n_specs > 1 else np.ones(1)
        owners = tuple(range(n_agents))
        tasks = []
        for j in range(n_specs):
            f = sample_spec_text(config.n_props, spec_rng, prop_names=g.ap)
            task = make_task(f, float(weights[j]), owners)
            formulas.append(task.text)
            tasks.append(task)
        p = build_product(g, tasks, max_states=config.product_limit)
        try:
            optimum = oracle_optimum(p, cap=config.policy_cap)
        except (CapacityExceeded, CapacityError) as exc:
            return GameResult(n_states, n_agents, n_specs, game, None, None, tuple(formulas), f"no oracle: {exc}")
        learner = AlmanacConfig.from_json(config.learner)
        learner.episodes = config.episodes
        learner.seed = int(learn_seed.generate_state(1)[0])
        actor, _, _ = run_almanac(p, learner)
        policy = actor.greedy_policy() if config.greedy else actor.joint_policy()
        gap = evaluate_error(p, policy, optimum=optimum)
        return GameResult(n_states, n_agents, n_specs, game, gap, optimum, tuple(formulas))
    except Exception as exc:  # isolate the failing game, keep the rest of the cell
        log.warning("game %s in cell %s failed: %s", game, cell, exc)
        return GameResult(n_states, n_agents, n_specs, game, None, None, tuple(formulas), f"{type(exc).__name__}: {exc}")


def _run_job(args) -> GameResult:
    return run_game(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_benchmark(config: ExperimentConfig, workers: int | None = None) -> ResultTable:
    workers = worker_count() if workers is None else max(1, workers)
    cells = config.cells()
    jobs = [(config, cell, k) for cell in cells for k in range(config.games)]
    start = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
    table = ResultTable([])
    for i, (n_specs, n_agents, n_states) in enumerate(cells):
        chunk = results[i * config.games : (i + 1) * config.games]
        table.cells.append(CellResult(n_states, n_agents, n_specs, chunk))
        log.info("cell states=%d agents=%d specs=%d mean gap=%s", n_states, n_agents, n_specs, table.cells[-1].mean_gap)
    log.info("benchmark finished in %.1fs", time.perf_counter() - start)
    return table


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    for key in ("states", "agents", "specs"):
        if key in data:
            data[key] = tuple(int(x) for x in data[key])
    return ExperimentConfig(**data)


# ---------------------------------------------------------------------------
# Appendix reproductions


@dataclass
class GoldenCheck:
    name: str
    value: float
    expected: float
    tol: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.tol


PATIENCE_SCRIPT_LUCKY = ((0, 1, 1), (1, 0, 1), (0, 1, 1))
PATIENCE_SCRIPT_LOOP = ((0, 0, 0),) * 5


def patience_product():
    from .examples import patience_game

    return build_product(patience_game(), [make_task("F psi", 1.0, (0,))])


def golden_checks() -> list[GoldenCheck]:
    """Exact traces and optima from the worked examples (no learning involved)."""
    from .examples import separation_game
    from .learner import q_learning_state_discount
    from .verify import brute_force_optimal, exact_patient_value
    from .game import deterministic_policy

    p = patience_product()
    q = q_learning_state_discount(p, 0.9, script=PATIENCE_SCRIPT_LUCKY)
    lucky_b = float(q[0][1])
    q = q_learning_state_discount(p, 0.9, script=PATIENCE_SCRIPT_LUCKY + PATIENCE_SCRIPT_LOOP)
    loop_a = float(q[0][0])
    always_b = deterministic_policy(p, [1] * p.n_states)
    v = exact_patient_value(p, always_b, 0.9, 0)
    checks = [
        GoldenCheck("patience Q(s0,b) after two lucky updates", lucky_b, 1.45, 1e-9),
        GoldenCheck("patience Q(s0,a) after five loop updates", loop_a, 1.036, 5e-3),
        GoldenCheck("patience V(s0) under always-b", float(v[0]), 1.0, 1e-9),
        GoldenCheck("patience V(s1) under always-b", float(v[1]), 10.0, 1e-9),
    ]
    g = separation_game()
    weighted = build_product(g, [make_task("F chi", 0.5, (0,)), make_task("F psi", 0.5, (0,))])
    value, choice = brute_force_optimal(weighted)
    checks.append(GoldenCheck("separation weighted optimum", value, 0.5, 1e-9))
    checks.append(GoldenCheck("separation weighted action at s0 is b", float(choice[0]), 1.0, 0.0))
    conj = build_product(g, [make_task("F chi & F psi", 1.0, (0,))])
    value, choice = brute_force_optimal(conj)
    checks.append(GoldenCheck("separation conjunction optimum", value, 0.1, 1e-9))
    checks.append(GoldenCheck("separation conjunction action at s0 is a", float(choice[0]), 0.0, 0.0))
    return checks
