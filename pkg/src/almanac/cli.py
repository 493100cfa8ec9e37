"""Command-line entry point: ``almanac <subcommand> ...``.

Exit codes: 0 success, 1 failed golden check or verdict disagreement,
2 usage error, 3 invalid input, 4 capacity exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .automata import CapacityError, ldba_accepts_lasso, ltl_to_ldba
from .game import GameValidationError, check_policy, game_from_json
from .hoa import HoaError, export_hoa
from .ltl import LassoWord, LtlSyntaxError, PropositionTable, eval_lasso, parse_letters, parse_ltl
from .product import ProductGame, TaskError, build_product, tasks_from_json
from .verify import CapacityExceeded, VerificationError, oracle_optimum, satisfaction_probability

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INPUT, EXIT_CAPACITY = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text)


def _load_product(game_path: str, tasks_path: str, max_states: int | None = None) -> ProductGame:
    game = game_from_json(Path(game_path).read_text())
    tasks = tasks_from_json(Path(tasks_path).read_text())
    if max_states is None:
        return build_product(game, tasks)
    return build_product(game, tasks, max_states=max_states)


def policy_to_json(product: ProductGame, policy: np.ndarray) -> str:
    """Per-state action distributions keyed by product state and action names."""
    states = []
    for s in range(product.n_states):
        lo, hi = product.state_ptr[s], product.state_ptr[s + 1]
        states.append({
            "state": product.state_name(s),
            "actions": [product.action_name(s, a) for a in range(hi - lo)],
            "probs": [float(x) for x in policy[lo:hi]],
        })
    return json.dumps({"states": states}, indent=2)


def policy_from_json(product: ProductGame, text: str) -> np.ndarray:
    data = json.loads(text)
    entries = data["states"] if isinstance(data, dict) else data
    if len(entries) != product.n_states:
        raise ValueError(f"policy covers {len(entries)} states, product has {product.n_states}")
    rows = []
    for s, entry in enumerate(entries):
        probs = entry["probs"] if isinstance(entry, dict) else entry
        if len(probs) != product.n_actions(s):
            raise ValueError(f"state {s}: {len(probs)} probabilities for {product.n_actions(s)} actions")
        rows.extend(float(x) for x in probs)
    return check_policy(product, np.array(rows))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_translate(args) -> int:
    f = parse_ltl(args.formula, PropositionTable())
    a = ltl_to_ldba(f, max_states=args.max_states)
    _write(export_hoa(a, name=args.formula), args.output)
    return EXIT_OK


def cmd_product(args) -> int:
    p = _load_product(args.game, args.tasks, args.max_states)
    stats = p.stats()
    if args.json:
        _write(json.dumps(stats, indent=2), None)
    else:
        _write("\n".join(f"{k}: {v}" for k, v in stats.items()), None)
    return EXIT_OK


def cmd_train(args) -> int:
    from .learner import AlmanacConfig, diagnostics_csv, run_almanac

    p = _load_product(args.game, args.tasks)
    cfg = AlmanacConfig.from_json(Path(args.config).read_text()) if args.config else AlmanacConfig()
    for name in ("episodes", "seed", "mode"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    cfg.__post_init__()
    actor, diags, _ = run_almanac(p, cfg)
    policy = actor.greedy_policy() if args.greedy else actor.joint_policy()
    _write(policy_to_json(p, policy), args.policy)
    if args.diagnostics:
        Path(args.diagnostics).write_text(diagnostics_csv(diags))
    return EXIT_OK


def cmd_eval(args) -> int:
    p = _load_product(args.game, args.tasks)
    policy = policy_from_json(p, Path(args.policy).read_text())
    report = satisfaction_probability(p, policy)
    if args.optimum:
        report.optimum = oracle_optimum(p)
    _write(report.to_json(), args.output)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .harness import ExperimentConfig, run_benchmark

    learner = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = ExperimentConfig(
        states=args.states, agents=args.agents, specs=args.specs, games=args.games,
        episodes=args.episodes, seed=args.seed, learner=learner,
    )
    table = run_benchmark(cfg, workers=args.workers)
    _write(table.to_csv(), args.csv)
    if args.markdown:
        Path(args.markdown).write_text(table.to_markdown())
    if args.games_csv:
        Path(args.games_csv).write_text(table.games_csv())
    return EXIT_OK


def cmd_check_lasso(args) -> int:
    props = PropositionTable()
    f = parse_ltl(args.formula, props)
    prefix = parse_letters(args.prefix, props)
    cycle = parse_letters(args.cycle, props)
    width = max(len(props.names), 1)
    word = LassoWord(prefix, cycle, width)
    a = ltl_to_ldba(f, list(props.names) or ["_p0"])
    direct = eval_lasso(f, word)
    via_automaton = ldba_accepts_lasso(a, word)
    _write(f"{str(direct).lower()} {str(via_automaton).lower()}", None)
    return EXIT_OK if direct == via_automaton else EXIT_FAIL


def cmd_golden(args) -> int:
    from .harness import golden_checks

    ok = True
    for c in golden_checks():
        status = "PASS" if c.passed else "FAIL"
        ok &= c.passed
        _write(f"{status} {c.name}: {c.value:.6f} (expected {c.expected} ± {c.tol:g})", None)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="almanac", description="LTL-specified multi-agent learning toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("translate", help="LTL formula to HOA automaton")
    p.add_argument("formula")
    p.add_argument("-o", "--output")
    p.add_argument("--max-states", type=int, default=1 << 16)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("product", help="product statistics for a game and tasks")
    p.add_argument("game")
    p.add_argument("tasks")
    p.add_argument("--json", action="store_true")
    p.add_argument("--max-states", type=int)
    p.set_defaults(func=cmd_product)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("game")
    p.add_argument("tasks")
    p.add_argument("--config", help="learner config JSON")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("global", "local"))
    p.add_argument("--stochastic", dest="greedy", action="store_false", help="write the softmax policy instead of the greedy one")
    p.add_argument("--policy", default="-", help="policy JSON output (default stdout)")
    p.add_argument("--diagnostics", help="per-episode diagnostics CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exact satisfaction probabilities of a policy")
    p.add_argument("game")
    p.add_argument("tasks")
    p.add_argument("policy")
    p.add_argument("--optimum", action="store_true", help="also compute the optimum and gap")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="random-game benchmark grid")
    p.add_argument("--states", type=_int_list, default=(2, 4, 8, 16))
    p.add_argument("--agents", type=_int_list, default=(1, 2))
    p.add_argument("--specs", type=_int_list, default=(1,))
    p.add_argument("--games", type=int, default=10)
    p.add_argument("--episodes", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--config", help="learner config JSON")
    p.add_argument("--csv", default="-", help="cell CSV output (default stdout)")
    p.add_argument("--markdown")
    p.add_argument("--games-csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("check-lasso", help="decide a lasso word directly and via the automaton")
    p.add_argument("formula")
    p.add_argument("--prefix", default="")
    p.add_argument("--cycle", required=True)
    p.set_defaults(func=cmd_check_lasso)

    p = sub.add_parser("golden", help="run the worked-example reproductions")
    p.set_defaults(func=cmd_golden)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CapacityError, CapacityExceeded) as exc:
        print(f"capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (
        LtlSyntaxError, HoaError, GameValidationError, TaskError, VerificationError,
        json.JSONDecodeError, KeyError, ValueError, OSError,
    ) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
