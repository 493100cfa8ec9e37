"""Reading and writing LDBAs in a subset of the HOA v1 text format.

Extensions: the header ``ldba-initial:`` lists the states of the initial part,
and an edge without a label is an ε-jump.
"""

from __future__ import annotations

import re

import numpy as np

from .automata import MAX_AP, CapacityError, Ldba


class HoaError(ValueError):
    pass


def _cube(letter: int, width: int) -> str:
    if width == 0:
        return "t"
    return "&".join(str(i) if letter >> i & 1 else f"!{i}" for i in range(width))


def export_hoa(a: Ldba, name: str | None = None) -> str:
    lines = ["HOA: v1"]
    if name:
        lines.append(f'name: "{name}"')
    lines.append(f"States: {a.n_states}")
    lines.append(f"Start: {a.initial}")
    lines.append(f"AP: {a.width}" + "".join(f' "{p}"' for p in a.ap))
    lines.append("acc-name: Buchi")
    lines.append("Acceptance: 1 Inf(0)")
    lines.append("ldba-initial:" + "".join(f" {q}" for q in sorted(a.initial_part)))
    lines.append("--BODY--")
    for q in range(a.n_states):
        lines.append(f"State: {q}" + (" {0}" if q in a.accepting else ""))
        for letter in range(1 << a.width):
            lines.append(f"[{_cube(letter, a.width)}] {int(a.delta[q, letter])}")
        for t in a.eps[q]:
            lines.append(f"{t}")
    lines.append("--END--")
    return "\n".join(lines) + "\n"


_LABEL_TOKEN = re.compile(r"\s*(\d+|[tf!&|()])")


def _label_letters(text: str, width: int) -> set[int]:
    """Letters satisfying a HOA label expression over AP indices."""
    tokens = []
    pos = 0
    while pos < len(text):
        if not text[pos:].strip():
            break
        m = _LABEL_TOKEN.match(text, pos)
        if not m:
            raise HoaError(f"bad label expression [{text}]")
        tokens.append(m.group(1))
        pos = m.end()
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else None

    def take():
        nonlocal i
        i += 1
        return tokens[i - 1]

    def disj():
        f = conj()
        while peek() == "|":
            take()
            g = conj()
            f = (lambda x, y: lambda a: x(a) or y(a))(f, g)
        return f

    def conj():
        f = unary()
        while peek() == "&":
            take()
            g = unary()
            f = (lambda x, y: lambda a: x(a) and y(a))(f, g)
        return f

    def unary():
        tok = peek()
        if tok is None:
            raise HoaError(f"truncated label [{text}]")
        take()
        if tok == "!":
            g = unary()
            return lambda a: not g(a)
        if tok == "(":
            g = disj()
            if peek() != ")":
                raise HoaError(f"unbalanced label [{text}]")
            take()
            return g
        if tok == "t":
            return lambda a: True
        if tok == "f":
            return lambda a: False
        if tok.isdigit():
            k = int(tok)
            if k >= width:
                raise HoaError(f"label refers to AP {k} outside {width} propositions")
            return lambda a: bool(a >> k & 1)
        raise HoaError(f"unexpected token {tok!r} in label [{text}]")

    expr = disj()
    if peek() is not None:
        raise HoaError(f"trailing tokens in label [{text}]")
    return {a for a in range(1 << width) if expr(a)}


def import_hoa(text: str) -> Ldba:
    """Parse HOA text into an :class:`Ldba`; every structural invariant is checked."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("/*")]
    if not lines or not lines[0].startswith("HOA:"):
        raise HoaError("missing 'HOA:' header line")
    if lines[0].split()[1:] != ["v1"]:
        raise HoaError(f"unsupported HOA version: {lines[0]!r}")
    try:
        body_at = lines.index("--BODY--")
        end_at = lines.index("--END--")
    except ValueError:
        raise HoaError("missing --BODY-- or --END-- marker") from None
    if end_at < body_at:
        raise HoaError("--END-- precedes --BODY--")

    n_states = start = None
    ap: tuple[str, ...] | None = None
    acceptance = None
    initial_part: set[int] = set()
    for ln in lines[1:body_at]:
        key, _, rest = ln.partition(":")
        rest = rest.strip()
        if key == "States":
            n_states = _int(rest, "States")
        elif key == "Start":
            if start is not None:
                raise HoaError("multiple Start states are not limit-deterministic")
            start = _int(rest, "Start")
        elif key == "AP":
            parts = rest.split(None, 1)
            count = _int(parts[0], "AP")
            names = re.findall(r'"((?:[^"\\]|\\.)*)"', parts[1] if len(parts) > 1 else "")
            if len(names) != count:
                raise HoaError(f"AP header declares {count} names but lists {len(names)}")
            ap = tuple(names)
        elif key == "Acceptance":
            acceptance = " ".join(rest.split())
        elif key == "ldba-initial":
            initial_part = {_int(x, "ldba-initial") for x in rest.split()}
        elif key in ("name", "acc-name", "properties", "tool"):
            pass
        else:
            raise HoaError(f"unsupported header field {key!r}")
    if n_states is None or start is None or ap is None or acceptance is None:
        raise HoaError("header must contain States:, Start:, AP: and Acceptance:")
    if acceptance not in ("1 Inf(0)", "1 Inf(0 )"):
        raise HoaError(f"only Büchi acceptance '1 Inf(0)' is supported, got {acceptance!r}")
    if len(ap) > MAX_AP:
        raise CapacityError(f"{len(ap)} propositions exceed limit {MAX_AP}")

    width = len(ap)
    n_letters = 1 << width
    succ: list[list[set[int]]] = [[set() for _ in range(n_letters)] for _ in range(n_states)]
    eps: list[set[int]] = [set() for _ in range(n_states)]
    accepting: set[int] = set()
    seen_states: set[int] = set()
    current = None
    for ln in lines[body_at + 1 : end_at]:
        if ln.startswith("State:"):
            m = re.fullmatch(r"State:\s*(\d+)(?:\s+\"[^\"]*\")?\s*(\{[\d\s]*\})?", ln)
            if not m:
                raise HoaError(f"malformed state line {ln!r}")
            current = int(m.group(1))
            if not 0 <= current < n_states:
                raise HoaError(f"state {current} outside 0..{n_states - 1}")
            if current in seen_states:
                raise HoaError(f"state {current} declared twice")
            seen_states.add(current)
            if m.group(2):
                marks = m.group(2)[1:-1].split()
                if any(x != "0" for x in marks):
                    raise HoaError(f"acceptance set {marks} not in Büchi set 0")
                if marks:
                    accepting.add(current)
            continue
        if current is None:
            raise HoaError(f"edge before any State: line: {ln!r}")
        m = re.fullmatch(r"(?:\[([^\]]*)\]\s*)?(\d+)\s*(\{[\d\s]*\})?", ln)
        if not m:
            raise HoaError(f"malformed edge {ln!r}")
        if m.group(3) and m.group(3)[1:-1].split():
            raise HoaError("transition-based acceptance is not supported")
        target = int(m.group(2))
        if not 0 <= target < n_states:
            raise HoaError(f"edge target {target} outside 0..{n_states - 1}")
        if m.group(1) is None:
            eps[current].add(target)
        else:
            for letter in _label_letters(m.group(1), width):
                succ[current][letter].add(target)

    if not 0 <= start < n_states:
        raise HoaError(f"start state {start} outside 0..{n_states - 1}")
    for q in initial_part:
        if not 0 <= q < n_states:
            raise HoaError(f"ldba-initial state {q} outside 0..{n_states - 1}")
    delta = np.zeros((n_states, n_letters), dtype=np.int64)
    for q in range(n_states):
        for letter in range(n_letters):
            targets = succ[q][letter]
            if len(targets) != 1:
                raise HoaError(
                    "LDBA invariant violated: |δ(q,α)| = 1 for every state q and letter α "
                    f"(state {q}, letter {letter} has {len(targets)} successors)"
                )
            delta[q, letter] = next(iter(targets))
    ldba = Ldba(
        ap=ap,
        delta=delta,
        eps=tuple(tuple(sorted(e)) for e in eps),
        accepting=frozenset(accepting),
        initial_part=frozenset(initial_part),
        initial=start,
    )
    bad = ldba.violations()
    if bad:
        raise HoaError("LDBA invariant violated: " + "; ".join(bad))
    return ldba


def _int(text: str, field: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise HoaError(f"{field}: expected an integer, got {text!r}") from None
