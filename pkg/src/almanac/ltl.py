"""LTL formulae: parsing, printing, negation normal form and exact lasso semantics.

Letters are integer bitmasks over proposition ids, so ``{a, c}`` over the table
``(a, b, c)`` is ``0b101``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence


class LtlSyntaxError(ValueError):
    """Raised on malformed formula or letter text; carries the offending offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Proposition:
    id: int
    name: str


class PropositionTable:
    """Dense, insertion-ordered interning of proposition names."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        for name in names:
            self.intern(name)

    def intern(self, name: str) -> Proposition:
        if name not in self._index:
            self._index[name] = len(self._names)
            self._names.append(name)
        return Proposition(self._index[name], name)

    def __getitem__(self, name: str) -> Proposition:
        return Proposition(self._index[name], name)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._names)

    def __repr__(self) -> str:
        return f"PropositionTable({self._names!r})"


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Formula:
    def children(self) -> tuple["Formula", ...]:
        return ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class Atom(Formula):
    prop: Proposition


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class Next(Formula):
    arg: Formula

    def children(self):
        return (self.arg,)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Release(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


TRUE = TrueF()
FALSE = FalseF()


def eventually(f: Formula) -> Formula:
    return Until(TRUE, f)


def globally(f: Formula) -> Formula:
    return Not(Until(TRUE, Not(f)))


def implies(f: Formula, g: Formula) -> Formula:
    return Or(Not(f), g)


def size(f: Formula) -> int:
    return 1 + sum(size(c) for c in f.children())


def atoms(f: Formula) -> set[Proposition]:
    if isinstance(f, Atom):
        return {f.prop}
    out: set[Proposition] = set()
    for c in f.children():
        out |= atoms(c)
    return out


def subformulas(f: Formula) -> list[Formula]:
    """Post-order, duplicate-free list of subformulas (children before parents)."""
    seen: dict[Formula, None] = {}

    def walk(g: Formula) -> None:
        for c in g.children():
            walk(c)
        seen.setdefault(g, None)

    walk(f)
    return list(seen)


# ---------------------------------------------------------------------------
# Parsing and printing

_TOKEN = re.compile(r"\s*(?:(->)|([!&|()])|([A-Za-z_][A-Za-z0-9_]*))")
_UNARY = {"!", "X", "F", "G"}
_KEYWORDS = {"true", "false", "X", "F", "G", "U", "R"}


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            offset = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise LtlSyntaxError(f"unexpected character {text[offset]!r}", offset)
        tok = m.group(1) or m.group(2) or m.group(3)
        tokens.append((tok, m.start(m.lastindex)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str, props: PropositionTable):
        self.tokens = _tokenize(text)
        self.i = 0
        self.props = props
        self.end = len(text)

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else self.end

    def take(self) -> str:
        tok = self.tokens[self.i][0]
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        if self.peek() != tok:
            found = self.peek()
            raise LtlSyntaxError(f"expected {tok!r}, found {found!r}", self.pos())
        self.i += 1

    def implication(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "->":
            self.take()
            return implies(left, self.implication())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "|":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.binary_temporal()
        while self.peek() == "&":
            self.take()
            f = And(f, self.binary_temporal())
        return f

    def binary_temporal(self) -> Formula:
        left = self.unary()
        op = self.peek()
        if op in ("U", "R"):
            self.take()
            right = self.binary_temporal()
            return Until(left, right) if op == "U" else Release(left, right)
        return left

    def unary(self) -> Formula:
        tok = self.peek()
        if tok in _UNARY:
            self.take()
            arg = self.unary()
            if tok == "!":
                return Not(arg)
            if tok == "X":
                return Next(arg)
            if tok == "F":
                return eventually(arg)
            return globally(arg)
        return self.primary()

    def primary(self) -> Formula:
        tok = self.peek()
        if tok is None:
            raise LtlSyntaxError("unexpected end of input", self.pos())
        if tok == "(":
            self.take()
            f = self.implication()
            self.expect(")")
            return f
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return FALSE
        if tok in _KEYWORDS or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            raise LtlSyntaxError(f"unexpected token {tok!r}", self.pos())
        self.take()
        return Atom(self.props.intern(tok))


def parse_ltl(text: str, props: PropositionTable | None = None) -> Formula:
    """Parse ``text`` into an AST, interning new atoms into ``props``.

    Derived operators are expanded on the fly: ``F f`` becomes ``true U f``,
    ``G f`` becomes ``!(true U !f)`` and ``f -> g`` becomes ``!f | g``.
    """
    if props is None:
        props = PropositionTable()
    if not text.strip():
        raise LtlSyntaxError("empty formula", 0)
    parser = _Parser(text, props)
    f = parser.implication()
    if parser.peek() is not None:
        raise LtlSyntaxError(f"trailing token {parser.peek()!r}", parser.pos())
    return f


def to_text(f: Formula) -> str:
    """Print in the grammar accepted by :func:`parse_ltl` (binary nodes parenthesised)."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        return f.prop.name
    if isinstance(f, Not):
        return f"!{to_text(f.arg)}"
    if isinstance(f, Next):
        return f"X {to_text(f.arg)}"
    ops = {And: "&", Or: "|", Until: "U", Release: "R"}
    for cls, op in ops.items():
        if isinstance(f, cls):
            return f"({to_text(f.left)} {op} {to_text(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Negation normal form


def to_nnf(f: Formula) -> Formula:
    return _nnf(f, False)


def _nnf(f: Formula, neg: bool) -> Formula:
    if isinstance(f, TrueF):
        return FALSE if neg else TRUE
    if isinstance(f, FalseF):
        return TRUE if neg else FALSE
    if isinstance(f, Atom):
        return Not(f) if neg else f
    if isinstance(f, Not):
        return _nnf(f.arg, not neg)
    if isinstance(f, Next):
        return Next(_nnf(f.arg, neg))
    left, right = _nnf(f.left, neg), _nnf(f.right, neg)
    if isinstance(f, And):
        return Or(left, right) if neg else And(left, right)
    if isinstance(f, Or):
        return And(left, right) if neg else Or(left, right)
    if isinstance(f, Until):
        return Release(left, right) if neg else Until(left, right)
    if isinstance(f, Release):
        return Until(left, right) if neg else Release(left, right)
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, Not):
        return isinstance(f.arg, Atom)
    return all(is_nnf(c) for c in f.children())


# ---------------------------------------------------------------------------
# Lasso words


@dataclass(frozen=True)
class LassoWord:
    """The infinite word ``prefix . cycle^omega`` over letters of ``width`` bits."""

    prefix: tuple[int, ...]
    cycle: tuple[int, ...]
    width: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "prefix", tuple(int(a) for a in self.prefix))
        object.__setattr__(self, "cycle", tuple(int(a) for a in self.cycle))
        if not self.cycle:
            raise ValueError("lasso cycle must be non-empty")
        limit = 1 << self.width
        for a in self.prefix + self.cycle:
            if not 0 <= a < limit:
                raise ValueError(f"letter {a} does not fit alphabet width {self.width}")

    def __len__(self) -> int:
        return len(self.prefix) + len(self.cycle)

    def letter(self, i: int) -> int:
        """Letter at absolute position ``i`` of the infinite word."""
        p = len(self.prefix)
        return self.prefix[i] if i < p else self.cycle[(i - p) % len(self.cycle)]

    def successor(self, i: int) -> int:
        """Next position in the folded representation ``0..len-1``."""
        return i + 1 if i + 1 < len(self) else len(self.prefix)

    def shift(self) -> "LassoWord":
        """The suffix starting at position 1."""
        if self.prefix:
            return LassoWord(self.prefix[1:], self.cycle, self.width)
        return LassoWord((), self.cycle[1:] + self.cycle[:1], self.width)


def parse_letter(text: str, props: PropositionTable) -> int:
    """Parse ``{a, b}`` (or ``{}``) into a bitmask over ``props``."""
    body = text.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise LtlSyntaxError(f"letter must be braced: {text!r}", 0)
    letter = 0
    for name in body[1:-1].split(","):
        name = name.strip()
        if name:
            letter |= 1 << props.intern(name).id
    return letter


def parse_letters(text: str, props: PropositionTable) -> tuple[int, ...]:
    """Parse a run of braced letters such as ``{a}{}{a,b}``."""
    groups = re.findall(r"\{[^{}]*\}", text)
    if re.sub(r"\{[^{}]*\}|[\s,]", "", text):
        raise LtlSyntaxError(f"malformed letter sequence {text!r}", 0)
    return tuple(parse_letter(g, props) for g in groups)


def letter_to_text(letter: int, names: Sequence[str]) -> str:
    return "{" + ",".join(n for i, n in enumerate(names) if letter >> i & 1) + "}"


# ---------------------------------------------------------------------------
# Exact evaluation on lassos


def eval_lasso(f: Formula, w: LassoWord) -> bool:
    """Decide ``prefix . cycle^omega |= f`` exactly.

    Each subformula is labelled over the folded positions ``0..len(w)-1``;
    Until is a least and Release a greatest fixpoint over the successor map.
    """
    for p in atoms(f):
        if p.id >= w.width:
            raise ValueError(
                f"proposition {p.name!r} (id {p.id}) outside alphabet of width {w.width}"
            )
    return _label(f, w)[0]


def _label(f: Formula, w: LassoWord) -> tuple[bool, ...]:
    n = len(w)
    succ = [w.successor(i) for i in range(n)]
    letters = [w.letter(i) for i in range(n)]
    memo: dict[Formula, list[bool]] = {}
    for g in subformulas(f):
        if isinstance(g, TrueF):
            val = [True] * n
        elif isinstance(g, FalseF):
            val = [False] * n
        elif isinstance(g, Atom):
            val = [bool(a >> g.prop.id & 1) for a in letters]
        elif isinstance(g, Not):
            val = [not x for x in memo[g.arg]]
        elif isinstance(g, Next):
            sub = memo[g.arg]
            val = [sub[succ[i]] for i in range(n)]
        elif isinstance(g, And):
            val = [x and y for x, y in zip(memo[g.left], memo[g.right])]
        elif isinstance(g, Or):
            val = [x or y for x, y in zip(memo[g.left], memo[g.right])]
        elif isinstance(g, Until):
            val = _fixpoint(memo[g.left], memo[g.right], succ, least=True)
        elif isinstance(g, Release):
            val = _fixpoint(memo[g.left], memo[g.right], succ, least=False)
        else:
            raise TypeError(f"not a formula: {g!r}")
        memo[g] = val
    return tuple(memo[f])


def _fixpoint(left, right, succ, least: bool) -> list[bool]:
    n = len(succ)
    val = [not least] * n
    changed = True
    while changed:
        changed = False
        for i in range(n - 1, -1, -1):
            if least:
                new = right[i] or (left[i] and val[succ[i]])
            else:
                new = right[i] and (left[i] or val[succ[i]])
            if new != val[i]:
                val[i] = new
                changed = True
    return val


@lru_cache(maxsize=None)
def _all_letters(width: int) -> tuple[int, ...]:
    return tuple(range(1 << width))
