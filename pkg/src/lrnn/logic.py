"""First-order layer: atoms, definite clauses, unification and bottom-up grounding.

Terms are plain strings.  Following the Prolog convention, a term whose first
character is uppercase (or ``_``) is a variable, anything else is a constant.
There are no function symbols, so the Herbrand base of any finite program is
finite and every fixpoint computation here terminates.
"""

from __future__ import annotations

import enum
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

Substitution = dict[str, str]


def is_variable(term: str) -> bool:
    return term[:1].isupper() or term[:1] == "_"


@dataclass(frozen=True, slots=True)
class Atom:
    predicate: str
    args: tuple[str, ...] = ()

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def signature(self) -> tuple[str, int]:
        return self.predicate, len(self.args)

    def is_ground(self) -> bool:
        return not any(is_variable(t) for t in self.args)

    def variables(self) -> list[str]:
        seen: list[str] = []
        for t in self.args:
            if is_variable(t) and t not in seen:
                seen.append(t)
        return seen

    def substitute(self, theta: Mapping[str, str]) -> Atom:
        if not theta:
            return self
        return Atom(self.predicate, tuple(theta.get(t, t) for t in self.args))

    def __str__(self) -> str:
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(self.args)})"


@dataclass(frozen=True, slots=True)
class Clause:
    """Definite clause ``head <- body``; an empty body makes it a fact."""

    head: Atom
    body: tuple[Atom, ...] = ()

    @property
    def is_fact(self) -> bool:
        return not self.body

    def variables(self) -> list[str]:
        seen: list[str] = []
        for atom in (self.head, *self.body):
            for v in atom.variables():
                if v not in seen:
                    seen.append(v)
        return seen

    def substitute(self, theta: Mapping[str, str]) -> Clause:
        return Clause(self.head.substitute(theta), tuple(b.substitute(theta) for b in self.body))

    def rename_apart(self, suffix: str) -> Clause:
        return self.substitute({v: f"{v}_{suffix}" for v in self.variables()})

    def __str__(self) -> str:
        if not self.body:
            return str(self.head)
        return f"{self.head} <- {', '.join(map(str, self.body))}"


class HeadKind(str, enum.Enum):
    DATASET = "dataset"
    LATENT = "latent"
    TARGET = "target"


@dataclass(frozen=True, slots=True)
class WeightedClause:
    clause: Clause
    key: str
    layer: int = 0
    kind: HeadKind = HeadKind.TARGET


@dataclass(frozen=True, slots=True)
class WeightedFact:
    """Ground fact of an example; its weight is given, never learned."""

    atom: Atom
    weight: float = 1.0


def _walk(term: str, theta: Mapping[str, str]) -> str:
    while term in theta:
        term = theta[term]
    return term


def unify(a: Atom, b: Atom, theta: Mapping[str, str] | None = None) -> Substitution | None:
    """Most general unifier of two atoms, or None.

    No occurs check is needed without function symbols.  The result is fully
    resolved, so applying it once is the same as applying it repeatedly.
    """
    if a.predicate != b.predicate or len(a.args) != len(b.args):
        return None
    bindings = dict(theta or {})
    for s, t in zip(a.args, b.args):
        s, t = _walk(s, bindings), _walk(t, bindings)
        if s == t:
            continue
        if is_variable(s):
            bindings[s] = t
        elif is_variable(t):
            bindings[t] = s
        else:
            return None
    return {v: _walk(v, bindings) for v in bindings}


def compose(first: Mapping[str, str], second: Mapping[str, str]) -> Substitution:
    """Substitution equivalent to applying ``first`` and then ``second``."""
    out = {v: second.get(t, t) for v, t in first.items()}
    for v, t in second.items():
        out.setdefault(v, t)
    return {v: t for v, t in out.items() if v != t}


def match(pattern: Atom, ground: Atom, theta: Mapping[str, str]) -> Substitution | None:
    """One-way matching of ``pattern`` onto a ground atom, extending ``theta``."""
    if pattern.predicate != ground.predicate or len(pattern.args) != len(ground.args):
        return None
    out = None
    for p, g in zip(pattern.args, ground.args):
        if is_variable(p):
            bound = (out or theta).get(p)
            if bound is None:
                if out is None:
                    out = dict(theta)
                out[p] = g
            elif bound != g:
                return None
        elif p != g:
            return None
    return dict(theta) if out is None else out


class AtomIndex:
    """Ground atoms indexed by predicate and by (predicate, first argument)."""

    def __init__(self, atoms: Iterable[Atom] = ()):
        self.atoms: list[Atom] = []
        self._set: set[Atom] = set()
        self._by_pred: dict[tuple[str, int], list[Atom]] = defaultdict(list)
        self._by_first: dict[tuple[str, int, str], list[Atom]] = defaultdict(list)
        for a in atoms:
            self.add(a)

    def add(self, atom: Atom) -> bool:
        if atom in self._set:
            return False
        self._set.add(atom)
        self.atoms.append(atom)
        self._by_pred[atom.signature].append(atom)
        if atom.args:
            self._by_first[(atom.predicate, len(atom.args), atom.args[0])].append(atom)
        return True

    def __contains__(self, atom: Atom) -> bool:
        return atom in self._set

    def __len__(self) -> int:
        return len(self.atoms)

    def candidates(self, pattern: Atom, theta: Mapping[str, str]) -> list[Atom]:
        if pattern.args:
            first = pattern.args[0]
            first = theta.get(first, first) if is_variable(first) else first
            if not is_variable(first):
                return self._by_first.get((pattern.predicate, len(pattern.args), first), [])
        return self._by_pred.get(pattern.signature, [])


def solve(
    body: Sequence[Atom],
    index: AtomIndex,
    theta: Substitution | None = None,
    *,
    delta: AtomIndex | None = None,
    delta_pos: int = -1,
) -> Iterator[Substitution]:
    """Enumerate substitutions grounding ``body`` inside ``index``.

    With ``delta`` given, the literal at ``delta_pos`` is matched against it
    instead (semi-naive evaluation) and is joined first.
    """
    order = list(range(len(body)))
    if delta is not None:
        order.remove(delta_pos)
        order.insert(0, delta_pos)

    def rec(i: int, th: Substitution) -> Iterator[Substitution]:
        if i == len(order):
            yield th
            return
        pos = order[i]
        src = delta if (delta is not None and pos == delta_pos) else index
        lit = body[pos]
        for g in src.candidates(lit, th):
            nxt = match(lit, g, th)
            if nxt is not None:
                yield from rec(i + 1, nxt)

    yield from rec(0, dict(theta or {}))


def herbrand_universe(clauses: Iterable[Clause]) -> list[str]:
    seen: dict[str, None] = {}
    for c in clauses:
        for atom in (c.head, *c.body):
            for t in atom.args:
                if not is_variable(t):
                    seen.setdefault(t)
    return list(seen)


def _head_instances(head: Atom, theta: Mapping[str, str], universe: Sequence[str]) -> Iterator[tuple[Atom, Substitution]]:
    """Ground the head, ranging unbound head variables over the universe."""
    free = [v for v in head.variables() if v not in theta]
    if not free:
        yield head.substitute(theta), dict(theta)
        return
    for values in itertools.product(universe, repeat=len(free)):
        th = dict(theta)
        th.update(zip(free, values))
        yield head.substitute(th), th


def least_herbrand_model(program: Iterable[Clause]) -> AtomIndex:
    """Least fixpoint of the immediate consequence operator (semi-naive)."""
    program = list(program)
    universe = herbrand_universe(program)
    model = AtomIndex()
    delta: list[Atom] = []
    for c in program:
        if c.is_fact:
            for h, _ in _head_instances(c.head, {}, universe):
                if model.add(h):
                    delta.append(h)
    rules = [c for c in program if c.body]
    while delta:
        delta_index = AtomIndex(delta)
        fresh: list[Atom] = []
        for rule in rules:
            for pos in range(len(rule.body)):
                for theta in solve(rule.body, model, delta=delta_index, delta_pos=pos):
                    for h, _ in _head_instances(rule.head, theta, universe):
                        if model.add(h):
                            fresh.append(h)
        delta = fresh
    return model


@dataclass(frozen=True, slots=True)
class GroundRule:
    """Active ground instance of a template clause."""

    source: int
    key: str
    head: Atom
    body: tuple[Atom, ...]


@dataclass(frozen=True, slots=True)
class GroundFact:
    atom: Atom
    key: str | None
    weight: float


@dataclass
class Grounding:
    facts: list[GroundFact] = field(default_factory=list)
    rules: list[GroundRule] = field(default_factory=list)
    model: AtomIndex = field(default_factory=AtomIndex)


def active_ground_rules(template: Sequence[WeightedClause], facts: Sequence[WeightedFact]) -> Grounding:
    """Ground ``template`` together with an example, keeping only active rules.

    A ground rule is active when all of its body atoms lie in the least
    Herbrand model of the combined program.  Fact weights play no role here.
    """
    program = [wc.clause for wc in template] + [Clause(f.atom) for f in facts]
    model = least_herbrand_model(program)
    universe = herbrand_universe(program)
    out = Grounding(model=model)
    for f in facts:
        out.facts.append(GroundFact(f.atom, None, float(f.weight)))
    seen: set[tuple[int, Atom, tuple[Atom, ...]]] = set()
    for i, wc in enumerate(template):
        c = wc.clause
        if c.is_fact:
            for h, _ in _head_instances(c.head, {}, universe):
                out.facts.append(GroundFact(h, wc.key, 0.0))
            continue
        for theta in solve(c.body, model):
            body = tuple(b.substitute(theta) for b in c.body)
            for h, _ in _head_instances(c.head, theta, universe):
                ident = (i, h, body)
                if ident not in seen:
                    seen.add(ident)
                    out.rules.append(GroundRule(i, wc.key, h, body))
    return out
