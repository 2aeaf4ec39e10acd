"""Templates (weighted rule sets), latent predicates and the shared weight store."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .logic import Atom, Clause, HeadKind, WeightedClause, WeightedFact


@dataclass(frozen=True, slots=True)
class LatentPredicate:
    name: str
    layer: int
    index: int
    arity: int


@dataclass(frozen=True, slots=True)
class Example:
    """One learning example: weighted ground facts plus its training queries."""

    name: str
    facts: tuple[WeightedFact, ...]
    queries: tuple[tuple[Atom, float], ...] = ()

    @property
    def label(self) -> int:
        return int(self.queries[0][1] >= 0.5) if self.queries else 0


def clause_key(clause: Clause) -> str:
    return str(clause)


class Template:
    """Ordered set of weighted clauses with a registry of latent predicates."""

    def __init__(self, clauses: Iterable[WeightedClause] = (), latent: Iterable[LatentPredicate] = ()):
        self.clauses: list[WeightedClause] = []
        self._keys: set[str] = set()
        self.latent: dict[str, LatentPredicate] = {lp.name: lp for lp in latent}
        for wc in clauses:
            self.add(wc)

    def add(self, wc: WeightedClause) -> bool:
        if wc.key in self._keys:
            return False
        self._keys.add(wc.key)
        self.clauses.append(wc)
        return True

    def extend(self, clauses: Iterable[WeightedClause]) -> int:
        return sum(self.add(wc) for wc in clauses)

    def copy(self) -> Template:
        return Template(self.clauses, self.latent.values())

    def __iter__(self) -> Iterator[WeightedClause]:
        return iter(self.clauses)

    def __len__(self) -> int:
        return len(self.clauses)

    def __contains__(self, key: str) -> bool:
        return key in self._keys

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Template)
            and self.clauses == other.clauses
            and self.latent == other.latent
        )

    def keys(self) -> list[str]:
        return [wc.key for wc in self.clauses]

    def of_kind(self, kind: HeadKind) -> list[WeightedClause]:
        return [wc for wc in self.clauses if wc.kind == kind]

    def register_latent(self, lp: LatentPredicate) -> None:
        self.latent[lp.name] = lp

    def latent_at(self, layer: int) -> list[LatentPredicate]:
        return sorted((lp for lp in self.latent.values() if lp.layer == layer), key=lambda lp: lp.index)

    def predicate_layer(self, predicate: str) -> int:
        lp = self.latent.get(predicate)
        return lp.layer if lp is not None else 0

    def defined_latent(self) -> list[LatentPredicate]:
        heads = {wc.clause.head.predicate for wc in self.clauses if wc.kind == HeadKind.LATENT}
        return sorted((self.latent[p] for p in heads if p in self.latent), key=lambda lp: (lp.layer, lp.index))

    @property
    def depth(self) -> int:
        """Number of layers, counting the example facts as layer 0."""
        return max((wc.layer for wc in self.clauses), default=0) + 1

    def check_stratified(self) -> list[str]:
        """Return violations of the layering rule (empty when the template is stratified)."""
        problems = []
        for wc in self.clauses:
            for b in wc.clause.body:
                if self.predicate_layer(b.predicate) >= wc.layer:
                    problems.append(f"{wc.key}: body predicate {b.predicate} not below layer {wc.layer}")
            if wc.kind == HeadKind.LATENT:
                lp = self.latent.get(wc.clause.head.predicate)
                if lp is None or lp.layer != wc.layer:
                    problems.append(f"{wc.key}: latent head not registered at layer {wc.layer}")
        return problems


def layer_for_body(template: Template, body: Iterable[Atom]) -> int:
    return max((template.predicate_layer(b.predicate) for b in body), default=0) + 1


@dataclass
class WeightStore:
    """Shared trainable parameters keyed by rule identity."""

    values: dict[str, float] = field(default_factory=dict)
    frozen: set[str] = field(default_factory=set)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def __setitem__(self, key: str, value: float) -> None:
        self.values[key] = float(value)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def __len__(self) -> int:
        return len(self.values)

    def keys(self) -> list[str]:
        return list(self.values)

    def copy(self) -> WeightStore:
        return WeightStore(dict(self.values), set(self.frozen))

    def update(self, values: Mapping[str, float]) -> None:
        for k, v in values.items():
            self[k] = v

    def array(self, keys: Iterable[str]) -> np.ndarray:
        return np.array([self.values[k] for k in keys], dtype=np.float64)

    def init_missing(self, keys: Iterable[str], rng: np.random.Generator, scale: float = 0.5) -> None:
        for k in keys:
            if k not in self.values:
                self.values[k] = float(rng.uniform(-scale, scale))
