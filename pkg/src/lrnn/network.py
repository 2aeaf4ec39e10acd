"""Compile the grounding of template + example into a flat feed-forward network."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import AGG, ATOM, FACT, RULE
from .logic import Atom, GroundFact, GroundRule, Grounding, WeightedClause, WeightedFact, active_ground_rules

KIND_NAMES = {ATOM: "atom", FACT: "fact", RULE: "rule", AGG: "agg"}


class CyclicTemplateError(ValueError):
    pass


@dataclass
class GroundNetwork:
    """Neuron arena in topological order with CSR input lists.

    ``slot`` indexes into ``keys`` (the weights this network reads); example
    facts have slot -1 and take their value from ``const``.
    """

    kinds: np.ndarray
    const: np.ndarray
    slot: np.ndarray
    ptr: np.ndarray
    idx: np.ndarray
    keys: tuple[str, ...]
    labels: list[str]
    atom_nodes: dict[Atom, int]
    queries: tuple[Atom, ...]
    query_nodes: dict[Atom, int]

    @property
    def size(self) -> int:
        return len(self.kinds)

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kinds == kind))

    def inputs(self, n: int) -> list[int]:
        return self.idx[self.ptr[n]:self.ptr[n + 1]].tolist()

    def absent_queries(self) -> list[Atom]:
        return [q for q in self.queries if q not in self.query_nodes]


def build_network(
    template: Sequence[WeightedClause],
    facts: Sequence[WeightedFact],
    queries: Iterable[Atom] = (),
    *,
    prune: bool = False,
    grounding: Grounding | None = None,
) -> GroundNetwork:
    """Build the ground network of ``template`` joined with one example.

    With ``prune`` only the ancestors of the query atoms are kept; query
    outputs and gradients are unchanged by pruning.
    """
    queries = tuple(queries)
    for q in queries:
        if not q.is_ground():
            raise ValueError(f"query {q} is not ground")
    template = list(template)
    g = grounding if grounding is not None else active_ground_rules(template, facts)

    # provisional numbering: atoms, then facts, rules, aggregations
    kinds: list[int] = []
    labels: list[str] = []
    slots: list[str | None] = []
    consts: list[float] = []
    inputs: list[list[int]] = []

    def new(kind: int, label: str, key: str | None = None, value: float = 0.0) -> int:
        kinds.append(kind)
        labels.append(label)
        slots.append(key)
        consts.append(value)
        inputs.append([])
        return len(kinds) - 1

    atom_ids: dict[Atom, int] = {}
    for a in g.model.atoms:
        atom_ids[a] = new(ATOM, str(a))

    fact: GroundFact
    for fact in g.facts:
        f = new(FACT, f"{fact.atom} : {fact.key if fact.key is not None else fact.weight}", fact.key, fact.weight)
        inputs[atom_ids[fact.atom]].append(f)

    agg_ids: dict[tuple[int, Atom], int] = {}
    rule: GroundRule
    for rule in g.rules:
        r = new(RULE, f"{rule.head} <- {', '.join(map(str, rule.body))}", rule.key)
        inputs[r].extend(atom_ids[b] for b in rule.body)
        ak = (rule.source, rule.head)
        if ak not in agg_ids:
            agg_ids[ak] = new(AGG, f"agg[{template[rule.source].key}]({rule.head})", rule.key)
            inputs[atom_ids[rule.head]].append(agg_ids[ak])
        inputs[agg_ids[ak]].append(r)

    if prune:
        roots = [atom_ids[q] for q in queries if q in atom_ids]
    else:
        roots = [atom_ids[q] for q in queries if q in atom_ids] + list(range(len(kinds)))
    order = _postorder(roots, inputs)

    new_id = {old: i for i, old in enumerate(order)}
    keys: dict[str, int] = {}
    slot_arr = np.full(len(order), -1, dtype=np.int64)
    ptr = np.zeros(len(order) + 1, dtype=np.int64)
    flat: list[int] = []
    for i, old in enumerate(order):
        k = slots[old]
        if k is not None:
            slot_arr[i] = keys.setdefault(k, len(keys))
        flat.extend(new_id[j] for j in inputs[old])
        ptr[i + 1] = len(flat)

    atom_nodes = {a: new_id[i] for a, i in atom_ids.items() if i in new_id}
    return GroundNetwork(
        kinds=np.array([kinds[o] for o in order], dtype=np.int8),
        const=np.array([consts[o] for o in order], dtype=np.float64),
        slot=slot_arr,
        ptr=ptr,
        idx=np.array(flat, dtype=np.int64),
        keys=tuple(keys),
        labels=[labels[o] for o in order],
        atom_nodes=atom_nodes,
        queries=queries,
        query_nodes={q: atom_nodes[q] for q in queries if q in atom_nodes},
    )


def _postorder(roots: Iterable[int], inputs: list[list[int]]) -> list[int]:
    state = [0] * len(inputs)  # 0 new, 1 on stack, 2 done
    order: list[int] = []
    for root in roots:
        if state[root]:
            continue
        stack = [(root, 0)]
        state[root] = 1
        while stack:
            node, i = stack[-1]
            ins = inputs[node]
            if i < len(ins):
                stack[-1] = (node, i + 1)
                child = ins[i]
                if state[child] == 1:
                    raise CyclicTemplateError("grounding contains a cycle; recursive templates are not supported")
                if state[child] == 0:
                    state[child] = 1
                    stack.append((child, 0))
            else:
                stack.pop()
                state[node] = 2
                order.append(node)
    return order


def to_dot(net: GroundNetwork, name: str = "lrnn") -> str:
    shapes = {ATOM: "ellipse", FACT: "box", RULE: "diamond", AGG: "hexagon"}
    lines = [f"digraph {name} {{", "  rankdir=LR;"]
    for n in range(net.size):
        kind = int(net.kinds[n])
        label = f"{KIND_NAMES[kind]}: {net.labels[n]}".replace('"', '\\"')
        lines.append(f'  n{n} [label="{label}", shape={shapes[kind]}];')
    for n in range(net.size):
        for j in net.inputs(n):
            lines.append(f"  n{j} -> n{n};")
    lines.append("}")
    return "\n".join(lines) + "\n"
