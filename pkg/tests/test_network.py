import numpy as np
import pytest

from lrnn.autodiff import AGG, ATOM, FACT, RULE
from lrnn.logic import Atom, Clause, HeadKind, WeightedClause, WeightedFact
from lrnn.network import CyclicTemplateError, build_network, to_dot


def A(p, *args):
    return Atom(p, tuple(args))


def rule(head, *body):
    c = Clause(head, tuple(body))
    return WeightedClause(c, str(c), 1, HeadKind.TARGET)


P_BOND = rule(A("p", "X", "Y"), A("bond", "X", "Y"))


def test_single_rule_neuron_counts():
    net = build_network([P_BOND], [WeightedFact(A("bond", "a", "b"))], [A("p", "a", "b")])
    assert (net.count(ATOM), net.count(FACT), net.count(RULE), net.count(AGG)) == (2, 1, 1, 1)
    assert net.keys == (P_BOND.key,)


def test_facts_only():
    net = build_network([], [WeightedFact(A("q", "a"))], [A("q", "a")])
    assert (net.count(ATOM), net.count(FACT), net.count(RULE), net.count(AGG)) == (1, 1, 0, 0)


def test_one_aggregation_per_head_grounding():
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("bond", "c", "d"))]
    net = build_network([P_BOND], facts)
    assert net.count(AGG) == 2


def test_aggregation_collects_all_body_groundings():
    r = rule(A("q", "X"), A("bond", "X", "Y"))
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("bond", "a", "c"))]
    net = build_network([r], facts, [A("q", "a")])
    assert net.count(RULE) == 2 and net.count(AGG) == 1
    agg = int(np.flatnonzero(net.kinds == AGG)[0])
    assert len(net.inputs(agg)) == 2


def test_topological_order():
    r2 = rule(A("s", "X"), A("q", "X"), A("c", "X"))
    r1 = rule(A("q", "X"), A("bond", "X", "Y"))
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("c", "a"))]
    net = build_network([r2, r1], facts, [A("s", "a")])
    for n in range(net.size):
        assert all(j < n for j in net.inputs(n))


def test_shared_key_across_groundings():
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("bond", "b", "c"))]
    net = build_network([P_BOND], facts)
    rule_slots = set(net.slot[net.kinds == RULE].tolist()) | set(net.slot[net.kinds == AGG].tolist())
    assert rule_slots == {0}
    assert net.keys == (P_BOND.key,)


def test_build_is_deterministic():
    r = rule(A("q", "X"), A("bond", "X", "Y"), A("c", "Y"))
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("c", "b")), WeightedFact(A("bond", "b", "a"))]
    n1 = build_network([r, P_BOND], facts, [A("q", "a")])
    n2 = build_network([r, P_BOND], facts, [A("q", "a")])
    assert n1.labels == n2.labels
    for f in ("kinds", "const", "slot", "ptr", "idx"):
        assert np.array_equal(getattr(n1, f), getattr(n2, f))


def test_prune_keeps_only_ancestors():
    r = rule(A("q", "X"), A("c", "X"))
    facts = [WeightedFact(A("c", "a")), WeightedFact(A("h", "b")), WeightedFact(A("c", "z"))]
    full = build_network([r], facts, [A("q", "a")])
    pruned = build_network([r], facts, [A("q", "a")], prune=True)
    assert pruned.size < full.size
    assert set(pruned.atom_nodes) == {A("q", "a"), A("c", "a")}


def test_absent_query():
    net = build_network([P_BOND], [WeightedFact(A("bond", "a", "b"))], [A("p", "b", "a")])
    assert net.absent_queries() == [A("p", "b", "a")]


def test_nonground_query_rejected():
    with pytest.raises(ValueError):
        build_network([P_BOND], [], [A("p", "X", "b")])


def test_cycle_detected():
    cyc = [rule(A("p", "X"), A("q", "X")), rule(A("q", "X"), A("p", "X"))]
    with pytest.raises(CyclicTemplateError):
        build_network(cyc, [WeightedFact(A("p", "a"))])


def test_recursive_template_with_acyclic_grounding():
    path = [
        rule(A("path", "X", "Y"), A("e", "X", "Y")),
        rule(A("path", "X", "Z"), A("e", "X", "Y"), A("path", "Y", "Z")),
    ]
    net = build_network(path, [WeightedFact(A("e", "a", "b")), WeightedFact(A("e", "b", "c"))], [A("path", "a", "c")])
    assert A("path", "a", "c") in net.query_nodes


def test_dot_output():
    net = build_network([P_BOND], [WeightedFact(A("bond", "a", "b"))], [A("p", "a", "b")])
    dot = to_dot(net)
    assert dot.startswith("digraph lrnn {")
    assert dot.count("->") == len(net.idx)
    assert "p(a,b)" in dot
