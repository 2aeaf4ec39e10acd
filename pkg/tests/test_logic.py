import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrnn.logic import (
    Atom, Clause, HeadKind, WeightedClause, WeightedFact, active_ground_rules, compose, least_herbrand_model, unify,
)

from oracles import brute_ground_rules, brute_model, random_program


def A(p, *args):
    return Atom(p, tuple(args))


def test_unify_binds_variables():
    assert unify(A("bond", "X", "Y"), A("bond", "a", "b")) == {"X": "a", "Y": "b"}


def test_unify_clash_on_shared_variable():
    assert unify(A("bond", "X", "X"), A("bond", "a", "b")) is None


def test_unify_predicate_mismatch():
    assert unify(A("p", "X"), A("q", "X")) is None
    assert unify(A("p", "X"), A("p", "X", "Y")) is None


def test_unify_variable_chains_are_resolved():
    theta = unify(A("p", "X", "Y", "X"), A("p", "Y", "Z", "c"))
    assert theta is not None
    assert A("p", "X", "Y", "X").substitute(theta) == A("p", "Y", "Z", "c").substitute(theta)
    assert A("p", "X", "Y", "X").substitute(theta) == A("p", "c", "c", "c")


@given(st.lists(st.sampled_from(["X", "Y", "Z", "a", "b"]), min_size=1, max_size=4),
       st.lists(st.sampled_from(["X", "Y", "Z", "a", "b"]), min_size=1, max_size=4))
def test_unifier_makes_atoms_equal_and_is_symmetric(xs, ys):
    if len(xs) != len(ys):
        return
    s, t = A("p", *xs), A("p", *ys)
    th1, th2 = unify(s, t), unify(t, s)
    assert (th1 is None) == (th2 is None)
    if th1 is not None:
        assert s.substitute(th1) == t.substitute(th1)
        assert s.substitute(th2) == t.substitute(th2)


def test_compose_applies_second_after_first():
    first = {"X": "Y"}
    second = {"Y": "a", "Z": "b"}
    c = compose(first, second)
    atom = A("p", "X", "Y", "Z")
    assert atom.substitute(c) == atom.substitute(first).substitute(second) == A("p", "a", "a", "b")


def test_lhm_one_step():
    prog = [Clause(A("bond", "a", "b")), Clause(A("p", "X", "Y"), (A("bond", "X", "Y"),))]
    assert set(least_herbrand_model(prog).atoms) == {A("bond", "a", "b"), A("p", "a", "b")}


def test_lhm_empty_program():
    assert set(least_herbrand_model([]).atoms) == set()


def test_lhm_transitive_closure():
    prog = [
        Clause(A("e", "a", "b")), Clause(A("e", "b", "c")),
        Clause(A("path", "X", "Y"), (A("e", "X", "Y"),)),
        Clause(A("path", "X", "Z"), (A("e", "X", "Y"), A("path", "Y", "Z"))),
    ]
    expected = {A("e", "a", "b"), A("e", "b", "c"), A("path", "a", "b"), A("path", "b", "c"), A("path", "a", "c")}
    assert set(least_herbrand_model(prog).atoms) == expected


def test_lhm_unbound_head_variable_ranges_over_constants():
    prog = [Clause(A("q", "a")), Clause(A("q", "b")), Clause(A("r", "X"), (A("q", "a"),))]
    assert {a for a in least_herbrand_model(prog).atoms if a.predicate == "r"} == {A("r", "a"), A("r", "b")}


def _wc(clause, w_key=None):
    return WeightedClause(clause, w_key or str(clause), 1, HeadKind.TARGET)


def test_grounding_single_rule():
    rule = _wc(Clause(A("p", "X", "Y"), (A("bond", "X", "Y"),)))
    g = active_ground_rules([rule], [WeightedFact(A("bond", "a", "b"), 1.0)])
    assert [(r.key, r.head, r.body) for r in g.rules] == [(rule.key, A("p", "a", "b"), (A("bond", "a", "b"),))]
    assert [(f.atom, f.key, f.weight) for f in g.facts] == [(A("bond", "a", "b"), None, 1.0)]


def test_grounding_inactive_rule_is_dropped():
    rule = _wc(Clause(A("p", "X"), (A("missing", "X"),)))
    g = active_ground_rules([rule], [WeightedFact(A("bond", "a", "b"), 1.0)])
    assert g.rules == []
    assert len(g.facts) == 1


def test_grounding_two_literal_join():
    rule = _wc(Clause(A("p", "X", "Z"), (A("bond", "X", "Y"), A("bond", "Y", "Z"))))
    facts = [WeightedFact(A("bond", "a", "b")), WeightedFact(A("bond", "b", "c"))]
    g = active_ground_rules([rule], facts)
    assert [(r.head, r.body) for r in g.rules] == [(A("p", "a", "c"), (A("bond", "a", "b"), A("bond", "b", "c")))]


def _check_against_oracle(template, facts):
    model, rules, tfacts = brute_ground_rules(template, facts)
    program = [wc.clause for wc in template] + [Clause(f.atom) for f in facts]
    assert set(least_herbrand_model(program).atoms) == brute_model(program) == model
    g = active_ground_rules(template, facts)
    got = [(r.source, r.head, r.body) for r in g.rules]
    assert len(got) == len(set(got))
    assert set(got) == rules
    assert {(f.atom, f.key) for f in g.facts if f.key is not None} == tfacts
    assert {f.atom for f in g.facts if f.key is None} == {f.atom for f in facts}


@pytest.mark.parametrize("seed", range(0, 200, 10))
def test_grounding_matches_brute_force(seed):
    template, facts = random_program(np.random.default_rng(seed))
    _check_against_oracle(template, facts)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_grounding_matches_brute_force_property(seed):
    template, facts = random_program(np.random.default_rng(seed), max_consts=5, max_rules=6)
    _check_against_oracle(template, facts)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_model_is_monotone_in_facts(seed):
    rng = np.random.default_rng(seed)
    template, facts = random_program(rng, max_consts=5, max_rules=6)
    prog = [wc.clause for wc in template]
    small = set(least_herbrand_model(prog + [Clause(f.atom) for f in facts[: len(facts) // 2]]).atoms)
    big = set(least_herbrand_model(prog + [Clause(f.atom) for f in facts]).atoms)
    assert small <= big
