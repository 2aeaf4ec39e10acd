import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from lrnn import data
from lrnn.data import DataError, ParseError
from lrnn.logic import Atom, Clause, HeadKind, WeightedClause, WeightedFact
from lrnn.structure import SearchConfig, create_layer1_rules, invent_predicates, structure_learn
from lrnn.template import Example, LatentPredicate, Template, WeightStore, clause_key
from lrnn.training import TrainConfig, train_weights


def A(p, *args):
    return Atom(p, tuple(args))


def test_parse_weighted_fact():
    (ex,) = data.parse_examples_text("example m\n1.0 bond(a1,a2).\n")
    assert ex.facts == (WeightedFact(A("bond", "a1", "a2"), 1.0),)


def test_parse_default_weight_and_query():
    (ex,) = data.parse_examples_text("example m\nbond(a1,a2).  % trailing comment\nquery pos 1\n")
    assert ex.facts[0].weight == 1.0
    assert ex.queries == ((A("pos"), 1.0),)
    assert ex.label == 1


def test_parse_error_names_line():
    with pytest.raises(ParseError) as err:
        data.parse_examples_text("example m\nc(a).\nbond(a1.\n", source="f.txt")
    assert err.value.line == 3
    assert "f.txt:3:" in str(err.value)


@pytest.mark.parametrize("text", [
    "c(a).\n",                              # content before header
    "example m\nc(X).\n",                   # non-ground fact
    "example m\nquery pos(X) 1\n",          # non-ground query
    "example m\nquery pos 2\n",             # target outside [0, 1]
    "example m\nc(a).\nc(a,b).\n",          # arity clash
    "example m\nC(a).\n",                   # variable as predicate
])
def test_parse_rejects(text):
    with pytest.raises(ParseError):
        data.parse_examples_text(text)


def test_strict_unary_rejects_attribute_values():
    text = "example m\natom_type(a1, c).\nc(a2).\n"
    assert data.parse_examples_text(text)
    with pytest.raises(DataError):
        data.parse_examples_text(text, strict_unary=True)


def test_examples_round_trip():
    exs = data.generate_planted_dataset(5, 12)
    assert data.parse_examples_text(data.format_examples(exs, "header")) == exs


def _grid(preds, d):
    exs = [Example("e", tuple(WeightedFact(A(p, "x")) for p in preds), ((A("t"), 1.0),))]
    t = Template()
    t.extend(create_layer1_rules(exs, d, t))
    store = WeightStore()
    store.init_missing(t.keys(), np.random.default_rng(0))
    return t, store


def test_template_round_trip_grid():
    t, store = _grid(["c", "h"], 2)
    text = data.serialize_template(t, store)
    assert len(text.splitlines()) == 4
    t2, s2 = data.parse_template(text)
    assert t2 == t
    assert s2.values == store.values


def test_empty_template_round_trip():
    assert data.serialize_template(Template(), WeightStore()) == ""
    t, s = data.parse_template("")
    assert len(t) == 0 and len(s) == 0


def test_invented_rules_round_trip_with_layers():
    t = Template()
    t.register_latent(LatentPredicate("alpha1_2", 1, 2, 1))
    t.register_latent(LatentPredicate("alpha2_5", 2, 5, 1))
    best = Clause(A("p", "A", "B"), (A("bond", "A", "B"), A("alpha1_2", "A"), A("alpha2_5", "B")))
    t.add(WeightedClause(best, clause_key(best), 3, HeadKind.TARGET))
    t.extend(invent_predicates(best, t, SearchConfig(d=3)))
    store = WeightStore()
    store.init_missing(t.keys(), np.random.default_rng(1))
    t2, s2 = data.parse_template(data.serialize_template(t, store))
    assert t2 == t
    assert [wc.layer for wc in t2] == [3] * 7
    assert s2.values == store.values


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4, max_size=4))
def test_template_weights_round_trip_exactly(ws):
    t, _ = _grid(["c", "o"], 2)
    store = WeightStore(dict(zip(t.keys(), ws)))
    _, s2 = data.parse_template(data.serialize_template(t, store))
    assert s2.values == store.values


def test_template_parse_errors():
    with pytest.raises(ParseError):
        data.parse_template("0.5 p(X) <- q(X)\n")
    with pytest.raises(ParseError):
        data.parse_template("0.5 :: p(X) <- q(X)\n0.1 :: p(X) <- q(X)\n")
    with pytest.raises(ParseError):
        data.parse_template("0.5 :: p(X) <- q(X) @kind=weird\n")


def test_generator_is_deterministic(tmp_path):
    a = data.format_examples(data.generate_planted_dataset(7, 30))
    b = data.format_examples(data.generate_planted_dataset(7, 30))
    assert a == b
    assert a != data.format_examples(data.generate_planted_dataset(8, 30))


def _has_co_bond(ex):
    types = {f.atom.args[0]: f.atom.predicate for f in ex.facts if f.atom.arity == 1}
    return any(f.atom.predicate == "bond" and types.get(f.atom.args[0]) == "c" and types.get(f.atom.args[1]) == "o"
               for f in ex.facts)


def test_planted_labels_match_pattern():
    exs = data.generate_planted_dataset(0, 200)
    assert sum(ex.label for ex in exs) == 100
    for ex in exs:
        assert _has_co_bond(ex) == bool(ex.label)


def test_bonds_are_symmetric():
    for ex in data.generate_planted_dataset(1, 20):
        bonds = {f.atom.args for f in ex.facts if f.atom.predicate == "bond"}
        assert all((b, a) in bonds for a, b in bonds)


def test_shuffled_labels_are_independent_of_pattern():
    exs = data.generate_planted_dataset(3, 400, shuffle_labels=True)
    table = np.zeros((2, 2))
    for ex in exs:
        table[int(_has_co_bond(ex)), ex.label] += 1
    assert sum(ex.label for ex in exs) == 200
    assert chi2_contingency(table)[1] > 0.01


def test_unbalanceable_pattern_is_reported():
    with pytest.raises(DataError):
        data.generate_planted_dataset(0, 20, pattern="bond(X,Y), zz(X)")


def _labelled(n):
    return [Example(f"e{i}", (), ((A("pos"), float(i % 2)),)) for i in range(n)]


def test_leave_one_out_folds():
    folds = data.stratified_folds(_labelled(10), 10, 0)
    assert sorted(len(f) for f in folds) == [1] * 10
    assert sorted(i for f in folds for i in f) == list(range(10))


def test_folds_are_stratified_and_seeded():
    exs = _labelled(20)
    folds = data.stratified_folds(exs, 5, 3)
    assert folds == data.stratified_folds(exs, 5, 3)
    for f in folds:
        assert sum(exs[i].label for i in f) == 2


def test_fold_count_errors():
    with pytest.raises(DataError):
        data.stratified_folds(_labelled(4), 1, 0)
    with pytest.raises(DataError):
        data.stratified_folds(_labelled(4), 5, 0)


def test_embedding_rows_and_values(tmp_path):
    t, store = _grid(["c", "h", "o"], 2)
    path = tmp_path / "emb.csv"
    for it in range(3):
        data.export_embeddings(t, store, it, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iteration", "predicate", "dim1", "dim2"]
    assert len(rows) - 1 == 9
    for it, pred, *vals in rows[1:]:
        expected = [store[f"alpha1_{j}(X) <- {pred}(X)"] for j in (1, 2)]
        assert [float(v) for v in vals] == expected


def _snapshots(path):
    snaps = {}
    for it, pred, *vals in list(csv.reader(path.open()))[1:]:
        snaps.setdefault(it, []).append([float(v) for v in vals])
    return snaps


def test_embeddings_follow_retraining(tmp_path):
    exs = data.generate_planted_dataset(2, 30)
    t, store = _grid(["c", "h", "n", "o"], 2)
    rule = Clause(A("pos"), (A("alpha1_1", "X"), A("bond", "X", "Y"), A("o", "Y")))
    t.add(WeightedClause(rule, clause_key(rule), 2, HeadKind.TARGET))
    store[clause_key(rule)] = 0.5
    path = tmp_path / "emb.csv"
    data.export_embeddings(t, store, 0, path)
    trained = train_weights(t.clauses, exs, TrainConfig(epochs=20), store=store)
    data.export_embeddings(t, trained, 1, path)
    snaps = _snapshots(path)
    assert snaps["0"] != snaps["1"]
    assert snaps["1"][0] == [trained["alpha1_1(X) <- c(X)"], trained["alpha1_2(X) <- c(X)"]]


def test_embedding_snapshots_differ_exactly_when_layer1_weights_change(tmp_path):
    exs = data.generate_planted_dataset(2, 30)
    path = tmp_path / "emb.csv"
    stores = []

    def hook(it, t, s):
        data.export_embeddings(t, s, it, path)
        stores.append({wc.key: s[wc.key] for wc in t if wc.layer == 1 and wc.kind == HeadKind.LATENT})

    structure_learn(exs, SearchConfig(max_iterations=2, train=TrainConfig(epochs=40), d=2), hook)
    snaps = _snapshots(path)
    its = sorted(snaps)
    for (a, b), (sa, sb) in zip(zip(its, its[1:]), zip(stores, stores[1:])):
        assert (snaps[a] != snaps[b]) == (sa != sb)


def test_stats_layer1_only():
    t, _ = _grid(["c", "h", "o"], 2)
    assert data.template_stats(t) == data.TemplateStats(6, 0, 0.0, 2)


def test_stats_after_one_iteration():
    t, _ = _grid(["c", "h", "o"], 2)
    rule = Clause(A("pos"), (A("bond", "X", "Y"), A("c", "X"), A("o", "Y")))
    t.add(WeightedClause(rule, clause_key(rule), 1, HeadKind.TARGET))
    t.extend(invent_predicates(rule, t, SearchConfig(d=2)))
    s = data.template_stats(t)
    assert (s.rules, s.patterns, s.avg_pattern_length) == (6 + 1 + 4, 1, 3.0)
    assert s.depth == 3


def test_stats_example2_depth():
    t = Template()
    t.register_latent(LatentPredicate("alpha1_2", 1, 2, 1))
    t.register_latent(LatentPredicate("alpha2_5", 2, 5, 1))
    best = Clause(A("p", "A", "B"), (A("bond", "A", "B"), A("alpha1_2", "A"), A("alpha2_5", "B")))
    t.extend(invent_predicates(best, t, SearchConfig(d=3)))
    assert data.template_stats(t).depth == 4


def test_csv_writers_are_stable():
    out = io.StringIO()
    data.write_history_csv([(1, 0.25, 0.5), (2, 0.125, 1.0)], out)
    assert out.getvalue() == "epoch,train_loss,train_accuracy\n1,0.25,0.500000\n2,0.125,1.000000\n"
