"""Text formats, synthetic molecule generator, cross-validation and reporting.

Example files::

    % comment
    example m0
    1.0 bond(a0,a1).
    c(a0).
    query pos 1

Template files hold one weighted clause per line, optionally annotated::

    @latent alpha1_1 layer=1 index=1 arity=1
    0.25 :: alpha1_1(X) <- c(X) @layer=1 @kind=latent
"""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .logic import Atom, Clause, HeadKind, WeightedClause, WeightedFact, AtomIndex, solve
from .template import Example, LatentPredicate, Template, WeightStore, clause_key, layer_for_body


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, msg: str, line: int | None = None, source: str = "<text>"):
        self.line = line
        super().__init__(f"{source}:{line}: {msg}" if line is not None else f"{source}: {msg}")


_NAME = r"[A-Za-z0-9_][A-Za-z0-9_']*"
_ATOM_RE = re.compile(rf"\s*({_NAME})\s*(?:\(\s*({_NAME}(?:\s*,\s*{_NAME})*)\s*\))?\s*")
_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
_FACT_RE = re.compile(rf"^(?:({_NUM})\s+)?(.+?)\s*\.$")
_QUERY_RE = re.compile(rf"^query\s+(.+?)\s+({_NUM})$")
_EXAMPLE_RE = re.compile(r"^example\s+(\S+)$")


def parse_atom(text: str, line: int | None = None, source: str = "<text>") -> Atom:
    m = _ATOM_RE.fullmatch(text)
    if not m or m.group(1)[0].isupper() or m.group(1)[0] == "_":
        raise ParseError(f"malformed atom {text.strip()!r}", line, source)
    args = tuple(a.strip() for a in m.group(2).split(",")) if m.group(2) else ()
    return Atom(m.group(1), args)


def _split_atoms(text: str, line: int | None, source: str) -> list[Atom]:
    atoms, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            atoms.append(parse_atom("".join(cur), line, source))
            cur = []
        else:
            cur.append(ch)
        if depth < 0:
            raise ParseError("unbalanced parentheses", line, source)
    if depth != 0:
        raise ParseError("unbalanced parentheses", line, source)
    atoms.append(parse_atom("".join(cur), line, source))
    return atoms


def _strip(line: str) -> str:
    return line.split("%", 1)[0].strip()


class _Arity:
    def __init__(self, source: str):
        self.seen: dict[str, int] = {}
        self.source = source

    def check(self, atom: Atom, line: int) -> None:
        n = self.seen.setdefault(atom.predicate, atom.arity)
        if n != atom.arity:
            raise ParseError(f"predicate {atom.predicate} used with arity {atom.arity} and {n}", line, self.source)


def parse_examples_text(text: str, source: str = "<text>", strict_unary: bool = False) -> list[Example]:
    examples: list[Example] = []
    name: str | None = None
    facts: list[WeightedFact] = []
    queries: list[tuple[Atom, float]] = []
    arity = _Arity(source)

    def flush():
        if name is not None:
            examples.append(Example(name, tuple(facts), tuple(queries)))

    for no, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        if m := _EXAMPLE_RE.match(line):
            flush()
            name, facts, queries = m.group(1), [], []
            continue
        if name is None:
            raise ParseError("content before the first 'example' header", no, source)
        if m := _QUERY_RE.match(line):
            q = parse_atom(m.group(1), no, source)
            if not q.is_ground():
                raise ParseError(f"query {q} is not ground", no, source)
            t = float(m.group(2))
            if not 0.0 <= t <= 1.0:
                raise ParseError(f"target {t} outside [0, 1]", no, source)
            arity.check(q, no)
            queries.append((q, t))
            continue
        m = _FACT_RE.match(line)
        if not m:
            raise ParseError(f"cannot parse {line!r}", no, source)
        atom = parse_atom(m.group(2), no, source)
        if not atom.is_ground():
            raise ParseError(f"fact {atom} is not ground", no, source)
        arity.check(atom, no)
        facts.append(WeightedFact(atom, float(m.group(1)) if m.group(1) else 1.0))
    flush()
    if strict_unary:
        for ex in examples:
            check_unary_attributes(ex)
    return examples


def check_unary_attributes(ex: Example) -> None:
    """Reject attribute-value facts such as color(o,red); use red(o) instead.

    A constant counts as an attribute value when it is never an argument of a
    unary fact and occupies a single (predicate, position) slot only.
    """
    slots: dict[str, set[tuple[str, int]]] = {}
    for f in ex.facts:
        for i, t in enumerate(f.atom.args):
            slots.setdefault(t, set()).add((f.atom.predicate, i if f.atom.arity > 1 else -1))
    for f in ex.facts:
        if f.atom.arity < 2:
            continue
        for t in f.atom.args:
            s = slots[t]
            if len(s) == 1 and not any(i == -1 for _, i in s):
                raise DataError(f"example {ex.name}: {f.atom} looks like an attribute-value fact; "
                                f"encode the value as a unary predicate")


def parse_examples(path: str | os.PathLike, strict_unary: bool = False) -> list[Example]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    return parse_examples_text(path.read_text(encoding="utf-8"), str(path), strict_unary)


def format_examples(examples: Iterable[Example], header: str | None = None) -> str:
    out = io.StringIO()
    if header:
        for h in header.splitlines():
            out.write(f"% {h}\n")
    for ex in examples:
        out.write(f"example {ex.name}\n")
        for f in ex.facts:
            out.write(f"{f.atom}.\n" if f.weight == 1.0 else f"{f.weight!r} {f.atom}.\n")
        for q, t in ex.queries:
            out.write(f"query {q} {t:g}\n")
    return out.getvalue()


# ---------------------------------------------------------------- templates

_TEMPLATE_RE = re.compile(rf"^({_NUM})\s*::\s*(.+?)(?:\s*<-\s*(.+?))?\s*\.?((?:\s+@\w+=\S+)*)\s*$")
_LATENT_RE = re.compile(rf"^@latent\s+({_NAME})\s+layer=(\d+)\s+index=(\d+)\s+arity=(\d+)$")


def _implied_latent(template: Template) -> dict[str, LatentPredicate]:
    """Latent predicates as the parser reconstructs them from annotated rule lines alone."""
    out: dict[str, LatentPredicate] = {}
    per_layer: dict[int, int] = {}
    for wc in template:
        head = wc.clause.head
        if wc.kind == HeadKind.LATENT and head.predicate not in out:
            per_layer[wc.layer] = per_layer.get(wc.layer, 0) + 1
            out[head.predicate] = LatentPredicate(head.predicate, wc.layer, per_layer[wc.layer], head.arity)
    return out


def serialize_template(template: Template, store: WeightStore) -> str:
    """One line per clause; ``@latent`` lines only for entries the clauses do not imply."""
    lines = []
    implied = _implied_latent(template)
    for lp in sorted(template.latent.values(), key=lambda lp: (lp.layer, lp.index, lp.name)):
        if implied.get(lp.name) != lp:
            lines.append(f"@latent {lp.name} layer={lp.layer} index={lp.index} arity={lp.arity}")
    for wc in template:
        c = wc.clause
        text = f"{store[wc.key]!r} :: {c.head}"
        if c.body:
            text += f" <- {', '.join(map(str, c.body))}"
        lines.append(f"{text} @layer={wc.layer} @kind={wc.kind.value}")
    return "".join(line + "\n" for line in lines)


def parse_template(text: str, source: str = "<template>") -> tuple[Template, WeightStore]:
    template, store = Template(), WeightStore()
    pending: list[tuple[int, Clause, float, dict[str, str]]] = []
    arity = _Arity(source)
    for no, raw in enumerate(text.splitlines(), 1):
        line = _strip(raw)
        if not line:
            continue
        if m := _LATENT_RE.match(line):
            template.register_latent(LatentPredicate(m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))))
            continue
        m = _TEMPLATE_RE.match(line)
        if not m:
            raise ParseError(f"cannot parse template line {line!r}", no, source)
        head = parse_atom(m.group(2), no, source)
        body = tuple(_split_atoms(m.group(3), no, source)) if m.group(3) else ()
        for a in (head, *body):
            arity.check(a, no)
        notes = dict(n.split("=", 1) for n in m.group(4).split()) if m.group(4) else {}
        notes = {k.lstrip("@"): v for k, v in notes.items()}
        pending.append((no, Clause(head, body), float(m.group(1)), notes))
    declared = set(template.latent)
    for no, clause, w, notes in pending:
        try:
            kind = HeadKind(notes["kind"]) if "kind" in notes else (
                HeadKind.LATENT if clause.head.predicate in template.latent
                else HeadKind.DATASET if clause.is_fact else HeadKind.TARGET)
        except ValueError:
            raise ParseError(f"unknown kind {notes['kind']!r}", no, source) from None
        if "layer" in notes:
            layer = int(notes["layer"])
        elif kind == HeadKind.LATENT:
            if clause.head.predicate not in template.latent:
                raise ParseError(f"latent rule {clause} needs @layer= or an @latent declaration", no, source)
            layer = template.latent[clause.head.predicate].layer
        else:
            layer = layer_for_body(template, clause.body) if clause.body else 0
        wc = WeightedClause(clause, clause_key(clause), layer, kind)
        if not template.add(wc):
            raise ParseError(f"duplicate clause {clause}", no, source)
        store[wc.key] = w
    for name, lp in _implied_latent(template).items():
        if name not in declared:
            template.register_latent(lp)
    return template, store


def load_template(path: str | os.PathLike) -> tuple[Template, WeightStore]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    return parse_template(path.read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------- synthetic molecules

DEFAULT_PATTERN = "bond(X,Y), c(X), o(Y)"
ATOM_TYPES = ("c", "h", "o", "n")
TYPE_P = (0.4, 0.3, 0.15, 0.15)


def parse_pattern(text: str) -> tuple[Atom, ...]:
    return tuple(_split_atoms(text, None, "<pattern>"))


def pattern_matches(pattern: Sequence[Atom], facts: Iterable[WeightedFact]) -> bool:
    index = AtomIndex(f.atom for f in facts)
    return next(solve(pattern, index), None) is not None


def random_molecule(rng: np.random.Generator, name: str, min_atoms: int = 5, max_atoms: int = 12) -> list[WeightedFact]:
    n = int(rng.integers(min_atoms, max_atoms + 1))
    types = rng.choice(len(ATOM_TYPES), size=n, p=TYPE_P)
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    for _ in range(int(rng.integers(0, 3))):
        i, j = sorted(int(x) for x in rng.choice(n, size=2, replace=False))
        edges.add((i, j))
    facts = [WeightedFact(Atom(ATOM_TYPES[t], (f"a{i}",))) for i, t in enumerate(types)]
    for i, j in sorted(edges):
        facts.append(WeightedFact(Atom("bond", (f"a{i}", f"a{j}"))))
        facts.append(WeightedFact(Atom("bond", (f"a{j}", f"a{i}"))))
    return facts


def generate_planted_dataset(seed: int, n: int, pattern: str | Sequence[Atom] = DEFAULT_PATTERN,
                             target: str = "pos", shuffle_labels: bool = False) -> list[Example]:
    """Random molecule graphs labelled by whether ``pattern`` matches; classes balanced exactly."""
    body = parse_pattern(pattern) if isinstance(pattern, str) else tuple(pattern)
    rng = np.random.default_rng(seed)
    quota = {1: n // 2, 0: n - n // 2}
    kept: list[tuple[list[WeightedFact], int]] = []
    for _ in range(10 * n):
        if not any(quota.values()):
            break
        facts = random_molecule(rng, "")
        y = int(pattern_matches(body, facts))
        if quota[y]:
            quota[y] -= 1
            kept.append((facts, y))
    if any(quota.values()):
        raise DataError(f"could not balance classes within {10 * n} molecules; pattern too rare or too common")
    labels = [y for _, y in kept]
    if shuffle_labels:
        labels = [labels[i] for i in rng.permutation(len(labels))]
    return [Example(f"m{i}", tuple(facts), ((Atom(target), float(y)),)) for i, ((facts, _), y) in enumerate(zip(kept, labels))]


# ---------------------------------------------------------------- cross-validation

def stratified_folds(examples: Sequence[Example], folds: int, seed: int) -> list[list[int]]:
    if folds < 2:
        raise DataError("need at least 2 folds")
    if folds > len(examples):
        raise DataError(f"{folds} folds for {len(examples)} examples")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        by_class.setdefault(ex.label, []).append(i)
    out: list[list[int]] = [[] for _ in range(folds)]
    pos = 0
    for label in sorted(by_class):
        for i in rng.permutation(by_class[label]):
            out[pos % folds].append(int(i))
            pos += 1
    return [sorted(f) for f in out]


@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    train_accuracy: float
    test_accuracy: float
    test_loss: float
    rules: int


def cross_validate(examples: Sequence[Example], folds: int, cfg, seed: int | None = None) -> list[FoldResult]:
    """Stratified k-fold: structure learning on the training part, evaluation on the held-out fold."""
    from .structure import structure_learn
    from .training import evaluate

    seed = cfg.seed if seed is None else seed
    splits = stratified_folds(examples, folds, seed)
    classes = {ex.label for ex in examples}
    results = []
    for k, test_idx in enumerate(splits):
        test_set = set(test_idx)
        train = [ex for i, ex in enumerate(examples) if i not in test_set]
        test = [examples[i] for i in test_idx]
        if {ex.label for ex in train} != classes:
            raise DataError(f"fold {k}: a class is absent from the training split")
        template, store = structure_learn(train, cfg)
        tr = evaluate(template.clauses, store, train, cfg.params)
        te = evaluate(template.clauses, store, test, cfg.params)
        results.append(FoldResult(k, len(train), len(test), tr.accuracy, te.accuracy, te.loss, len(template)))
    return results


def write_folds_csv(results: Sequence[FoldResult], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["fold", "n_train", "n_test", "train_accuracy", "test_accuracy", "test_loss", "rules"])
    for r in results:
        w.writerow([r.fold, r.n_train, r.n_test, f"{r.train_accuracy:.6f}", f"{r.test_accuracy:.6f}",
                    f"{r.test_loss:.6f}", r.rules])
    if results:
        mean = lambda xs: sum(xs) / len(xs)
        w.writerow(["mean", f"{mean([r.n_train for r in results]):.1f}", f"{mean([r.n_test for r in results]):.1f}",
                    f"{mean([r.train_accuracy for r in results]):.6f}", f"{mean([r.test_accuracy for r in results]):.6f}",
                    f"{mean([r.test_loss for r in results]):.6f}", f"{mean([r.rules for r in results]):.1f}"])


# ---------------------------------------------------------------- reporting

def embedding_matrix(template: Template, store: WeightStore) -> tuple[list[str], np.ndarray]:
    """Rows: unary dataset predicates; column j: weight of ``alpha1_j(X) <- U(X)``."""
    layer1 = template.latent_at(1)
    if not layer1:
        raise DataError("template has no layer-1 soft clusters")
    col = {lp.name: j for j, lp in enumerate(layer1)}
    cells: dict[str, dict[int, float]] = {}
    for wc in template:
        c = wc.clause
        if wc.kind == HeadKind.LATENT and c.head.predicate in col and len(c.body) == 1 and c.body[0].arity == 1:
            cells.setdefault(c.body[0].predicate, {})[col[c.head.predicate]] = store[wc.key]
    preds = sorted(cells)
    mat = np.full((len(preds), len(layer1)), np.nan)
    for i, p in enumerate(preds):
        for j, v in cells[p].items():
            mat[i, j] = v
    return preds, mat


def export_embeddings(template: Template, store: WeightStore, iteration, path: str | os.PathLike) -> int:
    """Append one embedding snapshot to a CSV file; returns the number of rows written."""
    preds, mat = embedding_matrix(template, store)
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["iteration", "predicate"] + [f"dim{j + 1}" for j in range(mat.shape[1])])
        for p, row in zip(preds, mat):
            w.writerow([iteration, p] + [repr(float(v)) for v in row])
    return len(preds)


@dataclass
class TemplateStats:
    rules: int
    patterns: int
    avg_pattern_length: float
    depth: int


def template_stats(template: Template) -> TemplateStats:
    """Rule count, learned target rules, their mean body length, and number of layers."""
    targets = template.of_kind(HeadKind.TARGET)
    avg = sum(len(wc.clause.body) for wc in targets) / len(targets) if targets else 0.0
    return TemplateStats(len(template), len(targets), avg, template.depth)


def write_iterations_csv(records: Sequence, out: TextIO) -> None:
    """Per-iteration search metrics (``IterationRecord`` rows)."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["iteration", "rule", "score", "baseline", "train_loss", "train_accuracy", "rules"])
    for r in records:
        w.writerow([r.iteration, r.rule, f"{r.score:.10g}", f"{r.baseline:.10g}", f"{r.train_loss:.10g}",
                    f"{r.train_accuracy:.6f}", r.n_rules])


def write_history_csv(history: Sequence[tuple[int, float, float]], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "train_accuracy"])
    for epoch, loss, acc in history:
        w.writerow([epoch, f"{loss:.10g}", f"{acc:.6f}"])
