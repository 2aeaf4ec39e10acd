"""Stacked structure learning: soft-cluster layer, beam search, predicate invention.

The learner alternates two phases.  In the search phase every latent-head
rule weight is frozen and candidate target rules are scored by the log-loss
reached after training only the non-latent weights.  The winner is added
together with a fresh set of latent rules one layer above the highest latent
predicate it uses, and then every weight is retrained on squared loss.

With latent weights frozen, the value of every non-target ground atom is a
constant, so a target rule reduces to one feature per query (the mean
conjunction value over its groundings) and scoring becomes a small logistic
fit.  :class:`Scorer` exploits this; ``use_cache=False`` scores by building
and training the full networks instead, and both give the same numbers.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import zlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import DEFAULT_PARAMS, ActivationParams, _sigm, njit
from .logic import Atom, Clause, HeadKind, WeightedClause, active_ground_rules, is_variable
from .network import build_network
from .template import Example, LatentPredicate, Template, WeightStore, clause_key, layer_for_body
from .training import (
    NothingToTrain, TrainConfig, _accuracy, build_batch, evaluate, log_loss, loss_grad, loss_value, run_descent,
    train_weights,
)

log = logging.getLogger(__name__)


class NoRuleFound(Exception):
    """No candidate improves the current log-loss by the required margin."""


@dataclass(frozen=True)
class SearchConfig:
    d: int = 3
    max_rule_length: int = 4
    max_variables: int = 4
    beam_width: int | None = 5
    max_iterations: int = 8
    latent_arity: int = 1
    min_score_improvement: float = 1e-3
    seed: int = 0
    train: TrainConfig = TrainConfig()
    score: TrainConfig = TrainConfig(learning_rate=0.05, loss="logistic")
    params: ActivationParams = DEFAULT_PARAMS
    use_cache: bool = True
    threads: int = 1

    def __post_init__(self):
        if min(self.d, self.max_rule_length, self.max_variables, self.latent_arity, self.threads) < 1:
            raise ValueError("d, max_rule_length, max_variables, latent_arity and threads must be >= 1")
        if self.beam_width is not None and self.beam_width < 1:
            raise ValueError("beam_width must be >= 1 (or None for unbounded)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    @property
    def train_cfg(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)

    @property
    def score_cfg(self) -> TrainConfig:
        return dataclasses.replace(self.score, seed=self.seed)


@dataclass
class CandidateRule:
    clause: Clause
    score: float = math.inf
    provenance: tuple[str, ...] = ()
    weights: dict[str, float] = field(default_factory=dict, repr=False, compare=False)
    _bindings: "Bindings | None" = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> str:
        return clause_key(self.clause)

    def rank(self) -> tuple[float, int, str]:
        return self.score, len(self.clause.body), str(self.clause)


# ---------------------------------------------------------------- naming / vocabulary

def var_name(i: int) -> str:
    return chr(ord("A") + i) if i < 26 else f"V{i}"


def latent_name(layer: int, index: int, taken: Iterable[str]) -> str:
    taken = set(taken)
    name = f"alpha{layer}_{index}"
    while name in taken:
        name += "_"
    return name


def dataset_signatures(examples: Sequence[Example]) -> list[tuple[str, int]]:
    return sorted({f.atom.signature for ex in examples for f in ex.facts})


def target_signatures(examples: Sequence[Example]) -> list[tuple[str, int]]:
    return sorted({q.signature for ex in examples for q, _ in ex.queries})


def vocabulary(template: Template, examples: Sequence[Example]) -> list[tuple[str, int]]:
    """Body predicates: dataset predicates (minus targets) plus defined latent predicates."""
    targets = {p for p, _ in target_signatures(examples)}
    vocab = [s for s in dataset_signatures(examples) if s[0] not in targets]
    vocab += [(lp.name, lp.arity) for lp in template.defined_latent()]
    return vocab


def _ensure_latent(template: Template, layer: int, d: int, arity: int, reserved: Iterable[str]) -> list[LatentPredicate]:
    existing = template.latent_at(layer)
    if existing:
        return existing
    taken = set(reserved) | set(template.latent)
    out = []
    for j in range(1, d + 1):
        name = latent_name(layer, j, taken)
        taken.add(name)
        lp = LatentPredicate(name, layer, j, arity)
        template.register_latent(lp)
        out.append(lp)
    return out


def create_layer1_rules(examples: Sequence[Example], d: int, template: Template | None = None) -> list[WeightedClause]:
    """Soft-cluster rules ``alpha1_j(X) <- U(X)`` for every unary dataset predicate U."""
    if d < 1:
        raise ValueError("d must be >= 1")
    unary = sorted(p for p, n in dataset_signatures(examples) if n == 1)
    if not unary:
        raise ValueError("no unary predicates in the examples")
    template = template if template is not None else Template()
    reserved = {p for p, _ in dataset_signatures(examples)} | {p for p, _ in target_signatures(examples)}
    latent = _ensure_latent(template, 1, d, 1, reserved)
    rules = []
    for lp in latent:
        for u in unary:
            c = Clause(Atom(lp.name, ("X",)), (Atom(u, ("X",)),))
            rules.append(WeightedClause(c, clause_key(c), 1, HeadKind.LATENT))
    return rules


# ---------------------------------------------------------------- refinement

def canonical(clause: Clause) -> str:
    """Text form invariant under variable renaming and body reordering."""
    best = None
    for body in itertools.permutations(clause.body):
        names: dict[str, str] = {}
        parts = []
        for atom in (clause.head, *body):
            args = []
            for t in atom.args:
                if is_variable(t):
                    t = names.setdefault(t, f"_{len(names)}")
                args.append(t)
            parts.append(f"{atom.predicate}({','.join(args)})")
        text = parts[0] + ":-" + ",".join(parts[1:])
        if best is None or text < best:
            best = text
    return best if best is not None else str(clause)


def _arg_patterns(existing: list[str], arity: int, max_fresh: int | None, max_vars: int) -> Iterable[tuple[str, ...]]:
    """Argument tuples over existing variables plus new ones (restricted growth order)."""
    def rec(pos: int, args: list[str], fresh: list[str]):
        if pos == arity:
            yield tuple(args)
            return
        for v in existing + fresh:
            yield from rec(pos + 1, args + [v], fresh)
        if (max_fresh is None or len(fresh) < max_fresh) and len(existing) + len(fresh) < max_vars:
            v = var_name(len(existing) + len(fresh))
            yield from rec(pos + 1, args + [v], fresh + [v])
    yield from rec(0, [], [])


def _literals(existing: list[str], vocab: Sequence[tuple[str, int]], max_fresh: int | None, max_vars: int) -> list[Atom]:
    return [Atom(p, args) for p, n in vocab for args in _arg_patterns(existing, n, max_fresh, max_vars)]


def _dedup(cands: Iterable[CandidateRule], seen: set[str] | None = None) -> list[CandidateRule]:
    seen = set() if seen is None else seen
    out = []
    for c in cands:
        k = canonical(c.clause)
        if k not in seen:
            seen.add(k)
            out.append(c)
    return out


def seed_rules(target: tuple[str, int], vocab: Sequence[tuple[str, int]], cfg: SearchConfig) -> list[CandidateRule]:
    head = Atom(target[0], tuple(var_name(i) for i in range(target[1])))
    existing = list(head.args)
    out = []
    for lit in _literals(existing, vocab, None, cfg.max_variables):
        out.append(CandidateRule(Clause(head, (lit,)), provenance=(str(lit),)))
    return _dedup(out)


def refine(rule: CandidateRule, vocab: Sequence[tuple[str, int]], cfg: SearchConfig) -> list[CandidateRule]:
    """Append one literal over existing variables and at most one fresh one."""
    c = rule.clause
    if len(c.body) >= cfg.max_rule_length:
        return []
    existing = c.variables()
    out = []
    for lit in _literals(existing, vocab, 1, cfg.max_variables):
        if lit in c.body:
            continue
        out.append(CandidateRule(Clause(c.head, c.body + (lit,)), provenance=rule.provenance + (str(lit),),
                                 _bindings=rule._bindings))
    return _dedup(out)


# ---------------------------------------------------------------- cached relational features

@dataclass
class Relation:
    ex: np.ndarray
    args: np.ndarray
    vals: np.ndarray


@dataclass
class Bindings:
    ex: np.ndarray
    cols: dict[str, np.ndarray]
    total: np.ndarray
    length: int


class LatentCache:
    """Values of every non-target ground atom under the current (frozen) weights.

    Atoms are stored per predicate as relational tables over globally numbered
    constants, so candidate bodies are evaluated by vectorised joins.
    """

    def __init__(self, template: Template, store: WeightStore, examples: Sequence[Example],
                 params: ActivationParams = DEFAULT_PARAMS, groundings=None):
        from .autodiff import forward

        targets = {p for p, _ in target_signatures(examples)}
        self.const_ids: list[dict[str, int]] = []
        n_const = 0
        rows: dict[tuple[str, int], tuple[list, list, list]] = defaultdict(lambda: ([], [], []))
        for e, ex in enumerate(examples):
            ids: dict[str, int] = {}
            for f in ex.facts:
                for t in f.atom.args:
                    if t not in ids:
                        ids[t] = n_const
                        n_const += 1
            self.const_ids.append(ids)
            g = groundings[e] if groundings is not None else None
            net = build_network(template.clauses, ex.facts, (), grounding=g)
            values = forward(net, store, params).values
            for atom, node in net.atom_nodes.items():
                if atom.predicate in targets:
                    continue
                exs, args, vals = rows[atom.signature]
                exs.append(e)
                args.append([ids[t] for t in atom.args])
                vals.append(values[node])
        self._qkey_memo: dict[int, dict] = {}
        self.n_examples = len(examples)
        self.n_const = max(n_const, 1)
        self.relations: dict[tuple[str, int], Relation] = {}
        for sig, (exs, args, vals) in rows.items():
            self.relations[sig] = Relation(np.array(exs, dtype=np.int64),
                                           np.array(args, dtype=np.int64).reshape(len(exs), sig[1]),
                                           np.array(vals, dtype=np.float64))

    def empty(self) -> Bindings:
        n = self.n_examples
        return Bindings(np.arange(n, dtype=np.int64), {}, np.zeros(n), 0)

    def _key(self, cols: list[np.ndarray]) -> np.ndarray:
        key = cols[0].astype(np.int64)
        for c in cols[1:]:
            key = key * self.n_const + c
        return key

    def extend(self, b: Bindings, lit: Atom) -> Bindings:
        rel = self.relations.get(lit.signature)
        if rel is None:
            return Bindings(np.zeros(0, dtype=np.int64), {**{v: np.zeros(0, dtype=np.int64) for v in b.cols},
                            **{v: np.zeros(0, dtype=np.int64) for v in lit.variables()}}, np.zeros(0), b.length + 1)
        first: dict[str, int] = {}
        mask = np.ones(len(rel.ex), dtype=bool)
        for i, v in enumerate(lit.args):
            if v in first:
                mask &= rel.args[:, i] == rel.args[:, first[v]]
            else:
                first[v] = i
        r_ex, r_args, r_vals = rel.ex[mask], rel.args[mask], rel.vals[mask]
        bound = [v for v in first if v in b.cols]
        if bound:
            lkey = self._key([b.cols[v] for v in bound])
            rkey = self._key([r_args[:, first[v]] for v in bound])
        else:
            lkey, rkey = b.ex, r_ex
        order = np.argsort(rkey, kind="stable")
        rs = rkey[order]
        lo = np.searchsorted(rs, lkey, "left")
        counts = np.searchsorted(rs, lkey, "right") - lo
        total = int(counts.sum())
        li = np.repeat(np.arange(len(lkey)), counts)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        ri = order[np.repeat(lo, counts) + within]
        cols = {v: c[li] for v, c in b.cols.items()}
        for v, i in first.items():
            if v not in cols:
                cols[v] = r_args[ri, i]
        return Bindings(b.ex[li], cols, b.total[li] + r_vals[ri], b.length + 1)

    def bindings(self, body: Sequence[Atom], start: Bindings | None = None) -> Bindings:
        b = start if start is not None else self.empty()
        for lit in body[b.length:]:
            b = self.extend(b, lit)
        return b

    def features(self, clause: Clause, pairs: Sequence[tuple[int, Atom]], params: ActivationParams,
                 b: Bindings | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Mean conjunction value per query pair; second array marks pairs the rule grounds for."""
        b = b if b is not None else self.bindings(clause.body)
        z = params.a * (b.total - b.length + 1.0 + params.b0)
        with np.errstate(over="ignore"):
            ez = np.exp(-np.abs(z))
        g = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
        positions = tuple(i for i, v in enumerate(clause.head.args) if v in b.cols)
        if positions:
            gkey = self._key([b.cols[clause.head.args[i]] for i in positions])
        else:
            gkey = b.ex
        uniq, inv = np.unique(gkey, return_inverse=True)
        sums = np.bincount(inv, weights=g, minlength=len(uniq))
        counts = np.bincount(inv, minlength=len(uniq))
        qkey = self._query_keys(pairs, positions)
        j = np.minimum(np.searchsorted(uniq, qkey), max(len(uniq) - 1, 0))
        present = (qkey >= 0) & (uniq[j] == qkey) if len(uniq) else np.zeros(len(pairs), dtype=bool)
        feat = np.zeros(len(pairs))
        feat[present] = sums[j[present]] / counts[j[present]]
        return feat, present

    def _query_keys(self, pairs: Sequence[tuple[int, Atom]], positions: tuple[int, ...]) -> np.ndarray:
        """Group key of each query's head grounding, or -1 if it cannot ground."""
        memo = self._qkey_memo.setdefault(id(pairs), {})
        if positions in memo:
            return memo[positions]
        out = np.full(len(pairs), -1, dtype=np.int64)
        for p, (e, q) in enumerate(pairs):
            ids = self.const_ids[e]
            if any(t not in ids for t in q.args):
                continue
            if positions:
                out[p] = self._key([np.array([ids[q.args[i]]]) for i in positions])[0]
            else:
                out[p] = e
        memo[positions] = out
        return out


@njit(cache=True, nogil=True)
def _feature_outputs(F, present, s0, has_fact, w, a, b0, ys):
    for p in range(F.shape[0]):
        z = s0[p]
        live = has_fact[p]
        for r in range(F.shape[1]):
            if present[p, r]:
                z += F[p, r] * w[r]
                live = True
        ys[p] = _sigm(a * (z + b0)) if live else 0.0


@njit(cache=True, nogil=True)
def _feature_loss(F, present, s0, has_fact, w, a, b0, targets, loss_kind, ys):
    _feature_outputs(F, present, s0, has_fact, w, a, b0, ys)
    total = 0.0
    for p in range(len(ys)):
        total += loss_value(ys[p], targets[p], loss_kind)
    return total


@njit(cache=True, nogil=True)
def _fit_features(F, present, s0, has_fact, targets, w, trainable, a, b0, loss_kind, perms, batch, lr,
                  best_w, hist_loss, hist_acc):
    n = F.shape[0]
    ys = np.zeros(n)
    grad = np.zeros(len(w))
    best = _feature_loss(F, present, s0, has_fact, w, a, b0, targets, loss_kind, ys)
    best_w[:] = w
    for ep in range(perms.shape[0]):
        pos = 0
        while pos < n:
            end = min(pos + batch, n)
            grad[:] = 0.0
            for s in range(pos, end):
                p = perms[ep, s]
                z = s0[p]
                live = has_fact[p]
                for r in range(F.shape[1]):
                    if present[p, r]:
                        z += F[p, r] * w[r]
                        live = True
                if not live:
                    continue
                y = _sigm(a * (z + b0))
                g = loss_grad(y, targets[p], loss_kind)
                if g == 0.0:
                    continue
                dz = g * a * y * (1.0 - y)
                for r in range(F.shape[1]):
                    if present[p, r]:
                        grad[r] += dz * F[p, r]
            m = end - pos
            for r in range(len(w)):
                if trainable[r]:
                    w[r] -= lr * grad[r] / m
            pos = end
        total = _feature_loss(F, present, s0, has_fact, w, a, b0, targets, loss_kind, ys)
        hist_loss[ep] = total
        hist_acc[ep] = _accuracy(ys, targets)
        if total < best:
            best = total
            best_w[:] = w
    return best


def _candidate_init(key: str, seed: int) -> float:
    rng = np.random.default_rng([zlib.crc32(key.encode()), seed])
    return float(rng.uniform(-0.5, 0.5))


class Scorer:
    """Scores candidate target rules against a fixed template and weight store."""

    def __init__(self, template: Template, store: WeightStore, examples: Sequence[Example], cfg: SearchConfig,
                 cache: LatentCache | None = None):
        self.template = template
        self.store = store
        self.examples = list(examples)
        self.cfg = cfg
        self.frozen = {wc.key for wc in template if wc.kind == HeadKind.LATENT}
        self.pairs = [(e, q) for e, ex in enumerate(self.examples) for q, _ in ex.queries]
        self.targets = np.array([t for ex in self.examples for _, t in ex.queries], dtype=np.float64)
        self.fast = cfg.use_cache and self._fast_applicable()
        if self.fast:
            self.cache = cache if cache is not None else LatentCache(template, store, self.examples, cfg.params)
            self.s0 = np.zeros(len(self.pairs))
            self.has_fact = np.zeros(len(self.pairs), dtype=bool)
            for p, (e, q) in enumerate(self.pairs):
                s = 0.0
                for f in self.examples[e].facts:
                    if f.atom == q:
                        s += f.weight
                        self.has_fact[p] = True
                self.s0[p] = s
            self.base_rules = [wc for wc in template if wc.kind == HeadKind.TARGET]
            cols = [self.cache.features(wc.clause, self.pairs, cfg.params) for wc in self.base_rules]
            self.base_F = np.stack([c[0] for c in cols], axis=1) if cols else np.zeros((len(self.pairs), 0))
            self.base_P = np.stack([c[1] for c in cols], axis=1) if cols else np.zeros((len(self.pairs), 0), dtype=bool)

    def _fast_applicable(self) -> bool:
        if self.cfg.params.weight_in_and:
            return False
        for wc in self.template:
            c = wc.clause
            if c.is_fact or any(not is_variable(t) for a in (c.head, *c.body) for t in a.args):
                return False
        return True

    def baseline(self) -> float:
        return self._score(None)[0]

    def score(self, cand: CandidateRule) -> CandidateRule:
        """Fill in ``cand.score`` and ``cand.weights`` (trained target weights)."""
        cand.score, cand.weights = self._score(cand)
        return cand

    def _score(self, cand: CandidateRule | None) -> tuple[float, dict[str, float]]:
        if self.fast:
            return self._score_fast(cand)
        return self._score_full(cand)

    def _score_full(self, cand):
        t2 = self.template.copy()
        s2 = self.store.copy()
        if cand is not None:
            wc = WeightedClause(cand.clause, cand.key, layer_for_body(self.template, cand.clause.body), HeadKind.TARGET)
            t2.add(wc)
            s2[wc.key] = _candidate_init(wc.key, self.cfg.seed)
        try:
            s2 = train_weights(t2.clauses, self.examples, self.cfg.score_cfg, self.frozen, s2, self.cfg.params)
        except NothingToTrain:
            pass
        score = evaluate(t2.clauses, s2, self.examples, self.cfg.params).log_loss
        trained = {wc.key: s2[wc.key] for wc in t2 if wc.kind == HeadKind.TARGET and wc.key in s2}
        return score, trained

    def _score_fast(self, cand):
        rules = list(self.base_rules)
        F, P = self.base_F, self.base_P
        w0 = [self.store[wc.key] for wc in rules]
        keys = [wc.key for wc in rules]
        if cand is not None:
            b = self.cache.bindings(cand.clause.body, cand._bindings)
            cand._bindings = b
            f, pr = self.cache.features(cand.clause, self.pairs, self.cfg.params, b)
            F = np.column_stack([F, f])
            P = np.column_stack([P, pr])
            keys.append(cand.key)
            w0.append(_candidate_init(cand.key, self.cfg.seed))
        w0 = np.array(w0, dtype=np.float64)
        trainable = P.any(axis=0) if P.shape[1] else np.zeros(0, dtype=bool)
        params, cfg = self.cfg.params, self.cfg.score_cfg
        best_w = w0
        if trainable.any() and len(self.pairs) and (P.any(axis=1) | self.has_fact).any():
            def step(w, perms, out_w, hl, ha):
                return _fit_features(F, P, self.s0, self.has_fact, self.targets, w, trainable, params.a, params.b0,
                                     cfg.loss_code, perms, cfg.minibatch_size, cfg.learning_rate, out_w, hl, ha)
            tkeys = [k for k, t in zip(keys, trainable) if t]
            best_w, _ = run_descent(step, w0, trainable, tkeys, len(self.pairs), cfg)
        ys = np.zeros(len(self.pairs))
        _feature_outputs(F, P, self.s0, self.has_fact, best_w, params.a, params.b0, ys)
        score = math.fsum(log_loss(y, t) for y, t in zip(ys, self.targets)) / max(len(ys), 1)
        return score, {k: float(v) for k, v in zip(keys, best_w)}


def score_rule(cand: CandidateRule, template: Template, store: WeightStore, examples: Sequence[Example],
               cfg: SearchConfig = SearchConfig()) -> float:
    """Log-loss after adding ``cand`` and training only non-latent weights; inputs are not modified."""
    return Scorer(template, store, examples, cfg).score(cand).score


# ---------------------------------------------------------------- search

@dataclass
class SearchResult:
    best: CandidateRule
    baseline: float
    final_beam: list[CandidateRule]
    evaluated: int


def _score_all(scorer: Scorer, cands: list[CandidateRule], threads: int) -> list[CandidateRule]:
    if threads > 1 and len(cands) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(scorer.score, cands))
    return [scorer.score(c) for c in cands]


def beam_search(template: Template, store: WeightStore, examples: Sequence[Example], cfg: SearchConfig = SearchConfig(),
                scorer: Scorer | None = None) -> SearchResult:
    """Best target rule found by beam search over single-literal specialisations.

    Raises :class:`NoRuleFound` unless the best rule lowers the current
    log-loss by at least ``cfg.min_score_improvement``.
    """
    scorer = scorer if scorer is not None else Scorer(template, store, examples, cfg)
    baseline = scorer.baseline()
    vocab = vocabulary(template, examples)
    seen = {canonical(wc.clause) for wc in template if wc.kind == HeadKind.TARGET}
    width = cfg.beam_width if cfg.beam_width is not None else math.inf

    frontier: list[CandidateRule] = []
    for target in target_signatures(examples):
        frontier += [c for c in seed_rules(target, vocab, cfg) if canonical(c.clause) not in seen]
    seen.update(canonical(c.clause) for c in frontier)
    best: CandidateRule | None = None
    beam: list[CandidateRule] = []
    evaluated = 0
    while frontier:
        scored = sorted(_score_all(scorer, frontier, cfg.threads), key=CandidateRule.rank)
        evaluated += len(scored)
        if best is None or scored[0].rank() < best.rank():
            best = scored[0]
        beam = scored if width == math.inf else scored[: int(width)]
        log.debug("beam level: %d candidates, best %.5f %s", len(scored), best.score, best.clause)
        children: list[CandidateRule] = []
        for c in beam:
            children += refine(c, vocab, cfg)
        frontier = _dedup(children, seen)
    if best is None or best.score > baseline - cfg.min_score_improvement:
        raise NoRuleFound(f"best candidate {best.score if best else math.nan:.6g} vs baseline {baseline:.6g}")
    return SearchResult(best, baseline, beam, evaluated)


def invent_predicates(best: Clause, template: Template, cfg: SearchConfig, reserved: Iterable[str] = ()) -> list[WeightedClause]:
    """Latent rules one layer above the highest latent predicate in ``best``.

    For each latent predicate of that layer and each injective choice of k
    variables of ``best``, the chosen variables become the head arguments
    V1..Vk and the body is copied from ``best``.
    """
    k = cfg.latent_arity
    variables = best.variables()
    if len(variables) < k:
        raise ValueError(f"rule {best} has fewer than {k} variables")
    top = max((template.predicate_layer(b.predicate) for b in best.body), default=0)
    layer = max(top, 1) + 1
    latent = _ensure_latent(template, layer, cfg.d, k, reserved)
    head_vars = [f"V{i + 1}" for i in range(k)]
    clash = {v for v in variables if v in head_vars}
    rules = []
    for lp in latent:
        for chosen in itertools.permutations(variables, k):
            theta = dict(zip(chosen, head_vars))
            for v in clash - set(chosen):
                theta[v] = f"{v}_"
            c = Clause(Atom(lp.name, tuple(head_vars)), tuple(b.substitute(theta) for b in best.body))
            rules.append(WeightedClause(c, clause_key(c), layer, HeadKind.LATENT))
    return rules


@dataclass
class IterationRecord:
    iteration: int
    rule: str | None
    score: float
    baseline: float
    train_loss: float
    train_accuracy: float
    n_rules: int


def structure_learn(
    examples: Sequence[Example],
    cfg: SearchConfig = SearchConfig(),
    on_iteration: Callable[[int, Template, WeightStore], None] | None = None,
    records: list[IterationRecord] | None = None,
    train_history: list | None = None,
) -> tuple[Template, WeightStore]:
    """Learn a stacked template and its weights from examples alone."""
    examples = list(examples)
    rng = np.random.default_rng(cfg.seed)
    reserved = {p for p, _ in dataset_signatures(examples)} | {p for p, _ in target_signatures(examples)}
    template = Template()
    template.extend(create_layer1_rules(examples, cfg.d, template))
    store = WeightStore()
    store.init_missing(template.keys(), rng)
    if on_iteration is not None:
        on_iteration(0, template, store)
    groundings = [active_ground_rules(template.clauses, ex.facts) for ex in examples]
    for it in range(1, cfg.max_iterations + 1):
        cache = LatentCache(template, store, examples, cfg.params, groundings) if cfg.use_cache else None
        try:
            result = beam_search(template, store, examples, cfg, Scorer(template, store, examples, cfg, cache))
        except NoRuleFound as exc:
            log.info("iteration %d: stopping (%s)", it, exc)
            break
        best = result.best
        template.add(WeightedClause(best.clause, best.key, layer_for_body(template, best.clause.body), HeadKind.TARGET))
        store.update(best.weights)
        invented = invent_predicates(best.clause, template, cfg, reserved)
        template.extend(invented)
        store.init_missing([wc.key for wc in invented], rng)
        groundings = [active_ground_rules(template.clauses, ex.facts) for ex in examples]
        batch = build_batch(template.clauses, examples, groundings=groundings)
        try:
            store = train_weights(template.clauses, examples, cfg.train_cfg, (), store, cfg.params, train_history, batch)
        except NothingToTrain:
            pass
        m = evaluate(template.clauses, store, examples, cfg.params, batch)
        log.info("iteration %d: %s score=%.5f (baseline %.5f) train acc=%.3f", it, best.clause, best.score,
                 result.baseline, m.accuracy)
        if records is not None:
            records.append(IterationRecord(it, str(best.clause), best.score, result.baseline, m.loss, m.accuracy,
                                           len(template)))
        if on_iteration is not None:
            on_iteration(it, template, store)
    return template, store
