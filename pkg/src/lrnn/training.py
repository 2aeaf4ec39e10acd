"""Losses, SGD over shared weights, and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import DEFAULT_PARAMS, ActivationParams, backward_range, forward_range, njit
from .logic import WeightedClause
from .network import GroundNetwork, build_network
from .template import Example, WeightStore

LOG_EPS = 1e-7
SQUARED, LOGISTIC = 0, 1
_LOSS_CODES = {"squared": SQUARED, "logistic": LOGISTIC}


class NothingToTrain(ValueError):
    """Every query atom is absent from every grounding."""


def squared_loss(y: float, t: float) -> float:
    return (y - t) ** 2


def log_loss(y: float, t: float) -> float:
    c = min(max(y, LOG_EPS), 1.0 - LOG_EPS)
    return -(t * math.log(c) + (1.0 - t) * math.log(1.0 - c))


@njit(cache=True, nogil=True)
def loss_value(y, t, kind):
    if kind == SQUARED:
        return (y - t) * (y - t)
    c = min(max(y, LOG_EPS), 1.0 - LOG_EPS)
    return -(t * math.log(c) + (1.0 - t) * math.log(1.0 - c))


@njit(cache=True, nogil=True)
def loss_grad(y, t, kind):
    if kind == SQUARED:
        return 2.0 * (y - t)
    if y < LOG_EPS or y > 1.0 - LOG_EPS:
        return 0.0
    return -t / y + (1.0 - t) / (1.0 - y)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.3
    epochs: int = 400
    minibatch_size: int = 1
    restarts: int = 1
    seed: int = 0
    loss: str = "squared"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.minibatch_size < 1 or self.restarts < 1:
            raise ValueError("epochs, minibatch_size and restarts must be >= 1")
        if self.loss not in _LOSS_CODES:
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def loss_code(self) -> int:
        return _LOSS_CODES[self.loss]


@dataclass
class Batch:
    """Disjoint union of per-example networks over one global key table."""

    kinds: np.ndarray
    const: np.ndarray
    slot: np.ndarray
    ptr: np.ndarray
    idx: np.ndarray
    keys: list[str]
    ex_lo: np.ndarray
    ex_hi: np.ndarray
    pair_ex: np.ndarray
    pair_node: np.ndarray
    pair_target: np.ndarray
    nets: list[GroundNetwork]

    @property
    def size(self) -> int:
        return len(self.kinds)


def compile_batch(nets: Sequence[GroundNetwork], targets: Sequence[Sequence[float]]) -> Batch:
    keys: dict[str, int] = {}
    kinds, const, slot, idx, ptr = [], [], [], [], [np.zeros(1, dtype=np.int64)]
    ex_lo, ex_hi, pair_ex, pair_node, pair_t = [], [], [], [], []
    offset = edge_off = 0
    for e, (net, ts) in enumerate(zip(nets, targets)):
        remap = np.array([keys.setdefault(k, len(keys)) for k in net.keys], dtype=np.int64)
        kinds.append(net.kinds)
        const.append(net.const)
        s = net.slot.copy()
        s[s >= 0] = remap[s[s >= 0]] if len(remap) else s[s >= 0]
        slot.append(s)
        idx.append(net.idx + offset)
        ptr.append(net.ptr[1:] + edge_off)
        ex_lo.append(offset)
        ex_hi.append(offset + net.size)
        for q, t in zip(net.queries, ts):
            node = net.query_nodes.get(q, -1)
            pair_ex.append(e)
            pair_node.append(node + offset if node >= 0 else -1)
            pair_t.append(float(t))
        offset += net.size
        edge_off += len(net.idx)
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
    return Batch(
        kinds=cat(kinds, np.int8), const=cat(const, np.float64), slot=cat(slot, np.int64),
        ptr=cat(ptr, np.int64), idx=cat(idx, np.int64), keys=list(keys),
        ex_lo=np.array(ex_lo, dtype=np.int64), ex_hi=np.array(ex_hi, dtype=np.int64),
        pair_ex=np.array(pair_ex, dtype=np.int64), pair_node=np.array(pair_node, dtype=np.int64),
        pair_target=np.array(pair_t, dtype=np.float64), nets=list(nets),
    )


def build_batch(template: Sequence[WeightedClause], examples: Sequence[Example], *, prune: bool = True,
                groundings: Sequence | None = None) -> Batch:
    gs = groundings if groundings is not None else [None] * len(examples)
    nets = [build_network(template, ex.facts, [q for q, _ in ex.queries], prune=prune, grounding=g)
            for ex, g in zip(examples, gs)]
    return compile_batch(nets, [[t for _, t in ex.queries] for ex in examples])


@njit(cache=True, nogil=True)
def _evaluate(kinds, const, slot, ptr, idx, w, a, b0, alt, ex_lo, ex_hi, pair_node, pair_t, loss_kind, vals, ys):
    for e in range(len(ex_lo)):
        forward_range(ex_lo[e], ex_hi[e], kinds, const, slot, ptr, idx, w, a, b0, alt, vals)
    total = 0.0
    for p in range(len(pair_node)):
        y = vals[pair_node[p]] if pair_node[p] >= 0 else 0.0
        ys[p] = y
        total += loss_value(y, pair_t[p], loss_kind)
    return total


@njit(cache=True, nogil=True)
def _accuracy(ys, ts):
    hits = 0
    for p in range(len(ys)):
        if (ys[p] >= 0.5) == (ts[p] >= 0.5):
            hits += 1
    return hits / max(len(ys), 1)


@njit(cache=True, nogil=True)
def _sgd(kinds, const, slot, ptr, idx, w, trainable, a, b0, alt, ex_lo, ex_hi, pair_ex, pair_node, pair_t,
         loss_kind, perms, batch, lr, best_w, hist_loss, hist_acc):
    n = len(pair_node)
    vals = np.zeros(len(kinds))
    adj = np.zeros(len(kinds))
    ys = np.zeros(n)
    grad = np.zeros(len(w))
    best = _evaluate(kinds, const, slot, ptr, idx, w, a, b0, alt, ex_lo, ex_hi, pair_node, pair_t, loss_kind, vals, ys)
    best_w[:] = w
    for ep in range(perms.shape[0]):
        pos = 0
        while pos < n:
            end = min(pos + batch, n)
            grad[:] = 0.0
            for s in range(pos, end):
                p = perms[ep, s]
                node = pair_node[p]
                if node < 0:
                    continue
                lo = ex_lo[pair_ex[p]]
                hi = ex_hi[pair_ex[p]]
                forward_range(lo, hi, kinds, const, slot, ptr, idx, w, a, b0, alt, vals)
                adj[lo:hi] = 0.0
                adj[node] = loss_grad(vals[node], pair_t[p], loss_kind)
                backward_range(lo, hi, kinds, slot, ptr, idx, w, vals, a, alt, adj, grad)
            m = end - pos
            for k in range(len(w)):
                if trainable[k]:
                    w[k] -= lr * grad[k] / m
            pos = end
        total = _evaluate(kinds, const, slot, ptr, idx, w, a, b0, alt, ex_lo, ex_hi, pair_node, pair_t, loss_kind, vals, ys)
        hist_loss[ep] = total
        hist_acc[ep] = _accuracy(ys, pair_t)
        if total < best:
            best = total
            best_w[:] = w
    return best


def run_descent(step, w0: np.ndarray, trainable: np.ndarray, trainable_keys: Sequence[str], n_pairs: int,
                cfg: TrainConfig, history: list | None = None) -> tuple[np.ndarray, float]:
    """Seeded restart/epoch driver shared by every SGD loop in the package.

    ``step(w, perms, best_w, hist_loss, hist_acc)`` runs one restart in place
    and returns its best total loss.  Restart 0 warm-starts from ``w0``;
    later restarts redraw trainable weights in sorted-key order.
    """
    rng = np.random.default_rng(cfg.seed)
    order = sorted(range(len(trainable_keys)), key=lambda i: trainable_keys[i])
    best_total, best_w = math.inf, w0.copy()
    tpos = np.flatnonzero(trainable)
    for r in range(cfg.restarts):
        w = w0.copy()
        if r > 0:
            draws = rng.uniform(-0.5, 0.5, size=len(order))
            for i, d in zip(order, draws):
                w[tpos[i]] = d
        perms = rng.permuted(np.tile(np.arange(n_pairs, dtype=np.int64), (cfg.epochs, 1)), axis=1)
        out_w = np.empty_like(w)
        hist_loss = np.zeros(cfg.epochs)
        hist_acc = np.zeros(cfg.epochs)
        total = step(w, perms, out_w, hist_loss, hist_acc)
        if history is not None:
            base = r * cfg.epochs
            history.extend((base + e + 1, hist_loss[e] / max(n_pairs, 1), hist_acc[e]) for e in range(cfg.epochs))
        if total < best_total:
            best_total, best_w = total, out_w
    return best_w, best_total


def train_weights(
    template: Sequence[WeightedClause],
    examples: Sequence[Example],
    cfg: TrainConfig = TrainConfig(),
    frozen: Iterable[str] = (),
    store: WeightStore | None = None,
    params: ActivationParams = DEFAULT_PARAMS,
    history: list | None = None,
    batch: Batch | None = None,
) -> WeightStore:
    """SGD on the summed loss over all (example, query) pairs.

    Returns a new store; frozen keys are copied through untouched.  The best
    weights seen at any epoch end (including the starting point) are kept,
    so the training loss never ends above its initial value.
    """
    batch = batch if batch is not None else build_batch(template, examples)
    if not np.any(batch.pair_node >= 0):
        raise NothingToTrain("no query atom occurs in any grounding")
    out = store.copy() if store is not None else WeightStore()
    out.init_missing(batch.keys, np.random.default_rng(cfg.seed))
    frozen = set(frozen) | out.frozen
    w0 = out.array(batch.keys)
    trainable = np.array([k not in frozen for k in batch.keys], dtype=bool)
    tkeys = [k for k in batch.keys if k not in frozen]

    def step(w, perms, best_w, hist_loss, hist_acc):
        return _sgd(batch.kinds, batch.const, batch.slot, batch.ptr, batch.idx, w, trainable, params.a, params.b0,
                    params.weight_in_and, batch.ex_lo, batch.ex_hi, batch.pair_ex, batch.pair_node, batch.pair_target,
                    cfg.loss_code, perms, cfg.minibatch_size, cfg.learning_rate, best_w, hist_loss, hist_acc)

    best_w, _ = run_descent(step, w0, trainable, tkeys, len(batch.pair_node), cfg, history)
    for i, k in enumerate(batch.keys):
        if trainable[i]:
            out[k] = best_w[i]
    return out


@dataclass
class Metrics:
    loss: float
    log_loss: float
    accuracy: float
    n: int
    outputs: list[float] = field(default_factory=list, repr=False)


def predict(template, store: WeightStore, examples: Sequence[Example], params: ActivationParams = DEFAULT_PARAMS,
            batch: Batch | None = None) -> tuple[np.ndarray, np.ndarray]:
    batch = batch if batch is not None else build_batch(template, examples)
    w = store.array(batch.keys)
    ys = np.zeros(len(batch.pair_node))
    _evaluate(batch.kinds, batch.const, batch.slot, batch.ptr, batch.idx, w, params.a, params.b0, params.weight_in_and,
              batch.ex_lo, batch.ex_hi, batch.pair_node, batch.pair_target, SQUARED, np.zeros(batch.size), ys)
    return ys, batch.pair_target


def evaluate(template, store: WeightStore, examples: Sequence[Example], params: ActivationParams = DEFAULT_PARAMS,
             batch: Batch | None = None) -> Metrics:
    """Mean squared loss, mean log-loss and accuracy at the 0.5 threshold."""
    ys, ts = predict(template, store, examples, params, batch)
    n = len(ys)
    if n == 0:
        return Metrics(0.0, 0.0, 1.0, 0)
    sq = math.fsum(squared_loss(y, t) for y, t in zip(ys, ts)) / n
    ll = math.fsum(log_loss(y, t) for y, t in zip(ys, ts)) / n
    acc = float(np.mean((ys >= 0.5) == (ts >= 0.5)))
    return Metrics(sq, ll, acc, n, ys.tolist())


def batch_gradient(template, store: WeightStore, examples: Sequence[Example], loss: str = "squared",
                   params: ActivationParams = DEFAULT_PARAMS) -> dict[str, float]:
    """Full-batch gradient of the summed loss, accumulated over one shared key table."""
    batch = build_batch(template, examples)
    w = store.array(batch.keys)
    vals = np.zeros(batch.size)
    adj = np.zeros(batch.size)
    grad = np.zeros(len(batch.keys))
    code = _LOSS_CODES[loss]
    for e in range(len(examples)):
        forward_range(batch.ex_lo[e], batch.ex_hi[e], batch.kinds, batch.const, batch.slot, batch.ptr, batch.idx, w,
                      params.a, params.b0, params.weight_in_and, vals)
    for p, node in enumerate(batch.pair_node):
        if node >= 0:
            adj[node] += float(loss_grad(vals[node], batch.pair_target[p], code))
    for e in range(len(examples)):
        backward_range(batch.ex_lo[e], batch.ex_hi[e], batch.kinds, batch.slot, batch.ptr, batch.idx, w, vals,
                       params.a, params.weight_in_and, adj, grad)
    return {k: float(grad[i]) for i, k in enumerate(batch.keys) if k not in store.frozen}
