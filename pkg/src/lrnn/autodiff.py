"""Activation functions, forward evaluation and reverse-mode gradients.

The sweeps run over the flat neuron arena of a :class:`GroundNetwork`, whose
neuron indices are already in topological order, so forward is a single
ascending pass and backward a single descending one.  The inner loops are
numba-compiled; they are plain Python when numba is unavailable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .network import GroundNetwork

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

ATOM, FACT, RULE, AGG = 0, 1, 2, 3


@dataclass(frozen=True)
class ActivationParams:
    a: float = 6.0
    b0: float = -0.5
    # Also feed the rule weight into the conjunction, on top of w * mean.
    weight_in_and: bool = False


DEFAULT_PARAMS = ActivationParams()


@njit(cache=True)
def _sigm(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def sigm(z: float) -> float:
    return _sigm(float(z))


def g_or(inputs: Sequence[float], params: ActivationParams = DEFAULT_PARAMS) -> float:
    return sigm(params.a * (math.fsum(inputs) + params.b0))


def g_and(inputs: Sequence[float], params: ActivationParams = DEFAULT_PARAMS) -> float:
    k = len(inputs)
    if k == 0:
        raise ValueError("g_and needs at least one input")
    return sigm(params.a * (math.fsum(inputs) - k + 1 + params.b0))


def g_star(inputs: Sequence[float]) -> float:
    if len(inputs) == 0:
        raise ValueError("g_star needs at least one input")
    return math.fsum(inputs) / len(inputs)


@njit(cache=True, nogil=True)
def forward_range(lo, hi, kinds, const, slot, ptr, idx, w, a, b0, alt, vals):
    for n in range(lo, hi):
        k = kinds[n]
        if k == FACT:
            vals[n] = w[slot[n]] if slot[n] >= 0 else const[n]
            continue
        s = 0.0
        for e in range(ptr[n], ptr[n + 1]):
            s += vals[idx[e]]
        if k == ATOM:
            vals[n] = _sigm(a * (s + b0))
        elif k == RULE:
            z = s - (ptr[n + 1] - ptr[n]) + 1.0 + b0
            if alt:
                z += w[slot[n]]
            vals[n] = _sigm(a * z)
        else:
            vals[n] = s / (ptr[n + 1] - ptr[n]) * w[slot[n]]


@njit(cache=True, nogil=True)
def backward_range(lo, hi, kinds, slot, ptr, idx, w, vals, a, alt, adj, grad):
    """Propagate adjoints seeded in ``adj`` and accumulate into ``grad``."""
    for n in range(hi - 1, lo - 1, -1):
        g = adj[n]
        if g == 0.0:
            continue
        k = kinds[n]
        if k == FACT:
            if slot[n] >= 0:
                grad[slot[n]] += g
        elif k == AGG:
            m = ptr[n + 1] - ptr[n]
            s = 0.0
            for e in range(ptr[n], ptr[n + 1]):
                s += vals[idx[e]]
            grad[slot[n]] += g * (s / m)
            gi = g * w[slot[n]] / m
            for e in range(ptr[n], ptr[n + 1]):
                adj[idx[e]] += gi
        else:
            v = vals[n]
            dz = g * a * v * (1.0 - v)
            if k == RULE and alt:
                grad[slot[n]] += dz
            for e in range(ptr[n], ptr[n + 1]):
                adj[idx[e]] += dz


@dataclass
class Tape:
    net: GroundNetwork
    weights: np.ndarray
    frozen: np.ndarray
    values: np.ndarray
    params: ActivationParams

    def output(self, query) -> float:
        node = self.net.query_nodes.get(query, -1)
        return 0.0 if node < 0 else float(self.values[node])


def forward(net, store, params: ActivationParams = DEFAULT_PARAMS) -> Tape:
    w = store.array(net.keys)
    frozen = np.array([k in store.frozen for k in net.keys], dtype=bool)
    vals = np.zeros(net.size, dtype=np.float64)
    forward_range(0, net.size, net.kinds, net.const, net.slot, net.ptr, net.idx, w, params.a, params.b0, params.weight_in_and, vals)
    return Tape(net, w, frozen, vals, params)


def backward(tape: Tape, loss_grads: Mapping) -> dict[str, float]:
    """Gradient of sum(loss_grads[q] * output(q)) for every unfrozen key of the network."""
    net = tape.net
    adj = np.zeros(net.size, dtype=np.float64)
    for q, g in loss_grads.items():
        node = net.query_nodes.get(q, -1)
        if node >= 0:
            adj[node] += g
    grad = np.zeros(len(net.keys), dtype=np.float64)
    backward_range(0, net.size, net.kinds, net.slot, net.ptr, net.idx, tape.weights, tape.values,
                   tape.params.a, tape.params.weight_in_and, adj, grad)
    return {k: float(grad[i]) for i, k in enumerate(net.keys) if not tape.frozen[i]}
