"""Independent brute-force oracle and random graph builders for the test-suite.

The oracle loops over Omega^n in plain Python and reads the raw weight tables
through the neighbor tuples, so it shares no code path with ``bplab.exact``.
"""

import itertools
import math

import numpy as np

from bplab.graph import FactorGraph, WeightFunction
from bplab.models import ksat_weight, potts_weight


def brute_weights(G):
    out = {}
    for sigma in itertools.product(range(G.q), repeat=G.n):
        w = 1.0
        for c in G.constraints:
            w *= float(G.weights[c.weight].table[tuple(sigma[v] for v in c.neighbors)])
        out[sigma] = w
    return out


def brute_log_z(G):
    return math.log(sum(brute_weights(G).values()))


def brute_marginal(G, vars):
    W = brute_weights(G)
    Z = sum(W.values())
    out = np.zeros((G.q,) * len(vars))
    for sigma, w in W.items():
        out[tuple(sigma[v] for v in vars)] += w / Z
    return out


def random_table(rng, q, arity, lo=0.2, hi=3.0):
    return WeightFunction(q, rng.uniform(lo, hi, size=(q,) * arity))


def random_graph(rng, n, m, q=2, max_arity=3, repeats=True):
    factors = []
    for _ in range(m):
        r = int(rng.integers(0, max_arity + 1)) if repeats else int(rng.integers(1, max_arity + 1))
        nbrs = rng.integers(0, n, size=r) if repeats else rng.choice(n, size=min(r, n), replace=False)
        factors.append((nbrs, random_table(rng, q, len(nbrs))))
    return FactorGraph.from_factors(n, q, factors)


def _forest_weight(rng, q, arity):
    kind = rng.integers(3)
    if q == 2 and kind == 0 and arity >= 1:
        signs = rng.choice([1, -1], size=arity)
        return ksat_weight(arity, signs, float(rng.uniform(0.1, 2.0)))
    if arity == 2 and kind == 1:
        return potts_weight(q, float(rng.uniform(-1.5, 1.5)))
    return random_table(rng, q, arity)


def random_forest(rng, n, q=2, max_arity=3, max_block=2**12, extra_constraints=None, repeat_prob=0.15):
    """Random factor forest; components are merged only while ``q**size <= max_block``."""
    comp = list(range(n))
    members = {i: [i] for i in range(n)}
    factors = []
    target = extra_constraints if extra_constraints is not None else int(rng.integers(n // 2, 2 * n + 1))
    for _ in range(target):
        r = int(rng.integers(1, max_arity + 1))
        roots = list(members)
        rng.shuffle(roots)
        chosen, size = [], 0
        for root in roots:
            if len(chosen) == r:
                break
            if q ** (size + len(members[root])) <= max_block:
                chosen.append(root)
                size += len(members[root])
        if not chosen:
            continue
        vars_ = [int(rng.choice(members[root])) for root in chosen]
        slots = list(vars_)
        if rng.random() < repeat_prob:
            slots.append(int(rng.choice(vars_)))
            rng.shuffle(slots)
        factors.append((slots, _forest_weight(rng, q, len(slots))))
        new = chosen[0]
        for root in chosen[1:]:
            members[new].extend(members.pop(root))
        for v in members[new]:
            comp[v] = new
    return FactorGraph.from_factors(n, q, factors)


def potts_edge(beta=1.0, q=2, n=2):
    return FactorGraph.from_factors(n, q, [((0, 1), potts_weight(q, beta))])


def path_graph(weights, q=2):
    """x0 - a0 - x1 - a1 - x2 ... with pairwise constraint i between x_i and x_{i+1}."""
    return FactorGraph.from_factors(len(weights) + 1, q, [((i, i + 1), w) for i, w in enumerate(weights)])
