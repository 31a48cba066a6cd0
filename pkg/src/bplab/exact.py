"""Exact Gibbs oracle by exhaustive enumeration.

The Gibbs measure factorizes over connected components, so each component is
enumerated on its own and the enumeration budget is charged per component:
``sum_c q**n_c * max(1, m_c)`` elementary operations.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .graph import FactorGraph, connected_components, far_set
from .messages import MessageSet

DEFAULT_BUDGET = 1 << 27


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MarginalTable:
    vars: tuple[int, ...]
    probs: np.ndarray  # shape (q,) * len(vars)

    @property
    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def to_dict(self) -> dict:
        return {"vars": list(self.vars), "probs": [float(p) for p in self.flat]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def enumeration_cost(G: FactorGraph) -> int:
    return sum(G.q ** len(vs) * max(1, len(cs)) for vs, cs in connected_components(G))


def log_tensor(G: FactorGraph, variables: Sequence[int], constraint_ids: Sequence[int]) -> np.ndarray:
    """Unnormalized log Gibbs weight over ``Omega^variables`` using only ``constraint_ids``.

    Every constraint's scope must lie inside ``variables``.
    """
    q, L = G.q, len(variables)
    pos = {v: i for i, v in enumerate(variables)}
    out = np.zeros((q,) * L)
    for a in constraint_ids:
        t = G.log_factor_table(a)
        axes = [pos[v] for v in G.scope(a)]
        order = np.argsort(axes)
        shape = [1] * L
        for ax in axes:
            shape[ax] = q
        out = out + np.transpose(t, order).reshape(shape)
    return out


def _expand_repeats(M: np.ndarray, distinct: list[int], vars: Sequence[int], q: int) -> np.ndarray:
    """Embed a table over distinct variables into one over a tuple with repeats."""
    if list(vars) == distinct:
        return M
    l = len(vars)
    grid = np.indices((q,) * l)
    first = {v: vars.index(v) for v in distinct}
    vals = M[tuple(grid[first[v]] for v in distinct)]
    mask = np.ones((q,) * l, dtype=bool)
    for s, v in enumerate(vars):
        mask &= grid[s] == grid[first[v]]
    return np.where(mask, vals, 0.0)


class _Block:
    def __init__(self, G: FactorGraph, variables: list[int], constraint_ids: list[int]):
        self.vars = variables
        self.cons = constraint_ids
        self.pos = {v: i for i, v in enumerate(variables)}
        self.logw = log_tensor(G, variables, constraint_ids)
        self.log_z = float(logsumexp(self.logw))
        self.probs = np.exp(self.logw - self.log_z)


class GibbsOracle:
    """Enumerated Gibbs measure of a factor graph, one table per connected component."""

    def __init__(self, G: FactorGraph, budget: int = DEFAULT_BUDGET):
        cost = enumeration_cost(G)
        if cost > budget:
            raise BudgetExceeded(f"enumeration cost {cost} exceeds budget {budget}")
        self.G = G
        self.budget = budget
        self.blocks = [_Block(G, vs, cs) for vs, cs in connected_components(G)]
        self.block_of = {v: b for b in self.blocks for v in b.vars}

    @property
    def log_partition(self) -> float:
        return float(sum(b.log_z for b in self.blocks))

    def marginal(self, vars: Sequence[int]) -> np.ndarray:
        """Joint law of the tuple ``vars`` (repeats allowed), shape ``(q,) * len(vars)``."""
        vars = list(vars)
        q = self.G.q
        distinct = list(dict.fromkeys(vars))
        # per-block marginals over the block's distinct vars, then outer product
        parts = []
        order: list[int] = []
        for b in self.blocks:
            mine = [v for v in distinct if v in b.pos]
            if not mine:
                continue
            axes = sorted(b.pos[v] for v in mine)
            other = tuple(i for i in range(len(b.vars)) if i not in axes)
            parts.append(b.probs.sum(axis=other))
            order.extend(b.vars[i] for i in axes)
        M = np.ones(())
        for p in parts:
            M = np.multiply.outer(M, p)
        M = np.transpose(M, [order.index(v) for v in distinct])
        return _expand_repeats(M, distinct, vars, q)

    def conditional_marginal(self, x: int, ell: int, sigma: Sequence[int]) -> np.ndarray:
        """Law of ``x`` given that all variables farther than ``ell`` agree with ``sigma``."""
        b = self.block_of[x]
        far = sorted(far_set(self.G, x, ell) & set(b.vars))
        return self._conditional(b, x, far, sigma)

    def _conditional(self, b: _Block, x: int, far: list[int], sigma) -> np.ndarray:
        idx: list = [slice(None)] * len(b.vars)
        for y in far:
            idx[b.pos[y]] = sigma[y]
        sub = b.logw[tuple(idx)]
        # remaining axes keep their relative order; locate x among them
        rest = [v for v in b.vars if v not in set(far)]
        xi = rest.index(x)
        lw = logsumexp(sub, axis=tuple(i for i in range(len(rest)) if i != xi))
        return np.exp(lw - logsumexp(lw))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` iid assignments, shape ``(count, n)``, by inverse CDF per component."""
        out = np.zeros((count, self.G.n), dtype=np.int64)
        for b in self.blocks:
            if not b.vars:
                continue
            cdf = np.cumsum(b.probs.reshape(-1))
            u = rng.random(count) * cdf[-1]
            flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
            coords = np.unravel_index(flat, b.probs.shape)
            for i, v in enumerate(b.vars):
                out[:, v] = coords[i]
        return out

    def full_probs(self) -> np.ndarray:
        """Gibbs law over all of ``Omega^n`` as a tensor of shape ``(q,) * n``."""
        return self.marginal(range(self.G.n)) if self.G.n else np.ones(())

    def messages(self) -> MessageSet:
        G, q = self.G, self.G.q
        E = len(G.incidences)
        v2c = np.empty((E, q))
        c2v = np.empty((E, q))
        cost = sum(q ** len(b.vars) for b in self.blocks for a in b.cons for _ in G.scope(a))
        if 2 * cost > self.budget:
            raise BudgetExceeded(f"message enumeration cost {2 * cost} exceeds budget {self.budget}")
        for e, (x, a) in enumerate(G.incidences):
            b = self.block_of[x]
            xi = b.pos[x]
            other = tuple(i for i in range(len(b.vars)) if i != xi)
            # x -> a: marginal of x in G - a
            lw = b.logw - log_tensor(G, b.vars, [a])
            m = logsumexp(lw, axis=other)
            v2c[e] = np.exp(m - logsumexp(m))
            # a -> x: marginal of x after deleting the other constraints at x
            drop = [c for c in G.constraints_of(x) if c != a]
            lw = b.logw - log_tensor(G, b.vars, drop)
            m = logsumexp(lw, axis=other)
            c2v[e] = np.exp(m - logsumexp(m))
        return MessageSet(G.incidences, v2c, c2v)


def log_gibbs_weight(G: FactorGraph, sigma: Sequence[int]) -> float:
    total = 0.0
    for c in G.constraints:
        w = G.weights[c.weight].table
        total += float(np.log(w[tuple(sigma[v] for v in c.neighbors)]))
    return total


def log_partition(G: FactorGraph, budget: int = DEFAULT_BUDGET) -> float:
    return GibbsOracle(G, budget).log_partition


def joint_marginal(G: FactorGraph, vars: Sequence[int], budget: int = DEFAULT_BUDGET) -> MarginalTable:
    vars = tuple(int(v) for v in vars)
    if not vars:
        raise ValueError("need at least one variable")
    return MarginalTable(vars, GibbsOracle(G, budget).marginal(vars))


def conditional_marginal(
    G: FactorGraph, x: int, ell: int, sigma: Sequence[int], budget: int = DEFAULT_BUDGET
) -> MarginalTable:
    return MarginalTable((x,), GibbsOracle(G, budget).conditional_marginal(x, ell, sigma))


def gibbs_sample(
    G: FactorGraph, rng: np.random.Generator, count: int, budget: int = DEFAULT_BUDGET
) -> np.ndarray:
    return GibbsOracle(G, budget).sample(rng, count)


def exact_messages(G: FactorGraph, budget: int = DEFAULT_BUDGET) -> MessageSet:
    """Cavity marginals: x->a is x's law in G - a, a->x is x's law with the rest of ∂x deleted."""
    return GibbsOracle(G, budget).messages()


def all_assignments(n: int, q: int):
    """Row-major iterator over ``Omega^n`` (last coordinate fastest)."""
    return itertools.product(range(q), repeat=n)
