"""Replica-symmetry measurements at oracle scale.

Scores averaged over variable tuples use *distinct* variables only: the
self-pair terms are trivially of order one and would dominate any finite-n
average.  Ordered and unordered tuple averages coincide because the total
variation distance is invariant under permuting coordinates.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exact import DEFAULT_BUDGET, BudgetExceeded, GibbsOracle
from .graph import FactorGraph, far_set, variable_distances


@dataclass(frozen=True)
class SymmetryReport:
    score: float
    pair_count: int
    mode: str = "exact"
    stderr: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def tv_distance(p, q) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def empirical_spin_dist(sigma: Sequence[int], U: Iterable[int], q: int) -> np.ndarray:
    U = list(U)
    if not U:
        raise ValueError("U must be non-empty")
    return np.bincount(np.asarray(sigma)[U], minlength=q)[:q] / len(U)


def _product_gap(joint: np.ndarray) -> float:
    """TV distance between a joint table and the product of its one-dimensional marginals."""
    l = joint.ndim
    prod = np.ones(())
    for i in range(l):
        prod = np.multiply.outer(prod, joint.sum(axis=tuple(j for j in range(l) if j != i)))
    return tv_distance(joint, prod)


class ExplicitMeasure:
    """A probability tensor over ``Omega^n`` of shape ``(q,) * n``."""

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim and probs.shape != (probs.shape[0],) * probs.ndim:
            raise ValueError("probs must have shape (q,) * n")
        self.probs = probs / probs.sum()

    @classmethod
    def from_graph(cls, G: FactorGraph, budget: int = DEFAULT_BUDGET) -> "ExplicitMeasure":
        if G.q**G.n > budget:
            raise BudgetExceeded(f"explicit measure needs {G.q ** G.n} entries")
        return cls(GibbsOracle(G, budget).full_probs())

    @classmethod
    def uniform_on(cls, assignments: Iterable[Sequence[int]], n: int, q: int) -> "ExplicitMeasure":
        p = np.zeros((q,) * n)
        for s in assignments:
            p[tuple(s)] = 1.0
        return cls(p)

    @property
    def n(self) -> int:
        return self.probs.ndim

    @property
    def q(self) -> int:
        return self.probs.shape[0]

    def marginal(self, vars: Sequence[int]) -> np.ndarray:
        vars = list(vars)
        other = tuple(i for i in range(self.n) if i not in vars)
        M = self.probs.sum(axis=other)
        kept = sorted(vars)
        return np.transpose(M, [kept.index(v) for v in vars])

    def mass(self, assignments: Iterable[Sequence[int]]) -> float:
        return float(sum(self.probs[tuple(s)] for s in assignments))

    def condition(self, assignments: Iterable[Sequence[int]]) -> "ExplicitMeasure":
        mask = np.zeros(self.probs.shape, dtype=bool)
        for s in assignments:
            mask[tuple(s)] = True
        p = np.where(mask, self.probs, 0.0)
        if p.sum() <= 0:
            raise ValueError("conditioning set has zero mass")
        return ExplicitMeasure(p)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Assignments with positive mass as an ``(N, n)`` array, and their weights."""
        flat = self.probs.reshape(-1)
        idx = np.flatnonzero(flat > 0)
        configs = np.stack(np.unravel_index(idx, self.probs.shape), axis=1) if self.n else np.zeros((1, 0), int)
        return configs.astype(np.int64), flat[idx]


# -- pairwise and l-wise symmetry ---------------------------------------------


def pair_symmetry_score(
    G: FactorGraph,
    budget: int = DEFAULT_BUDGET,
    min_distance: float | None = None,
    oracle: GibbsOracle | None = None,
) -> SymmetryReport:
    """Mean TV gap between pair marginals and products over ordered pairs ``i != j``.

    With ``min_distance`` only pairs at bipartite distance greater than it are averaged.
    """
    oracle = oracle or GibbsOracle(G, budget)
    total, count = 0.0, 0
    for i in range(G.n):
        dist = variable_distances(G, i) if min_distance is not None else None
        for j in range(i + 1, G.n):
            if dist is not None and dist.get(j, math.inf) <= min_distance:
                continue
            count += 1
            if oracle.block_of[i] is oracle.block_of[j]:
                total += _product_gap(oracle.marginal((i, j)))
    return SymmetryReport(total / count if count else 0.0, 2 * count)


def _l_symmetry(marginal, n: int, l: int, budget: int, rng, mode: str) -> SymmetryReport:
    if l < 1:
        raise ValueError("l must be positive")
    if n < l:
        return SymmetryReport(0.0, 0, "exact")
    count = math.comb(n, l)
    if mode == "exact" or (mode == "auto" and count <= budget):
        vals = [_product_gap(marginal(t)) for t in itertools.combinations(range(n), l)]
        return SymmetryReport(float(np.mean(vals)), math.perm(n, l), "exact")
    rng = rng if rng is not None else np.random.default_rng(0)
    vals = np.array([_product_gap(marginal(tuple(rng.choice(n, l, replace=False)))) for _ in range(budget)])
    stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return SymmetryReport(float(vals.mean()), len(vals), "sampled", stderr)


def l_symmetry_score(
    G: FactorGraph,
    l: int,
    budget: int = 100_000,
    rng: np.random.Generator | None = None,
    mode: str = "auto",
    enum_budget: int = DEFAULT_BUDGET,
) -> SymmetryReport:
    """Mean gap between l-tuple joints and products over distinct tuples.

    Exact when there are at most ``budget`` tuples (or ``mode="exact"``),
    otherwise ``budget`` uniformly sampled tuples with a standard error.
    """
    oracle = GibbsOracle(G, enum_budget)
    return _l_symmetry(oracle.marginal, G.n, l, budget, rng, mode)


def measure_l_symmetry(mu: ExplicitMeasure, l: int, budget: int = 100_000, rng=None, mode: str = "auto") -> SymmetryReport:
    return _l_symmetry(mu.marginal, mu.n, l, budget, rng, mode)


def state_score(
    G: FactorGraph, S: Iterable[Sequence[int]], l: int, budget: int = DEFAULT_BUDGET
) -> float:
    """l-wise symmetry score of the Gibbs measure conditioned on the assignment set ``S``."""
    mu = ExplicitMeasure.from_graph(G, budget)
    return measure_l_symmetry(mu.condition(S), l, mode="exact").score


# -- regularity and homogeneity ------------------------------------------------


@dataclass(frozen=True)
class RegularityResult:
    worst_subset: tuple[int, ...]
    deviation: float
    exhaustive: bool
    regular: bool | None  # None: no violation found, but not certified

    @property
    def verdict(self) -> str:
        if self.regular is None:
            return "inconclusive"
        return "pass" if self.regular else "fail"


def _deviation(onehot: np.ndarray, w: np.ndarray, cols: np.ndarray, ref: np.ndarray) -> float:
    freq = onehot[:, cols, :].mean(axis=1)
    return float(w @ (0.5 * np.abs(freq - ref).sum(axis=1)))


def regularity_violation_search(
    mu: ExplicitMeasure,
    U: Sequence[int],
    eps: float,
    budget: int = 10**8,
    rng: np.random.Generator | None = None,
) -> RegularityResult:
    """Largest ``<TV(sigma[.|S], sigma[.|U])>_mu`` over ``S ⊂ U`` with ``|S| >= eps |U|``.

    Exhaustive (and certified) when ``|U| <= 15`` and the work fits ``budget``;
    otherwise a seeded random-restart local search that can only certify violations.
    """
    U = sorted(U)
    if not U:
        raise ValueError("U must be non-empty")
    configs, w = mu.support()
    onehot = np.eye(mu.q)[configs]  # (N, n, q)
    Ucols = np.array(U)
    ref = onehot[:, Ucols, :].mean(axis=1)
    smin = max(1, math.ceil(eps * len(U) - 1e-12))
    N = len(w)
    n_subsets = sum(math.comb(len(U), s) for s in range(smin, len(U) + 1))
    best, best_dev = tuple(U), 0.0
    if len(U) <= 15 and n_subsets * N * len(U) <= budget:
        for s in range(smin, len(U) + 1):
            for S in itertools.combinations(U, s):
                dev = _deviation(onehot, w, np.array(S), ref)
                if dev > best_dev:
                    best, best_dev = S, dev
        return RegularityResult(best, best_dev, True, best_dev < eps)

    rng = rng if rng is not None else np.random.default_rng(0)
    evals = max(1, budget // max(1, N * len(U)))
    used = 0
    while used < evals:
        size = int(rng.integers(smin, len(U) + 1))
        cur = set(rng.choice(U, size, replace=False).tolist())
        cur_dev = _deviation(onehot, w, np.array(sorted(cur)), ref)
        used += 1
        improved = True
        while improved and used < evals:
            improved = False
            for u in U:
                cand = cur ^ {u}
                if len(cand) < smin:
                    continue
                dev = _deviation(onehot, w, np.array(sorted(cand)), ref)
                used += 1
                if dev > cur_dev + 1e-15:
                    cur, cur_dev, improved = cand, dev, True
                    break
                if used >= evals:
                    break
        if cur_dev > best_dev:
            best, best_dev = tuple(sorted(cur)), cur_dev
    return RegularityResult(best, best_dev, False, False if best_dev >= eps else None)


@dataclass
class PartitionPair:
    """Variable partition of ``[n]`` and a partition of ``Omega^n`` into explicit assignment lists."""

    var_partition: list[list[int]]
    state_partition: list[list[tuple[int, ...]]]

    def validate(self, n: int, q: int) -> None:
        seen: set[int] = set()
        for part in self.var_partition:
            if not part or seen & set(part):
                raise ValueError("variable cells must be non-empty and disjoint")
            seen |= set(part)
        if seen != set(range(n)):
            raise ValueError("variable cells must cover [n]")
        states: set[tuple[int, ...]] = set()
        for cell in self.state_partition:
            cell = {tuple(int(v) for v in s) for s in cell}
            if not cell or states & cell:
                raise ValueError("state cells must be non-empty and disjoint")
            states |= cell
        if len(states) != q**n or any(len(s) != n or min(s, default=0) < 0 or max(s, default=0) >= q for s in states):
            raise ValueError("state cells must cover Omega^n")

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.var_partition), len(self.state_partition)


@dataclass
class Verdict:
    status: str  # pass | fail | inconclusive
    detail: dict = field(default_factory=dict)


def _combine(certified: float, possible: float, need: float) -> str:
    if certified >= need - 1e-12:
        return "pass"
    if possible < need - 1e-12:
        return "fail"
    return "inconclusive"


def regular_wrt_partition(
    mu: ExplicitMeasure, V: Sequence[Sequence[int]], eps: float, budget: int = 10**8, rng=None
) -> Verdict:
    """eps-regular on cells covering at least ``(1 - eps) n`` variables."""
    results = [regularity_violation_search(mu, part, eps, budget, rng) for part in V]
    certified = sum(len(p) for p, r in zip(V, results) if r.regular is True)
    possible = sum(len(p) for p, r in zip(V, results) if r.regular is not False)
    need = (1 - eps) * mu.n
    detail = {"cells": [(r.verdict, r.deviation, r.worst_subset) for r in results]}
    return Verdict(_combine(certified, possible, need), detail)


def homogeneity_check(
    mu: ExplicitMeasure,
    P: PartitionPair,
    eps: float,
    budget: int = 10**8,
    rng: np.random.Generator | None = None,
) -> dict[str, Verdict]:
    """Evaluate HM1-HM4 for a supplied pair of partitions.

    HM1 and HM3 share the index set I; I is taken to be every positive-mass
    cell on which the conditional measure is certified regular.
    """
    P.validate(mu.n, mu.q)
    V = P.var_partition
    masses = [mu.mass(cell) for cell in P.state_partition]

    cell_reg = []
    for cell, mass in zip(P.state_partition, masses):
        cell_reg.append(regular_wrt_partition(mu.condition(cell), V, eps, budget, rng) if mass > 0 else None)
    certified = sum(m for m, r in zip(masses, cell_reg) if r is not None and r.status == "pass")
    possible = sum(m for m, r in zip(masses, cell_reg) if r is not None and r.status != "fail")
    status = _combine(certified, possible, 1 - eps)
    out = {
        "HM1": Verdict(status, {"mass_of_I": certified, "cell_masses": masses}),
        "HM3": Verdict(status, {"cells": [None if r is None else r.status for r in cell_reg]}),
    }

    hm2 = Verdict("pass", {"max_gap": 0.0})
    for i, cell in enumerate(P.state_partition):
        X = np.array(cell, dtype=np.int64).reshape(len(cell), mu.n)
        onehot = np.eye(mu.q)[X]
        for j, part in enumerate(V):
            F = onehot[:, part, :].mean(axis=1)
            gaps = 0.5 * np.abs(F[:, None, :] - F[None, :, :]).sum(axis=2)
            a, b = np.unravel_index(np.argmax(gaps), gaps.shape)
            if gaps[a, b] > hm2.detail["max_gap"]:
                hm2.detail["max_gap"] = float(gaps[a, b])
            if gaps[a, b] >= eps and hm2.status == "pass":
                hm2 = Verdict("fail", {"max_gap": float(gaps[a, b]), "cell": i, "var_cell": j,
                                       "witness": (tuple(X[a].tolist()), tuple(X[b].tolist()))})
    out["HM2"] = hm2
    out["HM4"] = regular_wrt_partition(mu, V, eps, budget, rng)
    return {k: out[k] for k in ("HM1", "HM2", "HM3", "HM4")}


# -- non-reconstruction ----------------------------------------------------------


def nonreconstruction_score(
    G: FactorGraph,
    ell: int,
    budget: int = DEFAULT_BUDGET,
    rng: np.random.Generator | None = None,
    mode: str = "exact",
    samples: int = 1000,
    oracle: GibbsOracle | None = None,
) -> SymmetryReport:
    """(1/n) sum_x E_sigma TV(mu_x, mu_x[. | far boundary of x fixed to sigma]).

    ``pair_count`` holds the number of variables averaged (exact) or samples drawn (sampled).
    """
    oracle = oracle or GibbsOracle(G, budget)
    if G.n == 0:
        return SymmetryReport(0.0, 0, mode)
    if mode == "exact":
        total = 0.0
        for x in range(G.n):
            b = oracle.block_of[x]
            far = sorted(far_set(G, x, ell) & set(b.vars))
            if not far:
                continue
            axes = [b.pos[x]] + [b.pos[y] for y in far]
            other = tuple(i for i in range(len(b.vars)) if i not in axes)
            J = np.transpose(b.probs.sum(axis=other), np.argsort(np.argsort(axes)))
            J = J.reshape(G.q, -1)
            mass = J.sum(axis=0)
            mu_x = J.sum(axis=1)
            pos = mass > 0
            cond = J[:, pos] / mass[pos]
            total += float(mass[pos] @ (0.5 * np.abs(cond - mu_x[:, None]).sum(axis=0)))
        return SymmetryReport(total / G.n, G.n, "exact")

    rng = rng if rng is not None else np.random.default_rng(0)
    sigmas = oracle.sample(rng, samples)
    fars = [sorted(far_set(G, x, ell) & set(oracle.block_of[x].vars)) for x in range(G.n)]
    margs = [oracle.marginal((x,)) for x in range(G.n)]
    vals = np.zeros(samples)
    for s, sigma in enumerate(sigmas):
        acc = 0.0
        for x in range(G.n):
            if fars[x]:
                cond = oracle._conditional(oracle.block_of[x], x, fars[x], sigma)
                acc += tv_distance(margs[x], cond)
        vals[s] = acc / G.n
    stderr = float(vals.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return SymmetryReport(float(vals.mean()), samples, "sampled", stderr)
