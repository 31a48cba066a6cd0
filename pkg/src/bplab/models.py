"""Weight families and the random factor-graph generators.

Every generator is a pure function of ``(spec, params)``: the seed lives in
``params`` and all randomness is drawn from ``numpy`` sub-streams derived
from it, so a single constraint can be replayed from its index alone.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import poisson

from .graph import Constraint, FactorGraph, SpinAlphabet, WeightFunction

# sub-stream tags
_COUNT, _CONSTRAINT, _MATCHING = 0, 1, 2


class RestartLimitExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    spins: SpinAlphabet
    k: int
    family: tuple[WeightFunction, ...]
    rho: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if len(self.family) != len(self.rho) or not self.family:
            raise ValueError("family and rho must be non-empty and of equal length")
        if abs(sum(self.rho) - 1.0) > 1e-9 or min(self.rho) < 0:
            raise ValueError("rho must be a probability vector")
        for w in self.family:
            if w.arity != self.k or w.q != self.spins.size:
                raise ValueError("every weight must have arity k over the model's spins")
            if np.any(w.table <= 0):
                raise ValueError("weights must be strictly positive")

    @property
    def q(self) -> int:
        return self.spins.size


@dataclass(frozen=True)
class GeneratorParams:
    n: int
    d: float
    eps: float = 0.0
    seed: int = 0
    max_restarts: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eps must lie in [0, 1)")


# -- weight functions --------------------------------------------------------


def ksat_weight(k: int, signs: Sequence[int], beta: float) -> WeightFunction:
    """exp(-beta * 1{sigma = s}) on {+1, -1}^k; spin index 0 is +1, index 1 is -1."""
    if len(signs) != k:
        raise ValueError("need one sign per literal")
    t = np.ones((2,) * k)
    t[tuple(0 if s > 0 else 1 for s in signs)] = np.exp(-beta)
    return WeightFunction(2, t)


def potts_weight(q: int, beta: float) -> WeightFunction:
    return WeightFunction(q, np.where(np.eye(q, dtype=bool), np.exp(beta), 1.0))


def ising_weight(beta: float) -> WeightFunction:
    """exp(beta * s * t) for s, t in {+1, -1}."""
    s = np.array([1.0, -1.0])
    return WeightFunction(2, np.exp(beta * np.outer(s, s)))


def marginalize_weight(psi: WeightFunction, J: Sequence[int]) -> WeightFunction:
    """Average ``psi`` over the coordinates outside ``J`` (0-based, kept in original order)."""
    J = sorted(set(J))
    k = psi.arity
    if any(not 0 <= j < k for j in J):
        raise ValueError(f"coordinates {J} out of range for arity {k}")
    missing = tuple(j for j in range(k) if j not in J)
    return WeightFunction(psi.q, psi.table.mean(axis=missing) if missing else psi.table)


# -- presets -----------------------------------------------------------------


def ksat_model(k: int = 3, beta: float = 0.5) -> ModelSpec:
    family = tuple(ksat_weight(k, s, beta) for s in itertools.product((1, -1), repeat=k))
    rho = tuple(1.0 / len(family) for _ in family)
    return ModelSpec(SpinAlphabet(("+1", "-1")), k, family, rho, name="ksat")


def potts_model(q: int = 2, beta: float = 1.0) -> ModelSpec:
    return ModelSpec(SpinAlphabet.of_size(q), 2, (potts_weight(q, beta),), (1.0,), name="potts")


def ising_model(beta: float = 1.0) -> ModelSpec:
    return ModelSpec(SpinAlphabet(("+1", "-1")), 2, (ising_weight(beta),), (1.0,), name="ising")


def model_from_dict(data: dict) -> ModelSpec:
    """Load a model; ``{"preset": "ksat"|"potts"|"ising", ...}`` or an explicit family."""
    preset = data.get("preset")
    beta = float(data.get("beta", 1.0))
    if preset == "ksat":
        return ksat_model(int(data.get("k", 3)), beta)
    if preset == "potts":
        return potts_model(int(data.get("q", 2)), beta)
    if preset == "ising":
        return ising_model(beta)
    if preset is not None:
        raise ValueError(f"unknown preset {preset!r}")
    spins = data["spins"]
    spins = SpinAlphabet.of_size(spins) if isinstance(spins, int) else SpinAlphabet(tuple(map(str, spins)))
    k = int(data["k"])
    family = tuple(
        WeightFunction.from_flat(spins.size, k, f["table"] if isinstance(f, dict) else f)
        for f in data["family"]
    )
    rho = tuple(float(r) for r in data.get("rho", [1.0 / len(family)] * len(family)))
    return ModelSpec(spins, k, family, rho)


def load_model(path: str) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# -- randomness --------------------------------------------------------------


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *key])))


def _poisson(rng: np.random.Generator, mean: float) -> int:
    # inversion from a single uniform
    if mean <= 0:
        return 0
    return int(poisson.ppf(rng.random(), mean))


def _pick_weight(rng: np.random.Generator, rho: Sequence[float]) -> int:
    return int(np.searchsorted(np.cumsum(rho), rng.random() * sum(rho), side="right").clip(0, len(rho) - 1))


def _attach(n: int, d: int, slot_counts: Sequence[int], rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Configuration model: match constraint clones injectively into ``d`` clones per variable."""
    clones = rng.permutation(n * d)
    out, pos = [], 0
    for c in slot_counts:
        out.append(tuple(int(v) // d for v in clones[pos : pos + c]))
        pos += c
    return out


# -- generators --------------------------------------------------------------


def sample_poisson(spec: ModelSpec, params: GeneratorParams) -> FactorGraph:
    """Po(dn/k) constraints, iid weights from rho, iid uniform k-tuples (repeats allowed)."""
    n, k = params.n, spec.k
    m = _poisson(_stream(params.seed, _COUNT), params.d * n / k)
    cons = []
    for i in range(m):
        rng = _stream(params.seed, _CONSTRAINT, i)
        w = _pick_weight(rng, spec.rho)
        nbrs = tuple(int(v) for v in rng.integers(0, n, size=k))
        cons.append(Constraint(nbrs, w))
    return FactorGraph(n, spec.spins, tuple(cons), spec.family)


def sample_regular(spec: ModelSpec, params: GeneratorParams) -> FactorGraph:
    """floor(dn/k) constraints attached by the configuration model with d clones per variable."""
    d = int(params.d)
    if d != params.d or d < 1:
        raise ValueError("regular model needs a positive integer d")
    n, k = params.n, spec.k
    m = d * n // k
    weights = [_pick_weight(_stream(params.seed, _CONSTRAINT, i), spec.rho) for i in range(m)]
    tuples = _attach(n, d, [k] * m, _stream(params.seed, _MATCHING))
    cons = tuple(Constraint(t, w) for t, w in zip(tuples, weights))
    return FactorGraph(n, spec.spins, cons, spec.family)


@dataclass(frozen=True)
class PercolatedDraw:
    graph: FactorGraph
    restarts: int
    active_slots: int
    kept: tuple[tuple[int, ...], ...] = field(default=())


def percolated_draw(spec: ModelSpec, params: GeneratorParams) -> PercolatedDraw:
    """Percolated regular model with bookkeeping (restart count, kept coordinates)."""
    d = int(params.d)
    if d != params.d or d < 1:
        raise ValueError("regular model needs a positive integer d")
    n, k, eps = params.n, spec.k, params.eps
    for attempt in range(params.max_restarts + 1):
        m = _poisson(_stream(params.seed, attempt, _COUNT), d * n / k)
        picks, kept = [], []
        for i in range(m):
            rng = _stream(params.seed, attempt, _CONSTRAINT, i)
            J = tuple(int(j) for j in np.flatnonzero(rng.random(k) < 1.0 - eps))
            picks.append(_pick_weight(rng, spec.rho))
            kept.append(J)
        total = sum(len(J) for J in kept)
        if total > d * n:
            continue
        tuples = _attach(n, d, [len(J) for J in kept], _stream(params.seed, attempt, _MATCHING))
        pool: list[WeightFunction] = []
        cache: dict[tuple[int, tuple[int, ...]], int] = {}
        cons = []
        for w, J, t in zip(picks, kept, tuples):
            if (w, J) not in cache:
                cache[(w, J)] = len(pool)
                pool.append(spec.family[w] if len(J) == k else marginalize_weight(spec.family[w], J))
            cons.append(Constraint(t, cache[(w, J)]))
        G = FactorGraph(n, spec.spins, tuple(cons), tuple(pool))
        return PercolatedDraw(G, attempt, total, tuple(kept))
    raise RestartLimitExceeded(f"no admissible draw after {params.max_restarts} restarts")


def sample_percolated_regular(spec: ModelSpec, params: GeneratorParams) -> FactorGraph:
    return percolated_draw(spec, params).graph


GENERATORS = {
    "poisson": sample_poisson,
    "regular": sample_regular,
    "percolated": sample_percolated_regular,
}
