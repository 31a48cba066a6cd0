"""Factor graphs: representation, validation, surgery and bipartite distances.

A constraint's neighbor tuple is ordered and may repeat a variable.  All slots
that hold the same variable carry the same spin, so every computation works
on the constraint's *scope* (distinct neighbors in order of first appearance)
with the weight table restricted to its diagonal.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SpinAlphabet:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise GraphError("need at least two spins")
        if len(set(self.labels)) != len(self.labels):
            raise GraphError("spin labels must be distinct")

    @classmethod
    def of_size(cls, q: int) -> "SpinAlphabet":
        return cls(tuple(str(i) for i in range(q)))

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Positive table over Omega^arity, stored with shape ``(q,) * arity``."""

    q: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (self.q,) * t.ndim:
            raise GraphError(f"table shape {t.shape} is not a power of ({self.q},)")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @classmethod
    def from_flat(cls, q: int, arity: int, values: Sequence[float]) -> "WeightFunction":
        values = np.asarray(values, dtype=float)
        if values.size != q**arity:
            raise GraphError(f"expected {q ** arity} entries, got {values.size}")
        return cls(q, values.reshape((q,) * arity))

    @classmethod
    def constant(cls, q: int, arity: int, value: float = 1.0) -> "WeightFunction":
        return cls(q, np.full((q,) * arity, float(value)))

    @property
    def arity(self) -> int:
        return self.table.ndim

    @property
    def flat(self) -> np.ndarray:
        # row-major, last coordinate fastest
        return self.table.reshape(-1)

    def scaled(self, c: float) -> "WeightFunction":
        return WeightFunction(self.q, self.table * c)

    def equals(self, other: "WeightFunction") -> bool:
        return self.q == other.q and np.array_equal(self.table, other.table)


@dataclass(frozen=True)
class Constraint:
    neighbors: tuple[int, ...]
    weight: int

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    @property
    def scope(self) -> tuple[int, ...]:
        return tuple(dict.fromkeys(self.neighbors))


@dataclass(frozen=True)
class FactorGraph:
    """Immutable factor graph on variables ``0..n-1``.

    Constraint ids are positions in ``constraints``.  Constructing a graph
    performs no validation; see :func:`validate_graph` and :meth:`check`.
    """

    n: int
    spins: SpinAlphabet
    constraints: tuple[Constraint, ...] = ()
    weights: tuple[WeightFunction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "weights", tuple(self.weights))

    @classmethod
    def empty(cls, n: int, q: int = 2) -> "FactorGraph":
        return cls(n, SpinAlphabet.of_size(q))

    @classmethod
    def from_factors(
        cls,
        n: int,
        spins: SpinAlphabet | int,
        factors: Iterable[tuple[Sequence[int], WeightFunction]],
    ) -> "FactorGraph":
        """Build a graph from ``(neighbors, weight)`` pairs, pooling shared weight objects."""
        if isinstance(spins, int):
            spins = SpinAlphabet.of_size(spins)
        pool: list[WeightFunction] = []
        ids: dict[int, int] = {}
        cons = []
        for nbrs, w in factors:
            if id(w) not in ids:
                ids[id(w)] = len(pool)
                pool.append(w)
            cons.append(Constraint(tuple(int(v) for v in nbrs), ids[id(w)]))
        return cls(n, spins, tuple(cons), tuple(pool))

    @property
    def q(self) -> int:
        return self.spins.size

    @property
    def m(self) -> int:
        return len(self.constraints)

    def weight_of(self, a: int) -> WeightFunction:
        return self.weights[self.constraints[a].weight]

    def scope(self, a: int) -> tuple[int, ...]:
        return self._scopes[a]

    def factor_table(self, a: int) -> np.ndarray:
        """Weight table of ``a`` over its scope (repeated slots collapsed to the diagonal)."""
        return self._factor_tables[a]

    def log_factor_table(self, a: int) -> np.ndarray:
        return self._log_factor_tables[a]

    def constraints_of(self, x: int) -> tuple[int, ...]:
        return self._var_adj[x]

    def degree(self, x: int) -> int:
        return len(self._var_adj[x])

    @property
    def incidences(self) -> tuple[tuple[int, int], ...]:
        """Distinct ``(x, a)`` pairs, ordered by constraint id then scope order."""
        return self._incidences

    def check(self) -> "FactorGraph":
        problems = validate_graph(self)
        if problems:
            raise GraphError("; ".join(problems))
        return self

    @cached_property
    def _scopes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(c.scope for c in self.constraints)

    @cached_property
    def _factor_tables(self) -> tuple[np.ndarray, ...]:
        out = []
        for c, scope in zip(self.constraints, self._scopes):
            t = self.weights[c.weight].table
            if len(scope) != len(c.neighbors):
                letter = {v: _LETTERS[i] for i, v in enumerate(scope)}
                src = "".join(letter[v] for v in c.neighbors)
                dst = "".join(letter[v] for v in scope)
                t = np.einsum(f"{src}->{dst}", t)
            out.append(t)
        return tuple(out)

    @cached_property
    def _log_factor_tables(self) -> tuple[np.ndarray, ...]:
        return tuple(np.log(t) for t in self._factor_tables)

    @cached_property
    def _var_adj(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for a, scope in enumerate(self._scopes):
            for x in scope:
                adj[x].append(a)
        return tuple(tuple(v) for v in adj)

    @cached_property
    def _incidences(self) -> tuple[tuple[int, int], ...]:
        return tuple((x, a) for a, scope in enumerate(self._scopes) for x in scope)

    @cached_property
    def edge_offsets(self) -> tuple[int, ...]:
        """Incidence ``(scope(a)[j], a)`` sits at row ``edge_offsets[a] + j``."""
        out, pos = [], 0
        for scope in self._scopes:
            out.append(pos)
            pos += len(scope)
        return tuple(out)

    @cached_property
    def var_edges(self) -> tuple[np.ndarray, ...]:
        rows: list[list[int]] = [[] for _ in range(self.n)]
        for e, (x, _) in enumerate(self._incidences):
            rows[x].append(e)
        return tuple(np.array(r, dtype=np.int64) for r in rows)


def validate_graph(G: FactorGraph) -> list[str]:
    """Return a list of violations; empty means the graph is valid."""
    problems = []
    if G.n < 0:
        problems.append(f"negative variable count {G.n}")
    for i, w in enumerate(G.weights):
        if w.q != G.q:
            problems.append(f"weight {i}: spin count {w.q} != {G.q}")
        if not np.all(np.isfinite(w.table)):
            problems.append(f"weight {i}: non-finite weight")
        elif np.any(w.table <= 0):
            problems.append(f"weight {i}: non-positive weight")
    for a, c in enumerate(G.constraints):
        for v in c.neighbors:
            if not 0 <= v < G.n:
                problems.append(f"constraint {a}: variable index {v} out of range")
        if not 0 <= c.weight < len(G.weights):
            problems.append(f"constraint {a}: unknown weight {c.weight}")
        elif G.weights[c.weight].arity != len(c.neighbors):
            problems.append(
                f"constraint {a}: arity mismatch (weight arity "
                f"{G.weights[c.weight].arity}, {len(c.neighbors)} neighbors)"
            )
    return problems


# -- surgery -----------------------------------------------------------------


def remove_constraints(G: FactorGraph, ids: Iterable[int]) -> tuple[FactorGraph, dict[int, int]]:
    """Delete a set of constraints; returns the new graph and the old->new id map of survivors."""
    drop = set(ids)
    for a in drop:
        if not 0 <= a < G.m:
            raise GraphError(f"unknown constraint id {a}")
    kept = [a for a in range(G.m) if a not in drop]
    idmap = {a: i for i, a in enumerate(kept)}
    H = FactorGraph(G.n, G.spins, tuple(G.constraints[a] for a in kept), G.weights)
    return H, idmap


def remove_constraint(G: FactorGraph, a: int) -> tuple[FactorGraph, dict[int, int]]:
    return remove_constraints(G, [a])


def cavity_restrict(G: FactorGraph, x: int, a: int) -> FactorGraph:
    """Delete every constraint of ``x`` except ``a`` (the graph defining the message a -> x)."""
    if not 0 <= a < G.m:
        raise GraphError(f"unknown constraint id {a}")
    if x not in G.scope(a):
        raise GraphError(f"variable {x} is not a neighbor of constraint {a}")
    return remove_constraints(G, [b for b in G.constraints_of(x) if b != a])[0]


def remove_variable(G: FactorGraph, x: int) -> tuple[FactorGraph, dict[int, int], dict[int, int]]:
    """Delete ``x`` together with all constraints touching it.

    Returns the graph on ``n - 1`` variables and the old->new variable and
    constraint id maps.
    """
    if not 0 <= x < G.n:
        raise GraphError(f"unknown variable {x}")
    H, cmap = remove_constraints(G, G.constraints_of(x))
    vmap = {v: (v if v < x else v - 1) for v in range(G.n) if v != x}
    cons = tuple(Constraint(tuple(vmap[v] for v in c.neighbors), c.weight) for c in H.constraints)
    return FactorGraph(G.n - 1, G.spins, cons, G.weights), vmap, cmap


def add_constraint(G: FactorGraph, neighbors: Sequence[int], weight: WeightFunction) -> FactorGraph:
    """Append a constraint; the new id is ``G.m``."""
    pool = list(G.weights)
    idx = next((i for i, w in enumerate(pool) if w is weight), None)
    if idx is None:
        idx = len(pool)
        pool.append(weight)
    c = Constraint(tuple(int(v) for v in neighbors), idx)
    return FactorGraph(G.n, G.spins, G.constraints + (c,), tuple(pool))


def relabel_variables(G: FactorGraph, perm: Sequence[int]) -> FactorGraph:
    """Rename variable ``v`` to ``perm[v]``."""
    cons = tuple(Constraint(tuple(int(perm[v]) for v in c.neighbors), c.weight) for c in G.constraints)
    return FactorGraph(G.n, G.spins, cons, G.weights)


def subgraph(G: FactorGraph, variables: Sequence[int], constraint_ids: Sequence[int]) -> FactorGraph:
    """Graph on ``variables`` (renumbered 0..len-1 in the given order) keeping ``constraint_ids``."""
    vmap = {v: i for i, v in enumerate(variables)}
    cons = tuple(
        Constraint(tuple(vmap[v] for v in G.constraints[a].neighbors), G.constraints[a].weight)
        for a in constraint_ids
    )
    return FactorGraph(len(variables), G.spins, cons, G.weights)


# -- bipartite structure -----------------------------------------------------


def _bfs(G: FactorGraph, start: tuple[str, int]) -> dict[tuple[str, int], int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        kind, i = node
        nbrs = G.constraints_of(i) if kind == "v" else G.scope(i)
        other = "c" if kind == "v" else "v"
        for j in nbrs:
            nxt = (other, j)
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def variable_distances(G: FactorGraph, x: int) -> dict[int, int]:
    """Bipartite distance from ``x`` to every reachable variable (always even)."""
    return {i: d for (kind, i), d in _bfs(G, ("v", x)).items() if kind == "v"}


def far_set(G: FactorGraph, x: int, ell: int) -> frozenset[int]:
    """Variables whose bipartite distance from ``x`` exceeds ``ell``."""
    dist = variable_distances(G, x)
    return frozenset(y for y in range(G.n) if y != x and dist.get(y, np.inf) > ell)


def eccentricity(G: FactorGraph, x: int) -> int:
    return max(variable_distances(G, x).values())


def diameter(G: FactorGraph) -> int:
    """Largest finite bipartite distance between any two nodes (variables or constraints)."""
    best = 0
    nodes = [("v", x) for x in range(G.n)] + [("c", a) for a in range(G.m)]
    for node in nodes:
        best = max(best, max(_bfs(G, node).values()))
    return best


def connected_components(G: FactorGraph) -> list[tuple[list[int], list[int]]]:
    """Components as ``(sorted variable ids, sorted constraint ids)``.

    Arity-0 constraints form components with no variables.
    """
    parent = list(range(G.n + G.m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a in range(G.m):
        for x in G.scope(a):
            ra, rx = find(G.n + a), find(x)
            if ra != rx:
                parent[ra] = rx
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for i in range(G.n + G.m):
        vs, cs = groups.setdefault(find(i), ([], []))
        if i < G.n:
            vs.append(i)
        else:
            cs.append(i - G.n)
    return sorted(groups.values(), key=lambda g: (g[0][:1] or [G.n], g[1][:1]))


def is_acyclic(G: FactorGraph) -> bool:
    """True iff the bipartite graph of distinct incidences is a forest."""
    edges = len(G.incidences)
    return edges == G.n + G.m - len(connected_components(G))


# -- JSON --------------------------------------------------------------------


def graph_to_dict(G: FactorGraph) -> dict:
    return {
        "n": G.n,
        "spins": list(G.spins.labels),
        "weights": [{"arity": w.arity, "table": [float(v) for v in w.flat]} for w in G.weights],
        "constraints": [{"neighbors": list(c.neighbors), "weight": c.weight} for c in G.constraints],
    }


def graph_from_dict(data: dict) -> FactorGraph:
    spins = SpinAlphabet(tuple(str(s) for s in data["spins"]))
    weights = tuple(WeightFunction.from_flat(spins.size, w["arity"], w["table"]) for w in data["weights"])
    cons = tuple(Constraint(tuple(c["neighbors"]), c["weight"]) for c in data["constraints"])
    return FactorGraph(int(data["n"]), spins, cons, weights)


def dumps_graph(G: FactorGraph) -> str:
    # float repr is the shortest string that round-trips exactly
    return json.dumps(graph_to_dict(G))


def loads_graph(text: str) -> FactorGraph:
    return graph_from_dict(json.loads(text))
