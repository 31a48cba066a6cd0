"""Message families: one distribution per direction per distinct (variable, constraint) incidence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .graph import FactorGraph


@dataclass(frozen=True, eq=False)
class MessageSet:
    """Messages keyed by the graph's incidence order.

    Row ``e`` of ``var_to_con`` / ``con_to_var`` belongs to ``edges[e] = (x, a)``.
    """

    edges: tuple[tuple[int, int], ...]
    var_to_con: np.ndarray
    con_to_var: np.ndarray

    @classmethod
    def uniform(cls, G: FactorGraph) -> "MessageSet":
        E = len(G.incidences)
        u = np.full((E, G.q), 1.0 / G.q)
        return cls(G.incidences, u, u.copy())

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}

    def v2c(self, x: int, a: int) -> np.ndarray:
        return self.var_to_con[self.index[(x, a)]]

    def c2v(self, a: int, x: int) -> np.ndarray:
        return self.con_to_var[self.index[(x, a)]]

    def max_tv(self, other: "MessageSet") -> float:
        if len(self.edges) == 0:
            return 0.0
        d1 = 0.5 * np.abs(self.var_to_con - other.var_to_con).sum(axis=1)
        d2 = 0.5 * np.abs(self.con_to_var - other.con_to_var).sum(axis=1)
        return float(max(d1.max(), d2.max()))

    def to_dict(self) -> dict:
        return {
            f"{x}:{a}": {
                "var_to_con": [float(v) for v in self.var_to_con[i]],
                "con_to_var": [float(v) for v in self.con_to_var[i]],
            }
            for i, (x, a) in enumerate(self.edges)
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, G: FactorGraph, data: dict) -> "MessageSet":
        v2c = np.array([data[f"{x}:{a}"]["var_to_con"] for x, a in G.incidences], dtype=float)
        c2v = np.array([data[f"{x}:{a}"]["con_to_var"] for x, a in G.incidences], dtype=float)
        shape = (len(G.incidences), G.q)
        return cls(G.incidences, v2c.reshape(shape), c2v.reshape(shape))
