"""Belief Propagation: updates, fixed-point iteration, residuals and Bethe functionals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .graph import FactorGraph, is_acyclic
from .messages import MessageSet


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int
    final_delta: float
    converged: bool


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / v.sum(axis=-1, keepdims=True)


def _contract(table: np.ndarray, msgs: Sequence[np.ndarray], keep: int | None = None) -> np.ndarray:
    """Sum ``table * prod_j msgs[j][tau_j]``; leave axis ``keep`` open if given."""
    r = table.ndim
    ops: list = [table, list(range(r))]
    for j, m in enumerate(msgs):
        if j != keep:
            ops += [m, [j]]
    ops.append([keep] if keep is not None else [])
    return np.einsum(*ops)


def _var_updates(G: FactorGraph, M: MessageSet) -> np.ndarray:
    """For every edge (x, a): normalized product of c2v over ∂x minus a."""
    logc = np.log(M.con_to_var)
    out = np.empty_like(logc)
    for x in range(G.n):
        es = G.var_edges[x]
        if es.size == 0:
            continue
        total = logc[es].sum(axis=0)
        lw = total[None, :] - logc[es]
        out[es] = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    return out


def _con_updates(G: FactorGraph, M: MessageSet) -> np.ndarray:
    """For every edge (x, a): normalized sum of psi_a times the other incoming v2c messages."""
    out = np.empty_like(M.var_to_con)
    for a in range(G.m):
        scope = G.scope(a)
        if not scope:
            continue
        off = G.edge_offsets[a]
        T = G.factor_table(a)
        msgs = [M.var_to_con[off + j] for j in range(len(scope))]
        for j in range(len(scope)):
            out[off + j] = _normalize(_contract(T, msgs, keep=j))
    return out


def bp_step(G: FactorGraph, M: MessageSet, damping: float = 0.0) -> MessageSet:
    """One synchronous sweep; both message kinds are computed from the old family."""
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    v2c = _var_updates(G, M)
    c2v = _con_updates(G, M)
    if damping:
        v2c = _normalize((1 - damping) * v2c + damping * M.var_to_con)
        c2v = _normalize((1 - damping) * c2v + damping * M.con_to_var)
    return MessageSet(M.edges, v2c, c2v)


def bp_fixed_point(
    G: FactorGraph,
    init: MessageSet | None = None,
    damping: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple[MessageSet, ConvergenceReport]:
    """Iterate :func:`bp_step` until the largest per-message TV change is at most ``tol``.

    ``damping=None`` picks 0 on forests and 0.5 otherwise.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if damping is None:
        damping = 0.0 if is_acyclic(G) else 0.5
    M = init if init is not None else MessageSet.uniform(G)
    if not M.edges:
        return M, ConvergenceReport(0, 0.0, True)
    delta = np.inf
    for it in range(1, max_iter + 1):
        new = bp_step(G, M, damping)
        delta = new.max_tv(M)
        M = new
        if delta <= tol:
            return M, ConvergenceReport(it, delta, True)
    return M, ConvergenceReport(max_iter, float(delta), False)


def bp_residual(G: FactorGraph, M: MessageSet) -> float:
    """Total absolute violation of the BP equations, divided by n.

    This is the smallest eps for which ``M`` is an eps-BP fixed point.
    """
    if G.n == 0 or not M.edges:
        return 0.0
    v = np.abs(M.var_to_con - _var_updates(G, M)).sum()
    c = np.abs(M.con_to_var - _con_updates(G, M)).sum()
    return float((v + c) / G.n)


def _var_log_terms(G: FactorGraph, M: MessageSet) -> np.ndarray:
    logc = np.log(M.con_to_var)
    out = np.empty(G.n)
    for x in range(G.n):
        es = G.var_edges[x]
        out[x] = logsumexp(logc[es].sum(axis=0)) if es.size else np.log(G.q)
    return out


def _con_log_terms(G: FactorGraph, M: MessageSet) -> np.ndarray:
    out = np.empty(G.m)
    for a in range(G.m):
        off = G.edge_offsets[a]
        msgs = [M.var_to_con[off + j] for j in range(len(G.scope(a)))]
        out[a] = np.log(_contract(G.factor_table(a), msgs))
    return out


def _edge_log_terms(M: MessageSet) -> np.ndarray:
    return np.log((M.var_to_con * M.con_to_var).sum(axis=1))


def bethe_free_energy(G: FactorGraph, M: MessageSet) -> float:
    return float(_var_log_terms(G, M).sum() + _con_log_terms(G, M).sum() - _edge_log_terms(M).sum())


def bethe_marginal_form(
    G: FactorGraph, var_marginals: np.ndarray, con_marginals: Sequence[np.ndarray]
) -> float:
    """Bethe free energy written with variable and constraint marginals.

    ``con_marginals[a]`` is a table over ``G.scope(a)``.
    """
    var_marginals = np.asarray(var_marginals, dtype=float)
    total = 0.0
    for x in range(G.n):
        p = var_marginals[x]
        total += (G.degree(x) - 1) * float(np.sum(p * np.log(p)))
    for a in range(G.m):
        p = np.asarray(con_marginals[a], dtype=float)
        total += float(np.sum(p * (G.log_factor_table(a) - np.log(p))))
    return total


def beliefs(G: FactorGraph, M: MessageSet) -> tuple[np.ndarray, list[np.ndarray]]:
    """Variable beliefs from incoming messages, constraint beliefs from psi times v2c."""
    logc = np.log(M.con_to_var)
    var = np.empty((G.n, G.q))
    for x in range(G.n):
        es = G.var_edges[x]
        lw = logc[es].sum(axis=0) if es.size else np.zeros(G.q)
        var[x] = np.exp(lw - logsumexp(lw))
    con = []
    for a in range(G.m):
        T = G.factor_table(a)
        off = G.edge_offsets[a]
        w = T.copy()
        for j in range(T.ndim):
            shape = [1] * T.ndim
            shape[j] = G.q
            w = w * M.var_to_con[off + j].reshape(shape)
        con.append(w / w.sum())
    return var, con


def outgoing_beliefs(G: FactorGraph, M: MessageSet) -> np.ndarray:
    """Variable beliefs from the product of *outgoing* messages x -> a.

    Kept as a diagnostic next to :func:`beliefs`; on trees only the incoming
    form reproduces the exact marginals in general.
    """
    logv = np.log(M.var_to_con)
    out = np.empty((G.n, G.q))
    for x in range(G.n):
        es = G.var_edges[x]
        lw = logv[es].sum(axis=0) if es.size else np.zeros(G.q)
        out[x] = np.exp(lw - logsumexp(lw))
    return out


def ass_local_terms(G: FactorGraph, M: MessageSet, x: int) -> tuple[float, float, float]:
    """Cavity terms (S1, S2, S3) of variable ``x`` for the Aizenman-Sims-Starr increment."""
    es = G.var_edges[x]
    if es.size == 0:
        return float(np.log(G.q)), 0.0, 0.0
    logc = np.log(M.con_to_var[es])
    s1 = float(logsumexp(logc.sum(axis=0)))
    s2 = float(sum(ass_constraint_term(G, M, a) for a in G.constraints_of(x)))
    s3 = -float(_edge_log_terms(M)[es].sum())
    return s1, s2, s3


def ass_constraint_term(G: FactorGraph, M: MessageSet, a: int) -> float:
    """S4(a) = ln sum_tau psi_a(tau) prod_y mu_{y->a}(tau(y))."""
    off = G.edge_offsets[a]
    msgs = [M.var_to_con[off + j] for j in range(len(G.scope(a)))]
    return float(np.log(_contract(G.factor_table(a), msgs)))
