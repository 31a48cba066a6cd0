import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bplab.bp import (
    ass_constraint_term,
    ass_local_terms,
    beliefs,
    bethe_free_energy,
    bethe_marginal_form,
    bp_fixed_point,
    bp_residual,
    bp_step,
    outgoing_beliefs,
)
from bplab.exact import GibbsOracle, exact_messages, log_partition
from bplab.graph import FactorGraph, WeightFunction, diameter, remove_constraints, remove_variable
from bplab.messages import MessageSet
from bplab.models import ksat_model, ksat_weight, potts_weight, sample_poisson, GeneratorParams

from helpers import brute_log_z, brute_marginal, path_graph, potts_edge, random_forest, random_graph


def _exact_marginals(G):
    o = GibbsOracle(G)
    var = np.array([o.marginal((x,)) for x in range(G.n)]).reshape(G.n, G.q)
    con = [o.marginal(G.scope(a)) for a in range(G.m)]
    return var, con


def _random_messages(rng, G):
    E = len(G.incidences)
    v = rng.uniform(0.05, 1.0, size=(E, G.q))
    c = rng.uniform(0.05, 1.0, size=(E, G.q))
    return MessageSet(G.incidences, v / v.sum(1, keepdims=True), c / c.sum(1, keepdims=True))


# -- bp_step ---------------------------------------------------------------------


def test_constant_weights_uniform_fixed_point():
    w = WeightFunction.constant(3, 2, 2.5)
    G = FactorGraph.from_factors(4, 3, [((0, 1), w), ((1, 2), w), ((2, 0), w), ((3, 3), w)])
    M = MessageSet.uniform(G)
    N = bp_step(G, M)
    assert np.allclose(N.var_to_con, 1 / 3, atol=1e-15) and np.allclose(N.con_to_var, 1 / 3, atol=1e-15)
    assert bp_residual(G, M) == 0.0


def test_step_keeps_exact_tree_messages():
    rng = np.random.default_rng(0)
    for _ in range(10):
        G = random_forest(rng, 10, q=int(rng.integers(2, 4)))
        M = exact_messages(G)
        N = bp_step(G, M, damping=0.0)
        assert np.abs(N.var_to_con - M.var_to_con).max() < 1e-12
        assert np.abs(N.con_to_var - M.con_to_var).max() < 1e-12


def test_single_clause_message_by_hand():
    beta = 0.8
    G = FactorGraph.from_factors(3, 2, [((0, 1, 2), ksat_weight(3, (1, 1, 1), beta))])
    N = bp_step(G, MessageSet.uniform(G))
    # sum over the other two literals of psi / 4: (3 + e^-beta) / 4 for +, 1 for -
    plus, minus = (3 + math.exp(-beta)) / 4, 1.0
    expected = np.array([plus, minus]) / (plus + minus)
    for x in range(3):
        assert np.allclose(N.c2v(0, x), expected, atol=1e-15)


def test_step_rejects_bad_damping():
    G = potts_edge()
    with pytest.raises(ValueError):
        bp_step(G, MessageSet.uniform(G), damping=1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), damping=st.floats(0.0, 0.95))
def test_step_preserves_normalization_and_positivity(seed, damping):
    rng = np.random.default_rng(seed)
    G = random_graph(rng, 6, 6, q=3)
    N = bp_step(G, _random_messages(rng, G), damping)
    for arr in (N.var_to_con, N.con_to_var):
        if arr.size:
            assert np.all(arr > 0)
            assert np.allclose(arr.sum(axis=1), 1.0, atol=1e-12)


# -- fixed point ---------------------------------------------------------------


def test_tree_converges_within_diameter():
    rng = np.random.default_rng(1)
    for _ in range(30):
        G = random_forest(rng, int(rng.integers(2, 14)), q=int(rng.integers(2, 4)))
        M, rep = bp_fixed_point(G, MessageSet.uniform(G), damping=0.0)
        assert rep.converged and rep.iterations <= diameter(G) + 2
        E = exact_messages(G)
        assert np.abs(M.var_to_con - E.var_to_con).max() < 1e-8
        assert np.abs(M.con_to_var - E.con_to_var).max() < 1e-8


def test_empty_graph_converges_immediately():
    G = FactorGraph.empty(3)
    M, rep = bp_fixed_point(G)
    assert rep == rep.__class__(0, 0.0, True)


def test_single_cycle_small_beta():
    w = potts_weight(2, 0.3)
    n = 6
    # a field on one site makes the fixed point non-trivial
    G = FactorGraph.from_factors(n, 2, [((i, (i + 1) % n), w) for i in range(n)] + [((0,), WeightFunction(2, np.array([2.0, 1.0])))])
    M, rep = bp_fixed_point(G, tol=1e-12)
    assert rep.converged
    assert bp_residual(G, M) <= 1e-9


def test_nonconvergence_is_reported():
    rng = np.random.default_rng(3)
    G = random_graph(rng, 6, 8)
    _, rep = bp_fixed_point(G, damping=0.0, max_iter=1, tol=1e-300)
    assert not rep.converged and rep.iterations == 1


# -- residual ------------------------------------------------------------------


def _residual_by_hand(G, M):
    total = 0.0
    for x in range(G.n):
        for a in G.constraints_of(x):
            for s in range(G.q):
                num = [np.prod([M.c2v(b, x)[t] for b in G.constraints_of(x) if b != a]) for t in range(G.q)]
                total += abs(M.v2c(x, a)[s] - num[s] / sum(num))
                scope = G.scope(a)
                T = G.factor_table(a)
                acc = np.zeros(G.q)
                for tau in np.ndindex(*T.shape):
                    w = T[tau]
                    for j, y in enumerate(scope):
                        if y != x:
                            w *= M.v2c(y, a)[tau[j]]
                    acc[tau[scope.index(x)]] += w
                total += abs(M.c2v(a, x)[s] - acc[s] / acc.sum())
    return total / G.n


def test_residual_on_tree_is_zero():
    rng = np.random.default_rng(4)
    G = random_forest(rng, 12)
    assert bp_residual(G, exact_messages(G)) <= 1e-9


def test_residual_matches_term_by_term_recomputation():
    spec = ksat_model(3, 1.0)
    found = 0
    for seed in range(40):
        G = sample_poisson(spec, GeneratorParams(8, 2.0, seed=seed))
        M = exact_messages(G)
        r = bp_residual(G, M)
        assert r == pytest.approx(_residual_by_hand(G, M), abs=1e-12)
        found += r > 1e-6
    assert found > 0


def test_residual_random_messages_matches_by_hand():
    rng = np.random.default_rng(5)
    G = random_graph(rng, 5, 5, q=3)
    M = _random_messages(rng, G)
    assert bp_residual(G, M) == pytest.approx(_residual_by_hand(G, M), rel=1e-12)


# -- Bethe free energy -----------------------------------------------------------


def test_bethe_empty_graph():
    G = FactorGraph.empty(3)
    assert bethe_free_energy(G, MessageSet.uniform(G)) == pytest.approx(3 * math.log(2), abs=1e-15)


def test_bethe_potts_edge_exact():
    G = potts_edge(1.0)
    assert bethe_free_energy(G, exact_messages(G)) == pytest.approx(math.log(2 * math.e + 2), abs=1e-14)


def test_bethe_on_trees():
    rng = np.random.default_rng(6)
    for _ in range(30):
        G = random_forest(rng, int(rng.integers(1, 12)), q=int(rng.integers(2, 4)))
        lz = brute_log_z(G) if G.q ** G.n <= 4096 else log_partition(G)
        assert abs(bethe_free_energy(G, exact_messages(G)) - lz) <= 1e-8


def test_bethe_marginal_form_examples():
    G = FactorGraph.empty(4, q=3)
    assert bethe_marginal_form(G, np.full((4, 3), 1 / 3), []) == pytest.approx(4 * math.log(3), abs=1e-14)
    G = potts_edge(1.0)
    var, con = _exact_marginals(G)
    assert bethe_marginal_form(G, var, con) == pytest.approx(math.log(2 * math.e + 2), abs=1e-14)


def test_bethe_marginal_form_on_trees():
    rng = np.random.default_rng(7)
    for _ in range(30):
        G = random_forest(rng, int(rng.integers(1, 12)), q=int(rng.integers(2, 4)))
        var, con = _exact_marginals(G)
        assert abs(bethe_marginal_form(G, var, con) - log_partition(G)) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(1e-2, 1e2))
def test_bethe_scale_property(seed, c):
    rng = np.random.default_rng(seed)
    G = random_graph(rng, 5, 4, q=2)
    a = int(rng.integers(G.m))
    weights = list(G.weights)
    weights[G.constraints[a].weight] = G.weight_of(a).scaled(c)
    H = FactorGraph(G.n, G.spins, G.constraints, tuple(weights))
    M = _random_messages(rng, G)
    assert bethe_free_energy(H, M) - bethe_free_energy(G, M) == pytest.approx(math.log(c), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_bethe_spin_relabel_invariance(seed):
    rng = np.random.default_rng(seed)
    G = random_graph(rng, 5, 4, q=3)
    M = _random_messages(rng, G)
    perm = rng.permutation(3)
    weights = tuple(WeightFunction(3, w.table[np.ix_(*[perm] * w.arity)] if w.arity else w.table) for w in G.weights)
    H = FactorGraph(G.n, G.spins, G.constraints, weights)
    N = MessageSet(M.edges, M.var_to_con[:, perm], M.con_to_var[:, perm])
    assert bethe_free_energy(H, N) == pytest.approx(bethe_free_energy(G, M), abs=1e-12)


# -- beliefs -------------------------------------------------------------------


def test_beliefs_on_trees_match_oracle():
    rng = np.random.default_rng(8)
    for _ in range(20):
        G = random_forest(rng, 9, q=int(rng.integers(2, 4)))
        var, con = beliefs(G, exact_messages(G))
        evar, econ = _exact_marginals(G)
        assert np.abs(var - evar).max() < 1e-8
        for a in range(G.m):
            assert np.abs(con[a] - econ[a]).max() < 1e-8


def test_isolated_belief_uniform():
    G = FactorGraph.from_factors(3, 3, [((0, 1), potts_weight(3, 1.0))])
    var, _ = beliefs(G, exact_messages(G))
    assert np.allclose(var[2], 1 / 3)


def test_single_constraint_belief_is_normalized_table():
    t = np.array([[1.0, 2.0], [3.0, 4.0]])
    G = FactorGraph.from_factors(2, 2, [((0, 1), WeightFunction(2, t))])
    _, con = beliefs(G, MessageSet.uniform(G))
    assert np.allclose(con[0], t / t.sum())


def test_outgoing_form_differs_from_marginal_at_leaf():
    # leaf x0 under a biased constraint: outgoing product is uniform, true marginal is not
    t = np.array([[3.0, 1.0], [1.0, 1.0]])
    G = FactorGraph.from_factors(2, 2, [((0, 1), WeightFunction(2, t))])
    M = exact_messages(G)
    incoming, _ = beliefs(G, M)
    outgoing = outgoing_beliefs(G, M)
    exact = brute_marginal(G, (0,))
    assert np.allclose(incoming[0], exact, atol=1e-12)
    assert np.allclose(outgoing[0], 0.5) and not np.allclose(outgoing[0], exact, atol=1e-3)


# -- Aizenman-Sims-Starr terms ---------------------------------------------------


def test_ass_isolated_variable():
    G = FactorGraph.from_factors(3, 3, [((0, 1), potts_weight(3, 1.0))])
    assert ass_local_terms(G, exact_messages(G), 2) == (math.log(3), 0.0, 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_ass_terms_reassemble_bethe(seed):
    rng = np.random.default_rng(seed)
    G = random_graph(rng, 6, 5, q=2)
    M = _random_messages(rng, G)
    total = sum(ass_local_terms(G, M, x)[0] + ass_local_terms(G, M, x)[2] for x in range(G.n))
    total += sum(ass_constraint_term(G, M, a) for a in range(G.m))
    assert total == pytest.approx(bethe_free_energy(G, M), abs=1e-10)
    # S2 counts S4 once per distinct incidence
    s2 = sum(ass_local_terms(G, M, x)[1] for x in range(G.n))
    assert s2 == pytest.approx(sum(len(G.scope(a)) * ass_constraint_term(G, M, a) for a in range(G.m)), abs=1e-10)


def test_vertex_removal_identity_on_trees():
    rng = np.random.default_rng(9)
    for _ in range(30):
        G = random_forest(rng, int(rng.integers(2, 11)), q=int(rng.integers(2, 4)))
        M = exact_messages(G)
        for x in range(G.n):
            H, _, _ = remove_variable(G, x)
            lhs = log_partition(G) - log_partition(H)
            assert abs(lhs - sum(ass_local_terms(G, M, x))) <= 1e-8


def test_message_json_round_trip():
    rng = np.random.default_rng(10)
    G = random_graph(rng, 4, 3)
    M = exact_messages(G)
    N = MessageSet.from_dict(G, __import__("json").loads(M.dumps()))
    assert np.array_equal(M.var_to_con, N.var_to_con) and np.array_equal(M.con_to_var, N.con_to_var)
    assert set(M.to_dict()) == {f"{x}:{a}" for x, a in G.incidences}


def test_constraint_removal_identity_needs_separated_constraints():
    # one constraint: ln(Z_G / Z_{G - a}) = S4(a) on a tree
    wa = WeightFunction(2, np.array([[3.0, 1.0], [1.0, 1.0]]))
    wb = WeightFunction(2, np.array([[1.0, 2.0], [0.5, 1.0]]))
    G = path_graph([wa, wb])
    M = exact_messages(G)
    H, _ = remove_constraints(G, [0])
    assert log_partition(G) - log_partition(H) == pytest.approx(ass_constraint_term(G, M, 0), abs=1e-12)
    # two constraints sharing x1: each S4 term uses messages that assume the other is still present
    E, _ = remove_constraints(G, [0, 1])
    both = ass_constraint_term(G, M, 0) + ass_constraint_term(G, M, 1)
    assert abs(log_partition(G) - log_partition(E) - both) > 1e-3
    # the same two constraints in different components add up exactly
    F = FactorGraph.from_factors(4, 2, [((0, 1), wa), ((2, 3), wb)])
    MF = exact_messages(F)
    EF, _ = remove_constraints(F, [0, 1])
    total = ass_constraint_term(F, MF, 0) + ass_constraint_term(F, MF, 1)
    assert log_partition(F) - log_partition(EF) == pytest.approx(total, abs=1e-12)
