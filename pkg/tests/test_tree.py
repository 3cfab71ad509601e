import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorphase import gibbs, model, tree
from factorphase.rng import stream

ISING = model.potts(2, 1.0)
D_KS = ((1 + math.exp(-1)) / (1 - math.exp(-1))) ** 2


def test_trivial_trees():
    assert tree.gen_gw_tree(0.0, ISING, 5, stream(1)).n_vars == 1
    assert tree.gen_gw_tree(3.0, ISING, 0, stream(1)).n_vars == 1
    assert tree.corr_star(0.0, ISING, 5, 10, stream(1))["estimate"] == 0.0


def test_offspring_mean():
    P = model.kspin(3, 1.0)
    T = tree.gen_gw_tree(1.5, P, 1, stream(2), n_trees=10**4)
    per_tree = np.bincount(T.tree_id[T.depth == 1], minlength=10**4)
    sigma = math.sqrt(1.5 * 4 / 10**4)
    assert abs(per_tree.mean() - 3.0) < 3 * sigma


def test_broadcast_edge_flip_probability():
    q, beta = 3, 1.0
    P = model.potts(q, beta)
    T = tree.gen_gw_tree(1.0, P, 1, stream(3), n_trees=20000)
    sig = tree.broadcast(T, stream(4))
    par = sig[T.parent_var()]
    child = sig[T.nb[np.arange(T.n_cons), 1 - T.pos]]
    p = (q - 1) / (q - 1 + math.exp(-beta))
    frac = float(np.mean(par != child))
    assert abs(frac - p) < 4 * math.sqrt(p * (1 - p) / T.n_cons)


def test_broadcast_sampler_matches_law():
    P = model.potts(2, 0.7)
    T = tree.gen_gw_tree(1.0, P, 2, stream(5))
    while not 3 <= T.n_vars <= 6:
        T = tree.gen_gw_tree(1.5, P, 2, stream(int(T.n_vars) + 7))
    law = tree.broadcast_law(T).ravel()
    runs = np.array([tree.broadcast(T, stream(6, i)) for i in range(20000)])
    idx = np.ravel_multi_index(runs.T, (2,) * T.n_vars)
    freq = np.bincount(idx, minlength=len(law)) / len(runs)
    assert 0.5 * np.abs(freq - law).sum() < 0.03


def test_single_edge_posterior():
    q, beta = 3, 1.0
    P = model.potts(q, beta)
    w = P.support()[0][1].values().ravel()
    T = tree.FactorTree(2, q, 1, np.array([0, 1]), np.array([0, 0]), np.array([[0, 1]]), np.array([0]),
                        w[None, :], 1)
    post = tree.root_posterior(T, np.array([0, 1]))[0]
    want = np.array([1.0, math.exp(-beta), 1.0])
    assert np.allclose(post, want / want.sum())


def test_shallow_tree_posterior_is_uniform():
    T = tree.gen_gw_tree(0.0, ISING, 3, stream(8))
    assert np.allclose(tree.root_posterior(T, np.zeros(T.n_vars, dtype=int)), 0.5)


def test_posterior_matches_enumeration():
    rng = stream(9)
    P = model.potts(3, 0.8)
    done = 0
    for i in range(60):
        T = tree.gen_gw_tree(1.2, P, 2, rng)
        b = T.boundary()
        if not 1 <= len(b) or T.n_vars > 7:
            continue
        table = gibbs.partition_enumerate(T.to_factor_graph(), full_table=True).table
        sig = rng.integers(0, 3, T.n_vars)
        idx = [slice(None) if v == 0 else (sig[v] if v in set(b.tolist()) else slice(None))
               for v in range(T.n_vars)]
        sub = table[tuple(idx)]
        cond = sub.reshape(3, -1).sum(axis=1)
        post = tree.root_posterior(T, sig)[0]
        assert np.allclose(post, cond / cond.sum(), atol=1e-12)
        done += 1
    assert done > 5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_posterior_invariant_under_sibling_relabeling(seed):
    T = tree.gen_gw_tree(2.0, model.potts(3, 1.2), 3, stream(seed))
    sig = tree.broadcast(T, stream(seed, 1))
    perm = np.random.default_rng(seed).permutation(T.n_cons)
    U = tree.FactorTree(T.k, T.q, T.ell, T.depth, T.tree_id, T.nb[perm], T.pos[perm], T.tables[perm], 1)
    assert np.allclose(tree.root_posterior(T, sig), tree.root_posterior(U, sig), atol=1e-12)


def test_constant_weights_give_zero_correlation():
    P = model.table_model([(1.0, np.ones((2, 2)))])
    assert tree.corr_star(3.0, P, 4, 500, stream(10), "forest")["estimate"] == pytest.approx(0.0, abs=1e-14)
    assert tree.corr_star(3.0, P, 4, 500, stream(10), "population")["estimate"] == pytest.approx(0.0, abs=1e-14)


def test_tree_corr_exact_single_edge():
    P = model.potts(2, 1.0)
    w = P.support()[0][1].values().ravel()
    T = tree.FactorTree(2, 2, 1, np.array([0, 1]), np.array([0, 0]), np.array([[0, 1]]), np.array([0]),
                        w[None, :], 1)
    lam = (1 - math.exp(-1)) / (1 + math.exp(-1))
    assert tree.tree_corr_exact(T) == pytest.approx(lam)


def test_subthreshold_decay():
    est = [tree.corr_star(0.5 * D_KS, ISING, ell, 20000, stream(11, ell)) for ell in (6, 8, 10)]
    for a, b in zip(est, est[1:]):
        assert b["estimate"] < a["estimate"] + 3 * math.hypot(a["se"], b["se"])
    assert est[-1]["estimate"] < est[0]["estimate"]


def test_forest_and_population_agree():
    a = tree.corr_star(4.0, ISING, 4, 20000, stream(12), "forest")
    b = tree.corr_star(4.0, ISING, 4, 50000, stream(13), "population")
    assert abs(a["estimate"] - b["estimate"]) < 4 * math.hypot(a["se"], b["se"])


def test_population_has_no_spurious_bias_below_threshold():
    # a symmetry-free population drifts to a biased state for ferromagnets with d lambda > 1
    est, se = tree.corr_star_population(3.0, ISING, 60, 5000, stream(14))
    assert est < 0.01


def test_plateau_rule():
    assert tree.plateau([0.3, 0.301, 0.299], [0.002] * 3)
    assert not tree.plateau([0.01, 0.004, 0.001], [1e-4] * 3)
    assert not tree.plateau([0.001, 0.001, 0.001], [0.001] * 3)
