import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorphase import gibbs, graphs, model
from factorphase.errors import BudgetError
from factorphase.rng import stream

MODELS = [model.potts(2, math.log(2)), model.potts(3, 1.0), model.kspin(3, 0.9), model.xorsat(2, 1.1)]


@settings(max_examples=60, deadline=None)
@given(j=st.integers(0, 3), n=st.integers(1, 11), d=st.floats(0.0, 4.0), seed=st.integers(0, 2**32 - 1))
def test_components_equal_enumeration(j, n, d, seed):
    P = MODELS[j]
    if P.q**n > 2**16:
        n = 8
    G = graphs.gen_null(n, P, stream(seed), d=d)
    a = gibbs.partition_components(G, marginals=True)
    b = gibbs.partition_enumerate(G)
    assert a.log_Z == pytest.approx(b.log_Z, abs=1e-10)
    assert np.allclose(a.marginals, b.marginals, atol=1e-10)


def test_fields_enter_partition_function():
    P = model.potts(2, 1.0)
    G = graphs.gen_null(8, P, stream(1), d=2.0)
    f = np.random.default_rng(2).normal(size=(8, 2))
    a = gibbs.partition_components(G, fields=f).log_Z
    b = gibbs.partition_enumerate(G, fields=f).log_Z
    assert a == pytest.approx(b, abs=1e-10)


def test_exact_sampler_law():
    P = model.potts(2, 0.8)
    G = graphs.gen_null(6, P, stream(3), d=2.5)
    table = gibbs.partition_enumerate(G, full_table=True).table.ravel()
    S = gibbs.gibbs_sample(G, 40000, "exact", stream(4))
    idx = np.ravel_multi_index(S.T, (2,) * 6)
    freq = np.bincount(idx, minlength=64) / len(S)
    assert 0.5 * np.abs(freq - table).sum() < 0.03


def test_glauber_marginals_close():
    P = model.potts(2, 0.5)
    G = graphs.gen_null(10, P, stream(5), d=1.5)
    S = gibbs.gibbs_sample(G, 3000, "glauber", stream(6), steps=10)
    mar = gibbs.partition_enumerate(G).marginals[:, 0]
    assert np.max(np.abs(S.mean(axis=0) - (1 - mar))) < 0.06


def test_large_sparse_graph_is_fast_and_budgeted():
    P = model.potts(2, math.log(2))
    G = graphs.gen_null(20000, P, stream(7), d=0.8)
    res = gibbs.partition_components(G)
    assert np.isfinite(res.log_Z)
    with pytest.raises(BudgetError):
        gibbs.partition_enumerate(graphs.gen_null(40, P, stream(8), d=1.0))


def test_overlap_tools():
    s = np.array([0, 1, 0, 1])
    assert np.allclose(gibbs.overlap([s], 2), [0.5, 0.5])
    assert gibbs.overlap_tv(s, s, 2) == pytest.approx(0.5)
    G = graphs.gen_null(30, model.potts(2, 0.3), stream(9), d=0.5)
    r = gibbs.overlap_concentration(G, 50, rng=stream(10))
    assert r["zeta"] == pytest.approx(30 ** (-1 / 7))
    assert 0 <= r["estimate"] <= 0.75


def test_point_to_set_on_path_matches_closed_form():
    # path 0-1-2 of Potts(2) edges; the boundary sits at bipartite distance >= 2 ell
    P = model.potts(2, 1.0)
    w = P.support()[0][1]
    G = graphs.FactorGraph(3, 2, 2, [[0, 1], [1, 2]], (w, w))
    lam = (1 - math.exp(-1.0)) / (1 + math.exp(-1.0))
    assert gibbs.corr_point_to_set(G, 0, 1, exact=True)["estimate"] == pytest.approx(lam, abs=1e-12)
    assert gibbs.corr_point_to_set(G, 0, 2, exact=True)["estimate"] == pytest.approx(lam**2, abs=1e-12)
    r = gibbs.corr_point_to_set(G, 0, 2, n_boundary_samples=4000, rng=stream(11))
    assert abs(r["estimate"] - lam**2) < 4 * r["se"] + 1e-12
