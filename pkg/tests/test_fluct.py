import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from factorphase import fluct, graphs, model
from factorphase.errors import DivergenceError
from factorphase.rng import stream

LN2 = math.log(2)


def _graph(nb, k=2):
    P = model.potts(2, 1.0) if k == 2 else model.xorsat(k, 1.0)
    w = P.support()[0][1]
    nb = np.array(nb)
    return graphs.FactorGraph(int(nb.max()) + 2, k, 2, nb, (w,) * len(nb))


def test_census_small_patterns():
    assert fluct.count_cycles(_graph([[0, 1], [1, 2], [2, 0]]), 3).totals == {1: 0, 2: 0, 3: 1}
    assert fluct.count_cycles(_graph([[0, 0]]), 3).totals[1] == 1
    assert fluct.count_cycles(_graph([[0, 1], [1, 0]]), 3).totals[2] == 1
    assert fluct.count_cycles(_graph([[0, 1, 2], [0, 1, 3]], k=3), 3).totals == {1: 0, 2: 1, 3: 0}
    # a 4-cycle with a chord holds two triangles and one 4-cycle
    c = fluct.count_cycles(_graph([[0, 1], [1, 2], [2, 3], [3, 0], [0, 2]]), 4)
    assert c.totals == {1: 0, 2: 0, 3: 2, 4: 1}


def test_signature_constants_order_two():
    P = model.potts(2, LN2)
    Y = fluct.all_psi_signatures(2, 2)[0]
    c = fluct.signature_constants(Y, 1.0, 2, P)
    assert c.kappa == pytest.approx(0.0625)
    assert c.kappa_hat == pytest.approx(0.0625 * 10 / 9)
    assert c.delta == pytest.approx(1 / 9)


def test_order_one_normalizations():
    P = model.potts(2, LN2)
    Y = fluct.all_psi_signatures(1, 2)[0]
    assert fluct.kappa(Y, 1.0, 2, P) == pytest.approx(0.5)
    assert fluct.kappa(Y, 1.0, 2, P, loop_normalization="half") == pytest.approx(0.25)


def test_null_loop_counts_match_direct_normalization():
    res = fluct.poisson_fit("null", 1.0, model.potts(2, LN2), 500, 600, stream(1), 2)
    c1 = res["rows"][0]
    assert abs(c1["mean"] - 0.5) < 3 * c1["se"]


def test_poisson_fit_independent_of_workers():
    P = model.potts(2, 1.0)
    a = fluct.poisson_fit("null", 1.0, P, 200, 12, stream(2), 3, workers=1)
    b = fluct.poisson_fit("null", 1.0, P, 200, 12, stream(2), 3, workers=2)
    assert a["rows"] == b["rows"]


def test_sample_k_mean_against_series():
    P = model.potts(2, LN2)
    K = fluct.sample_K(0.8, P, 20, False, 10**5, stream(3))
    series = fluct.k_mean_series(0.8, P)
    assert abs(K.mean() - series) < K.tail_bound + 3 * K.se()


def test_sample_k_truncation_levels_nest():
    P = model.potts(2, LN2)
    a = fluct.sample_K(0.8, P, 10, False, 20000, stream(4))
    b = fluct.sample_K(0.8, P, 20, False, 20000, stream(4))
    diff = b.values - a.values
    # the deterministic tail bound is tiny; Monte Carlo noise of the extra levels dominates
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    assert abs(diff.mean()) < a.tail_bound + 3 * se + 1e-15


def test_sample_k_degenerate_and_divergent():
    K = fluct.sample_K(0.9, model.kspin(3, 1.0), 20, False, 1000, stream(5))
    assert np.all(K.values == 0.0)
    with pytest.raises(DivergenceError):
        fluct.sample_K(10.0, model.potts(2, LN2), 20, False, 10, stream(6))


def test_first_moment_prefactors():
    P = model.potts(2, LN2)
    a = fluct.moment_formulas(400, 160, 0.8, P, prefactor="corrected")
    b = fluct.moment_formulas(400, 160, 0.8, P, prefactor="shifted")
    assert abs(a["log_difference"]) < 1e-3
    assert b["log_EZ_asymptotic"] - a["log_EZ_asymptotic"] == pytest.approx(0.5 * LN2)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(5, 60), delta=st.floats(0, 1))
def test_shifted_ks_properties(seed, n, delta):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=n), r.normal(size=n + 3)
    assert fluct.shifted_ks(x, y, 0.0) == pytest.approx(stats.ks_2samp(x, y).statistic)
    assert fluct.shifted_ks(x, y, delta) <= fluct.shifted_ks(x, y, 0.0) + 1e-12
    assert fluct.shifted_ks(x, x + delta / 2, delta) == 0.0
