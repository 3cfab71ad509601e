import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorphase import gibbs, graphs, model
from factorphase.errors import FactorPhaseError
from factorphase.rng import stream

LN2 = math.log(2)


def test_text_round_trip():
    for P in [model.potts(3, 1.0), model.kspin(3, 0.7)]:
        G = graphs.gen_null(20, P, stream(1), d=2.0)
        H = graphs.FactorGraph.from_text(G.to_text())
        assert np.array_equal(G.neighbors, H.neighbors)
        assert np.allclose(G.log_tables(), H.log_tables())


def test_from_text_reports_line():
    with pytest.raises(FactorPhaseError, match="line 2"):
        graphs.FactorGraph.from_text("3 2 2\n0 1 bogus 1\n")


def test_null_model_edge_count():
    P = model.potts(2, 1.0)
    ms = [graphs.gen_null(100, P, stream(2, i), d=3.0).m for i in range(400)]
    assert abs(np.mean(ms) - 150) < 3 * math.sqrt(150 / 400)


def test_is_simple_examples():
    P = model.potts(2, 1.0)
    w = P.support()[0][1]
    loop = graphs.FactorGraph(3, 2, 2, [[0, 0]], (w,))
    double = graphs.FactorGraph(3, 2, 2, [[0, 1], [1, 0]], (w, w))
    ok = graphs.FactorGraph(3, 2, 2, [[0, 1], [1, 2]], (w, w))
    assert [graphs.is_simple(G) for G in (loop, double, ok)] == [False, False, True]


def _profile_law_oracle(n, m, beta):
    """P(sigma) prop. to phi(rho_sigma)^m, summed into profiles by brute force."""
    out = np.zeros(n + 1)
    for sig in itertools.product(range(2), repeat=n):
        c = sum(1 for s in sig if s == 0)
        rho = np.array([c, n - c]) / n
        out[c] += (1 - (1 - math.exp(-beta)) * float(rho @ rho)) ** m
    return out / out.sum()


def test_planted_profile_law_matches_brute_force():
    prof, logp = graphs.planted_profile_law(4, 2, model.potts(2, LN2))
    got = {int(p[0]): math.exp(lp) for p, lp in zip(prof, logp)}
    want = _profile_law_oracle(4, 2, LN2)
    for c in range(5):
        assert got[c] == pytest.approx(want[c], abs=1e-12)
    # frozen oracle output
    assert [round(want[c], 5) for c in range(5)] == [0.03265, 0.24694, 0.44082, 0.24694, 0.03265]


def test_first_moment_exact_matches_sum_over_graphs():
    P = model.potts(3, 0.9)
    n, m = 3, 2
    w = P.support()[0][1]
    tuples = list(itertools.product(range(n), repeat=2))
    EZ = 0.0
    for combo in itertools.product(tuples, repeat=m):
        G = graphs.FactorGraph(n, 2, 3, np.array(combo), (w,) * m)
        EZ += math.exp(gibbs.partition_enumerate(G).log_Z) / len(tuples) ** m
    assert graphs.log_first_moment_exact(n, m, P) == pytest.approx(math.log(EZ), abs=1e-12)


def test_teacher_sampler_matches_exact_constraint_law():
    P = model.xorsat(2, 0.9)
    sigma = np.array([0, 1, 1])
    ys, atoms, probs = graphs.teacher_constraint_law(sigma, P)
    G = graphs.gen_teacher(3, 40000, P, sigma, stream(4))
    J = np.array([w.params[0] for w in G.weights])
    atom_of = np.where(J > 0, 0, 1)
    idx = atom_of * 9 + G.neighbors[:, 0] * 3 + G.neighbors[:, 1]
    freq = np.bincount(idx, minlength=len(probs)) / G.m
    chi2 = float(((freq - probs) ** 2 / probs).sum() * G.m)
    assert chi2 < 17 + 5 * math.sqrt(2 * 17)


def test_nishimori_law_tv_tiny():
    assert graphs.nishimori_law_tv(3, 2, model.potts(2, LN2)) < 1e-12


def test_nishimori_sampler_profile_frequencies():
    P = model.potts(2, LN2)
    prof, logp = graphs.planted_profile_law(4, 6, P)
    counts = np.zeros(len(prof))
    for i in range(3000):
        _, sig = graphs.gen_nishimori(4, 6, P, stream(5, i))
        c = np.bincount(sig, minlength=2)
        counts[[j for j, p in enumerate(prof) if tuple(p) == tuple(c)][0]] += 1
    p = np.exp(logp)
    assert np.max(np.abs(counts / 3000 - p) / np.sqrt(p * (1 - p) / 3000)) < 4


def test_tensor_square_single_edge():
    P = model.potts(2, LN2)
    G = graphs.FactorGraph(2, 2, 2, [[0, 1]], (P.support()[0][1],))
    assert math.exp(gibbs.partition_enumerate(G).log_Z) == pytest.approx(3.0)
    assert math.exp(gibbs.partition_enumerate(graphs.tensor_square(G)).log_Z) == pytest.approx(9.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 6), m=st.integers(0, 6), seed=st.integers(0, 2**32 - 1))
def test_tensor_square_property(n, m, seed):
    P = model.kspin(3, 1.3)
    G = graphs.gen_null(n, P, stream(seed), m=m)
    a = gibbs.partition_enumerate(graphs.tensor_square(G)).log_Z
    b = gibbs.partition_enumerate(G).log_Z
    assert a == pytest.approx(2 * b, abs=1e-10)
