import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorphase import model
from factorphase.errors import ModelError
from factorphase.rng import stream


def test_potts_table_and_xi():
    P = model.potts(3, 1.0)
    t = P.mean_table()
    assert t[0, 0] == pytest.approx(math.exp(-1.0))
    assert t[0, 1] == 1.0
    # xi = q^{-2} sum of the table
    assert model.xi_constant(P) == pytest.approx(t.sum() / 9)


def test_kspin_xi_is_one_and_tables_in_range():
    P = model.kspin(3, 2.0)
    tabs = P.sample_tables(stream(1), 1000)
    assert np.all((tabs > 0) & (tabs < 2))
    assert model.xi_constant(P) == 1.0
    assert np.allclose(tabs.mean(axis=1), 1.0)


def test_from_dict_round_trip_and_errors():
    for P in [model.potts(3, 0.7), model.kspin(4, 1.0), model.xorsat(3, 0.5)]:
        Q = model.ModelSpec.from_dict(P.to_dict())
        assert Q.to_dict() == P.to_dict()
    tab = model.table_model([(0.5, np.array([[0.5, 1.5], [1.5, 0.5]])), (0.5, np.ones((2, 2)))])
    assert model.ModelSpec.from_dict(tab.to_dict()).to_dict() == tab.to_dict()
    with pytest.raises(ModelError, match="family"):
        model.ModelSpec.from_dict({"family": "ising", "beta": 1})
    with pytest.raises(ModelError, match="beta"):
        model.ModelSpec.from_dict({"family": "potts", "q": 3})


def test_gaussian_cells_reproduce_tanh_moments():
    P = model.kspin(2, 1.0)
    sup = P.support()
    assert sum(p for p, _ in sup) == pytest.approx(1.0, abs=1e-12)
    # second moment of tanh(beta J) by quadrature, independent of the cell construction
    x, w = np.polynomial.hermite_e.hermegauss(200)
    want = float((w * np.tanh(x) ** 2).sum() / w.sum())
    assert P.tanh2_mean() == pytest.approx(want, rel=1e-9)


def test_assumptions_for_builtins():
    for P in [model.potts(2, math.log(2)), model.potts(4, 1.5), model.kspin(2, 1.0)]:
        rep = model.check_assumptions(P, budget=10, rng=stream(2))
        assert rep.sym_ok and rep.bal_ok and rep.min_ok


def test_asymmetric_table_fails_sym():
    t = np.array([[1.5, 0.5], [0.5, 0.5]])
    P = model.table_model([(1.0, t)])
    rep = model.check_assumptions(P, budget=5, rng=stream(3))
    assert not rep.sym_ok


def test_spin_symmetries():
    assert len(model.spin_symmetries(model.potts(3, 1.0))) == 6
    assert model.spin_symmetries(model.kspin(3, 1.0)).tolist() == [[0, 1], [1, 0]]
    t = np.array([[1.5, 0.5], [0.5, 0.5]])
    assert model.spin_symmetries(model.table_model([(1.0, t)])).tolist() == [[0, 1]]


@settings(max_examples=40, deadline=None)
@given(q=st.integers(2, 5), beta=st.floats(0.05, 4.0), seed=st.integers(0, 2**32 - 1))
def test_potts_phi_maximized_at_uniform(q, beta, seed):
    P = model.potts(q, beta)
    rho = np.random.default_rng(seed).dirichlet(np.ones(q))
    assert model.phi_rho(P, rho) <= model.phi_rho(P, np.full(q, 1 / q)) + 1e-12


@settings(max_examples=30, deadline=None)
@given(q=st.integers(2, 4), beta=st.floats(0.05, 3.0))
def test_potts_sym_holds(q, beta):
    P = model.potts(q, beta)
    w = P.support()[0][1]
    assert model.sym_violation(w, model.xi_constant(P)) < 1e-12
