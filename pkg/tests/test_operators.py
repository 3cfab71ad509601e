import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factorphase import model, operators


def _phi_oracle(q, beta):
    t = np.ones((q, q)) - (1 - math.exp(-beta)) * np.eye(q)
    return t / t.sum(axis=1, keepdims=True)


@settings(max_examples=25, deadline=None)
@given(q=st.integers(2, 5), beta=st.floats(0.05, 4.0))
def test_potts_phi_matches_row_normalized_table(q, beta):
    P = model.potts(q, beta)
    assert np.allclose(operators.phi_mean(P), _phi_oracle(q, beta), atol=1e-13)


def test_potts_ln2_d_ks_is_nine():
    rep = operators.model_spectra(model.potts(2, math.log(2)))
    assert rep.d_ks == pytest.approx(9.0, abs=1e-12)
    assert rep.lambda_hat == pytest.approx(1 / 9)


def test_xi_symmetric_and_kspin3_degenerate():
    for P in [model.potts(3, 1.0), model.kspin(3, 1.0), model.kspin(2, 0.5)]:
        X = operators.xi_operator(P).matrix
        assert np.allclose(X, X.T)
    rep = operators.model_spectra(model.kspin(3, 1.0))
    assert max(abs(x) for x in rep.eig_xi_on_E) < 1e-12
    assert rep.to_dict()["d_ks"] == "inf"


def test_kspin2_lambda_is_tanh_second_moment():
    P = model.kspin(2, 0.8)
    rep = operators.model_spectra(P)
    assert rep.lambda_hat == pytest.approx(P.tanh2_mean(), rel=1e-10)


def test_monte_carlo_xi_agrees_with_exact():
    P = model.potts(3, 1.0)
    from factorphase.rng import stream
    X = operators.xi_operator(P, n_samples=5000, rng=stream(1))
    assert np.allclose(X.matrix, operators.xi_operator(P).matrix, atol=1e-12)


def test_perturbation_atoms_are_centered_distributions():
    P = model.potts(3, math.log(2))
    fam = operators.sigma_perturbation(operators.xi_operator(P))
    A = fam.atoms(0.05)
    assert np.all(A > 0)
    assert np.allclose(A.sum(axis=1), 1.0)
    assert np.allclose(A.mean(axis=0), 1 / 3)
    assert fam.residual < 1e-10
    with pytest.raises(Exception):
        fam.atoms(fam.eps0 * 2)


def test_taylor_check_reports_both_coefficients():
    res = operators.taylor_expansion_check(1.0, model.potts(2, math.log(2)), eps_list=(0.02, 0.04))
    assert 15.5 < res["doubling"][0.02] < 16.5
    # the exact quartic coefficient is three times the displayed one
    assert res["rows"][0]["ratio"] == pytest.approx(3.0, rel=2e-3)
