import itertools
import math

import numpy as np
import pytest

from factorphase import bethe, model, operators
from factorphase.rng import stream

LN2 = math.log(2)


def _bethe_direct(d, q, beta, atoms, gmax=12):
    """B(d, P, pi) for Potts and a uniform mixture of atoms, by direct summation (k = 2)."""
    psi = np.ones((q, q)) - (1 - math.exp(-beta)) * np.eye(q)
    xi = psi.sum() / q**2
    A = len(atoms)
    msgs = [psi @ a for a in atoms]
    first = 0.0
    for g in range(gmax + 1):
        pg = math.exp(-d) * d**g / math.factorial(g)
        acc = 0.0
        for seq in itertools.product(range(A), repeat=g):
            S = float(np.prod([msgs[j] for j in seq], axis=0).sum()) if g else float(q)
            acc += S * math.log(S) / (q * xi**g)
        first += pg * acc / A**g
    second = 0.0
    for a in atoms:
        for b in atoms:
            T = float(a @ psi @ b)
            second += T * math.log(T) / A**2
    return first - d / (2 * xi) * second


def test_uniform_atom_closed_form():
    for P in [model.potts(3, 1.0), model.kspin(3, 1.0)]:
        e = bethe.bethe_estimate(1.3, P, bethe.uniform_atom(P.q))
        assert e.value == pytest.approx(math.log(P.q) + 1.3 / P.k * math.log(model.xi_constant(P)))


def test_generic_monte_carlo_at_uniform_atom():
    P = model.potts(3, 1.0)
    e = bethe.bethe_mc_uniform(1.0, P, 10**5, stream(1))
    assert abs(e.value - e.threshold) < 3 * e.se


def test_exact_delta_matches_direct_sum():
    q, beta, d = 2, LN2, 0.4
    P = model.potts(q, beta)
    fam = operators.sigma_perturbation(operators.xi_operator(P))
    for eps in (0.1, 0.3):
        atoms = fam.atoms(eps)
        want = _bethe_direct(d, q, beta, list(atoms)) - _bethe_direct(d, q, beta, [np.full(q, 0.5)])
        got = bethe.bethe_exact_delta(d, P, bethe.Population(atoms))
        assert got == pytest.approx(want, rel=1e-8, abs=1e-13)


def test_monte_carlo_matches_exact_delta():
    P = model.potts(2, LN2)
    pts = bethe.Population(np.array([[0.8, 0.2], [0.2, 0.8]]))
    exact = bethe.bethe_exact_delta(1.0, P, pts) + bethe.threshold(1.0, P)
    e = bethe.bethe_estimate(1.0, P, pts, 2 * 10**5, stream(2))
    assert abs(e.value - exact) < 4 * e.se


def test_recenter_keeps_rows_and_centers():
    pts = np.random.default_rng(3).dirichlet(np.ones(3), size=200)
    c = bethe.recenter(pts)
    assert np.allclose(c.sum(axis=1), 1)
    assert np.allclose(c.mean(axis=0), 1 / 3, atol=1e-10)


def test_population_collapses_below_and_persists_above():
    P = model.potts(2, 3.0)
    lo, _, pol_lo = bethe.run_population(0.5, P, bethe.polarized(2, 2000), 40, 5, 2000, stream(4))
    hi, _, pol_hi = bethe.run_population(2.0, P, bethe.polarized(2, 2000), 40, 5, 2000, stream(5))
    assert pol_lo[-1] < 0.05
    assert pol_hi[-1] > 0.3


def test_dcond_scan_output_columns():
    res = bethe.dcond_scan(model.potts(2, LN2), [0.5, 1.0], N=300, sweeps=6, keep=3, n_mc=300, rng=stream(6))
    assert set(["d", "sup_B", "threshold", "gap", "se"]) <= set(res["rows"][0])
    assert all(r["gap"] >= 0 for r in res["rows"])
