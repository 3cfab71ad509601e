"""Spin matrices, the tensor operator Xi, its spectra and the top-eigenvector perturbation."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FactorPhaseError
from .model import centered_basis, xi_constant

SYM_TOL = 1e-9


def phi_of_psi(psi, h=0, h2=1, xi=None):
    """q x q matrix q^{1-k} xi^{-1} sum_{tau_h = w, tau_h2 = w'} psi(tau).

    Positions are 0-based. ``xi`` defaults to the per-function constant, which
    coincides with the model constant whenever SYM holds.
    """
    if h == h2:
        raise FactorPhaseError("positions: h and h' must differ")
    return _phi_from_table(psi.values(), psi.q, psi.k, h, h2, psi.xi if xi is None else xi)


def _phi_from_table(t, q, k, h, h2, xi):
    axes = tuple(i for i in range(k) if i not in (h, h2))
    s = t.sum(axis=axes) if axes else t
    if h > h2:
        s = s.T
    return s * q ** (1 - k) / xi


def phi_conditional(P, h=0, h2=1, event=None):
    """E[Phi_psi | psi in event] with the model constant xi; ``event`` is a predicate."""
    xi = xi_constant(P)
    num, den = 0.0, 0.0
    for p, w in P.support():
        if event is None or event(w):
            num = num + p * w.values()
            den += p
    if den == 0:
        raise FactorPhaseError("event: probability zero under P")
    return _phi_from_table(num / den, P.q, P.k, h, h2, xi)


def phi_mean(P, n_samples=None, rng=None):
    """Phi = E[Phi_psi]; exact over the support unless ``n_samples`` is given."""
    if n_samples:
        tabs = P.sample_tables(rng, int(n_samples)).reshape((-1,) + (P.q,) * P.k)
        axes = tuple(range(3, P.k + 1))
        s = tabs.sum(axis=axes) if axes else tabs
        mats = s * P.q ** (1 - P.k) / tabs.reshape(len(tabs), -1).mean(axis=1)[:, None, None]
        return mats.mean(axis=0)
    return phi_conditional(P)


def xi_operator(P, n_samples=None, rng=None):
    """Xi = E[Phi_psi (x) Phi_psi] as a q^2 x q^2 matrix.

    Exact for finite support and for the Gaussian family (Xi is quadratic in psi),
    or a Monte-Carlo mean when ``n_samples`` is given (entrywise SE in ``.se``).
    """
    q = P.q
    if n_samples:
        tabs = P.sample_tables(rng, int(n_samples)).reshape((-1,) + (q,) * P.k)
        axes = tuple(range(3, P.k + 1))
        s = tabs.sum(axis=axes) if axes else tabs
        mats = s * q ** (1 - P.k) / tabs.reshape(len(tabs), -1).mean(axis=1)[:, None, None]
        kr = np.einsum("nab,ncd->nacbd", mats, mats).reshape(len(mats), q * q, q * q)
        X = TensorOperator(kr.mean(axis=0))
        X.se = kr.std(axis=0, ddof=1) / math.sqrt(len(mats))
        return X
    xi = xi_constant(P)
    acc = np.zeros((q * q, q * q))
    for p, w in P.quadratic_support():
        F = _phi_from_table(w.values(), q, P.k, 0, 1, xi)
        acc += p * np.kron(F, F)
    return TensorOperator(acc)


@dataclass
class TensorOperator:
    matrix: np.ndarray
    se: np.ndarray = None

    @property
    def q(self):
        return int(round(math.sqrt(self.matrix.shape[0])))


def e_basis(q):
    """Orthonormal basis of E = {z : <z, 1 (x) y> = <z, y (x) 1> = 0}."""
    U = centered_basis(q)
    return np.kron(U, U)


def eprime_basis(q):
    """Orthonormal basis of E' = {z : <z, 1 (x) 1> = 0}."""
    U = centered_basis(q)
    one = np.ones((q, 1)) / math.sqrt(q)
    return np.hstack([np.kron(U, U), np.kron(one, U), np.kron(U, one)])


@dataclass
class SpectralReport:
    eig_phi: list
    eig_xi_on_E: list
    eig_xi_on_Eprime: list
    lambda_hat: float
    d_ks: float = None
    k: int = None
    degenerate: bool = False

    def to_dict(self):
        d = dict(self.__dict__)
        d["d_ks"] = "inf" if self.d_ks == math.inf else self.d_ks
        return d


def spectra(Phi, Xi, k=None):
    """Eigenvalues of Phi and of Xi restricted to E and E'."""
    X = Xi.matrix if isinstance(Xi, TensorOperator) else np.asarray(Xi)
    Phi = np.asarray(Phi)
    q = Phi.shape[0]
    if np.max(np.abs(Phi - Phi.T)) > SYM_TOL or np.max(np.abs(X - X.T)) > SYM_TOL:
        raise FactorPhaseError("input: Phi and Xi must be symmetric")
    ep = np.sort(np.linalg.eigvalsh((Phi + Phi.T) / 2))[::-1]
    B = e_basis(q)
    XE = B.T @ X @ B
    eE = np.sort(np.linalg.eigvalsh((XE + XE.T) / 2))[::-1]
    B2 = eprime_basis(q)
    XE2 = B2.T @ X @ B2
    eE2 = np.sort(np.linalg.eigvalsh((XE2 + XE2.T) / 2))[::-1]
    lam = float(eE[0])
    degenerate = len(eE) > 1 and abs(eE[1] - eE[0]) < 1e-9
    rep = SpectralReport(ep.tolist(), eE.tolist(), eE2.tolist(), lam, k=k, degenerate=bool(degenerate))
    if k is not None:
        rep.d_ks = ks_bound(rep, k)
    return rep


def model_spectra(P):
    return spectra(phi_mean(P), xi_operator(P), P.k)


def ks_bound(report, k):
    """d_KS = 1 / ((k-1) lambda_hat), infinite when lambda_hat <= 0."""
    lam = report.lambda_hat if isinstance(report, SpectralReport) else float(report)
    if k < 2 or lam <= 1e-12:
        return math.inf
    return 1.0 / ((k - 1) * lam)


@dataclass
class PerturbationFamily:
    """Sigma, eta and the atoms pi_{eps, w}(s) = 1/q + eps * H[w, s]."""

    Sigma: np.ndarray
    eta: np.ndarray
    lambda_hat: float
    eps0: float
    degenerate: bool
    residual: float
    H: np.ndarray = field(repr=False)

    @property
    def q(self):
        return self.H.shape[0]

    def atoms(self, eps):
        if eps >= self.eps0:
            raise FactorPhaseError("eps: must be below eps0 = %g" % self.eps0)
        return 1.0 / self.q + eps * self.H

    def pi_eps(self, omega, eps):
        return self.atoms(eps)[omega]


def _swap(q):
    """Permutation matrix of the factor swap x (x) y -> y (x) x."""
    S = np.zeros((q * q, q * q))
    for a in range(q):
        for b in range(q):
            S[b * q + a, a * q + b] = 1.0
    return S


def sigma_perturbation(Xi, tol=1e-9):
    """Top symmetric eigenvector of Xi on E turned into the Sigma/eta construction."""
    X = Xi.matrix if isinstance(Xi, TensorOperator) else np.asarray(Xi)
    q = int(round(math.sqrt(X.shape[0])))
    B = e_basis(q)
    w, V = np.linalg.eigh(B.T @ X @ B)
    lam = float(w[-1])
    top = V[:, np.abs(w - lam) < tol]
    degenerate = top.shape[1] > 1
    Z = B @ top
    # symmetric part of the eigenspace
    S = _swap(q)
    M = Z.T @ S @ Z
    mw, mv = np.linalg.eigh((M + M.T) / 2)
    sym = Z @ mv[:, mw > 1 - 1e-8]
    if sym.shape[1] == 0:
        raise FactorPhaseError("Xi: top eigenspace on E has no symmetric vector")
    z = None
    proj = sym @ sym.T
    for i in range(q * q):
        p = proj[:, i]
        if np.linalg.norm(p) > 1e-8:
            z = p / np.linalg.norm(p)
            break
    Zm = z.reshape(q, q)
    ww, uu = np.linalg.eigh((Zm + Zm.T) / 2)
    keep = np.abs(ww) > 1e-12
    ww, uu = ww[keep], uu[:, keep]
    Sigma = (uu * np.abs(ww)) @ uu.T
    H = (uu * np.sqrt(np.abs(ww))) @ uu.T
    Sigma_v = Sigma.ravel()
    res = float(np.linalg.norm(X @ Sigma_v - lam * Sigma_v))
    hmin = H.min()
    eps0 = math.inf if hmin >= 0 else (1.0 / q) / (-hmin)
    return PerturbationFamily(Sigma_v, H.ravel(), lam, eps0, bool(degenerate), res, H)


def potts_closed_forms(q, beta):
    """Closed-form Phi, its eigenvalues and d_KS for the Potts model."""
    eb = math.exp(-beta)
    Phi = (np.ones((q, q)) - (1 - eb) * np.eye(q)) / (q - 1 + eb)
    theta = (eb - 1) / (q - 1 + eb)
    dks = ((q - 1 + eb) / (1 - eb)) ** 2
    return Phi, [1.0] + [theta] * (q - 1), dks


def taylor_expansion_check(d, P, family=None, eps_list=(0.025, 0.05)):
    """Exact B(pi_eps) - B(pi_0) next to the fourth-order term of the local expansion.

    ``predicted`` is d(k-1)/12 ((k-1) d lam^2 - lam) eps^4. Rows also carry the
    observed/predicted ratio; ``doubling`` holds delta(2 eps)/delta(eps) for
    every eps whose double is also listed (16 for a pure quartic).
    """
    from .bethe import Population, bethe_exact_delta

    if family is None:
        family = sigma_perturbation(xi_operator(P))
    k, lam = P.k, family.lambda_hat
    coef = d * (k - 1) / 12.0 * ((k - 1) * d * lam**2 - lam)
    rows = []
    for eps in eps_list:
        obs = bethe_exact_delta(d, P, Population(family.atoms(eps)))
        pred = coef * eps**4
        rows.append({"eps": float(eps), "delta_B": obs, "predicted": pred,
                     "ratio": obs / pred if pred else float("nan")})
    by_eps = {r["eps"]: r["delta_B"] for r in rows}
    doubling = {e: by_eps[2 * e] / by_eps[e] for e in by_eps if 2 * e in by_eps and by_eps[e]}
    return {"rows": rows, "doubling": doubling, "lambda_hat": lam, "coefficient": coef}
