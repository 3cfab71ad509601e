"""Bethe functional over distributions of marginals, population dynamics and d_cond scans.

A population represents pi: a finite set of points of the simplex with
weights (uniform by default). Points are rows of a (N, q) array.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .errors import DivergenceError, FactorPhaseError
from .graphs import compositions
from .model import xi_constant
from .rng import as_generator

SE_FLOOR = 1e-12
CHUNK = 1 << 16


@dataclass
class Population:
    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if np.any(pts < -1e-15) or np.any(np.abs(pts.sum(axis=1) - 1) > 1e-9):
            raise FactorPhaseError("points: every row must be a probability distribution")
        self.points = np.clip(pts, 0.0, None)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            self.weights = w / w.sum()

    @property
    def N(self):
        return len(self.points)

    @property
    def q(self):
        return self.points.shape[1]

    def barycenter(self):
        if self.weights is None:
            return self.points.mean(axis=0)
        return self.weights @ self.points

    def draw(self, rng, size):
        if self.weights is None:
            return self.points[rng.integers(self.N, size=size)]
        return self.points[rng.choice(self.N, size=size, p=self.weights)]


def uniform_atom(q):
    return Population(np.full((1, q), 1.0 / q))


def polarized(q, N=None):
    """Uniform mixture of the point masses on each spin."""
    pts = np.eye(q)
    if N is not None:
        pts = np.tile(pts, (int(math.ceil(N / q)), 1))[:N]
    return Population(pts)


@dataclass
class BetheEstimate:
    value: float
    se: float
    n_samples: int
    d: float
    threshold: float

    @property
    def gap(self):
        return self.value - self.threshold

    def to_dict(self):
        return {"value": self.value, "se": self.se, "n_samples": self.n_samples,
                "d": self.d, "threshold": self.threshold, "gap": self.gap}


def threshold(d, P):
    return math.log(P.q) + d / P.k * math.log(xi_constant(P))


def _xlogx(x):
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _factor_messages(tables, parents, q, k):
    """m(s) = sum over tau with tau_k = s of psi(tau) prod_{j<k} rho_j(tau_j).

    tables: (F, q^k); parents: (F, k-1, q). Returns (F, q).
    """
    X = tables.reshape((len(tables),) + (q,) * k)
    for j in range(k - 1):
        X = np.einsum("na,na...->n...", parents[:, j], X)
    return X


def _full_contraction(tables, rhos, q, k):
    X = tables.reshape((len(tables),) + (q,) * k)
    for j in range(k):
        X = np.einsum("na,na...->n...", rhos[:, j], X)
    return X


def _variable_terms(gammas, msgs, q, log_xi):
    """log of s = sum_s prod_i m_i(s) / (q xi^gamma) for consecutive message blocks."""
    n = len(gammas)
    logm = np.log(msgs)
    seg = np.zeros((n, q))
    if len(msgs):
        owner = np.repeat(np.arange(n), gammas)
        np.add.at(seg, owner, logm)
    return logsumexp(seg, axis=1) - math.log(q) - gammas * log_xi


def bethe_estimate(d, P, pi, n_mc=10**5, rng=None):
    """Monte-Carlo estimate of B(d, P, pi) with its standard error.

    The uniform atom is evaluated in closed form.
    """
    rng = as_generator(rng)
    xi = xi_constant(P)
    thr = threshold(d, P)
    q, k = P.q, P.k
    if d == 0:
        return BetheEstimate(math.log(q), 0.0, 0, d, thr)
    if pi.N == 1 and np.allclose(pi.points[0], 1.0 / q, atol=1e-15):
        return BetheEstimate(thr, 0.0, 0, d, thr)
    vals = _bethe_samples(d, P, pi, n_mc, rng, xi)
    se = float(vals.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return BetheEstimate(float(vals.mean()), se, n_mc, d, thr)


def _bethe_samples(d, P, pi, n_mc, rng, xi):
    q, k = P.q, P.k
    log_xi = math.log(xi)
    c2 = d * (k - 1) / (k * xi)
    out = np.empty(n_mc)
    for start in range(0, n_mc, CHUNK):
        n = min(CHUNK, n_mc - start)
        g = rng.poisson(d, size=n)
        F = int(g.sum())
        tabs = P.sample_tables(rng, F)
        par = pi.draw(rng, F * (k - 1)).reshape(F, k - 1, q)
        msgs = _factor_messages(tabs, par, q, k)
        logs = _variable_terms(g, msgs, q, log_xi)
        s = np.exp(logs)
        # Lambda(S) / (q xi^gamma) with S = s q xi^gamma
        first = s * (logs + math.log(q) + g * log_xi)
        tabs2 = P.sample_tables(rng, n)
        rh = pi.draw(rng, n * k).reshape(n, k, q)
        T = _full_contraction(tabs2, rh, q, k)
        out[start:start + n] = first - c2 * _xlogx(T)
    return out


def _mc_estimate(vals, d, thr):
    n = len(vals)
    return BetheEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), n, d, thr)


def bethe_mc_uniform(d, P, n_mc, rng):
    """Run the generic sampler at the uniform atom without the closed-form shortcut."""
    rng = as_generator(rng)
    xi = xi_constant(P)
    pi = Population(np.full((2, P.q), 1.0 / P.q))
    vals = _bethe_samples(d, P, pi, n_mc, rng, xi)
    est = _mc_estimate(vals, d, threshold(d, P))
    est.se = max(est.se, SE_FLOOR)
    return est


# -- exact evaluation for finite supports ---------------------------------


def _poisson_cutoff(d, tail=1e-18):
    g = 0
    while stats.poisson.sf(g, d) > tail:
        g += 1
    return g


def _slns(u):
    """s ln s - s + 1 for s = e^u, accurate for small u."""
    return u * np.exp(u) - np.expm1(u)


def bethe_exact_delta(d, P, pi, max_multisets=2 * 10**6):
    """B(d, P, pi) - B(d, P, uniform atom), summed exactly for finite P and pi.

    Uses E[s] = 1 for the normalized variable term and E[t] = 1 for the
    normalized factor term (barycenter uniform plus SYM), so each term is
    written as E[s ln s - s + 1], which stays accurate when B is close to
    its value at the uniform atom.
    """
    if pi.weights is None:
        pi = Population(pi.points, np.full(pi.N, 1.0 / pi.N))
    q, k = P.q, P.k
    xi = xi_constant(P)
    sup = P.support()
    # distinct factor messages with probabilities
    msgs, probs = [], []
    for p, w in sup:
        t = w.values().ravel()
        for idx in np.ndindex(*(pi.N,) * (k - 1)):
            par = pi.points[list(idx)][None]
            msgs.append(_factor_messages(t[None], par, q, k)[0])
            probs.append(p * np.prod(pi.weights[list(idx)]))
    msgs, probs = np.array(msgs), np.array(probs)
    logm, logp = np.log(msgs), np.log(probs)
    A = len(msgs)
    G = _poisson_cutoff(d)
    first = []
    for g in range(1, G + 1):
        if math.comb(g + A - 1, A - 1) > max_multisets:
            raise DivergenceError("exact Bethe: too many message multisets at gamma=%d" % g)
        C = compositions(g, A)
        lw = gammaln(g + 1) - gammaln(C + 1).sum(axis=1) + C @ logp
        logs = logsumexp(C @ logm, axis=1) - math.log(q) - g * math.log(xi)
        pg = stats.poisson.pmf(g, d)
        first.append(pg * math.fsum(np.exp(lw) * _slns(logs)))
    # factor term over pi^k and P
    second = []
    for p, w in sup:
        t = w.values().ravel()
        for idx in np.ndindex(*(pi.N,) * k):
            rh = pi.points[list(idx)][None]
            T = _full_contraction(t[None], rh, q, k)[0]
            pr = p * np.prod(pi.weights[list(idx)])
            second.append(pr * float(_slns(np.log(T / xi))))
    return math.fsum(first) - d * (k - 1) / k * math.fsum(second)


# -- population dynamics --------------------------------------------------


def recenter(points, tol=1e-12, max_iter=100):
    """Shift points so their mean is uniform, clipping at 0 and renormalizing."""
    pts = np.array(points, dtype=float)
    q = pts.shape[1]
    for _ in range(max_iter):
        dev = pts.mean(axis=0) - 1.0 / q
        if np.abs(dev).max() < tol:
            break
        pts = np.clip(pts - dev, 0.0, None)
        pts /= pts.sum(axis=1, keepdims=True)
    return pts


def population_step(pi, d, P, rng):
    """One sweep of reweighted distributional message passing.

    New points are normalized variable-to-factor messages with Po(d) incoming
    factors; the pool is resampled proportionally to the normalization
    divided by q xi^gamma, then re-centered to a uniform barycenter.
    """
    rng = as_generator(rng)
    q, k, N = P.q, P.k, pi.N
    xi = xi_constant(P)
    g = rng.poisson(d, size=N)
    F = int(g.sum())
    tabs = P.sample_tables(rng, F)
    par = pi.draw(rng, F * (k - 1)).reshape(F, k - 1, q)
    msgs = _factor_messages(tabs, par, q, k)
    seg = np.zeros((N, q))
    if F:
        np.add.at(seg, np.repeat(np.arange(N), g), np.log(msgs))
    logS = logsumexp(seg, axis=1)
    new = np.exp(seg - logS[:, None])
    logw = logS - g * math.log(xi)
    w = np.exp(logw - logw.max())
    pick = rng.choice(N, size=N, p=w / w.sum())
    return Population(recenter(new[pick]))


def polarization(pi):
    """Mean TV distance of the points from uniform."""
    return float(0.5 * np.abs(pi.points - 1.0 / pi.q).sum(axis=1).mean())


def run_population(d, P, init, sweeps=200, keep=50, n_mc=10**4, rng=None):
    """Iterate population_step and estimate B over the last ``keep`` sweeps."""
    rng = as_generator(rng)
    pi = init
    est, pol = [], []
    for t in range(sweeps):
        pi = population_step(pi, d, P, rng)
        if t >= sweeps - keep:
            est.append(bethe_estimate(d, P, pi, n_mc, rng).value)
            pol.append(polarization(pi))
    est = np.array(est)
    return pi, est, np.array(pol)


def block_bootstrap_se(x, block=5, n_boot=500, rng=None):
    rng = as_generator(rng)
    x = np.asarray(x)
    nb = max(1, len(x) // block)
    blocks = x[: nb * block].reshape(nb, -1).mean(axis=1)
    if nb < 2:
        return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    boots = blocks[rng.integers(nb, size=(n_boot, nb))].mean(axis=1)
    return float(boots.std(ddof=1))


def dcond_scan(P, d_grid, N=10**4, sweeps=200, keep=50, n_mc=10**4, rng=None):
    """Heuristic sup_pi B - threshold per d from two initializations, plus a bracket.

    The sup over pi is approximated by population dynamics started at the
    uniform atom and at the polarized mixture; the reported values are lower
    bounds on the true supremum.
    """
    rng = as_generator(rng)
    grid = list(d_grid)
    if grid != sorted(grid):
        raise FactorPhaseError("d_grid: must be sorted")
    rows = []
    for d in grid:
        thr = threshold(d, P)
        _, est, pol = run_population(d, P, polarized(P.q, N), sweeps, keep, n_mc, rng)
        b_pol = float(est.mean())
        se = block_bootstrap_se(est, rng=rng)
        sup_b = max(thr, b_pol)
        converged = bool(np.abs(pol[-10:].mean() - pol[:10].mean()) < 0.05 + 3 * pol.std())
        rows.append({"d": d, "sup_B": sup_b, "threshold": thr, "gap": sup_b - thr,
                     "se": se, "polarization": float(pol[-1]), "converged": converged})
    bracket = None
    prev = None
    for r in rows:
        pos = r["gap"] > 3 * r["se"] and r["gap"] > 0
        if pos:
            bracket = (prev, r["d"])
            break
        prev = r["d"]
    return {"rows": rows, "bracket": bracket, "label": "heuristic lower bound on sup over pi"}


# -- specialized displayed forms ------------------------------------------


def bethe_closed_forms(P, d, pi, n_mc=10**5, rng=None):
    """Evaluate the specialized Potts or Ising-coupling formula by Monte Carlo."""
    rng = as_generator(rng)
    q, k = P.q, P.k
    thr = threshold(d, P)
    out = np.empty(n_mc)
    for start in range(0, n_mc, CHUNK):
        n = min(CHUNK, n_mc - start)
        g = rng.poisson(d, size=n)
        F = int(g.sum())
        owner = np.repeat(np.arange(n), g)
        if P.family == "potts":
            c = 1.0 - math.exp(-P.beta)
            base = 1.0 - c / q
            r = pi.draw(rng, F)
            seg = np.zeros((n, q))
            np.add.at(seg, owner, np.log(1.0 - c * r))
            S = np.exp(logsumexp(seg, axis=1))
            first = _xlogx(S) / (q * base**g)
            r1, r2 = pi.draw(rng, n), pi.draw(rng, n)
            second = d / 2 * _xlogx(1.0 - c * (r1 * r2).sum(axis=1)) / base
        elif P.family in ("kspin", "xorsat"):
            J = rng.standard_normal(F) if P.family == "kspin" else rng.choice([-1.0, 1.0], size=F)
            th = np.tanh(P.beta * J)
            par = pi.draw(rng, F * (k - 1)).reshape(F, k - 1, 2)
            mag = np.prod(par[:, :, 0] - par[:, :, 1], axis=1)
            seg = np.zeros((n, 2))
            sgn = np.array([1.0, -1.0])
            np.add.at(seg, owner, np.log(1.0 + th[:, None] * mag[:, None] * sgn[None, :]))
            first = 0.5 * _xlogx(np.exp(logsumexp(seg, axis=1)))
            J2 = rng.standard_normal(n) if P.family == "kspin" else rng.choice([-1.0, 1.0], size=n)
            rh = pi.draw(rng, n * k).reshape(n, k, 2)
            mag2 = np.prod(rh[:, :, 0] - rh[:, :, 1], axis=1)
            # the coefficient d(k-1)/k matches the general functional
            second = d * (k - 1) / k * _xlogx(1.0 + np.tanh(P.beta * J2) * mag2)
        else:
            raise FactorPhaseError("model: closed forms exist for potts, kspin and xorsat only")
        out[start:start + n] = first - second
    return _mc_estimate(out, d, thr)


def potts_uniform_value(q, beta, d):
    return math.log(q) + d / 2 * math.log(1 - (1 - math.exp(-beta)) / q)
