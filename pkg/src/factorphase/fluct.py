"""Cycle census with signatures, Poisson constants, moment formulas and the law of K.

Positions inside a constraint are 0-based in code; signature ids print them
1-based. The order-one normalization of kappa is a documented choice: a
direct count of loops per signature (E, s, t) with s < t has mean
(d/k) P(E), which is what ``kappa`` returns by default. The alternative
``loop_normalization="half"`` gives (1/2)(d/k) P(E).
"""

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .errors import BudgetError, DivergenceError, FactorPhaseError
from .gibbs import partition_components
from .graphs import gen_nishimori, gen_null, is_simple, log_first_moment_exact
from .model import xi_constant
from .operators import model_spectra, phi_conditional, phi_mean
from .parallel import base_seed, run_tasks
from .rng import as_generator, stream

LOOP_NORMALIZATION = "direct"
DFS_BUDGET = 10**7
CYCLE_CHUNK = 2 * 10**5


# -- signatures -----------------------------------------------------------


@dataclass(frozen=True)
class Event:
    """A set of weight functions, given by a name and an optional membership test."""

    name: str
    member: object = field(default=None, compare=False, hash=False)

    def contains(self, w):
        return True if self.member is None else bool(self.member(w))

    def probability(self, P):
        return float(sum(p for p, w in P.support() if self.contains(w)))


PSI = Event("Psi")


def atom_events(P):
    """One event per support atom of a finite-support P."""
    out = []
    for i, (_, w) in enumerate(P.support()):
        key = w.key()
        out.append(Event("atom%d" % i, partial(_key_equals, key)))
    return out


def _key_equals(key, w):
    return w.key() == key


@dataclass(frozen=True)
class Signature:
    events: tuple
    s: tuple
    t: tuple

    def __post_init__(self):
        l = len(self.events)
        if l < 1 or len(self.s) != l or len(self.t) != l:
            raise FactorPhaseError("signature: events, s and t must have equal positive length")
        if any(a == b for a, b in zip(self.s, self.t)):
            raise FactorPhaseError("signature: s_i must differ from t_i")
        if l == 1 and not self.s[0] < self.t[0]:
            raise FactorPhaseError("signature: order one requires s_1 < t_1")

    @property
    def order(self):
        return len(self.events)

    @property
    def id(self):
        parts = ["%s:%d>%d" % (e.name, a + 1, b + 1) for e, a, b in zip(self.events, self.s, self.t)]
        return "l%d|" % self.order + "|".join(parts)

    def matches(self, pattern, weights):
        st, cons = pattern
        if tuple(x for x, _ in st) != self.s or tuple(y for _, y in st) != self.t:
            return False
        return all(e.contains(weights[h]) for e, h in zip(self.events, cons))


def all_psi_signatures(order, k):
    """Every signature of the given order with all events equal to Psi."""
    pairs = [(a, b) for a in range(k) for b in range(k) if a != b]
    if order == 1:
        pairs = [(a, b) for a, b in pairs if a < b]
        return [Signature((PSI,), (a,), (b,)) for a, b in pairs]
    out = []
    for combo in np.ndindex(*(len(pairs),) * order):
        st = [pairs[c] for c in combo]
        out.append(Signature((PSI,) * order, tuple(a for a, _ in st), tuple(b for _, b in st)))
    return out


# -- census ---------------------------------------------------------------


@dataclass
class CycleCensus:
    totals: dict
    patterns: dict
    signature_counts: dict = field(default_factory=dict)

    def to_rows(self):
        rows = [{"signature": "C%d" % l, "count": c} for l, c in sorted(self.totals.items())]
        rows += [{"signature": k, "count": c} for k, c in sorted(self.signature_counts.items())]
        return rows


def two_core(G):
    """Boolean masks (variables, constraints) of the incidence 2-core."""
    n, m = G.n, G.m
    nb = G.neighbors
    vlive = np.ones(n, dtype=bool)
    clive = np.ones(m, dtype=bool)
    while True:
        vdeg = np.bincount(nb[clive].ravel(), minlength=n)
        cdeg = vlive[nb].sum(axis=1)
        nv = vlive & (vdeg >= 2)
        nc = clive & (cdeg >= 2)
        if np.array_equal(nv, vlive) and np.array_equal(nc, clive):
            return vlive, clive
        vlive, clive = nv, nc


def enumerate_cycles(G, ell_max):
    """Yield (order, ((s_j, t_j), ...), (h_1, ..., h_l), (i_1, ..., i_l)) for every cycle.

    Conventions: distinct variables starting at the smallest index, distinct
    constraints, h_1 < h_l for l > 1 and s_1 < t_1 for l = 1.
    """
    if ell_max > 8:
        raise BudgetError("ell_max: at most 8 is supported")
    vlive, clive = two_core(G)
    nb = G.neighbors
    k = G.k
    inc = {}
    for a in np.flatnonzero(clive):
        for s in range(k):
            v = int(nb[a, s])
            if vlive[v]:
                inc.setdefault(v, []).append((int(a), s))
    steps = [0]
    out = []

    def extend(i1, v, vars_, cons, st):
        depth = len(cons)
        for a, s in inc.get(v, ()):
            if a in cons:
                continue
            for t in range(k):
                if t == s:
                    continue
                steps[0] += 1
                if steps[0] > DFS_BUDGET:
                    raise BudgetError("cycle enumeration exceeded its step budget")
                w = int(nb[a, t])
                if w == i1:
                    L = depth + 1
                    if (L == 1 and s < t) or (L > 1 and cons[0] < a):
                        out.append((L, tuple(st + [(s, t)]), tuple(cons + [a]), tuple(vars_)))
                elif w > i1 and w not in vars_ and depth + 1 < ell_max and vlive[w]:
                    extend(i1, w, vars_ + [w], cons + [a], st + [(s, t)])

    for i1 in sorted(inc):
        extend(i1, i1, [i1], [], [])
    return out


def count_cycles(G, ell_max, signatures=None):
    """Cycle counts per order, per (s, t) pattern and per supplied signature."""
    cycles = enumerate_cycles(G, ell_max)
    totals = {l: 0 for l in range(1, ell_max + 1)}
    families = set()
    patterns = {}
    counts = {Y.id: 0 for Y in (signatures or [])}
    for L, st, cons, vars_ in cycles:
        fam = (vars_, cons)
        if fam not in families:
            families.add(fam)
            totals[L] += 1
        pid = "l%d|" % L + "|".join("%d>%d" % (a + 1, b + 1) for a, b in st)
        patterns[pid] = patterns.get(pid, 0) + 1
        for Y in signatures or []:
            if Y.order == L and Y.matches((st, cons), G.weights):
                counts[Y.id] += 1
    return CycleCensus(totals, patterns, counts)


# -- constants ------------------------------------------------------------


@dataclass
class SignatureConstants:
    kappa: float
    Phi_Y: np.ndarray
    kappa_hat: float
    delta: float


def kappa(Y, d, k, P, loop_normalization=None):
    norm = loop_normalization or LOOP_NORMALIZATION
    l = Y.order
    prob = math.prod(e.probability(P) for e in Y.events)
    if prob <= 0:
        raise FactorPhaseError("signature: an event has probability zero")
    if l == 1:
        return (d / k) * prob * (1.0 if norm == "direct" else 0.5)
    return (d / k) ** l * prob / (2 * l)


def signature_constants(Y, d, k, P, loop_normalization=None):
    """(kappa_Y, Phi_Y, kappa_hat_Y, delta_Y) for a signature."""
    kap = kappa(Y, d, k, P, loop_normalization)
    M = np.eye(P.q)
    for e, s, t in zip(Y.events, Y.s, Y.t):
        M = M @ phi_conditional(P, s, t, None if e.member is None else e.contains)
    tr = float(np.trace(M))
    return SignatureConstants(kap, M, kap * tr, tr - 1.0)


def order_means(d, P, ell_max, planted=False):
    """Predicted mean of C_l: ((k-1)d)^l/(2l), or its planted analogue."""
    k = P.k
    if not planted:
        return {l: (d * (k - 1)) ** l / (2 * l) for l in range(1, ell_max + 1)}
    M = np.zeros((P.q, P.q))
    for s in range(k):
        for t in range(k):
            if s != t:
                M += phi_conditional(P, s, t)
    out = {1: d / (2 * k) * float(np.trace(M))}
    for l in range(2, ell_max + 1):
        out[l] = (d / k) ** l / (2 * l) * float(np.trace(np.linalg.matrix_power(M, l)))
    return out


# -- Poisson fit ----------------------------------------------------------


def _census_task(args):
    model, d, P, n, seed, g, ell_max, sigs = args
    rng = stream(seed, g)
    m = int(rng.poisson(d * n / P.k))
    if model == "null":
        G = gen_null(n, P, rng, m=m)
    else:
        G, _ = gen_nishimori(n, m, P, rng)
    c = count_cycles(G, ell_max, sigs)
    return {"totals": [c.totals[l] for l in range(1, ell_max + 1)],
            "sigs": [c.signature_counts[Y.id] for Y in sigs or []]}


def poisson_fit(model, d, P, n, n_graphs, rng=None, ell_max=3, signatures=None, workers=1):
    """Empirical cycle-count means versus the predicted Poisson means."""
    if model not in ("null", "nishimori"):
        raise FactorPhaseError("model: expected 'null' or 'nishimori'")
    rng = as_generator(rng)
    seed = base_seed(rng)
    sigs = list(signatures or [])
    tasks = [(model, d, P, n, seed, g, ell_max, sigs) for g in range(n_graphs)]
    res = run_tasks(_census_task, tasks, workers)
    tot = np.array([r["totals"] for r in res], dtype=float)
    pred = order_means(d, P, ell_max, planted=(model == "nishimori"))
    rows = []
    for l in range(1, ell_max + 1):
        rows.append(_row("C%d" % l, tot[:, l - 1], pred[l]))
    if sigs:
        sc = np.array([r["sigs"] for r in res], dtype=float)
        for j, Y in enumerate(sigs):
            c = signature_constants(Y, d, P.k, P)
            rows.append(_row(Y.id, sc[:, j], c.kappa_hat if model == "nishimori" else c.kappa))
    # pairwise independence of order counts
    corr = []
    for a in range(ell_max):
        for b in range(a + 1, ell_max):
            x, y = tot[:, a], tot[:, b]
            if x.std() > 0 and y.std() > 0:
                r = float(np.corrcoef(x, y)[0, 1])
                corr.append({"pair": "C%d,C%d" % (a + 1, b + 1), "corr": r, "z": r * math.sqrt(n_graphs)})
    return {"rows": rows, "independence": corr, "n_graphs": n_graphs, "n": n, "d": d,
            "model": model, "loop_normalization": LOOP_NORMALIZATION}


def _row(name, x, pred):
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    se_pois = math.sqrt(pred / len(x)) if pred > 0 else 0.0
    z = (mean - pred) / se if se > 0 else (0.0 if mean == pred else math.inf)
    hist = np.bincount(x.astype(int), minlength=4)
    expected = stats.poisson.pmf(np.arange(3), pred) * len(x)
    observed = np.array([hist[0], hist[1], hist[2], hist[3:].sum()], dtype=float)
    expected = np.append(expected, len(x) - expected.sum())
    ok = expected > 5
    chi2 = float(((observed[ok] - expected[ok]) ** 2 / expected[ok]).sum()) if ok.any() else 0.0
    return {"signature": name, "mean": mean, "se": se, "se_poisson": se_pois, "predicted": pred,
            "z": z, "chi2": chi2, "chi2_df": int(max(ok.sum() - 1, 0))}


# -- the random variable K ------------------------------------------------


@dataclass
class KSample:
    values: np.ndarray
    ell_max: int
    tail_bound: float
    conditioned_on_S: bool = False

    def mean(self):
        return float(self.values.mean())

    def se(self):
        return float(self.values.std(ddof=1) / math.sqrt(len(self.values)))


def _phi_batch(tables, P, xi):
    q, k = P.q, P.k
    X = tables.reshape((len(tables), q, q, -1)).sum(axis=3)
    return X * q ** (1 - k) / xi


def k_tail_bound(d, P, ell_max, spec=None, terms=2000):
    spec = spec or model_spectra(P)
    c = d * (P.k - 1)
    lam = np.abs(np.array(spec.eig_xi_on_E))
    tot = 0.0
    for l in range(ell_max + 1, ell_max + terms):
        t = c**l / (2 * l) * float((lam**l).sum())
        tot += t
        if t < 1e-18:
            break
    return tot


def _check_regime(d, P, spec):
    c = d * (P.k - 1)
    if c * max(spec.lambda_hat, 0.0) >= 1 - 1e-6:
        raise DivergenceError("K: d(k-1) lambda_hat = %.6g is not below 1" % (c * spec.lambda_hat))


def sample_K(d, P, ell_max=20, conditioned_on_S=False, n_samples=10**5, rng=None):
    """Samples of K (or of K' when conditioning on simplicity) truncated at ell_max.

    Level l uses its own stream, so a run with a larger ell_max extends
    the draws of a smaller one.
    """
    rng = as_generator(rng)
    spec = model_spectra(P)
    _check_regime(d, P, spec)
    xi = xi_constant(P)
    k, q = P.k, P.q
    c = d * (k - 1)
    Phi = phi_mean(P)
    base = base_seed(rng)
    vals = np.zeros(n_samples)
    sup = np.stack([w.values().ravel() for _, w in P.support()])
    flat = bool(np.all(np.abs(_phi_batch(sup, P, xi) - 1.0 / q) < 1e-15))
    skip = {1, 2} if (conditioned_on_S and k == 2) else ({1} if conditioned_on_S else set())
    for l in range(1, ell_max + 1):
        mu = c**l / (2 * l)
        det = mu * (1 - float(np.trace(np.linalg.matrix_power(Phi, l))))
        vals += det
        if l in skip or flat:
            # every Phi_psi equal to J/q makes every log-trace vanish
            continue
        r = stream(base, l)
        K = r.poisson(mu, size=n_samples)
        owner = np.repeat(np.arange(n_samples), K)
        for lo in range(0, len(owner), CYCLE_CHUNK):
            sel = owner[lo:lo + CYCLE_CHUNK]
            T = len(sel)
            tabs = P.sample_tables(r, T * l)
            mats = _phi_batch(np.asarray(tabs), P, xi).reshape(T, l, q, q)
            prod = mats[:, 0]
            for j in range(1, l):
                prod = prod @ mats[:, j]
            np.add.at(vals, sel, np.log(np.trace(prod, axis1=1, axis2=2)))
    return KSample(vals, ell_max, k_tail_bound(d, P, ell_max, spec), conditioned_on_S)


def k_mean_series(d, P, ell_max=200):
    """E[K] for single-atom P: sum_l mu_l (1 - Tr Phi^l + ln Tr Phi^l)."""
    if len(P.support()) != 1:
        raise FactorPhaseError("model: the closed series needs a single-atom P")
    Phi = phi_mean(P)
    c = d * (P.k - 1)
    ev = np.linalg.eigvalsh((Phi + Phi.T) / 2)
    out = []
    for l in range(1, ell_max + 1):
        tr = float((ev**l).sum())
        out.append(c**l / (2 * l) * (1 - tr + math.log(tr)))
    return math.fsum(out)


# -- moments --------------------------------------------------------------


def _minus_one(eigs):
    """Drop one eigenvalue equal to 1 (the top one) from the spectrum of Phi."""
    e = sorted(eigs, reverse=True)
    if abs(e[0] - 1) > 1e-8:
        raise FactorPhaseError("Phi: top eigenvalue is not 1")
    return e[1:]


def moment_formulas(n, m, d, P, spec=None, prefactor="corrected", exact=True):
    """Asymptotic and exact first moment, second-moment bound and variance ratio (all logs).

    ``prefactor="corrected"`` uses q^n for the first moment and q^{2n} for
    the second; ``"shifted"`` uses q^{n+1/2} and q^{2n+1}.
    """
    spec = spec or model_spectra(P)
    k, q = P.k, P.q
    c = d * (k - 1)
    xi = xi_constant(P)
    half = 0.5 if prefactor == "shifted" else 0.0
    phis = _minus_one(spec.eig_phi)
    if any(1 - c * lam <= 0 for lam in phis):
        raise DivergenceError("first moment: 1 - d(k-1) lambda <= 0")
    first = (n + half) * math.log(q) + m * math.log(xi) - 0.5 * sum(math.log(1 - c * lam) for lam in phis)
    out = {"log_EZ_asymptotic": first, "prefactor": prefactor}
    if exact:
        out["log_EZ_exact"] = log_first_moment_exact(n, m, P)
        out["log_difference"] = out["log_EZ_exact"] - first
    eprime = spec.eig_xi_on_Eprime
    if all(1 - c * lam > 0 for lam in eprime):
        out["log_second_moment_bound"] = ((2 * n + 2 * half) * math.log(q) + 2 * m * math.log(xi)
                                          - 0.5 * sum(math.log(1 - c * lam) for lam in eprime))
    else:
        out["log_second_moment_bound"] = math.inf
    eE = spec.eig_xi_on_E
    if all(1 - c * lam > 0 for lam in eE):
        out["log_variance_ratio"] = -0.5 * sum(math.log(1 - c * lam) for lam in eE)
    else:
        out["log_variance_ratio"] = math.inf
    return out


def centering(n, m, d, P, spec=None, prefactor="shifted"):
    """Deterministic part subtracted from ln Z in the fluctuation statement."""
    spec = spec or model_spectra(P)
    c = d * (P.k - 1)
    half = 0.5 if prefactor == "shifted" else 0.0
    phis = _minus_one(spec.eig_phi)
    return ((n + half) * math.log(P.q) + m * math.log(xi_constant(P))
            - 0.5 * sum(math.log(1 - c * lam) for lam in phis))


# -- fluctuation experiment -----------------------------------------------


def shifted_ks(x, y, delta):
    """max over t of F_x(t) - F_y(t + delta) and F_y(t) - F_x(t + delta).

    With delta = 0 this is the two-sample Kolmogorov distance. A value below
    delta certifies Levy distance below delta, which, unlike the Kolmogorov
    distance, is insensitive to tiny displacements of atoms.
    """
    x, y = np.sort(np.asarray(x, float)), np.sort(np.asarray(y, float))

    def one(a, b):
        Fa = np.searchsorted(a, a, side="right") / len(a)
        Fb = np.searchsorted(b, a + delta, side="right") / len(b)
        return float(np.max(Fa - Fb))

    return max(0.0, one(x, y), one(y, x))


def _fluct_task(args):
    d, P, n, seed, g = args
    rng = stream(seed, g)
    G = gen_null(n, P, rng, d=d)
    res = partition_components(G)
    return {"log_Z": res.log_Z, "m": G.m, "simple": is_simple(G)}


def fluctuation_experiment(d, P, n, n_graphs, n_K=10**5, rng=None, ell_max=20, workers=1):
    """Centered ln Z over random graphs against samples of K (and of K' given simplicity)."""
    rng = as_generator(rng)
    spec = model_spectra(P)
    seed = base_seed(rng)
    res = run_tasks(_fluct_task, [(d, P, n, seed, g) for g in range(n_graphs)], workers)
    logZ = np.array([r["log_Z"] for r in res])
    ms = np.array([r["m"] for r in res])
    simple = np.array([r["simple"] for r in res])
    out = {"n": n, "d": d, "n_graphs": n_graphs, "log_Z": logZ, "m": ms, "simple": simple}
    K = sample_K(d, P, ell_max, False, n_K, stream(seed, 1 << 40))
    K2 = sample_K(d, P, ell_max, True, n_K, stream(seed, 1 << 41))
    out["K"] = K.values
    out["K_prime"] = K2.values
    for pref in ("shifted", "corrected"):
        cen = np.array([logZ[i] - centering(n, int(ms[i]), d, P, spec, pref) for i in range(n_graphs)])
        ks = stats.ks_2samp(cen, K.values)
        entry = {"centered": cen, "ks": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
                 "ks_shift_0.01": shifted_ks(cen, K.values, 0.01),
                 "mean": float(cen.mean()), "se": float(cen.std(ddof=1) / math.sqrt(n_graphs))}
        if simple.sum() > 1:
            ks2 = stats.ks_2samp(cen[simple], K2.values)
            entry["ks_simple"] = float(ks2.statistic)
            entry["n_simple"] = int(simple.sum())
        out[pref] = entry
    out["K_mean"] = K.mean()
    out["K_se"] = K.se()
    out["K_prime_mean"] = K2.mean()
    return out
