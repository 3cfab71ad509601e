"""Factor graphs, random generators, planted assignments and the tensor square."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import BudgetError, FactorPhaseError, ModelError
from .model import WeightFunction, phi_profiles, potts_weight, kspin_weight
from .rng import as_generator

PROFILE_ENUM_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Variables 0..n-1 and constraints with ordered k-tuples of neighbors."""

    n: int
    k: int
    q: int
    neighbors: np.ndarray
    weights: tuple

    def __post_init__(self):
        nb = np.asarray(self.neighbors, dtype=np.int64).reshape(-1, self.k)
        if len(nb) != len(self.weights):
            raise FactorPhaseError("weights: one weight function per constraint required")
        if len(nb) and (nb.min() < 0 or nb.max() >= self.n):
            raise FactorPhaseError("neighbors: index out of range [0, n)")
        nb.setflags(write=False)
        object.__setattr__(self, "neighbors", nb)
        object.__setattr__(self, "weights", tuple(self.weights))

    @property
    def m(self):
        return len(self.neighbors)

    def log_tables(self):
        """Log weight tables, shape (m, q^k); shared weight objects are reused."""
        out = np.empty((self.m, self.q**self.k))
        cache = {}
        for a, w in enumerate(self.weights):
            key = id(w)
            if key not in cache:
                cache[key] = np.log(w.values().ravel())
            out[a] = cache[key]
        return out

    def weight_of(self, sigma):
        """psi_G(sigma) as a log value."""
        sigma = np.asarray(sigma)
        lt = self.log_tables()
        if self.m == 0:
            return 0.0
        flat = np.zeros(self.m, dtype=np.int64)
        for i in range(self.k):
            flat = flat * self.q + sigma[self.neighbors[:, i]]
        return float(lt[np.arange(self.m), flat].sum())

    # -- text format --------------------------------------------------------

    def to_text(self):
        lines = ["%d %d %d" % (self.n, self.k, self.q)]
        for nb, w in zip(self.neighbors, self.weights):
            head = " ".join(str(int(x)) for x in nb)
            if w.family == "potts" and w.table is not None and w.params:
                tail = "potts %r" % w.params[0]
            elif w.family == "kspin" and w.params:
                tail = "kspin %r %r" % w.params
            else:
                kind = "table" if w.bounded else "utable"
                tail = kind + " " + " ".join(repr(float(v)) for v in w.values().ravel())
            lines.append(head + " " + tail)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [r for r in text.splitlines() if r.strip() and not r.startswith("#")]
        n, k, q = (int(x) for x in rows[0].split())
        nbs, ws, cache = [], [], {}
        for lineno, row in enumerate(rows[1:], start=2):
            parts = row.split()
            try:
                nbs.append([int(x) for x in parts[:k]])
                kind, vals = parts[k], parts[k + 1:]
                key = (kind,) + tuple(vals)
                if key not in cache:
                    if kind == "potts":
                        cache[key] = potts_weight(q, float(vals[0]))
                    elif kind == "kspin":
                        cache[key] = kspin_weight(k, float(vals[0]), float(vals[1]))
                    elif kind in ("table", "utable"):
                        cache[key] = WeightFunction(k, q, np.array([float(v) for v in vals]),
                                                    bounded=(kind == "table"))
                    else:
                        raise ModelError("unknown weight kind %r" % kind)
                ws.append(cache[key])
            except (IndexError, ValueError, ModelError) as exc:
                raise FactorPhaseError("line %d: %s" % (lineno, exc)) from exc
        return cls(n, k, q, np.array(nbs, dtype=np.int64).reshape(-1, k), tuple(ws))


def empty_graph(n, k, q):
    return FactorGraph(n, k, q, np.zeros((0, k), dtype=np.int64), ())


def _weights_from_handles(P, handles):
    cache = {}
    out = []
    for h in handles.tolist():
        if h not in cache:
            cache[h] = P.weight_from_handle(h)
        out.append(cache[h])
    return tuple(out)


def draw_m(n, d, k, rng):
    return int(rng.poisson(d * n / k))


def gen_null(n, P, rng, d=None, m=None, band=False):
    """Null model: uniform ordered neighborhoods and i.i.d. weights from P.

    Exactly one of ``d`` (m ~ Po(dn/k)) or ``m`` (fixed) is used.
    """
    rng = as_generator(rng)
    if n < 1:
        raise FactorPhaseError("n: must be at least 1")
    if m is None:
        if d is None:
            raise FactorPhaseError("d: either d or m must be given")
        m = draw_m(n, d, P.k, rng)
    elif band and d is not None and abs(m - d * n / P.k) > n ** 0.6:
        raise FactorPhaseError("m: outside the band |m - dn/k| <= n^{3/5}")
    nb = rng.integers(0, n, size=(m, P.k))
    handles, _ = P.sample_handles(rng, m)
    return FactorGraph(n, P.k, P.q, nb, _weights_from_handles(P, handles))


def _flat_index(sig_tuples, q):
    flat = np.zeros(len(sig_tuples), dtype=np.int64)
    for i in range(sig_tuples.shape[1]):
        flat = flat * q + sig_tuples[:, i]
    return flat


def gen_teacher(n, m, P, sigma, rng):
    """Teacher-student model: each constraint has density prop. to P(psi) psi(sigma(y)).

    Rejection sampling with envelope 2: draw psi and a uniform ordered tuple y,
    accept with probability psi(sigma(y)) / 2.
    """
    rng = as_generator(rng)
    sigma = np.asarray(sigma, dtype=np.int64)
    if len(sigma) != n:
        raise FactorPhaseError("sigma: length must equal n")
    got_nb, got_h = [], []
    need = m
    while need > 0:
        batch = max(64, int(2.5 * need) + 16)
        y = rng.integers(0, n, size=(batch, P.k))
        handles, tables = P.sample_handles(rng, batch)
        vals = tables[np.arange(batch), _flat_index(sigma[y], P.q)]
        acc = rng.random(batch) * 2.0 < vals
        idx = np.flatnonzero(acc)[:need]
        got_nb.append(y[idx])
        got_h.append(np.asarray(handles)[idx])
        need -= len(idx)
    nb = np.concatenate(got_nb) if got_nb else np.zeros((0, P.k), dtype=np.int64)
    h = np.concatenate(got_h) if got_h else np.zeros(0)
    return FactorGraph(n, P.k, P.q, nb.reshape(-1, P.k), _weights_from_handles(P, h))


def teacher_constraint_law(sigma, P):
    """Exact law of one teacher constraint over (tuple y, atom index); finite support only.

    Returns (tuples, atom_indices, probabilities).
    """
    sigma = np.asarray(sigma, dtype=np.int64)
    n = len(sigma)
    ys = np.array(np.meshgrid(*[np.arange(n)] * P.k, indexing="ij")).reshape(P.k, -1).T
    flat = _flat_index(sigma[ys], P.q)
    sup = P.support()
    rows, atoms, probs = [], [], []
    for a, (p, w) in enumerate(sup):
        vals = w.values().ravel()[flat] * p
        rows.append(ys)
        atoms.append(np.full(len(ys), a))
        probs.append(vals)
    probs = np.concatenate(probs)
    return np.concatenate(rows), np.concatenate(atoms), probs / probs.sum()


def compositions(n, q):
    """All integer vectors of length q with non-negative entries summing to n."""
    if q == 1:
        return np.array([[n]], dtype=np.int64)
    out = []
    for a in range(n + 1):
        rest = compositions(n - a, q - 1)
        out.append(np.hstack([np.full((len(rest), 1), a, dtype=np.int64), rest]))
    return np.vstack(out)


def planted_profile_law(n, m, P):
    """Profiles (counts) and log-probabilities of the planted assignment's profile.

    P(profile c) is proportional to multinomial(n; c) * phi(c/n)^m.
    """
    count = math.comb(n + P.q - 1, P.q - 1)
    if count > PROFILE_ENUM_LIMIT:
        raise BudgetError("profiles: %d exceed the enumeration limit" % count)
    prof = compositions(n, P.q)
    logw = gammaln(n + 1) - gammaln(prof + 1).sum(axis=1)
    if m:
        logw = logw + m * np.log(phi_profiles(P, prof / n))
    return prof, logw - logsumexp(logw)


def log_first_moment_exact(n, m, P):
    """log sum over profiles of multinomial(n; c) phi(c/n)^m, i.e. log E[Z(G(n, m))]."""
    count = math.comb(n + P.q - 1, P.q - 1)
    if count > PROFILE_ENUM_LIMIT:
        raise BudgetError("profiles: %d exceed the enumeration limit" % count)
    prof = compositions(n, P.q)
    logw = gammaln(n + 1) - gammaln(prof + 1).sum(axis=1)
    if m:
        logw = logw + m * np.log(phi_profiles(P, prof / n))
    return float(logsumexp(logw))


def _assignment_from_profile(counts, rng):
    labels = np.repeat(np.arange(len(counts)), counts)
    return rng.permutation(labels)


def sample_planted_assignment(n, m, P, rng):
    """Assignment with P(sigma) proportional to E[psi_G(sigma)] = phi(rho_sigma)^m."""
    rng = as_generator(rng)
    count = math.comb(n + P.q - 1, P.q - 1)
    if count <= PROFILE_ENUM_LIMIT:
        prof, logp = planted_profile_law(n, m, P)
        i = rng.choice(len(prof), p=np.exp(logp - logsumexp(logp)))
        return _assignment_from_profile(prof[i], rng)
    return _assignment_from_profile(_profile_walk(n, m, P, rng), rng)


def _profile_walk(n, m, P, rng, burn=None):
    """Metropolis walk over profiles moving one unit between two spins."""
    q = P.q
    burn = burn or 10**4 * q
    c = np.full(q, n // q)
    c[: n - c.sum()] += 1

    def logw(c):
        return -gammaln(c + 1).sum() + m * math.log(phi_profiles(P, (c / n)[None, :])[0])

    cur = logw(c)
    for _ in range(burn):
        i, j = rng.choice(q, size=2, replace=False)
        if c[i] == 0:
            continue
        c2 = c.copy()
        c2[i] -= 1
        c2[j] += 1
        new = logw(c2)
        if math.log(rng.random()) < new - cur:
            c, cur = c2, new
    return c


def gen_nishimori(n, m, P, rng):
    """(G*(n, m, P, sigma_hat), sigma_hat) with sigma_hat from the planted profile law."""
    rng = as_generator(rng)
    sigma = sample_planted_assignment(n, m, P, rng)
    return gen_teacher(n, m, P, sigma, rng), sigma


def is_simple(G):
    """True iff every constraint has k distinct neighbors and all neighbor sets differ."""
    if G.m == 0:
        return True
    s = np.sort(G.neighbors, axis=1)
    if G.k > 1 and np.any(s[:, 1:] == s[:, :-1]):
        return False
    return len(np.unique(s, axis=0)) == G.m


def tensor_square(G):
    """Same topology over spins Omega x Omega (pair (a, b) -> a*q + b) with psi (x) psi."""
    q, k = G.q, G.k
    cache = {}
    ws = []
    for w in G.weights:
        if id(w) not in cache:
            t = w.values()
            outer = np.multiply.outer(t, t)
            perm = [a for i in range(k) for a in (i, k + i)]
            t2 = np.transpose(outer, perm).reshape((q * q,) * k)
            cache[id(w)] = WeightFunction(k, q * q, t2, bounded=False)
        ws.append(cache[id(w)])
    return FactorGraph(G.n, k, q * q, G.neighbors, tuple(ws))


def incidence_degrees(G):
    return np.bincount(G.neighbors.ravel(), minlength=G.n)


def _law_product(per_constraint, m):
    """Joint law of m i.i.d. constraints given per-constraint rows (S, C) -> (S, C^m)."""
    out = np.ones((per_constraint.shape[0], 1))
    for _ in range(m):
        out = (out[:, :, None] * per_constraint[:, None, :]).reshape(len(out), -1)
    return out


def nishimori_law_tv(n, m, P):
    """Total variation between the two constructions of the Nishimori pair (G, sigma).

    One side is the teacher-student law seeded with the planted assignment
    (the law ``gen_nishimori`` samples from); the other reweights the null
    model by the weight of sigma and normalizes by brute force over every
    outcome. Finite-support models and tiny n only.
    """
    q, k = P.q, P.k
    sup = P.support()
    n_out = (n**k * len(sup)) ** m * q**n
    if n_out > 10**7:
        raise BudgetError("nishimori_law_tv: %d outcomes exceed the limit" % n_out)
    sigmas = np.array(np.meshgrid(*[np.arange(q)] * n, indexing="ij")).reshape(n, -1).T
    ys = np.array(np.meshgrid(*[np.arange(n)] * k, indexing="ij")).reshape(k, -1).T
    # brute force: P(G) psi_G(sigma) over all (sigma, G)
    per = np.empty((len(sigmas), len(sup) * len(ys)))
    for s, sig in enumerate(sigmas):
        for a, (p, w) in enumerate(sup):
            t = w.values()
            per[s, a * len(ys):(a + 1) * len(ys)] = p * t[tuple(sig[ys].T)] / n**k
    brute = _law_product(per, m)
    brute /= brute.sum()
    # teacher-student with the planted assignment
    prof, logp = planted_profile_law(n, m, P)
    index = {tuple(c): i for i, c in enumerate(prof)}
    teach = np.empty((len(sigmas), len(sup) * len(ys)))
    p_sigma = np.empty(len(sigmas))
    for s, sig in enumerate(sigmas):
        c = np.bincount(sig, minlength=q)
        mult = math.factorial(n) / np.prod([math.factorial(int(x)) for x in c])
        p_sigma[s] = math.exp(logp[index[tuple(c)]]) / mult
        _, _, probs = teacher_constraint_law(sig, P)
        teach[s] = probs
    teacher = p_sigma[:, None] * _law_product(teach, m)
    return 0.5 * float(np.abs(brute - teacher).sum())
