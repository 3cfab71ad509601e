"""Exact partition functions, Gibbs sampling, overlaps and point-to-set correlations.

The exact engine eliminates variables leaf-to-root. A constraint is ready
once all but one of its distinct live variables are leaves; it is then
summed out and leaves a message on the remaining variable. Whatever is left
after peeling consists of cyclic cores, which are handled per component by
clamping a greedy feedback-vertex set and peeling again, batched over all
clamp assignments.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetError, FactorPhaseError
from .rng import as_generator

ENUM_LIMIT = 2**26
COMPONENT_LIMIT = 2**26


@dataclass
class GibbsExact:
    log_Z: float
    marginals: np.ndarray = None
    table: np.ndarray = None
    n_cyclic_components: int = 0
    max_fvs: int = 0


# -- elimination engine -----------------------------------------------------


@dataclass
class _Event:
    cons: np.ndarray
    L: tuple
    R: tuple
    leaves: np.ndarray
    u: np.ndarray = None
    msg: np.ndarray = None


@dataclass
class _Elimination:
    """State of one peeling run over constraints ``nb`` with log tables and fields."""

    nb: np.ndarray
    logT: np.ndarray
    h: np.ndarray
    q: int
    numeric: bool = True
    log: list = field(default_factory=list)
    contrib: list = field(default_factory=list)
    residual: np.ndarray = None

    def run(self):
        n = self.h.shape[1] if self.numeric else int(self.h)
        m, k = self.nb.shape
        deg = np.bincount(self.nb.ravel(), minlength=n) if m else np.zeros(n, dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        live = np.ones(m, dtype=bool)
        self._finalize(np.flatnonzero(deg == 0), done)
        big = np.iinfo(np.int64).max
        while True:
            idx = np.flatnonzero(live)
            if len(idx) == 0:
                break
            A = self.nb[idx]
            leaf = deg[A] == 1
            vmin = np.where(leaf, big, A).min(axis=1)
            vmax = np.where(leaf, -1, A).max(axis=1)
            ready = (vmax == -1) | (vmin == vmax)
            if not ready.any():
                break
            r = idx[ready]
            codes = (~leaf[ready]).astype(np.int64) @ (1 << np.arange(k))
            us = np.where(vmax[ready] == -1, -1, vmin[ready])
            for code in np.unique(codes):
                sel = codes == code
                R = tuple(i for i in range(k) if code >> i & 1)
                L = tuple(i for i in range(k) if not code >> i & 1)
                cons = r[sel]
                leaves = self.nb[cons][:, list(L)]
                u = us[sel] if R else None
                ev = _Event(cons, L, R, leaves, u)
                if self.numeric:
                    self._absorb(ev)
                done[leaves.ravel()] = True
                if R:
                    np.subtract.at(deg, u, len(R))
                deg[leaves.ravel()] = 0
                self.log.append(("event", ev))
            live[r] = False
            newly = np.flatnonzero((deg == 0) & ~done)
            self._finalize(newly, done)
        self.residual = np.flatnonzero(live)
        return self

    def _finalize(self, vars_, done):
        if len(vars_) == 0:
            return
        done[vars_] = True
        self.log.append(("final", vars_))
        if self.numeric:
            self.contrib.append(logsumexp(self.h[:, vars_, :], axis=2).sum(axis=1))

    def _joint(self, ev):
        """Log weights over (batch, constraint, L-axes..., R-diagonal?) with leaf fields added."""
        q, k = self.q, self.nb.shape[1]
        B = self.h.shape[0]
        c = len(ev.cons)
        X = np.broadcast_to(self.logT[ev.cons].reshape((1, c) + (q,) * k), (B, c) + (q,) * k)
        X = X + 0.0
        for j, i in enumerate(ev.L):
            shape = [B, c] + [1] * k
            shape[2 + i] = q
            X = X + self.h[:, ev.leaves[:, j], :].reshape(shape)
        order = [0, 1] + [2 + i for i in ev.L] + [2 + i for i in ev.R]
        X = np.transpose(X, order)
        if ev.R:
            ar = np.arange(q)
            X = X[(Ellipsis,) + (ar,) * len(ev.R)] if len(ev.R) > 1 else X
        return X

    def _absorb(self, ev):
        X = self._joint(ev)
        nL = len(ev.L)
        axes = tuple(range(2, 2 + nL))
        if ev.R:
            msg = logsumexp(X, axis=axes) if nL else X
            ev.msg = msg
            for b in range(self.h.shape[0]):
                np.add.at(self.h[b], ev.u, msg[b])
        else:
            self.contrib.append(logsumexp(X, axis=axes).sum(axis=1))

    def total(self):
        if not self.contrib:
            return np.zeros(self.h.shape[0])
        stacked = np.stack(self.contrib)
        return np.array([math.fsum(col) for col in stacked.T])

    # -- downward passes ----------------------------------------------------

    def marginals(self, H):
        """Fill log-beliefs H (B, n, q) for all variables eliminated in this run.

        Entries of H for variables that outlive this run must be set by the caller.
        """
        for kind, item in reversed(self.log):
            if kind == "final":
                H[:, item, :] = self.h[:, item, :]
                continue
            ev = item
            X = self._joint(ev)
            nL = len(ev.L)
            if ev.R:
                cav = H[:, ev.u, :] - ev.msg
                X = X + cav.reshape(cav.shape[:2] + (1,) * nL + (self.q,))
            for j in range(nL):
                other = tuple(a for a in range(2, X.ndim) if a != 2 + j)
                lm = logsumexp(X, axis=other) if other else X
                for b in range(H.shape[0]):
                    H[b, ev.leaves[:, j], :] = lm[b]
        return H

    def sample(self, sigma, b, rng):
        """Backward sampling of every variable eliminated here, batch slice ``b``."""
        q = self.q
        for kind, item in reversed(self.log):
            if kind == "final":
                logits = self.h[b, item, :]
                sigma[item] = _gumbel_argmax(logits, rng)
                continue
            ev = item
            X = self._joint(ev)[b]
            nL = len(ev.L)
            if nL == 0:
                continue
            if ev.R:
                X = X[np.arange(len(ev.cons)), ..., sigma[ev.u]]
            flat = X.reshape(len(ev.cons), q**nL)
            pick = _gumbel_argmax(flat, rng)
            digits = np.array(np.unravel_index(pick, (q,) * nL)).T
            sigma[ev.leaves] = digits
        return sigma


def _gumbel_argmax(logits, rng):
    g = rng.gumbel(size=logits.shape)
    return np.argmax(logits + g, axis=-1)


# -- components -------------------------------------------------------------


def _residual_components(nb, cons):
    """Group residual constraints into connected components (lists of constraint ids)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    if len(cons) == 0:
        return []
    sub = nb[cons]
    vars_ = np.unique(sub)
    vid = np.searchsorted(vars_, sub)
    c, k = sub.shape
    rows = np.repeat(np.arange(c), k)
    cols = c + vid.ravel()
    N = c + len(vars_)
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
    _, lab = connected_components(g, directed=False)
    con_lab = lab[:c]
    out = {}
    for i, l in enumerate(con_lab):
        out.setdefault(l, []).append(cons[i])
    return [np.array(v) for _, v in sorted(out.items(), key=lambda kv: min(kv[1]))]


def _split(nb_local, fvs, n_local):
    """Give every incidence of an FVS variable its own fresh copy."""
    nb2 = nb_local.copy()
    copies = []
    nxt = n_local
    for v in fvs:
        pos = np.argwhere(nb2 == v)
        for a, i in pos:
            nb2[a, i] = nxt
            copies.append((nxt, v))
            nxt += 1
    return nb2, copies, nxt


def _greedy_fvs(nb_local, n_local):
    """Greedy max-degree feedback-vertex set making the incidence structure acyclic."""
    fvs = []
    while True:
        nb2, _, n2 = _split(nb_local, fvs, n_local)
        el = _Elimination(nb2, None, n2, 0, numeric=False).run()
        if len(el.residual) == 0:
            return fvs
        deg = np.bincount(nb2[el.residual].ravel(), minlength=n2)[:n_local]
        deg[fvs] = -1
        fvs.append(int(np.argmax(deg)))


def _solve_component(nb, logT, h, cons, q, want_marginals):
    """Exact log Z (and log-beliefs) of one cyclic core with its hanging fields."""
    sub = nb[cons]
    vars_ = np.unique(sub)
    local = np.searchsorted(vars_, sub)
    nl = len(vars_)
    fvs = _greedy_fvs(local, nl)
    b = len(fvs)
    if q ** (b + 1) * (nl + len(cons)) > COMPONENT_LIMIT:
        raise BudgetError("component with %d variables needs a cycle-breaking set of size %d" % (nl, b))
    nb2, copies, n2 = _split(local, fvs, nl)
    B = q**b
    clamps = np.array(list(itertools.product(range(q), repeat=b)), dtype=np.int64).reshape(B, b)
    hh = np.zeros((B, n2, q))
    hh[:, :nl, :] = h[0, vars_, :][None]
    pos = {v: j for j, v in enumerate(fvs)}
    for cid, v in copies:
        hh[:, cid, :] = -np.inf
        hh[np.arange(B), cid, clamps[:, pos[v]]] = 0.0
    own = np.zeros(B)
    for j, v in enumerate(fvs):
        own += h[0, vars_[v], clamps[:, j]]
        # the split original keeps no incidences; a point mass adds nothing to log Z
        hh[:, v, :] = -np.inf
        hh[:, v, 0] = 0.0
    el = _Elimination(nb2, logT[cons], hh, q).run()
    if len(el.residual):
        raise FactorPhaseError("internal: clamped component is not acyclic")
    logz_b = el.total() + own
    logz = float(logsumexp(logz_b))
    result = {"logz": logz, "logz_b": logz_b, "el": el, "vars": vars_, "fvs": fvs,
              "clamps": clamps, "n_local": nl}
    if want_marginals:
        H = np.full((B, n2, q), -np.inf)
        el.marginals(H)
        w = np.exp(logz_b - logz)
        Hn = H[:, :nl, :] - logsumexp(H[:, :nl, :], axis=2, keepdims=True)
        mar = np.einsum("b,bvq->vq", w, np.exp(Hn))
        for j, v in enumerate(fvs):
            mar[v] = np.bincount(clamps[:, j], weights=w, minlength=q)
        result["marginals"] = mar
    return result


def _prepare(G, fields):
    q = G.q
    h = np.zeros((1, G.n, q))
    if fields is not None:
        h[0] = np.asarray(fields, dtype=float)
    return h


def partition_components(G, fields=None, marginals=False):
    """Exact log Z by peeling plus per-component clamping of cyclic cores."""
    q = G.q
    h = _prepare(G, fields)
    logT = G.log_tables()
    el = _Elimination(G.neighbors, logT, h, q).run()
    comps = _residual_components(G.neighbors, el.residual)
    solved = [_solve_component(G.neighbors, logT, el.h, c, q, marginals) for c in comps]
    parts = list(el.total()) + [s["logz"] for s in solved]
    log_Z = math.fsum(parts)
    res = GibbsExact(log_Z, n_cyclic_components=len(comps),
                     max_fvs=max([len(s["fvs"]) for s in solved], default=0))
    res._state = (el, solved, logT)
    if marginals:
        H = np.full((1, G.n, q), -np.inf)
        for s in solved:
            H[0, s["vars"], :] = np.log(np.maximum(s["marginals"], 1e-300))
        el.marginals(H)
        Hn = H[0] - logsumexp(H[0], axis=1, keepdims=True)
        res.marginals = np.exp(Hn)
    return res


def partition_enumerate(G, fields=None, full_table=False):
    """Brute-force log Z and marginals over all q^n assignments."""
    q, n = G.q, G.n
    if q**n > ENUM_LIMIT:
        raise BudgetError("enumeration: q^n = %d exceeds 2^26" % q**n)
    logT = G.log_tables()
    h = _prepare(G, fields)[0]
    total = q**n
    chunk = 1 << 16
    parts, mar_parts, tables = [], [], []
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        sig = np.array(np.unravel_index(idx, (q,) * n)).T if n else np.zeros((len(idx), 0), dtype=int)
        lw = np.zeros(len(idx))
        if G.m:
            flat = np.zeros((len(idx), G.m), dtype=np.int64)
            for i in range(G.k):
                flat = flat * q + sig[:, G.neighbors[:, i]]
            lw = lw + logT[np.arange(G.m)[None, :], flat].sum(axis=1)
        if n:
            lw = lw + h[np.arange(n)[None, :], sig].sum(axis=1)
        parts.append(lw)
        if full_table:
            tables.append(lw)
        mar = np.full((n, q), -np.inf)
        for v in range(n):
            for s in range(q):
                sel = sig[:, v] == s
                if sel.any():
                    mar[v, s] = logsumexp(lw[sel])
        mar_parts.append(mar)
    allw = np.concatenate(parts)
    log_Z = float(logsumexp(allw))
    mar = logsumexp(np.stack(mar_parts), axis=0) - log_Z if n else np.zeros((0, q))
    res = GibbsExact(log_Z, np.exp(mar))
    if full_table:
        res.table = np.exp(np.concatenate(tables) - log_Z).reshape((q,) * n)
    return res


def partition_exact(G, mode="components", fields=None, marginals=True):
    if mode == "enumerate":
        return partition_enumerate(G, fields)
    if mode == "components":
        return partition_components(G, fields, marginals)
    raise FactorPhaseError("mode: expected 'enumerate' or 'components'")


def log_partition(G, mode="components"):
    return partition_exact(G, mode, marginals=False).log_Z


# -- sampling ---------------------------------------------------------------


def _exact_samples(G, n_samples, rng, fields=None):
    res = partition_components(G, fields)
    el, solved, _ = res._state
    out = np.zeros((n_samples, G.n), dtype=np.int64)
    for t in range(n_samples):
        sigma = np.zeros(G.n, dtype=np.int64)
        for s in solved:
            w = np.exp(s["logz_b"] - s["logz"])
            b = int(rng.choice(len(w), p=w / w.sum()))
            loc = np.zeros(s["el"].h.shape[1], dtype=np.int64)
            s["el"].sample(loc, b, rng)
            for j, v in enumerate(s["fvs"]):
                loc[v] = s["clamps"][b, j]
            sigma[s["vars"]] = loc[: s["n_local"]]
        el.sample(sigma, 0, rng)
        out[t] = sigma
    return out


def glauber(G, n_samples, steps, rng, init=None):
    """Single-site heat-bath chain; approximate, for exploration only."""
    q = G.q
    logT = G.log_tables()
    mult = q ** np.arange(G.k - 1, -1, -1)
    spins = np.arange(q)
    inc = [[] for _ in range(G.n)]
    for a, nb in enumerate(G.neighbors):
        for v in set(nb.tolist()):
            inc[v].append((a, _slot_mult(nb, v, mult)))
    out = np.zeros((n_samples, G.n), dtype=np.int64)
    sigma = rng.integers(0, q, G.n) if init is None else np.array(init)
    for t in range(n_samples):
        for _ in range(steps):
            for v in rng.permutation(G.n):
                lw = np.zeros(q)
                for a, sm in inc[v]:
                    base = int(sigma[G.neighbors[a]] @ mult) - sigma[v] * sm
                    lw += logT[a, base + sm * spins]
                cum = np.cumsum(np.exp(lw - lw.max()))
                sigma[v] = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), q - 1)
        out[t] = sigma
    return out


def _slot_mult(nb, v, mult):
    return int(mult[nb == v].sum())


def gibbs_sample(G, n_samples, method="exact", rng=None, steps=10):
    """Gibbs samples by exact backward sampling or by a Glauber chain."""
    rng = as_generator(rng)
    if method == "exact":
        return _exact_samples(G, n_samples, rng)
    if method == "glauber":
        return glauber(G, n_samples, steps, rng)
    raise FactorPhaseError("method: expected 'exact' or 'glauber'")


# -- overlaps ---------------------------------------------------------------


def overlap(sigmas, q):
    """Empirical l-wise overlap table of shape (q,)*l; l = 1 gives the profile."""
    sig = [np.asarray(s, dtype=np.int64) for s in sigmas]
    n = len(sig[0])
    if any(len(s) != n for s in sig):
        raise FactorPhaseError("sigmas: length mismatch")
    flat = np.zeros(n, dtype=np.int64)
    for s in sig:
        flat = flat * q + s
    counts = np.bincount(flat, minlength=q ** len(sig))
    return (counts / n).reshape((q,) * len(sig))


def overlap_tv(sigma, tau, q):
    rho = overlap([sigma, tau], q)
    return 0.5 * float(np.abs(rho - 1.0 / q**2).sum())


def overlap_concentration(G, n_pairs, method="exact", rng=None, zeta=None):
    """Mean TV distance of the pair overlap from uniform over independent Gibbs pairs."""
    rng = as_generator(rng)
    samples = gibbs_sample(G, 2 * n_pairs, method, rng)
    tv = np.array([overlap_tv(samples[2 * i], samples[2 * i + 1], G.q) for i in range(n_pairs)])
    zeta = G.n ** (-1.0 / 7.0) if zeta is None else zeta
    mean = float(tv.mean())
    se = float(tv.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    return {"estimate": mean, "se": se, "zeta": zeta, "truncation_indicator": int(mean <= zeta)}


def _component_of(G, y):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    m, k = G.neighbors.shape
    rows = np.repeat(np.arange(m), k) + G.n
    cols = G.neighbors.ravel()
    N = G.n + m
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
    _, lab = connected_components(g, directed=False)
    return lab[: G.n] == lab[y]


def pair_joint(G, y1, y2, mode="components"):
    """Exact joint marginal of (sigma(y1), sigma(y2)) by clamping y1."""
    q = G.q
    base = partition_exact(G, mode, marginals=True)
    J = np.zeros((q, q))
    for s in range(q):
        f = np.zeros((G.n, q))
        f[y1, :] = -np.inf
        f[y1, s] = 0.0
        r = partition_exact(G, mode, fields=f, marginals=True)
        J[s] = math.exp(r.log_Z - base.log_Z) * r.marginals[y2]
    return J, base.marginals


def pair_marginal_gap(G, pairs=None, n_pairs=100, rng=None, mode="components"):
    """Mean TV between pair marginals and the product of single marginals."""
    rng = as_generator(rng)
    if pairs is None:
        pairs = [tuple(rng.choice(G.n, size=2, replace=False)) for _ in range(n_pairs)]
    base = partition_exact(G, mode, marginals=True)
    vals = []
    for y1, y2 in pairs:
        if not _component_of(G, y1)[y2]:
            vals.append(0.0)
            continue
        J, mar = pair_joint(G, y1, y2, mode)
        vals.append(0.5 * float(np.abs(J - np.outer(base.marginals[y1], base.marginals[y2])).sum()))
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return {"estimate": float(vals.mean()), "se": se, "n_pairs": len(vals)}


def variable_distances(G, y):
    """Bipartite distances from variable y to every variable (inf if unreachable)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import shortest_path

    m, k = G.neighbors.shape
    rows = np.repeat(np.arange(m), k) + G.n
    cols = G.neighbors.ravel()
    N = G.n + m
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N)).tocsr()
    dist = shortest_path(g, directed=False, unweighted=True, indices=[y])[0]
    return dist[: G.n]


def _posterior_given(G, y, boundary, sigma, mode):
    q = G.q
    f = np.zeros((G.n, q))
    f[boundary, :] = -np.inf
    f[boundary, sigma[boundary]] = 0.0
    return partition_exact(G, mode, fields=f, marginals=True).marginals[y]


def corr_point_to_set(G, y, ell, n_boundary_samples=100, rng=None, exact=False, mode="components"):
    """E over boundary spins at distance >= 2*ell of sum_s |P(sigma(y)=s | boundary) - 1/q|.

    With ``exact=True`` the expectation over the boundary is enumerated.
    """
    rng = as_generator(rng)
    q = G.q
    dist = variable_distances(G, y)
    boundary = np.flatnonzero(np.isfinite(dist) & (dist >= 2 * ell))
    if len(boundary) == 0:
        mar = partition_exact(G, mode).marginals[y]
        return {"estimate": float(np.abs(mar - 1.0 / q).sum()), "se": 0.0, "boundary_size": 0}
    if exact:
        if q ** len(boundary) > 2**16:
            raise BudgetError("boundary: too many configurations to enumerate")
        base = partition_exact(G, mode, marginals=False).log_Z
        acc = 0.0
        for cfg in itertools.product(range(q), repeat=len(boundary)):
            sig = np.zeros(G.n, dtype=np.int64)
            sig[boundary] = cfg
            f = np.zeros((G.n, q))
            f[boundary, :] = -np.inf
            f[boundary, sig[boundary]] = 0.0
            r = partition_exact(G, mode, fields=f, marginals=True)
            acc += math.exp(r.log_Z - base) * float(np.abs(r.marginals[y] - 1.0 / q).sum())
        return {"estimate": acc, "se": 0.0, "boundary_size": int(len(boundary))}
    samples = gibbs_sample(G, n_boundary_samples, "exact", rng)
    vals = np.array([np.abs(_posterior_given(G, y, boundary, s, mode) - 1.0 / q).sum() for s in samples])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return {"estimate": float(vals.mean()), "se": se, "boundary_size": int(len(boundary))}
