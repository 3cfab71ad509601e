"""Galton-Watson factor trees, broadcasting, root posteriors and reconstruction scans.

Trees are stored as flat arrays so that a forest of many trees is handled by
the same level-by-level vectorized code as a single tree. Depth counts
variable levels: a tree truncated at depth ell keeps variables at bipartite
distance at most 2 ell from the root.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, FactorPhaseError
from .graphs import FactorGraph
from .model import WeightFunction, spin_symmetries
from .operators import model_spectra
from .rng import as_generator

FOREST_LIMIT = 2 * 10**6


@dataclass
class FactorTree:
    """A forest of rooted factor trees.

    Constraint c has neighbor tuple ``nb[c]`` (length k); its parent variable
    sits at position ``pos[c]``. Variables carry their depth and tree id.
    """

    k: int
    q: int
    ell: int
    depth: np.ndarray
    tree_id: np.ndarray
    nb: np.ndarray
    pos: np.ndarray
    tables: np.ndarray
    n_trees: int = 1

    @property
    def n_vars(self):
        return len(self.depth)

    @property
    def n_cons(self):
        return len(self.nb)

    def parent_var(self):
        return self.nb[np.arange(self.n_cons), self.pos]

    def roots(self):
        return np.flatnonzero(self.depth == 0)

    def boundary(self):
        return np.flatnonzero(self.depth == self.ell)

    def to_factor_graph(self):
        ws = tuple(WeightFunction(self.k, self.q, t) for t in self.tables)
        return FactorGraph(self.n_vars, self.k, self.q, self.nb, ws)

    def split(self):
        """Individual trees of a forest, relabelled from 0."""
        out = []
        con_tree = self.tree_id[self.parent_var()] if self.n_cons else np.zeros(0, dtype=int)
        for t in range(self.n_trees):
            vs = np.flatnonzero(self.tree_id == t)
            cs = np.flatnonzero(con_tree == t)
            remap = np.full(self.n_vars, -1)
            remap[vs] = np.arange(len(vs))
            out.append(FactorTree(self.k, self.q, self.ell, self.depth[vs], np.zeros(len(vs), dtype=int),
                                  remap[self.nb[cs]].reshape(-1, self.k), self.pos[cs], self.tables[cs], 1))
        return out


def gen_gw_tree(d, P, ell, rng, n_trees=1):
    """Forest of ``n_trees`` independent truncated Galton-Watson factor trees."""
    rng = as_generator(rng)
    if ell < 0:
        raise FactorPhaseError("ell: must be non-negative")
    k, q = P.k, P.q
    depth = [np.zeros(n_trees, dtype=np.int64)]
    tree_id = [np.arange(n_trees)]
    nbs, poss, tabs = [], [], []
    frontier = np.arange(n_trees)
    nvars = n_trees
    for L in range(ell):
        g = rng.poisson(d, size=len(frontier))
        C = int(g.sum())
        if C == 0:
            break
        parents = np.repeat(frontier, g)
        h = rng.integers(0, k, size=C)
        kids = nvars + np.arange(C * (k - 1)).reshape(C, k - 1)
        nvars += C * (k - 1)
        nb = np.empty((C, k), dtype=np.int64)
        cols = np.arange(k)[None, :].repeat(C, axis=0)
        other = cols[cols != h[:, None]].reshape(C, k - 1)
        nb[np.arange(C), h] = parents
        nb[np.arange(C)[:, None], other] = kids
        nbs.append(nb)
        poss.append(h)
        tabs.append(np.asarray(P.sample_tables(rng, C)))
        tid = np.concatenate(tree_id)
        new_ids = np.repeat(tid[parents], k - 1)
        depth.append(np.full(C * (k - 1), L + 1, dtype=np.int64))
        tree_id.append(new_ids)
        frontier = kids.ravel()
        if nvars > 50 * FOREST_LIMIT:
            raise BudgetError("forest: too many nodes")
    nb = np.concatenate(nbs) if nbs else np.zeros((0, k), dtype=np.int64)
    pos = np.concatenate(poss) if poss else np.zeros(0, dtype=np.int64)
    tb = np.concatenate(tabs) if tabs else np.zeros((0, q**k))
    return FactorTree(k, q, ell, np.concatenate(depth), np.concatenate(tree_id), nb, pos, tb, n_trees)


def _digits(q, k):
    return np.array(list(itertools.product(range(q), repeat=k)), dtype=np.int64)


def _con_level(T):
    """Variable level of each constraint's parent."""
    return T.depth[T.parent_var()] if T.n_cons else np.zeros(0, dtype=int)


def broadcast(T, rng, root_spin=None):
    """Top-down broadcasting; root uniform unless ``root_spin`` is given."""
    rng = as_generator(rng)
    q, k = T.q, T.k
    sigma = np.full(T.n_vars, -1, dtype=np.int64)
    roots = T.roots()
    sigma[roots] = rng.integers(0, q, len(roots)) if root_spin is None else root_spin
    D = _digits(q, k)
    lev = _con_level(T)
    for L in range(T.ell):
        cs = np.flatnonzero(lev == L)
        if len(cs) == 0:
            continue
        par = sigma[T.nb[cs, T.pos[cs]]]
        mask = D.T[T.pos[cs]] == par[:, None]
        w = T.tables[cs] * mask
        cum = np.cumsum(w, axis=1)
        u = rng.random(len(cs)) * cum[:, -1]
        pick = (cum < u[:, None]).sum(axis=1)
        tau = D[pick]
        sigma[T.nb[cs]] = tau
    return sigma


def broadcast_law(T):
    """Exact law of the broadcast over all assignments of a small tree, shape (q,)*n."""
    q, k, n = T.q, T.k, T.n_vars
    if q**n > 2**20:
        raise BudgetError("broadcast law: tree too large to enumerate")
    allsig = _digits(q, n)
    logp = np.full(len(allsig), -n * 0.0)
    logp -= len(T.roots()) * math.log(q)
    for c in range(T.n_cons):
        tab = T.tables[c].reshape((q,) * k)
        h = T.pos[c]
        norm = tab.sum(axis=tuple(j for j in range(k) if j != h))
        vals = tab[tuple(allsig[:, T.nb[c, j]] for j in range(k))]
        logp += np.log(vals) - np.log(norm[allsig[:, T.nb[c, h]]])
    return np.exp(logp).reshape((q,) * n)


def _factor_to_parent(tables, h, child_msgs, q, k):
    """m(x) = sum_{tau: tau_h = x} psi(tau) prod_{j != h} mu_j(tau_j), for a fixed h.

    child_msgs: (c, k-1, q) in increasing position order skipping h.
    """
    X = tables.reshape((len(tables),) + (q,) * k)
    others = [j for j in range(k) if j != h]
    for idx, j in enumerate(others):
        shape = [len(tables)] + [1] * k
        shape[1 + j] = q
        X = X * child_msgs[:, idx].reshape(shape)
    X = X.sum(axis=tuple(1 + j for j in others)) if others else X
    return X.reshape(len(tables), q)


def upward_messages(T, boundary_spins=None, normalize=True, kernel=False):
    """Messages from every variable towards its parent (or root beliefs).

    Boundary variables (depth ell) send point masses on their spin; other
    leaves send uniform messages. With ``kernel=True`` factor tables are
    divided by their per-position normalizer, giving likelihoods.
    Returns (V, q).
    """
    q, k = T.q, T.k
    logm = np.zeros((T.n_vars, q))
    if boundary_spins is not None:
        b = T.boundary()
        logm[b] = -np.inf
        logm[b, boundary_spins[b]] = 0.0
    lev = _con_level(T)
    out = np.zeros((T.n_vars, q))
    for L in range(T.ell, -1, -1):
        vs = np.flatnonzero(T.depth == L)
        if L < T.ell:
            cs = np.flatnonzero(lev == L)
            for h in range(k):
                sel = cs[T.pos[cs] == h]
                if len(sel) == 0:
                    continue
                others = [j for j in range(k) if j != h]
                ch = out[T.nb[sel][:, others]]
                tabs = T.tables[sel]
                if kernel:
                    t3 = tabs.reshape((len(sel),) + (q,) * k)
                    norm = t3.sum(axis=tuple(1 + j for j in others))
                    msg = _factor_to_parent(tabs, h, ch, q, k) / norm
                else:
                    msg = _factor_to_parent(tabs, h, ch, q, k)
                np.add.at(logm, T.nb[sel, h], np.log(msg))
        lv = logm[vs]
        if normalize:
            mx = lv.max(axis=1, keepdims=True)
            e = np.exp(lv - mx)
            out[vs] = e / e.sum(axis=1, keepdims=True)
        else:
            out[vs] = np.exp(lv)
    return out


def root_posterior(T, boundary_spins):
    """Exact conditional law of each root spin given the depth-ell spins; shape (n_trees, q)."""
    return upward_messages(T, boundary_spins)[T.roots()]


def tree_corr_exact(T):
    """sum_s E|P(root = s | boundary) - 1/q| by enumerating boundary assignments (one tree)."""
    q = T.q
    b = T.boundary()
    if len(b) == 0:
        return 0.0
    if q ** len(b) > 2**16:
        raise BudgetError("boundary: too many configurations")
    acc = 0.0
    r = T.roots()[0]
    for cfg in itertools.product(range(q), repeat=len(b)):
        sig = np.zeros(T.n_vars, dtype=np.int64)
        sig[b] = cfg
        lik = upward_messages(T, sig, normalize=False, kernel=True)[r]
        pb = lik.mean()
        if pb == 0:
            continue
        post = lik / lik.sum()
        acc += pb * float(np.abs(post - 1.0 / q).sum())
    return acc


# -- corr star --------------------------------------------------------------


def expected_forest_size(d, k, ell, n_trees):
    c = d * (k - 1)
    return n_trees * sum(c**L for L in range(ell + 1))


def corr_star_forest(d, P, ell, n_trees, rng):
    rng = as_generator(rng)
    T = gen_gw_tree(d, P, ell, rng, n_trees)
    sig = broadcast(T, rng)
    post = root_posterior(T, sig)
    vals = np.abs(post - 1.0 / P.q).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_trees))


def _broadcast_children(tables, h, parent_spin, D, rng):
    mask = D.T[h] == parent_spin[:, None]
    w = tables * mask
    cum = np.cumsum(w, axis=1)
    u = rng.random(len(tables)) * cum[:, -1]
    return D[(cum < u[:, None]).sum(axis=1)]


def _draw_conditioned(M, spins, rng):
    """Indices into population M, drawn with probability prop. to M[:, spin]."""
    out = np.empty(len(spins), dtype=np.int64)
    for c in np.unique(spins):
        sel = np.flatnonzero(spins == c)
        cum = np.cumsum(M[:, c])
        u = rng.random(len(sel)) * cum[-1]
        out[sel] = np.minimum(np.searchsorted(cum, u, side="right"), len(M) - 1)
    return out


def corr_star_population(d, P, ell, N, rng, return_path=False):
    """Population estimate of corr* at depth ell.

    One population of root posteriors of depth-t subtrees. Since the root
    spin is uniform, the posterior law given spin c is the population law
    reweighted by mu(c); children are drawn that way. Finite-N noise can
    grow into a spurious common bias for ferromagnetic models, so each
    message is relabeled by a random spin symmetry of P after every level.
    """
    rng = as_generator(rng)
    q, k = P.q, P.k
    D = _digits(q, k)
    M = np.eye(q)[rng.integers(0, q, size=N)]
    G = spin_symmetries(P)
    path = []
    for t in range(ell):
        s = rng.integers(0, q, size=N)
        g = rng.poisson(d, size=N)
        C = int(g.sum())
        logm = np.zeros((N, q))
        if C:
            tabs = np.asarray(P.sample_tables(rng, C))
            h = rng.integers(0, k, size=C)
            owner = np.repeat(np.arange(N), g)
            for hh in range(k):
                sel = np.flatnonzero(h == hh)
                if len(sel) == 0:
                    continue
                tau = _broadcast_children(tabs[sel], hh, s[owner[sel]], D, rng)
                others = [j for j in range(k) if j != hh]
                ch = np.empty((len(sel), k - 1, q))
                for i, j in enumerate(others):
                    ch[:, i] = M[_draw_conditioned(M, tau[:, j], rng)]
                msg = _factor_to_parent(tabs[sel], hh, ch, q, k)
                np.add.at(logm, owner[sel], np.log(msg))
        logm -= logm.max(axis=1, keepdims=True)
        e = np.exp(logm)
        M = e / e.sum(axis=1, keepdims=True)
        if len(G) > 1:
            M = np.take_along_axis(M, G[rng.integers(0, len(G), size=N)], axis=1)
        if return_path:
            path.append(_pop_corr(M, q))
    est, se = _pop_corr(M, q)
    return (est, se, path) if return_path else (est, se)


def _pop_corr(M, q):
    vals = np.abs(M - 1.0 / q).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def corr_star(d, P, ell, n_trees=10**4, rng=None, method="auto"):
    """corr* at depth ell with its SE, by explicit forests or by population dynamics."""
    rng = as_generator(rng)
    if d == 0 or ell == 0:
        return {"estimate": 0.0, "se": 0.0, "method": "trivial"}
    if method == "auto":
        method = "forest" if expected_forest_size(d, P.k, ell, n_trees) <= FOREST_LIMIT else "population"
    if method == "forest":
        est, se = corr_star_forest(d, P, ell, n_trees, rng)
    elif method == "population":
        est, se = corr_star_population(d, P, ell, n_trees, rng)
    else:
        raise FactorPhaseError("method: expected 'auto', 'forest' or 'population'")
    return {"estimate": est, "se": se, "method": method}


# -- reconstruction scan ------------------------------------------------------


def plateau(estimates, ses, width=3):
    """True when ``width`` consecutive estimates exceed 3 SE and agree pairwise within 2 SE."""
    e, s = np.asarray(estimates), np.asarray(ses)
    for i in range(len(e) - width + 1):
        w = slice(i, i + width)
        if np.all(e[w] > 3 * s[w]):
            ok = True
            for a in range(i, i + width):
                for b in range(a + 1, i + width):
                    if abs(e[a] - e[b]) >= 2 * math.hypot(s[a], s[b]):
                        ok = False
            if ok:
                return True
    return False


def drec_scan(P, d_grid, ell_schedule, n_trees=10**4, rng=None, replicates=1):
    """Per-d corr* over an increasing ell schedule, positivity verdicts and a bracket.

    For population runs the whole ell path comes from one run per replicate,
    and replicate spread is folded into the SE.
    """
    rng = as_generator(rng)
    grid = list(d_grid)
    sched = sorted(ell_schedule)
    if grid != sorted(grid):
        raise FactorPhaseError("d_grid: must be sorted")
    rows, verdicts = [], {}
    for d in grid:
        ests, ses = [], []
        use_pop = expected_forest_size(d, P.k, sched[-1], n_trees) > FOREST_LIMIT
        if use_pop:
            paths = []
            for _ in range(replicates):
                _, _, path = corr_star_population(d, P, sched[-1], n_trees, rng, return_path=True)
                paths.append(path)
            for ell in sched:
                vals = np.array([p[ell - 1][0] for p in paths])
                inner = np.array([p[ell - 1][1] for p in paths])
                se = math.sqrt((inner**2).mean() / replicates)
                if replicates > 1:
                    se = max(se, float(vals.std(ddof=1) / math.sqrt(replicates)))
                ests.append(float(vals.mean()))
                ses.append(se)
        else:
            for ell in sched:
                r = corr_star(d, P, ell, n_trees, rng, "forest")
                ests.append(r["estimate"])
                ses.append(r["se"])
        pos = plateau(ests, ses)
        verdicts[d] = pos
        for ell, e, s in zip(sched, ests, ses):
            rows.append({"d": d, "ell": ell, "estimate": e, "se": s,
                         "verdict": "positive" if pos else "zero",
                         "method": "population" if use_pop else "forest"})
    bracket = None
    prev = None
    for d in grid:
        if verdicts[d]:
            bracket = (prev, d)
            break
        prev = d
    spec = model_spectra(P)
    return {"rows": rows, "bracket": bracket, "d_ks": spec.d_ks,
            "rule": "3 consecutive ell with estimate > 3 SE and pairwise gaps < 2 SE"}
