"""Spin sets, weight functions, model distributions and assumption checks."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import ModelError
from .rng import as_generator

DENSE_LIMIT = 4096
FAMILIES = ("potts", "kspin", "xorsat", "table")
_KSPIN_CELLS = 64


@dataclass(frozen=True)
class SpinSet:
    q: int
    labels: tuple = ()

    def __post_init__(self):
        if int(self.q) < 2:
            raise ModelError("q: need at least two spins")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.q)))
        if len(self.labels) != self.q:
            raise ModelError("labels: expected %d labels" % self.q)


def _ising_signs(k):
    """Product of +-1 spins over Omega^k (index 0 is +1, index 1 is -1)."""
    s = np.array([1.0, -1.0])
    out = np.ones((2,) * k)
    for i in range(k):
        shape = [1] * k
        shape[i] = 2
        out = out * s.reshape(shape)
    return out


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """A map Omega^k -> (0, 2), stored densely or by family parameters.

    ``bounded=False`` lifts the (0, 2) range check; it is only used for
    derived objects such as tensor squares, whose values lie in (0, 4).
    """

    k: int
    q: int
    table: np.ndarray = None
    family: str = "table"
    params: tuple = ()
    bounded: bool = True

    def __post_init__(self):
        if self.table is None and self.family == "table":
            raise ModelError("table: missing weight table")
        if self.table is not None:
            t = np.array(self.table, dtype=float).reshape((self.q,) * self.k)
            lo, hi = (0.0, 2.0) if self.bounded else (0.0, np.inf)
            if not (np.all(t > lo) and np.all(t < hi)):
                raise ModelError("table: weight values must lie strictly in (0, 2)")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    @property
    def size(self):
        return self.q**self.k

    def values(self):
        """Dense table of shape (q,)*k, built on demand for parametric forms."""
        if self.table is not None:
            return self.table
        if self.family == "kspin":
            J, beta = self.params
            return 1.0 + math.tanh(J * beta) * _ising_signs(self.k)
        if self.family == "potts":
            beta = self.params[0]
            return _potts_table(self.q, beta)
        raise ModelError("family: cannot evaluate %r" % self.family)

    def __call__(self, tau):
        return eval_weight(self, tau)

    @property
    def xi(self):
        """Per-function constant q^{-k} * sum of all values."""
        return float(self.values().mean())

    def key(self):
        """Hashable identity used to group identical weight functions."""
        if self.family in ("potts", "kspin"):
            return (self.family, self.k, self.q) + tuple(float(p) for p in self.params)
        return ("table", self.k, self.q, self.values().tobytes())


def _potts_table(q, beta):
    t = np.ones((q, q))
    np.fill_diagonal(t, math.exp(-beta))
    return t


def potts_weight(q, beta):
    return WeightFunction(2, q, _potts_table(q, beta), family="potts", params=(float(beta),))


def kspin_weight(k, J, beta):
    table = None
    if 2**k <= DENSE_LIMIT:
        table = 1.0 + math.tanh(J * beta) * _ising_signs(k)
    return WeightFunction(k, 2, table, family="kspin", params=(float(J), float(beta)))


def eval_weight(psi, tau):
    tau = tuple(int(t) for t in tau)
    if len(tau) != psi.k:
        raise ModelError("tau: expected %d spins, got %d" % (psi.k, len(tau)))
    if any(t < 0 or t >= psi.q for t in tau):
        raise ModelError("tau: spin index out of range [0, %d)" % psi.q)
    if psi.table is not None:
        return float(psi.table[tau])
    if psi.family == "kspin":
        J, beta = psi.params
        sign = (-1) ** sum(tau)
        return 1.0 + math.tanh(J * beta) * sign
    return float(psi.values()[tau])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Distribution P over weight functions with spin set and arity.

    Finite-support models keep their atoms; the Gaussian k-spin family is a
    one-dimensional parametric family in the coupling J.
    """

    family: str
    q: int
    k: int
    beta: float = None
    atoms: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError("family: unknown family %r (expected one of %s)"
                             % (self.family, ", ".join(FAMILIES)))
        SpinSet(self.q)
        if self.k < 1:
            raise ModelError("k: arity must be positive")
        if self.family == "table":
            if not self.atoms:
                raise ModelError("atoms: a table model needs at least one atom")
            probs = np.array([p for p, _ in self.atoms], dtype=float)
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ModelError("atoms: probabilities must be positive and sum to 1")
            for _, w in self.atoms:
                if w.k != self.k or w.q != self.q:
                    raise ModelError("atoms: weight shape does not match (q, k)")

    @property
    def spins(self):
        return SpinSet(self.q)

    @property
    def support_kind(self):
        return "parametric-1d" if self.family == "kspin" else "finite"

    # -- sampling ---------------------------------------------------------

    def sample(self, rng):
        """One weight function drawn from P."""
        rng = as_generator(rng)
        if self.family == "potts":
            return self.support()[0][1]
        if self.family == "kspin":
            return kspin_weight(self.k, float(rng.standard_normal()), self.beta)
        if self.family == "xorsat":
            return kspin_weight(self.k, float(rng.choice([-1.0, 1.0])), self.beta)
        idx = rng.choice(len(self.atoms), p=self._probs())
        return self.atoms[idx][1]

    def sample_tables(self, rng, size):
        """Flat tables of ``size`` i.i.d. weight functions, shape (size, q^k)."""
        rng = as_generator(rng)
        if self.family == "potts":
            return np.broadcast_to(self.mean_table().ravel(), (size, self.q**self.k))
        if self.family in ("kspin", "xorsat"):
            if self.family == "kspin":
                J = rng.standard_normal(size)
            else:
                J = rng.choice([-1.0, 1.0], size=size)
            t = np.tanh(J * self.beta)
            return 1.0 + t[:, None] * _ising_signs(self.k).ravel()[None, :]
        idx = self.sample_atom_indices(rng, size)
        return self._atom_tables()[idx]

    def sample_handles(self, rng, size):
        """Draw ``size`` weight functions as compact handles plus flat tables.

        Handles are atom indices for finite support and couplings J for the
        Ising families; ``weight_from_handle`` turns one back into a function.
        """
        rng = as_generator(rng)
        if self.family == "potts":
            return np.zeros(size, dtype=int), self.sample_tables(rng, size)
        if self.family in ("kspin", "xorsat"):
            if self.family == "kspin":
                J = rng.standard_normal(size)
            else:
                J = rng.choice([-1.0, 1.0], size=size)
            t = np.tanh(J * self.beta)
            return J, 1.0 + t[:, None] * _ising_signs(self.k).ravel()[None, :]
        idx = self.sample_atom_indices(rng, size)
        return idx, self._atom_tables()[idx]

    def weight_from_handle(self, h):
        if self.family == "potts":
            return self.support()[0][1]
        if self.family in ("kspin", "xorsat"):
            return kspin_weight(self.k, float(h), self.beta)
        return self.atoms[int(h)][1]

    def sample_atom_indices(self, rng, size):
        return rng.choice(len(self.atoms), size=size, p=self._probs())

    def _probs(self):
        return np.array([p for p, _ in self.atoms], dtype=float)

    def _atom_tables(self):
        if "atom_tables" not in self._cache:
            self._cache["atom_tables"] = np.stack([w.values().ravel() for _, w in self.atoms])
        return self._cache["atom_tables"]

    # -- exact expectations ----------------------------------------------

    def support(self):
        """List of (probability, WeightFunction) representing P.

        Exact for finite support; conditional cell means for Gaussian J.
        """
        if "support" in self._cache:
            return self._cache["support"]
        if self.family == "potts":
            sup = [(1.0, potts_weight(self.q, self.beta))]
        elif self.family == "xorsat":
            sup = [(0.5, kspin_weight(self.k, 1.0, self.beta)),
                   (0.5, kspin_weight(self.k, -1.0, self.beta))]
        elif self.family == "kspin":
            # conditional means over a fine partition of the coupling line
            sup = [(p, kspin_weight_table(self.k, t, self.beta))
                   for p, t, _ in _kspin_cells(self, _KSPIN_CELLS)]
        else:
            sup = [(float(p), w) for p, w in self.atoms]
        self._cache["support"] = sup
        return sup

    def quadratic_support(self):
        """Support reproducing every expectation of degree <= 2 in psi exactly.

        For the Ising-coupling families this is the two-point law
        t = +-sqrt(E tanh^2); otherwise the true support.
        """
        if self.family in ("kspin", "xorsat"):
            t = math.sqrt(self.tanh2_mean())
            return [(0.5, kspin_weight_table(self.k, t, self.beta)),
                    (0.5, kspin_weight_table(self.k, -t, self.beta))]
        return self.support()

    def expect(self, fn):
        """E[fn(psi)] for psi drawn from P, summed over the support."""
        total = None
        for p, w in self.support():
            v = p * np.asarray(fn(w), dtype=float)
            total = v if total is None else total + v
        return total

    def mean_table(self):
        """E[psi(tau)] as an array of shape (q,)*k."""
        if "mean" not in self._cache:
            if self.family in ("kspin", "xorsat"):
                m = np.ones((2,) * self.k)
            else:
                m = self.expect(lambda w: w.values())
            self._cache["mean"] = m
        return self._cache["mean"]

    def tanh2_mean(self):
        """E[tanh(J beta)^2] for the Ising-coupling families."""
        if self.family == "xorsat":
            return math.tanh(self.beta) ** 2
        if self.family == "kspin":
            f = lambda j: np.tanh(self.beta * j) ** 2 * stats.norm.pdf(j)
            return integrate.quad(f, -np.inf, np.inf, epsabs=1e-13)[0]
        raise ModelError("family: tanh moments only defined for Ising couplings")

    def pair_table(self):
        """E[psi(sigma) psi(tau)] as a (q^k, q^k) matrix."""
        if "pair" not in self._cache:
            if self.family in ("kspin", "xorsat"):
                s = _ising_signs(self.k).ravel()
                m = 1.0 + self.tanh2_mean() * np.outer(s, s)
            else:
                m = self.expect(lambda w: np.outer(w.values().ravel(), w.values().ravel()))
            self._cache["pair"] = m
        return self._cache["pair"]

    @property
    def xi(self):
        return xi_constant(self)

    def phi(self, rho):
        return phi_rho(self, rho)

    # -- serialization ----------------------------------------------------

    def to_dict(self):
        d = {"family": self.family, "q": self.q, "k": self.k}
        if self.beta is not None:
            d["beta"] = self.beta
        if self.family == "table":
            d["atoms"] = [{"p": p, "table": w.values().ravel().tolist()} for p, w in self.atoms]
        return d

    @classmethod
    def from_dict(cls, doc):
        if "family" not in doc:
            raise ModelError("family: missing")
        fam = doc["family"]
        if fam == "potts":
            return potts(int(doc.get("q", 2)), float(_need(doc, "beta")))
        if fam == "kspin":
            return kspin(int(_need(doc, "k")), float(_need(doc, "beta")))
        if fam == "xorsat":
            return xorsat(int(_need(doc, "k")), float(_need(doc, "beta")))
        if fam == "table":
            q, k = int(_need(doc, "q")), int(_need(doc, "k"))
            atoms = []
            for i, a in enumerate(_need(doc, "atoms")):
                try:
                    atoms.append((float(a["p"]), WeightFunction(k, q, np.array(a["table"], dtype=float))))
                except (KeyError, ValueError) as exc:
                    raise ModelError("atoms[%d]: %s" % (i, exc)) from exc
            return cls("table", q, k, doc.get("beta"), tuple(atoms))
        raise ModelError("family: unknown family %r (expected one of %s)" % (fam, ", ".join(FAMILIES)))


def _need(doc, key):
    if key not in doc:
        raise ModelError("%s: missing" % key)
    return doc[key]


def potts(q, beta):
    if beta <= 0:
        raise ModelError("beta: Potts models need beta > 0 (antiferromagnetic weights)")
    return ModelSpec("potts", int(q), 2, float(beta))


def kspin(k, beta):
    return ModelSpec("kspin", 2, int(k), float(beta))


def xorsat(k, beta):
    return ModelSpec("xorsat", 2, int(k), float(beta))


def table_model(atoms):
    """Finite-support model from a list of (probability, table) pairs."""
    atoms = [(float(p), t if isinstance(t, WeightFunction) else None, t) for p, t in atoms]
    wfs = []
    for p, wf, t in atoms:
        if wf is None:
            t = np.asarray(t, dtype=float)
            wf = WeightFunction(t.ndim, t.shape[0], t)
        wfs.append((p, wf))
    return ModelSpec("table", wfs[0][1].q, wfs[0][1].k, None, tuple(wfs))


def xi_constant(P, n_samples=None, rng=None):
    """The constant xi = q^{-k} sum_sigma E[psi(sigma)].

    Exact for every model handled here; with ``n_samples`` a Monte-Carlo
    estimate ``(mean, se)`` is returned instead.
    """
    if n_samples:
        tabs = P.sample_tables(as_generator(rng), int(n_samples))
        x = tabs.mean(axis=1)
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    if P.family == "potts":
        return 1.0 - (1.0 - math.exp(-P.beta)) / P.q
    if P.family in ("kspin", "xorsat"):
        return 1.0
    return float(P.mean_table().mean())


def _check_rho(rho, q):
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (q,) or np.any(rho < -1e-12) or abs(rho.sum() - 1.0) > 1e-12:
        raise ModelError("rho: expected a probability vector of length %d" % q)
    return rho


def _contract(table, vecs):
    """sum_tau table(tau) prod_i vecs[i][tau_i]."""
    out = table
    for v in reversed(vecs):
        out = out @ v
    return out


def phi_rho(P, rho):
    """phi(rho) = sum_tau E[psi(tau)] prod_i rho(tau_i)."""
    rho = _check_rho(rho, P.q)
    if P.family == "potts":
        return 1.0 - (1.0 - math.exp(-P.beta)) * float(rho @ rho)
    if P.family in ("kspin", "xorsat"):
        return 1.0
    return float(_contract(P.mean_table(), [rho] * P.k))


def phi_profiles(P, rhos):
    """Vectorized phi over an array of distributions of shape (N, q)."""
    rhos = np.asarray(rhos, dtype=float)
    if P.family == "potts":
        return 1.0 - (1.0 - math.exp(-P.beta)) * np.einsum("ij,ij->i", rhos, rhos)
    if P.family in ("kspin", "xorsat"):
        return np.ones(len(rhos))
    out = np.broadcast_to(P.mean_table(), (len(rhos),) + (P.q,) * P.k)
    for _ in range(P.k):
        out = np.einsum("n...j,nj->n...", out, rhos)
    return out


# -- discretization ---------------------------------------------------------

def cube_index(values, r):
    """Index of the side-1/r sub-cube of (0,2)^{Omega^k} containing ``values``."""
    return tuple(np.floor(np.asarray(values, dtype=float).ravel() * r).astype(int).tolist())


def _tanh_cells(r):
    """Breakpoints in t = tanh(J beta) where some coordinate 1 +- t crosses a cube face."""
    return [-1.0 + j / r for j in range(0, 2 * r + 1)]


def _kspin_cells(P, r):
    """Cells of the J line for the Gaussian family: (prob, E[tanh(beta J)|cell], t-interval)."""
    beta = P.beta
    cells = []
    if beta == 0:
        return [(1.0, 0.0, (-1.0, 1.0))]
    edges = _tanh_cells(r)
    for lo, hi in zip(edges[:-1], edges[1:]):
        jlo = -np.inf if lo <= -1 else math.atanh(lo) / beta
        jhi = np.inf if hi >= 1 else math.atanh(hi) / beta
        if beta < 0:
            jlo, jhi = jhi, jlo
        mass = float(stats.norm.cdf(jhi) - stats.norm.cdf(jlo))
        if mass <= 0:
            continue
        num = integrate.quad(lambda j: math.tanh(beta * j) * stats.norm.pdf(j), jlo, jhi,
                             epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        cells.append((mass, num / mass, (lo, hi)))
    return cells


def discretize_weight(psi, r, P):
    """Conditional mean of Psi given that Psi lies in the same sub-cube as ``psi``."""
    r = int(r)
    if r < 1:
        raise ModelError("r: must be a positive integer")
    target = cube_index(psi.values(), r)
    if P.family == "kspin":
        t = float(psi.values().ravel()[0] - 1.0)
        for mass, tbar, (lo, hi) in _kspin_cells(P, r):
            if lo <= t < hi or (hi >= 1 and t >= lo):
                return kspin_weight_table(P.k, tbar, P.beta)
        raise ModelError("psi: not in the support of P")
    num, den = 0.0, 0.0
    for p, w in P.support():
        if cube_index(w.values(), r) == target:
            num = num + p * w.values()
            den += p
    if den == 0:
        raise ModelError("psi: its cube carries no mass under P")
    vals = num / den
    return WeightFunction(psi.k, psi.q, vals)


def kspin_weight_table(k, t, beta):
    """Dense k-spin weight 1 + t * sigma_1...sigma_k for an arbitrary coefficient t."""
    return WeightFunction(k, 2, 1.0 + t * _ising_signs(k))


def discretize_model(P, r):
    """Finite-support model P^(r): one atom per occupied cube, with cube labels.

    Returns ``(model, labels)`` where ``labels[i]`` is the cube index of atom i.
    """
    r = int(r)
    if P.family == "kspin":
        atoms, labels = [], []
        for mass, tbar, _ in _kspin_cells(P, r):
            w = kspin_weight_table(P.k, tbar, P.beta)
            atoms.append((mass, w))
            labels.append(cube_index(w.values(), r))
        tot = sum(p for p, _ in atoms)
        atoms = [(p / tot, w) for p, w in atoms]
        return ModelSpec("table", 2, P.k, P.beta, tuple(atoms)), labels
    groups = {}
    for p, w in P.support():
        c = cube_index(w.values(), r)
        acc = groups.setdefault(c, [0.0, 0.0])
        acc[0] += p
        acc[1] = acc[1] + p * w.values()
    atoms, labels = [], []
    for c, (p, s) in groups.items():
        atoms.append((p, WeightFunction(P.k, P.q, s / p)))
        labels.append(c)
    return ModelSpec("table", P.q, P.k, P.beta, tuple(atoms)), labels


# -- assumption checks ------------------------------------------------------

@dataclass
class AssumptionReport:
    sym_ok: bool
    sym_violation: float
    perm_ok: bool
    bal_ok: bool
    bal_worst_eigenvalue: float
    min_ok: bool
    min_value: float
    min_uniform_value: float
    min_minimizer: list
    min_distance: float
    pos_estimate: float = None
    pos_se: float = None

    def to_dict(self):
        return dict(self.__dict__)


def sym_violation(psi, xi=None):
    """max over i, omega of |sum_{tau_i = omega} psi(tau) - q^{k-1} xi|."""
    t = psi.values()
    q, k = psi.q, psi.k
    target = q ** (k - 1) * (psi.xi if xi is None else xi)
    worst = 0.0
    for i in range(k):
        axes = tuple(j for j in range(k) if j != i)
        s = t.sum(axis=axes) if axes else t
        worst = max(worst, float(np.max(np.abs(s - target))))
    return worst


def _permutation_closed(P, tol=1e-12):
    if P.family in ("potts", "kspin", "xorsat"):
        return True
    keyed = [(p, w.values()) for p, w in P.atoms]
    for perm in itertools.permutations(range(P.k)):
        for p, t in keyed:
            tp = np.transpose(t, perm)
            mass = sum(p2 for p2, t2 in keyed if np.max(np.abs(t2 - tp)) <= tol)
            massorig = sum(p2 for p2, t2 in keyed if np.max(np.abs(t2 - t)) <= tol)
            if abs(mass - massorig) > 1e-9:
                return False
    return True


def spin_symmetries(P, tol=1e-12, max_q=6):
    """Spin relabelings g (as index arrays) under which P is invariant.

    Invariance means psi(g tau) has the same law as psi(tau). For q > max_q
    only the identity is returned unless the model is Potts.
    """
    q = P.q
    if P.family == "potts":
        if q > max_q:
            return np.array([np.roll(np.arange(q), r) for r in range(q)])
        return np.array(list(itertools.permutations(range(q))))
    if P.family in ("kspin", "xorsat"):
        # the coupling law is symmetric, so a global flip maps the law to itself
        return np.array([[0, 1], [1, 0]])
    if q > max_q:
        return np.arange(q)[None, :]
    keyed = [(p, w.values()) for p, w in P.atoms]
    out = []
    for g in itertools.permutations(range(q)):
        ok = True
        for p, t in keyed:
            tg = t[np.ix_(*[list(g)] * P.k)]
            mass = sum(p2 for p2, t2 in keyed if np.max(np.abs(t2 - tg)) <= tol)
            base = sum(p2 for p2, t2 in keyed if np.max(np.abs(t2 - t)) <= tol)
            if abs(mass - base) > 1e-9:
                ok = False
                break
        if ok:
            out.append(g)
    return np.array(out)


def centered_basis(q):
    """Orthonormal basis of the complement of the all-ones vector (Helmert)."""
    U = np.zeros((q, q - 1))
    for j in range(1, q):
        U[:j, j - 1] = 1.0
        U[j, j - 1] = -j
        U[:, j - 1] /= math.sqrt(j * (j + 1))
    return U


def phi_hessian(P, rho):
    """Hessian of phi at rho (as a function on R^Omega)."""
    M = P.mean_table()
    q, k = P.q, P.k
    H = np.zeros((q, q))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            t = np.moveaxis(M, (i, j), (0, 1))
            rest = k - 2
            for _ in range(rest):
                t = t @ rho
            H += t
    return H


def _project_R(x, q, iters=500, tol=1e-13):
    """Euclidean projection onto distributions on Omega^2 with uniform marginals (Dykstra)."""
    U = centered_basis(q)
    B = np.kron(U, U)
    base = np.full(q * q, 1.0 / q**2)
    y = x.copy()
    p = np.zeros_like(x)
    qv = np.zeros_like(x)
    for _ in range(iters):
        z = base + B @ (B.T @ (y + p - base))
        p = y + p - z
        y_new = np.maximum(z + qv, 0.0)
        qv = z + qv - y_new
        if np.max(np.abs(y_new - y)) < tol:
            y = y_new
            break
        y = y_new
    return base + B @ (B.T @ (y - base)) if np.all(y >= -1e-12) else y


def _min_objective(P):
    """f(rho) over Omega^2 distributions with its gradient, via the pair table."""
    q, k = P.q, P.k
    # E[psi(sigma) psi(tau)] regrouped to a k-tensor over the paired alphabet Omega^2
    M2 = P.pair_table().reshape((q,) * k + (q,) * k)
    perm = [a for i in range(k) for a in (i, k + i)]
    M2 = np.transpose(M2, perm).reshape((q * q,) * k)

    def f(x):
        return float(_contract(M2, [x] * k))

    def grad(x):
        g = np.zeros(q * q)
        for i in range(k):
            t = np.moveaxis(M2, i, 0)
            for _ in range(k - 1):
                t = t @ x
            g += t
        return g

    return f, grad


def min_search(P, restarts=50, tol=1e-8, rng=None, max_iter=3000):
    """Multi-start projected gradient descent for the MIN functional."""
    rng = as_generator(rng)
    q = P.q
    f, grad = _min_objective(P)
    uni = np.full(q * q, 1.0 / q**2)
    f_uni = f(uni)
    best_x, best_f = uni, f_uni
    for _ in range(restarts):
        x = _project_R(rng.dirichlet(np.ones(q * q)), q)
        fx = f(x)
        step = 1.0
        for _ in range(max_iter):
            g = grad(x)
            while True:
                y = _project_R(x - step * g, q)
                fy = f(y)
                if fy <= fx - 1e-4 * float(g @ (x - y)) or step < 1e-12:
                    break
                step *= 0.5
            moved = float(np.max(np.abs(y - x)))
            x, fx = y, fy
            step = min(step * 2.0, 1e3)
            if moved < tol:
                break
        if fx < best_f:
            best_x, best_f = x, fx
    return best_x, best_f, f_uni


def pos_estimate(P, pi, pi_prime, n_samples, rng):
    """Monte-Carlo estimate of the POS expectation; returns (mean, se)."""
    rng = as_generator(rng)
    k, q = P.k, P.q
    pts = np.asarray(pi)
    pts2 = np.asarray(pi_prime)
    lam = lambda x: x * np.log(x)
    vals = np.empty(n_samples)
    chunk = 20000
    for start in range(0, n_samples, chunk):
        n = min(chunk, n_samples - start)
        T = P.sample_tables(rng, n).reshape((n,) + (q,) * k)
        r = pts[rng.integers(len(pts), size=(n, k))]
        r2 = pts2[rng.integers(len(pts2), size=(n, k))]
        a = _batched_contract(T, [r[:, i] for i in range(k)])
        b = _batched_contract(T, [r2[:, i] for i in range(k)])
        c = _batched_contract(T, [r[:, 0]] + [r2[:, i] for i in range(1, k)])
        vals[start:start + n] = lam(a) + (k - 1) * lam(b) - k * lam(c)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def _batched_contract(T, vecs):
    out = T
    for v in reversed(vecs):
        out = np.einsum("n...j,nj->n...", out, v)
    return out


def check_assumptions(P, pi=None, pi_prime=None, budget=50, rng=None, pos_samples=100000):
    """Numerical probe of SYM, BAL, MIN and (optionally) POS."""
    rng = as_generator(rng)
    q = P.q
    xi = xi_constant(P)
    if P.support_kind == "finite":
        funcs = [w for _, w in P.support()]
    else:
        funcs = [P.sample(rng) for _ in range(budget)]
    sym_v = max(sym_violation(w, xi) for w in funcs)
    perm_ok = _permutation_closed(P)

    U = centered_basis(q)
    uni = np.full(q, 1.0 / q)
    pts = [uni] + [rng.dirichlet(np.ones(q)) for _ in range(budget)]
    worst = -np.inf
    phi_max_ok = True
    for rho in pts:
        H = U.T @ phi_hessian(P, rho) @ U
        worst = max(worst, float(np.linalg.eigvalsh((H + H.T) / 2).max()))
        if phi_rho(P, rho) > phi_rho(P, uni) + 1e-12:
            phi_max_ok = False

    x, fx, f_uni = min_search(P, restarts=budget, rng=rng)
    dist = float(np.max(np.abs(x - 1.0 / q**2)))
    min_ok = fx >= f_uni - 1e-8 * max(1.0, abs(f_uni))

    rep = AssumptionReport(
        sym_ok=sym_v <= 1e-10 and perm_ok, sym_violation=sym_v, perm_ok=perm_ok,
        bal_ok=worst <= 1e-9 and phi_max_ok, bal_worst_eigenvalue=worst,
        min_ok=bool(min_ok), min_value=fx, min_uniform_value=f_uni,
        min_minimizer=x.reshape(q, q).tolist(), min_distance=dist)
    if pi is not None:
        pp = pi if pi_prime is None else pi_prime
        rep.pos_estimate, rep.pos_se = pos_estimate(P, pi, pp, pos_samples, rng)
    return rep
