"""Joint variational families over topologies and continuous parameters.

Two model bundles share one interface used by the trainer and estimators:

``sample_topologies(k, rng)``
    ``k`` topologies from the SBN.
``draw_eps(tree, rng)``
    standard-normal noise for one continuous draw on ``tree``.
``evaluate(tree, eps, beta, grad)``
    log importance ratios for a batch of draws on one topology, plus the
    topology score and per-draw pathwise gradients of the continuous
    parameters.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .branch import LOG_2PI, BranchModel
from .likelihood import JC69, grad_branch_lengths, log_likelihood
from .sbn import SbnModel, SubsplitSupport
from .taxa import PCSP
from .timetree import (ConstantPrior, HeightTransform, LogNormalRatePrior,
                       SkyridePrior, clock_branch_lengths, coalescent_log_density,
                       height_lower_bounds)
from .tree import Tree, double_factorial


@dataclass
class Evaluation:
    """Batch of draws on one topology.

    ``log_weight`` is the log ratio of the annealed joint density to the
    continuous variational density, i.e. ``log_f`` without the topology
    terms; ``log_f = log_weight + log_prior_tau - log_q_tau``.
    """

    tree: Tree
    log_f: np.ndarray
    log_weight: np.ndarray
    log_lik: np.ndarray
    log_q_tau: float
    log_prior_tau: float
    score: np.ndarray | None = None
    grads: dict = field(default_factory=dict)


def _scatter_rows(n_slots, slots, d):
    """Sum per-row derivatives ``d`` (``(B, R)``) into slot arrays ``(B, n)``."""
    b = d.shape[0]
    out = np.zeros((b, n_slots + 1))
    rows = np.arange(b)[:, None]
    for k in range(slots.shape[1]):
        np.add.at(out, (rows, slots[None, :, k]), d)
    return out[:, :-1]


class _TopologyCache:
    def __init__(self, taxa, rooted, limit=20000):
        self.taxa = taxa
        self.rooted = rooted
        self.limit = limit
        self.trees = {}

    def get(self, nested):
        t = self.trees.get(nested)
        if t is None:
            if len(self.trees) >= self.limit:
                self.trees.clear()
            t = Tree.from_nested(self.taxa, nested, rooted=self.rooted)
            # share one object per topology so downstream caches hit
            self.trees[nested] = t
        return t


class UnrootedVBPI:
    """SBN over unrooted topologies with amortized lognormal branch lengths.

    Target: JC-style likelihood, i.i.d. exponential branch-length prior with
    rate ``branch_rate`` and a uniform topology prior.
    """

    kind = "unrooted"
    param_names = ("phi", "branch_mu", "branch_log_sigma")

    def __init__(self, support: SubsplitSupport, patterns, psp: bool = False,
                 subst=None, branch_rate: float = 10.0):
        if support.rooted:
            raise ValueError("unrooted model needs an unrooted support")
        self.support = support
        self.patterns = patterns
        self.psp = psp
        self.subst = subst or JC69()
        self.branch_rate = branch_rate
        self.sbn = SbnModel(support)
        self.branch = BranchModel(support, psp)
        n = len(support.taxa)
        self.log_prior_tau = -math.log(double_factorial(2 * n - 5)) if n >= 3 else 0.0
        self._topos = _TopologyCache(support.taxa, rooted=False)
        self._canon = {}

    # parameters ---------------------------------------------------------

    def get_params(self) -> dict:
        return {"phi": self.sbn.phi, "branch_mu": self.branch.mu,
                "branch_log_sigma": self.branch.log_sigma}

    def set_params(self, params: dict):
        if "phi" in params:
            self.sbn.phi = params["phi"]
        if "branch_mu" in params:
            self.branch.mu = np.asarray(params["branch_mu"], dtype=float)
        if "branch_log_sigma" in params:
            self.branch.log_sigma = np.asarray(params["branch_log_sigma"], dtype=float)

    # sampling -----------------------------------------------------------

    def canonical(self, tree: Tree) -> Tree:
        """One shared object per topology (keeps per-topology caches warm)."""
        t = self._canon.get(tree)
        if t is None:
            if len(self._canon) > 20000:
                self._canon.clear()
            self._canon[tree] = t = tree
        return t

    def sample_topologies(self, k: int, rng) -> list:
        return [self.canonical(self._topos.get(self.sbn.sample_nested(rng)))
                for _ in range(k)]

    def eps_size(self, tree: Tree) -> int:
        return len(tree.edges)

    def draw_eps(self, tree: Tree, rng, size=None):
        shape = (self.eps_size(tree),) if size is None else (size, self.eps_size(tree))
        return rng.standard_normal(shape)

    # evaluation ---------------------------------------------------------

    def evaluate(self, tree: Tree, eps, beta: float = 1.0, grad: bool = True,
                 need_tau: bool = True) -> Evaluation:
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        edges = list(tree.edges)
        mu, sigma = self.branch.edge_params(tree)
        log_qe = mu + sigma * eps
        qe = np.exp(log_qe)
        q = np.zeros((eps.shape[0], tree.n_nodes))
        q[:, edges] = qe
        if grad:
            log_lik, g = grad_branch_lengths(tree, q, self.patterns, self.subst)
        else:
            log_lik = log_likelihood(tree, q, self.patterns, self.subst)
        rate = self.branch_rate
        log_prior_q = (math.log(rate) - rate * qe).sum(axis=1)
        log_q_cont = (-log_qe - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * eps * eps).sum(axis=1)
        log_weight = beta * log_lik + log_prior_q - log_q_cont

        score = None
        if grad:
            log_q_tau, score = self.sbn.grad_log_unrooted(tree)
        elif need_tau:
            log_q_tau = self.sbn.log_unrooted_prob(tree)
        else:
            log_q_tau = 0.0
        log_f = log_weight + self.log_prior_tau - log_q_tau
        ev = Evaluation(tree, log_f, log_weight, log_lik, log_q_tau,
                        self.log_prior_tau, score)
        if grad:
            d_logq = (beta * g[:, edges] - rate) * qe + 1.0
            d_ls = d_logq * sigma * eps + 1.0
            slots = self.branch.edge_slots(tree)
            n = self.support.n_params
            ev.grads = {"branch_mu": _scatter_rows(n, slots, d_logq),
                        "branch_log_sigma": _scatter_rows(n, slots, d_ls)}
        return ev

    def covers(self, tree: Tree) -> bool:
        try:
            self.branch.edge_slots(tree)
        except KeyError:
            return False
        return True

    # serialization ------------------------------------------------------

    def config(self) -> dict:
        return {"kind": self.kind, "psp": self.psp, "branch_rate": self.branch_rate}


class TimeTreeVBPI:
    """SBN over rooted topologies with node heights, population sizes and rate.

    Height slots are laid out as ``[root subsplits | PCSPs | clades |
    subsplits]``; the first two blocks share the SBN layout.  The root height
    reads its root subsplit (plus, with PSP, the PCSPs from the root
    subsplit to its children); every other internal node reads its clade
    (plus, with PSP, the PCSP from its parent's subsplit and its own
    subsplit).
    """

    kind = "timetree"

    def __init__(self, support: SubsplitSupport, patterns, times=None,
                 coalescent: str = "constant", clock_rate=None, psp: bool = False,
                 subst=None, rate_prior=None, prior_kwargs=None,
                 init_root_log_height: float = 0.0):
        if not support.rooted:
            raise ValueError("time-tree model needs a rooted support")
        self.support = support
        self.patterns = patterns
        n = len(support.taxa)
        self.times = np.zeros(n) if times is None else np.asarray(times, dtype=float)
        self.psp = psp
        self.subst = subst or JC69()
        self.coalescent = coalescent
        prior_kwargs = prior_kwargs or {}
        if coalescent == "constant":
            self.pop_prior = ConstantPrior(**prior_kwargs)
        elif coalescent == "skyride":
            self.pop_prior = SkyridePrior(**prior_kwargs)
        else:
            raise ValueError(f"unknown coalescent prior {coalescent!r}")
        self.fixed_rate = None if clock_rate is None else float(clock_rate)
        self.rate_prior = rate_prior or LogNormalRatePrior()
        self.sbn = SbnModel(support)
        self.log_prior_tau = 0.0

        s = support
        self.n_slots = s.n_params + len(s.clades) + len(s.subsplits)
        self.height_mu = np.zeros(self.n_slots)
        self.height_log_sigma = np.zeros(self.n_slots)
        self.height_mu[:s.n_root] = init_root_log_height
        self.height_log_sigma[:s.n_root] = math.log(0.5)
        c0 = s.n_params
        self.height_log_sigma[c0:c0 + len(s.clades)] = math.log(0.5)
        g = self.pop_prior.size(n)
        self.gamma_mu = np.zeros(g)
        self.gamma_log_sigma = np.full(g, math.log(0.5))
        self.rate_mu = np.array([math.log(1e-3)])
        self.rate_log_sigma = np.array([math.log(0.5)])
        self._slots = {}
        self._lb = {}
        self._topos = _TopologyCache(support.taxa, rooted=True)

    @property
    def param_names(self):
        names = ["phi", "height_mu", "height_log_sigma", "gamma_mu", "gamma_log_sigma"]
        if self.fixed_rate is None:
            names += ["rate_mu", "rate_log_sigma"]
        return tuple(names)

    def get_params(self) -> dict:
        out = {"phi": self.sbn.phi, "height_mu": self.height_mu,
               "height_log_sigma": self.height_log_sigma,
               "gamma_mu": self.gamma_mu, "gamma_log_sigma": self.gamma_log_sigma}
        if self.fixed_rate is None:
            out["rate_mu"] = self.rate_mu
            out["rate_log_sigma"] = self.rate_log_sigma
        return out

    def set_params(self, params: dict):
        for k, v in params.items():
            if k == "phi":
                self.sbn.phi = v
            else:
                setattr(self, k, np.asarray(v, dtype=float))

    # structure ----------------------------------------------------------

    def height_slots(self, tree: Tree) -> np.ndarray:
        """Slots per internal node (``tree.internal_nodes`` order, root last)."""
        hit = self._slots.get(tree)
        if hit is not None:
            return hit
        s = self.support
        pad = self.n_slots
        c0 = s.n_params
        s0 = c0 + len(s.clades)
        rows = []
        for v in tree.internal_nodes:
            ss = tree.subsplit(v)
            if v == tree.root:
                i = s.root_index.get(ss)
                if i is None:
                    raise KeyError("root subsplit not in support")
                row = [i, pad, pad]
                if self.psp:
                    kids = [c for c in tree.children[v] if not tree.is_leaf(c)]
                    for k, c in enumerate(kids):
                        row[1 + k] = s.pcsp_index.get(PCSP(ss, tree.subsplit(c)), pad)
            else:
                i = s.clade_index.get(tree.clade[v])
                if i is None:
                    raise KeyError("clade not in support")
                row = [c0 + i, pad, pad]
                if self.psp:
                    parent_ss = tree.subsplit(tree.parent[v])
                    row[1] = s.pcsp_index.get(PCSP(parent_ss, ss), pad)
                    j = s.subsplit_index.get(ss)
                    row[2] = pad if j is None else s0 + j
            rows.append(row)
        slots = np.array(rows, dtype=np.int64)
        if len(self._slots) > 20000:
            self._slots.clear()
        self._slots[tree] = slots
        return slots

    def height_params(self, tree: Tree):
        """``(mu, sigma)`` of the height parameters per internal node."""
        slots = self.height_slots(tree)
        mu = np.append(self.height_mu, 0.0)[slots].sum(axis=1)
        ls = np.append(self.height_log_sigma, 0.0)[slots].sum(axis=1)
        return mu, np.exp(ls)

    def lower_bounds(self, tree: Tree) -> np.ndarray:
        lb = self._lb.get(tree)
        if lb is None:
            if len(self._lb) > 20000:
                self._lb.clear()
            lb = self._lb[tree] = height_lower_bounds(tree, self.times)
        return lb

    # sampling -----------------------------------------------------------

    def sample_topologies(self, k: int, rng) -> list:
        return [self._topos.get(self.sbn.sample_nested(rng)) for _ in range(k)]

    def eps_size(self, tree: Tree) -> int:
        n = tree.n_taxa
        return (n - 1) + self.gamma_mu.size + (1 if self.fixed_rate is None else 0)

    def draw_eps(self, tree: Tree, rng, size=None):
        shape = (self.eps_size(tree),) if size is None else (size, self.eps_size(tree))
        return rng.standard_normal(shape)

    def transform(self, tree: Tree, eps):
        """Map noise to ``(HeightTransform, gamma, rate)`` for a batch."""
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        n_in = tree.n_taxa - 1
        g = self.gamma_mu.size
        mu, sigma = self.height_params(tree)
        alpha = np.zeros((eps.shape[0], tree.n_nodes))
        alpha[:, list(tree.internal_nodes)] = mu + sigma * eps[:, :n_in]
        heights = HeightTransform(tree, self.lower_bounds(tree), alpha)
        gamma = self.gamma_mu + np.exp(self.gamma_log_sigma) * eps[:, n_in:n_in + g]
        if self.fixed_rate is None:
            rate = np.exp(self.rate_mu[0] + np.exp(self.rate_log_sigma[0]) * eps[:, -1])
        else:
            rate = np.full(eps.shape[0], self.fixed_rate)
        return heights, gamma, rate

    # evaluation ---------------------------------------------------------

    def evaluate(self, tree: Tree, eps, beta: float = 1.0, grad: bool = True,
                 need_tau: bool = True) -> Evaluation:
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        b = eps.shape[0]
        n_in = tree.n_taxa - 1
        g = self.gamma_mu.size
        inner = list(tree.internal_nodes)
        mu_a, sig_a = self.height_params(tree)
        ht, gamma, rate = self.transform(tree, eps)
        t = ht.heights
        q = clock_branch_lengths(t, rate, tree)
        if grad:
            log_lik, gq = grad_branch_lengths(tree, q, self.patterns, self.subst)
        else:
            log_lik = log_likelihood(tree, q, self.patterns, self.subst)

        coal = np.zeros(b)
        d_t_coal = np.zeros((b, tree.n_nodes))
        d_gamma = np.zeros((b, g))
        pop = np.zeros(b)
        for i in range(b):
            val, dt, dg = coalescent_log_density(t[i], tree, gamma[i], grad=True)
            coal[i] = val
            d_t_coal[i] = dt
            pv, pg = self.pop_prior.log_prior(gamma[i])
            pop[i] = pv
            d_gamma[i] = dg + pg

        e_a = eps[:, :n_in]
        e_g = eps[:, n_in:n_in + g]
        sig_g = np.exp(self.gamma_log_sigma)
        log_q_alpha = (-0.5 * e_a * e_a - np.log(sig_a) - 0.5 * LOG_2PI).sum(axis=1)
        log_q_gamma = (-0.5 * e_g * e_g - np.log(sig_g) - 0.5 * LOG_2PI).sum(axis=1)
        log_q_cont = log_q_alpha - ht.log_jacobian + log_q_gamma
        log_prior_r = np.zeros(b)
        d_r = np.zeros(b)
        if self.fixed_rate is None:
            e_r = eps[:, -1]
            sig_r = math.exp(self.rate_log_sigma[0])
            log_q_cont += -np.log(rate) - math.log(sig_r) - 0.5 * LOG_2PI - 0.5 * e_r * e_r
            for i in range(b):
                log_prior_r[i], d_r[i] = self.rate_prior.log_prior(rate[i])
        log_weight = beta * log_lik + coal + pop + log_prior_r - log_q_cont

        score = None
        if grad:
            log_q_tau, score = self.sbn.grad_log_rooted(tree)
        elif need_tau:
            log_q_tau = self.sbn.log_rooted_prob(tree)
        else:
            log_q_tau = 0.0
        log_f = log_weight + self.log_prior_tau - log_q_tau
        ev = Evaluation(tree, log_f, log_weight, log_lik, log_q_tau,
                        self.log_prior_tau, score)
        if not grad:
            return ev

        edges = list(tree.edges)
        parents = [tree.parent[v] for v in edges]
        gl = beta * gq[:, edges]                       # d(beta logL)/dq
        g_t = d_t_coal.copy()
        np.add.at(g_t, (slice(None), parents), gl * rate[:, None])
        np.add.at(g_t, (slice(None), edges), -gl * rate[:, None])
        d_alpha = ht.backward(g_t, jac_weight=1.0)[:, inner]
        slots = self.height_slots(tree)
        ev.grads = {
            "height_mu": _scatter_rows(self.n_slots, slots, d_alpha),
            "height_log_sigma": _scatter_rows(self.n_slots, slots,
                                              d_alpha * sig_a * e_a + 1.0),
            "gamma_mu": d_gamma,
            "gamma_log_sigma": d_gamma * sig_g * e_g + 1.0,
        }
        if self.fixed_rate is None:
            dlr = (beta * (gq[:, edges] * (t[:, parents] - t[:, edges])).sum(axis=1)
                   + d_r) * rate + 1.0
            ev.grads["rate_mu"] = dlr[:, None]
            ev.grads["rate_log_sigma"] = (dlr * sig_r * e_r + 1.0)[:, None]
        return ev

    def covers(self, tree: Tree) -> bool:
        try:
            self.height_slots(tree)
        except KeyError:
            return False
        return True

    def config(self) -> dict:
        return {"kind": self.kind, "psp": self.psp, "coalescent": self.coalescent,
                "clock_rate": self.fixed_rate, "times": self.times.tolist()}
