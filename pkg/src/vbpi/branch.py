"""Lognormal branch-length approximations amortized over a subsplit support.

Every edge of an unrooted tree reads its location and log scale as a sum of
parameters: the slot of its split, plus (in PSP mode) the slots of its
primary subsplit pairs.  Parameter arrays share the SBN layout, so slot ``i``
of ``mu`` belongs to the same root subsplit or PCSP as ``phi[i]``.
"""

import numpy as np

from .sbn import SubsplitSupport
from .taxa import PCSP
from .tree import Tree

LOG_2PI = np.log(2.0 * np.pi)
INIT_MU = np.log(0.1)
INIT_LOG_SIGMA = np.log(0.5)


def lognormal_logpdf(q, mu, sigma):
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("lognormal density needs positive values")
    z = (np.log(q) - mu) / sigma
    return -np.log(q) - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * z * z


class BranchModel:
    """Per-edge lognormal distributions keyed by splits (and PSPs)."""

    def __init__(self, support: SubsplitSupport, psp: bool = False):
        self.support = support
        self.psp = psp
        n = support.n_params
        self.mu = np.zeros(n)
        self.log_sigma = np.zeros(n)
        self.mu[:support.n_root] = INIT_MU
        self.log_sigma[:support.n_root] = INIT_LOG_SIGMA
        self._cache = {}

    @property
    def pad(self) -> int:
        return self.support.n_params

    def edge_slots(self, tree: Tree) -> np.ndarray:
        """Parameter slots summed for each edge; shape ``(len(edges), 3)``.

        Unused entries point at a padding slot holding zero.
        """
        key = tree.topology_key
        hit = self._cache.get(key)
        if hit is not None and hit[0] == tree:
            return hit[1]
        s = self.support
        rows = []
        for v in tree.edges:
            split = tree.split(v)
            i = s.root_index.get(split)
            if i is None:
                raise KeyError(f"split {s.taxa.subsplit_str(split)} not in support")
            row = [i, self.pad, self.pad]
            if self.psp:
                row[1] = s.pcsp_index.get(PCSP(split, tree.down_subsplit(v)), self.pad)
                if not tree.is_leaf(v):
                    row[2] = s.pcsp_index.get(PCSP(split, tree.subsplit(v)), self.pad)
            rows.append(row)
        slots = np.array(rows, dtype=np.int64)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = (tree, slots)
        return slots

    def edge_params(self, tree: Tree):
        """``(mu, sigma)`` per edge, in ``tree.edges`` order."""
        slots = self.edge_slots(tree)
        mu = np.append(self.mu, 0.0)[slots].sum(axis=1)
        ls = np.append(self.log_sigma, 0.0)[slots].sum(axis=1)
        return mu, np.exp(ls)

    def lengths(self, tree: Tree, eps):
        """Branch lengths from standard-normal draws ``eps`` (``(..., E)``)."""
        mu, sigma = self.edge_params(tree)
        eps = np.asarray(eps, dtype=float)
        q = np.zeros(eps.shape[:-1] + (tree.n_nodes,))
        q[..., list(tree.edges)] = np.exp(mu + sigma * eps)
        return q

    def sample(self, tree: Tree, rng, size=None):
        """Draw ``(q, eps)``; ``size`` adds a leading batch dimension."""
        shape = (len(tree.edges),) if size is None else (size, len(tree.edges))
        eps = rng.standard_normal(shape)
        return self.lengths(tree, eps), eps

    def log_density(self, tree: Tree, q) -> np.ndarray:
        mu, sigma = self.edge_params(tree)
        q = np.asarray(q, dtype=float)[..., list(tree.edges)]
        return lognormal_logpdf(q, mu, sigma).sum(axis=-1)

    def log_density_eps(self, tree: Tree, eps) -> np.ndarray:
        """Log density of ``q(eps)`` without forming ``q``."""
        mu, sigma = self.edge_params(tree)
        eps = np.asarray(eps, dtype=float)
        log_q = mu + sigma * eps
        return (-log_q - np.log(sigma) - 0.5 * LOG_2PI - 0.5 * eps * eps).sum(axis=-1)

    def grad_log_density(self, tree: Tree, q):
        """Gradient of ``log_density`` at fixed ``q`` in (mu, log_sigma)."""
        mu, sigma = self.edge_params(tree)
        q = np.asarray(q, dtype=float)[list(tree.edges)]
        z = (np.log(q) - mu) / sigma
        return self.scatter(tree, z / sigma, z * z - 1.0)

    def scatter(self, tree: Tree, d_mu_edge, d_ls_edge):
        """Spread per-edge derivatives onto parameter slots."""
        slots = self.edge_slots(tree)
        g_mu = np.zeros(self.pad + 1)
        g_ls = np.zeros(self.pad + 1)
        for k in range(slots.shape[1]):
            np.add.at(g_mu, slots[:, k], d_mu_edge)
            np.add.at(g_ls, slots[:, k], d_ls_edge)
        return g_mu[:-1], g_ls[:-1]

    def reparam_grad(self, tree: Tree, eps, dlogp_dq):
        """Pathwise gradient of ``log p(q) - log Q(q)`` at ``q = q(eps)``.

        ``dlogp_dq`` is the derivative of the target log density in the edge
        lengths (``tree.edges`` order).  Returns ``(d_mu, d_log_sigma)``.
        """
        mu, sigma = self.edge_params(tree)
        q = np.exp(mu + sigma * eps)
        d_logq = dlogp_dq * q + 1.0           # d/d(log q), incl. entropy term
        return self.scatter(tree, d_logq, d_logq * sigma * eps + 1.0)

    def param_dict(self) -> dict:
        t = self.support.taxa
        out = {}
        for ss, i in self.support.root_index.items():
            out[t.subsplit_str(ss)] = (float(self.mu[i]), float(self.log_sigma[i]))
        if self.psp:
            for p, i in self.support.pcsp_index.items():
                out[t.pcsp_str(p)] = (float(self.mu[i]), float(self.log_sigma[i]))
        return out
