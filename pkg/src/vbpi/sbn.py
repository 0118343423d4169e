"""Subsplit Bayesian networks over rooted and unrooted topologies.

Parameters live in one flat vector laid out as
``[root subsplits | PCSP children of set 0 | PCSP children of set 1 | ...]``,
where a conditioning set is a ``(parent subsplit, child clade)`` pair.  The
root subsplits form set 0.  Every set's children are contiguous, so the
log-softmax is a segmented reduction.
"""

import json

import numpy as np
from scipy.special import logsumexp

from .taxa import PCSP, Subsplit, TaxonSet, popcount
from .tree import Tree

FORMAT_VERSION = 1


class SubsplitSupport:
    """Root subsplits, parent-child subsplit pairs and clades of a support.

    ``children`` maps ``(parent, clade)`` to the child subsplits allowed on
    the ``clade`` side of ``parent``.  ``clades`` (internal non-root clades)
    and ``subsplits`` are only filled for rooted supports, where they key
    node-height parameters.
    """

    def __init__(self, taxa: TaxonSet, root_subsplits, children, rooted=False,
                 clades=(), subsplits=()):
        self.taxa = taxa
        self.rooted = rooted
        self.root_subsplits = sorted(set(root_subsplits), reverse=True)
        self.children = {}
        for key in sorted(children, reverse=True):
            parent, clade = key
            if clade not in (parent.y, parent.z):
                raise ValueError("conditioning clade is not a side of its parent")
            kids = sorted(set(children[key]), reverse=True)
            for c in kids:
                if c.clade != clade:
                    raise ValueError("child subsplit incompatible with parent side")
            if kids:
                self.children[key] = kids
        self.clades = sorted(set(clades), reverse=True)
        self.subsplits = sorted(set(subsplits), reverse=True)
        self._index()

    def _index(self):
        self.root_index = {s: i for i, s in enumerate(self.root_subsplits)}
        self.pcsp_index = {}
        self.set_keys = [None]
        starts = [0]
        i = len(self.root_subsplits)
        for key, kids in self.children.items():
            starts.append(i)
            self.set_keys.append(key)
            for c in kids:
                self.pcsp_index[PCSP(key[0], c)] = i
                i += 1
        self.n_params = i
        self.set_starts = np.array(starts, dtype=np.int64)
        sizes = np.diff(np.append(self.set_starts, self.n_params))
        self.set_of = np.repeat(np.arange(len(starts)), sizes)
        self.set_index = {k: j for j, k in enumerate(self.set_keys) if k is not None}
        self.pcsps = [None] * (self.n_params - len(self.root_subsplits))
        for p, j in self.pcsp_index.items():
            self.pcsps[j - len(self.root_subsplits)] = p
        self.clade_index = {c: i for i, c in enumerate(self.clades)}
        self.subsplit_index = {s: i for i, s in enumerate(self.subsplits)}

    @property
    def n_root(self) -> int:
        return len(self.root_subsplits)

    @property
    def n_pcsp(self) -> int:
        return len(self.pcsps)

    def __eq__(self, other):
        return (isinstance(other, SubsplitSupport) and self.taxa == other.taxa
                and self.rooted == other.rooted
                and self.root_subsplits == other.root_subsplits
                and self.children == other.children
                and self.clades == other.clades
                and self.subsplits == other.subsplits)

    def summary(self) -> dict:
        return {"root_subsplits": self.n_root, "pcsps": self.n_pcsp,
                "clades": len(self.clades)}

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        t = self.taxa
        kids = []
        for (parent, clade), cs in self.children.items():
            kids.append({"parent": t.subsplit_str(parent),
                         "side": "y" if clade == parent.y else "z",
                         "children": [t.subsplit_str(c) for c in cs]})
        return {
            "format_version": FORMAT_VERSION,
            "taxa": list(t.names),
            "mode": "rooted" if self.rooted else "unrooted",
            "root_subsplits": [t.subsplit_str(s) for s in self.root_subsplits],
            "children": kids,
            "clades": [t.clade_str(c) for c in self.clades],
            "subsplits": [t.subsplit_str(s) for s in self.subsplits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubsplitSupport":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported support format {d.get('format_version')!r}")
        t = TaxonSet(d["taxa"])
        children = {}
        for item in d["children"]:
            parent = t.parse_subsplit(item["parent"])
            clade = parent.y if item["side"] == "y" else parent.z
            children[(parent, clade)] = [t.parse_subsplit(c) for c in item["children"]]
        return cls(t, [t.parse_subsplit(s) for s in d["root_subsplits"]], children,
                   rooted=d["mode"] == "rooted",
                   clades=[t.parse_clade(c) for c in d.get("clades", [])],
                   subsplits=[t.parse_subsplit(s) for s in d.get("subsplits", [])])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "SubsplitSupport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _log_softmax(phi, starts):
    m = np.maximum.reduceat(phi, starts)
    sizes = np.diff(np.append(starts, len(phi)))
    shifted = phi - np.repeat(m, sizes)
    lse = np.log(np.add.reduceat(np.exp(shifted), starts))
    return shifted - np.repeat(lse, sizes)


class SbnModel:
    """Softmax-parameterized SBN over a :class:`SubsplitSupport`."""

    def __init__(self, support: SubsplitSupport, phi=None):
        self.support = support
        self.phi = np.zeros(support.n_params) if phi is None else np.asarray(phi, float)

    @property
    def phi(self):
        return self._phi

    @phi.setter
    def phi(self, value):
        value = np.asarray(value, dtype=float)
        if value.shape != (self.support.n_params,):
            raise ValueError("parameter vector does not match the support")
        self._phi = value
        self._logp = None
        self._cum = None

    @property
    def log_cpd(self) -> np.ndarray:
        """Log-probability per parameter slot, with ``-inf`` appended.

        Index ``n_params`` therefore reads as "not in support".
        """
        if self._logp is None:
            s = self.support
            lp = _log_softmax(self._phi, s.set_starts) if s.n_params else np.zeros(0)
            self._logp = np.append(lp, -np.inf)
        return self._logp

    @property
    def missing(self) -> int:
        return self.support.n_params

    # CPDs ---------------------------------------------------------------

    def cpd_root(self) -> np.ndarray:
        return np.exp(self.log_cpd[:self.support.n_root])

    def cpd_children(self, parent: Subsplit, side) -> np.ndarray:
        """CPD over children of ``parent`` on ``side`` ('y', 'z' or a clade)."""
        clade = parent.y if side == "y" else parent.z if side == "z" else side
        if popcount(clade) == 1:
            return np.ones(1)
        j = self.support.set_index.get((parent, clade))
        if j is None:
            raise KeyError("conditioning set not in support")
        start = self.support.set_starts[j]
        stop = start + len(self.support.children[(parent, clade)])
        return np.exp(self.log_cpd[start:stop])

    def _root_idx(self, s):
        return self.support.root_index.get(s, self.missing)

    def _pcsp_idx(self, parent, child):
        return self.support.pcsp_index.get(PCSP(parent, child), self.missing)

    # rooted trees ---------------------------------------------------------

    def _rooted_factors(self, tree: Tree) -> list:
        idx = [self._root_idx(tree.subsplit(tree.root))]
        for v in tree.preorder[1:]:
            if not tree.is_leaf(v):
                idx.append(self._pcsp_idx(tree.subsplit(tree.parent[v]), tree.subsplit(v)))
        return idx

    def log_rooted_prob(self, tree: Tree) -> float:
        """Log SBN probability of a rooted topology (``-inf`` if unsupported)."""
        if not tree.rooted:
            raise ValueError("expected a rooted tree")
        return float(self.log_cpd[self._rooted_factors(tree)].sum())

    def rooted_prob(self, tree: Tree) -> float:
        return float(np.exp(self.log_rooted_prob(tree)))

    def _grad_from_coef(self, coef):
        s = self.support
        seg = np.add.reduceat(coef, s.set_starts) if s.n_params else coef
        probs = np.exp(self.log_cpd[:-1])
        return coef - seg[s.set_of] * probs

    def grad_log_rooted(self, tree: Tree):
        """Return ``(log_prob, gradient)`` of the log rooted probability."""
        idx = self._rooted_factors(tree)
        lp = float(self.log_cpd[idx].sum())
        if not np.isfinite(lp):
            raise ValueError("tree is not covered by the support")
        coef = np.zeros(self.support.n_params)
        np.add.at(coef, idx, 1.0)
        return lp, self._grad_from_coef(coef)

    # unrooted trees: two-pass ---------------------------------------------

    def _two_pass(self, tree: Tree):
        """Per-tree index tables and messages for the two-pass algorithm."""
        if tree.rooted:
            raise ValueError("expected an unrooted tree")
        lc = self.log_cpd
        n = tree.n_nodes
        r = tree.root
        up_ss = [None] * n
        down_ss = [None] * n
        for v in tree.internal_nodes:
            if v != r:
                up_ss[v] = tree.subsplit(v)
        for v in tree.edges:
            down_ss[v] = tree.down_subsplit(v)

        up_child = {}          # internal c with non-root parent: (up_ss[c] | up_ss[p])
        mup = np.zeros(n)
        for v in tree.postorder:
            if tree.is_leaf(v) or v == r:
                continue
            for c in tree.children[v]:
                if not tree.is_leaf(c):
                    i = self._pcsp_idx(up_ss[v], up_ss[c])
                    up_child[c] = i
                    mup[v] += lc[i] + mup[c]

        sib = {}               # (v, s): (up_ss[s] | down_ss[v])
        down_par = {}          # v with non-root parent: (down_ss[p] | down_ss[v])
        mdown = np.zeros(n)
        for p in tree.preorder:
            if tree.is_leaf(p):
                continue
            for v in tree.children[p]:
                acc = 0.0
                for s in tree.children[p]:
                    if s != v and not tree.is_leaf(s):
                        i = self._pcsp_idx(down_ss[v], up_ss[s])
                        sib[(v, s)] = i
                        acc += lc[i] + mup[s]
                if p != r:
                    i = self._pcsp_idx(down_ss[v], down_ss[p])
                    down_par[v] = i
                    acc += lc[i] + mdown[p]
                mdown[v] = acc

        edges = tree.edges
        log_edge = np.full(n, -np.inf)
        primary = {}
        for v in edges:
            split = tree.split(v)
            ids = [self._root_idx(split), self._pcsp_idx(split, down_ss[v])]
            if not tree.is_leaf(v):
                ids.append(self._pcsp_idx(split, up_ss[v]))
            primary[v] = ids
            log_edge[v] = lc[ids].sum() + mup[v] + mdown[v]
        return log_edge, primary, up_child, sib, down_par

    def log_unrooted_prob(self, tree: Tree, return_edges: bool = False):
        """Log unrooted SBN probability via the two-pass algorithm.

        With ``return_edges`` also returns the log probability of every
        rooting, indexed by the node below the rooting edge (root slot -inf).
        """
        log_edge = self._two_pass(tree)[0]
        lp = float(logsumexp(log_edge[list(tree.edges)]))
        return (lp, log_edge) if return_edges else lp

    def unrooted_prob(self, tree: Tree) -> float:
        return float(np.exp(self.log_unrooted_prob(tree)))

    def log_unrooted_prob_naive(self, tree: Tree) -> float:
        """Sum over all rootings, each evaluated from scratch (quadratic)."""
        from .tree import root_at_edge
        lps = [self.log_rooted_prob(root_at_edge(tree, v)) for v in tree.edges]
        return float(logsumexp(lps))

    def unrooted_prob_naive(self, tree: Tree) -> float:
        return float(np.exp(self.log_unrooted_prob_naive(tree)))

    def grad_log_unrooted(self, tree: Tree):
        """Return ``(log_prob, gradient)`` of the log unrooted probability.

        Coefficients per factor are accumulated from the normalized rooting
        weights and their subtree sums, then turned into a log-softmax
        gradient in one pass over the parameter vector.
        """
        log_edge, primary, up_child, sib, down_par = self._two_pass(tree)
        edges = tree.edges
        lp = float(logsumexp(log_edge[list(edges)]))
        if not np.isfinite(lp):
            raise ValueError("tree is not covered by the support")
        w = np.zeros(tree.n_nodes)
        w[list(edges)] = np.exp(log_edge[list(edges)] - lp)
        cum = w.copy()
        for v in edges:
            cum[tree.parent[v]] += cum[v]

        coef = np.zeros(self.support.n_params + 1)
        for v in edges:
            for i in primary[v]:
                coef[i] += w[v]
        for c, i in up_child.items():
            p = tree.parent[c]
            coef[i] += 1.0 - cum[p] + w[p]
        for (v, _), i in sib.items():
            coef[i] += cum[v]
        for v, i in down_par.items():
            coef[i] += cum[v]
        return lp, self._grad_from_coef(coef[:-1])

    def grad_log_unrooted_naive(self, tree: Tree):
        """Weighted sum of rooted gradients over all rootings (quadratic)."""
        from .tree import root_at_edge
        rooted = [root_at_edge(tree, v) for v in tree.edges]
        lps = np.array([self.log_rooted_prob(t) for t in rooted])
        lp = float(logsumexp(lps))
        grad = np.zeros(self.support.n_params)
        for t, l in zip(rooted, lps):
            if np.isfinite(l):
                grad += np.exp(l - lp) * self.grad_log_rooted(t)[1]
        return lp, grad

    # sampling -------------------------------------------------------------

    def _cumulative(self):
        if self._cum is None:
            p = np.exp(self.log_cpd[:-1])
            s = self.support
            cum = np.empty_like(p)
            bounds = np.append(s.set_starts, s.n_params)
            for a, b in zip(bounds[:-1], bounds[1:]):
                cum[a:b] = np.cumsum(p[a:b])
                cum[b - 1] = np.inf
            self._cum = cum
        return self._cum

    def _draw(self, start, stop, u):
        cum = self._cumulative()
        return start + int(np.searchsorted(cum[start:stop], u, side="right"))

    def sample_nested(self, rng):
        """Ancestral sampling; returns nested tuples of taxon indices."""
        s = self.support
        if not s.root_subsplits:
            raise ValueError("empty support")
        taxa = s.taxa
        root = s.root_subsplits[self._draw(0, s.n_root, rng.random())]

        def grow(parent, clade):
            if popcount(clade) == 1:
                return taxa.first_taxon(clade)
            kids = s.children.get((parent, clade))
            if kids is None:
                raise ValueError("support is missing a conditioning set")
            start = s.set_starts[s.set_index[(parent, clade)]]
            child = kids[self._draw(start, start + len(kids), rng.random()) - start]
            return expand(child)

        def expand(ss):
            a, b = grow(ss, ss.y), grow(ss, ss.z)
            return (a, b) if taxa.first_taxon(ss.y) < taxa.first_taxon(ss.z) else (b, a)

        return expand(root)

    def sample_rooted(self, rng) -> Tree:
        return Tree.from_nested(self.support.taxa, self.sample_nested(rng), rooted=True)

    def sample_unrooted(self, rng) -> Tree:
        return Tree.from_nested(self.support.taxa, self.sample_nested(rng), rooted=False)

    # convenience ------------------------------------------------------------

    def log_prob(self, tree: Tree) -> float:
        return self.log_rooted_prob(tree) if tree.rooted else self.log_unrooted_prob(tree)

    def grad_log_prob(self, tree: Tree):
        return self.grad_log_rooted(tree) if tree.rooted else self.grad_log_unrooted(tree)

    def param_dict(self) -> dict:
        t = self.support.taxa
        root = {t.subsplit_str(ss): float(self.phi[i])
                for ss, i in self.support.root_index.items()}
        pcsp = {t.pcsp_str(p): float(self.phi[i])
                for p, i in self.support.pcsp_index.items()}
        return {"root": root, "pcsp": pcsp}

