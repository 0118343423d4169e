"""Substitution models, pruning likelihood and branch-length gradients.

Branch lengths are arrays indexed by node id (see :mod:`vbpi.tree`).  Every
function accepts either one length vector of shape ``(n_nodes,)`` or a batch
of shape ``(B, n_nodes)`` evaluated on the same topology.
"""

import numpy as np

from .seqio import Alignment, make_alignment
from .taxa import TaxonSet
from .tree import Tree, random_topology


class SubstitutionModel:
    """Continuous-time Markov model on the four nucleotides."""

    stationary = np.full(4, 0.25)
    reversible = True

    def transition(self, t):
        """Transition matrices ``P(t)`` with shape ``t.shape + (4, 4)``."""
        raise NotImplementedError

    def transition_derivative(self, t):
        raise NotImplementedError


class JC69(SubstitutionModel):
    stationary = np.full(4, 0.25)
    reversible = True

    def transition(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("branch lengths must be nonnegative")
        e = np.exp(-4.0 * t / 3.0)[..., None, None]
        return 0.25 + (np.eye(4) - 0.25) * e

    def transition_derivative(self, t):
        t = np.asarray(t, dtype=float)
        e = np.exp(-4.0 * t / 3.0)[..., None, None]
        return -4.0 / 3.0 * (np.eye(4) - 0.25) * e


def jc69_transition(t):
    return JC69().transition(t)


def _as_lengths(tree: Tree, lengths):
    if isinstance(lengths, dict):
        try:
            lengths = tree.lengths_from_dict(lengths)
        except KeyError as exc:
            raise ValueError(f"missing branch length for edge {exc}") from None
    q = np.asarray(lengths, dtype=float)
    if q.shape[-1] != tree.n_nodes:
        raise ValueError(f"expected {tree.n_nodes} branch lengths, got {q.shape[-1]}")
    edges = list(tree.edges)
    qe = q[..., edges]
    if np.any(np.isnan(qe)):
        raise ValueError("missing branch length")
    if np.any(qe < 0):
        raise ValueError("negative branch length")
    return q


def _check_model(tree, model):
    if not tree.rooted and not model.reversible:
        raise ValueError("unrooted trees need a time-reversible model")


def _pruning(tree, q, patterns, model, keep=False):
    """Postorder sweep.  Returns root partials, log scalers and node tables."""
    batch = q.shape[:-1]
    n_pat = patterns.n_patterns
    trans = model.transition(q)                     # (..., n_nodes, 4, 4)
    partial = [None] * tree.n_nodes
    msg = [None] * tree.n_nodes
    log_scale = np.zeros(batch + (n_pat,))
    for v in tree.postorder:
        if tree.is_leaf(v):
            lv = np.broadcast_to(patterns.partials[:, v, :], batch + (n_pat, 4))
        else:
            kids = tree.children[v]
            lv = msg[kids[0]]
            for c in kids[1:]:
                lv = lv * msg[c]
            scale = lv.max(axis=-1)
            scale = np.where(scale > 0, scale, 1.0)
            lv = lv / scale[..., None]
            log_scale += np.log(scale)
        partial[v] = lv
        if v != tree.root:
            # msg[v][a] = sum_b P_ab(q_v) L_v[b]
            msg[v] = np.einsum("...ab,...pb->...pa", trans[..., v, :, :], lv)
    return partial, msg, log_scale, trans


def _site_log_lik(tree, partial, log_scale, model):
    root_lik = partial[tree.root] @ model.stationary
    with np.errstate(divide="ignore"):
        return np.log(root_lik) + log_scale


def log_likelihood(tree: Tree, lengths, patterns, model=None):
    """Log-likelihood of the pattern table; scalar or shape ``(B,)``."""
    model = model or JC69()
    _check_model(tree, model)
    q = _as_lengths(tree, lengths)
    partial, _, log_scale, _ = _pruning(tree, q, patterns, model)
    return _site_log_lik(tree, partial, log_scale, model) @ patterns.weights


def site_log_likelihoods(tree: Tree, lengths, patterns, model=None):
    model = model or JC69()
    _check_model(tree, model)
    q = _as_lengths(tree, lengths)
    partial, _, log_scale, _ = _pruning(tree, q, patterns, model)
    return _site_log_lik(tree, partial, log_scale, model)


def grad_branch_lengths(tree: Tree, lengths, patterns, model=None):
    """Log-likelihood and its gradient in every branch length.

    Returns ``(log_lik, grad)`` with ``grad`` shaped like ``lengths`` (the root
    slot is zero).  One postorder and one preorder sweep.
    """
    model = model or JC69()
    _check_model(tree, model)
    q = _as_lengths(tree, lengths)
    partial, msg, log_scale, trans = _pruning(tree, q, patterns, model)
    log_lik = _site_log_lik(tree, partial, log_scale, model) @ patterns.weights
    dtrans = model.transition_derivative(q)
    grad = np.zeros(q.shape)
    n_pat = patterns.n_patterns
    batch = q.shape[:-1]

    # down[v]: outside vector over the states of node v, excluding v's subtree
    down = [None] * tree.n_nodes
    down[tree.root] = np.broadcast_to(model.stationary, batch + (n_pat, 4))
    for p in tree.preorder:
        if tree.is_leaf(p):
            continue
        kids = tree.children[p]
        for v in kids:
            u = down[p]
            for s in kids:
                if s != v:
                    u = u * msg[s]
            u = u / u.max(axis=-1, keepdims=True)
            num = np.einsum("...pa,...ab,...pb->...p", u, dtrans[..., v, :, :], partial[v])
            den = np.einsum("...pa,...pa->...p", u, msg[v])
            grad[..., v] = (num / den) @ patterns.weights
            if not tree.is_leaf(v):
                # state at v given state a at p: sum_a u[a] P_ab
                down[v] = np.einsum("...pa,...ab->...pb", u, trans[..., v, :, :])
    return log_lik, grad


def simulate_alignment(tree: Tree, lengths, model=None, m: int = 100, seed=0) -> Alignment:
    """Simulate ``m`` i.i.d. sites down the tree (root state from stationary)."""
    model = model or JC69()
    rng = np.random.default_rng(seed)
    q = _as_lengths(tree, lengths)
    trans = model.transition(q)
    states = np.zeros((tree.n_nodes, m), dtype=np.int64)
    states[tree.root] = rng.choice(4, size=m, p=model.stationary)
    for v in tree.preorder[1:]:
        rows = np.cumsum(trans[v], axis=1)[states[tree.parent[v]]]  # (m, 4)
        u = rng.random(m)
        states[v] = np.minimum((u[:, None] > rows).sum(axis=1), 3)
    bases = np.array(list("ACGT"))
    seqs = {tree.taxa.names[i]: "".join(bases[states[i]]) for i in range(tree.n_taxa)}
    return make_alignment(seqs)


def simulate_dataset(n_taxa: int, n_sites: int, seed=0, branch_rate: float = 10.0,
                     model=None):
    """Random unrooted topology, exponential branch lengths, simulated sites.

    Returns ``(tree, lengths, alignment)``.  Topology, lengths and sites use
    independent substreams of ``seed``.
    """
    s_topo, s_len, s_sites = np.random.SeedSequence(seed).spawn(3)
    taxa = TaxonSet.default(n_taxa)
    tree = random_topology(taxa, np.random.default_rng(s_topo))
    lengths = np.zeros(tree.n_nodes)
    edges = list(tree.edges)
    lengths[edges] = np.random.default_rng(s_len).exponential(1.0 / branch_rate, len(edges))
    aln = simulate_alignment(tree, lengths, model, n_sites, np.random.default_rng(s_sites))
    return tree, lengths, aln
