"""Building subsplit supports from candidate trees, and coverage metrics."""

import numpy as np

from .sbn import SbnModel, SubsplitSupport
from .taxa import PCSP
from .tree import Tree, subsplit_decomposition


def _unrooted_items(tree: Tree):
    """Root splits and every PCSP orientation reachable by some rooting."""
    roots = set()
    pcsps = set()
    r = tree.root
    up = {v: tree.subsplit(v) for v in tree.internal_nodes if v != r}
    down = {v: tree.down_subsplit(v) for v in tree.edges}
    for v in tree.edges:
        split = tree.split(v)
        roots.add(split)
        pcsps.add(PCSP(split, down[v]))
        if v in up:
            pcsps.add(PCSP(split, up[v]))
            for c in tree.children[v]:
                if c in up:
                    pcsps.add(PCSP(up[v], up[c]))
        p = tree.parent[v]
        for s in tree.children[p]:
            if s != v and s in up:
                pcsps.add(PCSP(down[v], up[s]))
        if p != r:
            pcsps.add(PCSP(down[v], down[p]))
    return roots, pcsps


def _rooted_items(tree: Tree):
    root, pcsps = subsplit_decomposition(tree)
    clades = {tree.clade[v] for v in tree.internal_nodes if v != tree.root}
    subsplits = {tree.subsplit(v) for v in tree.internal_nodes}
    return {root}, set(pcsps), clades, subsplits


def build_support(trees, rooted: bool | None = None) -> SubsplitSupport:
    """Collect the support of a nonempty collection of trees.

    ``rooted`` defaults to the rootedness of the first tree; all trees must
    share it and the taxon set.
    """
    trees = list(trees)
    if not trees:
        raise ValueError("need at least one tree")
    taxa = trees[0].taxa
    if rooted is None:
        rooted = trees[0].rooted
    roots, pcsps, clades, subsplits = set(), set(), set(), set()
    for t in trees:
        if t.taxa != taxa:
            raise ValueError("trees are over different taxon sets")
        if t.rooted != rooted:
            raise ValueError("mixed rooted and unrooted trees")
        if rooted:
            r, p, c, s = _rooted_items(t)
            clades |= c
            subsplits |= s
        else:
            r, p = _unrooted_items(t)
        roots |= r
        pcsps |= p
    children = {}
    for p in pcsps:
        children.setdefault((p.parent, p.child.clade), []).append(p.child)
    return SubsplitSupport(taxa, roots, children, rooted=rooted,
                           clades=clades, subsplits=subsplits)


def full_support(taxa, rooted: bool) -> SubsplitSupport:
    """Support of every topology on ``taxa`` (enumeration, small N only)."""
    from .tree import enumerate_topologies
    return build_support(enumerate_topologies(taxa, rooted), rooted)


def coverage_report(support: SubsplitSupport, reference=None,
                    truth: SubsplitSupport | None = None) -> dict:
    """Coverage diagnostics of ``support``.

    ``reference`` is a list of ``(tree, probability)``; the covered posterior
    is the reference mass on trees with nonzero probability under an SBN on
    ``support``.  Against ``truth`` reports coverage (recall) and efficiency
    (precision) separately for root subsplits and PCSPs.
    """
    out = {}
    if reference is not None:
        model = SbnModel(support)
        covered = sum(p for t, p in reference if np.isfinite(model.log_prob(t)))
        out["covered_posterior"] = float(covered)
    if truth is not None:
        for name, est, ref in (
            ("root", set(support.root_subsplits), set(truth.root_subsplits)),
            ("pcsp", set(support.pcsp_index), set(truth.pcsp_index)),
        ):
            hit = len(est & ref)
            out[f"{name}_coverage"] = hit / len(ref) if ref else 0.0
            out[f"{name}_efficiency"] = hit / len(est) if est else 0.0
    return out
