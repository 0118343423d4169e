"""Rooted and unrooted binary tree topologies.

A :class:`Tree` is an immutable node table.  Leaves have ids ``0..N-1``
equal to their taxon index; internal nodes are numbered ``N, N+1, ...`` in
postorder, so the root always carries the largest id.  Children are stored
sorted by the smallest taxon index they contain.

Unrooted trees are stored hanging from a degree-3 node.  Trees built by this
module use the internal node adjacent to taxon 0 for that role, which makes
node numbering and traversal order reproducible.

Every non-root node ``v`` owns the edge to its parent, so branch lengths are
arrays indexed by node id (the root entry is unused).
"""

import math

import numpy as np

from .taxa import PCSP, Subsplit, TaxonSet, make_subsplit


class Tree:
    __slots__ = ("taxa", "rooted", "root", "parent", "children", "clade",
                 "postorder", "_key")

    def __init__(self, taxa, parent, children, clade, postorder, rooted):
        self.taxa = taxa
        self.rooted = rooted
        self.parent = tuple(parent)
        self.children = tuple(tuple(c) for c in children)
        self.clade = tuple(clade)
        self.postorder = tuple(postorder)
        self.root = self.postorder[-1]
        self._key = None

    # basic structure ------------------------------------------------------

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def edges(self) -> tuple:
        """Non-root node ids; each stands for the edge to its parent."""
        return self.postorder[:-1]

    @property
    def preorder(self) -> tuple:
        return self.postorder[::-1]

    @property
    def internal_nodes(self) -> tuple:
        """Internal node ids in postorder (root last)."""
        return tuple(range(self.n_taxa, self.n_nodes))

    def is_leaf(self, v: int) -> bool:
        return v < len(self.taxa)

    # subsplits --------------------------------------------------------------

    def subsplit(self, v: int) -> Subsplit:
        """Subsplit at internal node ``v`` looking away from its parent."""
        a, b = self.children[v]
        return make_subsplit(self.clade[a], self.clade[b])

    def split(self, v: int) -> Subsplit:
        """Bipartition of the taxa induced by the edge above ``v``."""
        c = self.clade[v]
        return make_subsplit(c, self.taxa.full ^ c)

    def down_subsplit(self, v: int) -> Subsplit:
        """Subsplit at ``parent[v]`` looking away from ``v`` (unrooted trees)."""
        p = self.parent[v]
        sides = [self.clade[s] for s in self.children[p] if s != v]
        if p != self.root:
            sides.append(self.taxa.full ^ self.clade[p])
        if len(sides) != 2:
            raise ValueError("down_subsplit needs an unrooted tree")
        return make_subsplit(*sides)

    def edge_key(self, v: int):
        """Canonical edge label: child clade (rooted) or split (unrooted)."""
        return self.clade[v] if self.rooted else self.split(v)

    # identity ---------------------------------------------------------------

    @property
    def topology_key(self) -> frozenset:
        if self._key is None:
            if self.rooted:
                self._key = frozenset(self.clade[self.n_taxa:])
            else:
                self._key = frozenset(self.split(v) for v in self.edges)
        return self._key

    def __eq__(self, other):
        return (isinstance(other, Tree) and self.rooted == other.rooted
                and self.taxa == other.taxa
                and self.topology_key == other.topology_key)

    def __hash__(self):
        return hash((self.rooted, self.topology_key))

    def __repr__(self):
        kind = "rooted" if self.rooted else "unrooted"
        return f"Tree({kind}, {self.newick()!r})"

    # branch length helpers --------------------------------------------------

    def lengths_to_dict(self, lengths) -> dict:
        return {self.edge_key(v): float(lengths[v]) for v in self.edges}

    def lengths_from_dict(self, mapping) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        for v in self.edges:
            out[v] = mapping[self.edge_key(v)]
        return out

    def newick(self, lengths=None) -> str:
        from .newick import write_newick
        return write_newick(self, lengths)

    # construction -----------------------------------------------------------

    @classmethod
    def from_nested(cls, taxa: TaxonSet, nested, rooted: bool = True) -> "Tree":
        """Build from nested tuples of taxon indices, e.g. ``((0, 1), (2, 3))``."""
        adj = {}
        counter = [len(taxa)]

        def walk(t):
            if isinstance(t, (int, np.integer)):
                adj.setdefault(int(t), [])
                return int(t)
            node = counter[0]
            counter[0] += 1
            adj[node] = []
            for sub in t:
                c = walk(sub)
                adj[node].append(c)
                adj[c].append(node)
            return node

        top = walk(nested)
        if not rooted and len(adj[top]) == 2:
            a, b = adj.pop(top)
            adj[a][adj[a].index(top)] = b
            adj[b][adj[b].index(top)] = a
        start = top if rooted else _unrooted_start(adj)
        return from_adjacency(taxa, adj, start, rooted)[0]

    def to_nested(self, v=None):
        v = self.root if v is None else v
        if self.is_leaf(v):
            return v
        return tuple(self.to_nested(c) for c in self.children[v])


def _unrooted_start(adj) -> int:
    (start,) = adj[0]
    return start


def from_adjacency(taxa: TaxonSet, adj, start, rooted, edge_length=None):
    """Hang the tree described by ``adj`` from ``start``.

    ``adj`` maps node -> neighbor list; leaves must be the taxon indices
    ``0..N-1``; other node labels are arbitrary hashables.  ``edge_length``
    optionally maps ``frozenset({u, v})`` to a length.  Returns
    ``(tree, lengths)`` where ``lengths`` is None unless lengths were given.
    """
    n = len(taxa)
    leaves = {u for u in adj if isinstance(u, (int, np.integer)) and 0 <= u < n
              and len(adj[u]) <= 1}
    if leaves != set(range(n)) or any(len(adj[u]) != 1 for u in range(n)):
        raise ValueError("leaves do not match the taxon set")

    parent = {start: None}
    order = [start]
    stack = [start]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w == parent[u]:
                continue
            if w in parent:
                raise ValueError("graph contains a cycle")
            parent[w] = u
            order.append(w)
            stack.append(w)
    if len(parent) != len(adj):
        raise ValueError("graph is not connected")

    kids = {u: [] for u in order}
    for u in order[1:]:
        kids[parent[u]].append(u)
    want_root = 2 if rooted else 3
    if len(kids[start]) != want_root:
        raise ValueError(f"root has degree {len(kids[start])}, expected {want_root}")
    for u in order[1:]:
        k = len(kids[u])
        if u in leaves:
            continue
        if k != 2:
            raise ValueError("tree is not binary (polytomy or unary node)")

    clade = {}
    for u in reversed(order):
        if u in leaves:
            clade[u] = taxa.bit(u)
        else:
            c = 0
            for w in kids[u]:
                c |= clade[w]
            clade[u] = c
    for u in order:
        kids[u].sort(key=lambda w: -clade[w].bit_length())

    # renumber: leaves keep taxon ids, internal nodes follow postorder
    new_id = {}
    post = []
    counter = n
    stack = [(start, False)]
    while stack:
        u, done = stack.pop()
        if done or u in leaves:
            if u not in leaves:
                new_id[u] = counter
                counter += 1
            else:
                new_id[u] = int(u)
            post.append(u)
            continue
        stack.append((u, True))
        for w in reversed(kids[u]):
            stack.append((w, False))

    size = len(post)
    par = [-1] * size
    chi = [()] * size
    cla = [0] * size
    for u in post:
        i = new_id[u]
        par[i] = -1 if parent[u] is None else new_id[parent[u]]
        chi[i] = tuple(new_id[w] for w in kids[u])
        cla[i] = clade[u]
    tree = Tree(taxa, par, chi, cla, [new_id[u] for u in post], rooted)

    lengths = None
    if edge_length is not None:
        lengths = np.zeros(size)
        for u in post:
            if parent[u] is not None:
                lengths[new_id[u]] = edge_length[frozenset((u, parent[u]))]
    return tree, lengths


def _adjacency(tree: Tree, lengths=None):
    adj = {v: [] for v in range(tree.n_nodes)}
    elen = {} if lengths is not None else None
    for v in tree.edges:
        p = tree.parent[v]
        adj[v].append(p)
        adj[p].append(v)
        if elen is not None:
            elen[frozenset((v, p))] = float(lengths[v])
    return adj, elen


def subsplit_decomposition(tree: Tree):
    """Root subsplit and PCSPs of a rooted tree (fake subsplits omitted).

    PCSPs are listed in preorder.
    """
    if not tree.rooted:
        raise ValueError("subsplit decomposition needs a rooted tree")
    root = tree.subsplit(tree.root)
    pcsps = [PCSP(tree.subsplit(tree.parent[v]), tree.subsplit(v))
             for v in tree.preorder[1:] if not tree.is_leaf(v)]
    return root, pcsps


def unroot(tree: Tree, lengths=None):
    """Remove the root of a rooted tree, merging its two edges.

    Returns the unrooted tree, or ``(tree, lengths)`` when lengths are given.
    """
    if not tree.rooted:
        raise ValueError("tree is already unrooted")
    if tree.n_taxa < 3:
        raise ValueError("cannot unroot a tree with fewer than 3 taxa")
    adj, elen = _adjacency(tree, lengths)
    r = tree.root
    a, b = tree.children[r]
    del adj[r]
    adj[a].remove(r)
    adj[b].remove(r)
    adj[a].append(b)
    adj[b].append(a)
    if elen is not None:
        elen[frozenset((a, b))] = elen.pop(frozenset((a, r))) + elen.pop(frozenset((b, r)))
    out, out_len = from_adjacency(tree.taxa, adj, _unrooted_start(adj), False, elen)
    return out if lengths is None else (out, out_len)


def root_at_edge(tree: Tree, v: int, lengths=None, fraction=0.5):
    """Place a degree-2 root on the edge above node ``v`` of an unrooted tree.

    With lengths, the edge is divided so that ``fraction`` of it lies between
    the new root and ``v``.
    """
    if tree.rooted:
        raise ValueError("root_at_edge needs an unrooted tree")
    if v == tree.root:
        raise ValueError("node has no parent edge")
    adj, elen = _adjacency(tree, lengths)
    p = tree.parent[v]
    r = "root"
    adj[v].remove(p)
    adj[p].remove(v)
    adj[v].append(r)
    adj[p].append(r)
    adj[r] = [v, p]
    if elen is not None:
        total = elen.pop(frozenset((v, p)))
        elen[frozenset((v, r))] = total * fraction
        elen[frozenset((p, r))] = total * (1.0 - fraction)
    out, out_len = from_adjacency(tree.taxa, adj, r, True, elen)
    return out if lengths is None else (out, out_len)


def reroot_at_node(tree: Tree, node: int, lengths=None):
    """Hang an unrooted tree from a different internal node."""
    if tree.rooted or tree.is_leaf(node):
        raise ValueError("need an unrooted tree and an internal node")
    adj, elen = _adjacency(tree, lengths)
    out, out_len = from_adjacency(tree.taxa, adj, node, False, elen)
    return out if lengths is None else (out, out_len)


def edge_split(tree: Tree, v: int) -> Subsplit:
    return tree.split(v)


def primary_subsplit_pairs(tree: Tree, v: int) -> list:
    """PSPs of the edge above ``v`` in an unrooted tree (1 or 2 of them)."""
    split = tree.split(v)
    out = []
    if not tree.is_leaf(v):
        out.append(PCSP(split, tree.subsplit(v)))
    out.append(PCSP(split, tree.down_subsplit(v)))
    return out


def nni_neighbors(tree: Tree) -> list:
    """All unrooted trees one nearest-neighbor interchange away."""
    if tree.rooted:
        raise ValueError("NNI is implemented for unrooted trees")
    out = []
    for u in tree.internal_nodes:
        if u == tree.root:
            continue
        w = tree.parent[u]
        adj, _ = _adjacency(tree)
        a = tree.children[u][0]
        for c in [x for x in adj[w] if x != u]:
            new = {k: list(v) for k, v in adj.items()}
            new[u][new[u].index(a)] = c
            new[w][new[w].index(c)] = a
            new[a][new[a].index(u)] = w
            new[c][new[c].index(w)] = u
            out.append(from_adjacency(tree.taxa, new, _unrooted_start(new), False)[0])
    return out


def nni_perturbations(tree: Tree, n: int, rng, max_moves: int = 2) -> list:
    """``n`` distinct trees, each 1..``max_moves`` random NNI moves from ``tree``."""
    seen = {tree}
    out = []
    for _ in range(1000 * n):
        if len(out) == n:
            break
        x = tree
        for _ in range(rng.integers(1, max_moves + 1)):
            nb = nni_neighbors(x)
            x = nb[rng.integers(len(nb))]
        if x not in seen:
            seen.add(x)
            out.append(x)
    if len(out) < n:
        raise ValueError(f"fewer than {n} distinct trees within {max_moves} NNI moves")
    return out


# enumeration and random trees ---------------------------------------------

def _insertions(t, k):
    yield (t, k)
    if isinstance(t, tuple):
        a, b = t
        for a2 in _insertions(a, k):
            yield (a2, b)
        for b2 in _insertions(b, k):
            yield (a, b2)


def _rooted_nested(n):
    trees = [0] if n == 1 else [(0, 1)]
    for k in range(2, n):
        trees = [t2 for t in trees for t2 in _insertions(t, k)]
    return trees


def double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def enumerate_topologies(taxa, rooted: bool = True) -> list:
    """All binary topologies on ``taxa`` (a TaxonSet or a count <= 8)."""
    if not isinstance(taxa, TaxonSet):
        taxa = TaxonSet.default(int(taxa))
    n = len(taxa)
    if n > 8:
        raise ValueError("enumeration limited to 8 taxa")
    if rooted:
        if n < 2:
            raise ValueError("need at least 2 taxa")
        return [Tree.from_nested(taxa, t, True) for t in _rooted_nested(n)]
    if n < 3:
        raise ValueError("unrooted trees need at least 3 taxa")
    return [Tree.from_nested(taxa, (t, n - 1), False) for t in _rooted_nested(n - 1)]


def _size(t):
    return 1 if not isinstance(t, tuple) else 1 + _size(t[0]) + _size(t[1])


def _random_insert(t, k, rng):
    u = int(rng.integers(_size(t)))
    path = []
    while u != 0:
        a, b = t
        sa = _size(a)
        if u - 1 < sa:
            path.append((t, 0))
            t, u = a, u - 1
        else:
            path.append((t, 1))
            t, u = b, u - 1 - sa
    new = (t, k)
    for node, side in reversed(path):
        new = (new, node[1]) if side == 0 else (node[0], new)
    return new


def random_topology(taxa: TaxonSet, rng, rooted: bool = False) -> Tree:
    """Uniformly random topology by stepwise random leaf insertion."""
    n = len(taxa)
    m = n if rooted else n - 1
    t = 0 if m == 1 else (0, 1)
    for k in range(2, m):
        t = _random_insert(t, k, rng)
    if rooted:
        return Tree.from_nested(taxa, t, True)
    return Tree.from_nested(taxa, (t, n - 1), False)
