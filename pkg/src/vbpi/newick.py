"""Newick reading and writing for bifurcating trees.

Supported grammar: labels ``[A-Za-z0-9_.-]+``, optional ``:<decimal>``
branch lengths, optional (ignored) internal node labels, a trailing ``;``.
Quoted labels and comments are not supported.
"""

import re

from .taxa import TaxonSet
from .tree import Tree, _unrooted_start, from_adjacency

_TOKEN = re.compile(r"\s*(?:([(),;:])|([A-Za-z0-9_.\-+]+))")


class NewickError(ValueError):
    pass


def _tokenize(text):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise NewickError(f"unexpected character {text[pos]!r} at position {pos}")
        out.append(m.group(1) or m.group(2))
        pos = m.end()
    return out


class _Node:
    __slots__ = ("children", "label", "length")

    def __init__(self):
        self.children = []
        self.label = None
        self.length = None


def _parse_tokens(tokens):
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok is None:
            raise NewickError("unexpected end of input")
        if expected is not None and tok != expected:
            raise NewickError(f"expected {expected!r}, found {tok!r}")
        pos += 1
        return tok

    def subtree():
        node = _Node()
        if peek() == "(":
            take("(")
            node.children.append(subtree())
            while peek() == ",":
                take(",")
                node.children.append(subtree())
            take(")")
            if peek() not in ("(", ")", ",", ";", ":", None):
                node.label = take()
        else:
            tok = take()
            if tok in "(),;:":
                raise NewickError(f"expected a label, found {tok!r}")
            node.label = tok
        if peek() == ":":
            take(":")
            tok = take()
            try:
                node.length = float(tok)
            except ValueError:
                raise NewickError(f"bad branch length {tok!r}") from None
            if node.length < 0:
                raise NewickError(f"negative branch length {tok!r}")
        return node

    root = subtree()
    take(";")
    if pos != len(tokens):
        raise NewickError("trailing characters after ';'")
    return root


def parse_newick(text: str, taxa: TaxonSet | None = None):
    """Parse one Newick statement.

    Returns ``(tree, lengths)``: a rooted tree for a degree-2 root, an
    unrooted tree for a degree-3 root, and an array of branch lengths indexed
    by node id, or None when the string carries no lengths.
    """
    root = _parse_tokens(_tokenize(text))
    if not root.children:
        raise NewickError("tree has a single leaf")

    leaves = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.children:
            stack.extend(node.children)
        else:
            leaves.append(node.label)
    if len(set(leaves)) != len(leaves):
        dup = sorted({x for x in leaves if leaves.count(x) > 1})
        raise NewickError(f"duplicate leaf labels: {dup}")
    if taxa is None:
        taxa = TaxonSet(leaves)
    else:
        unknown = sorted(set(leaves) - set(taxa.names))
        if unknown:
            raise NewickError(f"unknown taxon labels: {unknown}")
        missing = sorted(set(taxa.names) - set(leaves))
        if missing:
            raise NewickError(f"tree is missing taxa: {missing}")

    if len(root.children) == 2:
        rooted = True
    elif len(root.children) == 3:
        rooted = False
    else:
        raise NewickError(f"root has {len(root.children)} children; expected 2 or 3")

    adj = {}
    elen = {}
    n_len = 0
    n_edges = 0
    counter = len(taxa)
    ids = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.children:
            ids[id(node)] = counter
            counter += 1
        else:
            ids[id(node)] = taxa.index[node.label]
        adj[ids[id(node)]] = []
        stack.extend(node.children)
    stack = [root]
    while stack:
        node = stack.pop()
        u = ids[id(node)]
        if node is not root and node.children and len(node.children) != 2:
            raise NewickError("polytomies are only allowed at an unrooted root")
        for child in node.children:
            w = ids[id(child)]
            adj[u].append(w)
            adj[w].append(u)
            n_edges += 1
            if child.length is not None:
                n_len += 1
                elen[frozenset((u, w))] = child.length
            stack.append(child)

    if n_len not in (0, n_edges):
        raise NewickError("branch lengths must be given for all edges or none")
    # unrooted trees hang from the internal node next to taxon 0
    start = ids[id(root)] if rooted else _unrooted_start(adj)
    try:
        tree, lengths = from_adjacency(taxa, adj, start, rooted,
                                       elen if n_len else None)
    except ValueError as exc:
        raise NewickError(str(exc)) from None
    return tree, lengths


def _fmt(x):
    return repr(float(x))


def write_newick(tree: Tree, lengths=None) -> str:
    names = tree.taxa.names
    out = []

    def emit(v):
        if tree.is_leaf(v):
            out.append(names[v])
        else:
            out.append("(")
            for i, c in enumerate(tree.children[v]):
                if i:
                    out.append(",")
                emit(c)
            out.append(")")
        if lengths is not None and v != tree.root:
            out.append(":" + _fmt(lengths[v]))

    emit(tree.root)
    out.append(";")
    return "".join(out)


def read_trees(path, taxa: TaxonSet | None = None, first_k: int | None = None):
    """Read a ``.trees`` file: one Newick per line, ``#`` comments.

    Returns a list of ``(tree, lengths)``.  Errors carry ``file:line``.
    """
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                tree, lengths = parse_newick(line, taxa)
            except NewickError as exc:
                raise NewickError(f"{path}:{lineno}: {exc}") from None
            if taxa is None:
                taxa = tree.taxa
            out.append((tree, lengths))
            if first_k is not None and len(out) >= first_k:
                break
    return out
