"""Taxon sets, clades and subsplits.

Clades are plain Python ints used as bit masks.  Taxon ``i`` (in the
lexicographically sorted taxon list) owns bit ``n - 1 - i`` so that integer
comparison of two clades equals comparison of their big-endian bit strings,
e.g. ``{A, B}`` of ``{A, B, C, D}`` is ``0b1100`` and prints as ``"1100"``.
"""

import re
from typing import Iterable, NamedTuple

LABEL_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


class Subsplit(NamedTuple):
    """Ordered bipartition ``(y, z)`` of the clade ``y | z`` with ``y > z``.

    The fake subsplit of a singleton clade has ``z == 0``.
    """

    y: int
    z: int

    @property
    def clade(self) -> int:
        return self.y | self.z

    @property
    def is_fake(self) -> bool:
        return self.z == 0


class PCSP(NamedTuple):
    """Parent-child subsplit pair; ``child.clade`` is one side of ``parent``."""

    parent: Subsplit
    child: Subsplit


def make_subsplit(a: int, b: int) -> Subsplit:
    """Normalize an unordered pair of disjoint clades into a Subsplit."""
    if a & b:
        raise ValueError("subsplit sides must be disjoint")
    return Subsplit(a, b) if a > b else Subsplit(b, a)


def popcount(c: int) -> int:
    return bin(c).count("1")


class TaxonSet:
    """Sorted, duplicate-free collection of taxon labels.

    All bit encodings of clades depend on this ordering, which is fixed at
    construction.
    """

    __slots__ = ("names", "index", "full")

    def __init__(self, names: Iterable[str]):
        names = list(names)
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate taxon labels: {dup}")
        for n in names:
            if not isinstance(n, str) or not LABEL_RE.match(n):
                raise ValueError(f"invalid taxon label {n!r}")
        self.names = tuple(sorted(names))
        self.index = {n: i for i, n in enumerate(self.names)}
        self.full = (1 << len(self.names)) - 1

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other):
        return isinstance(other, TaxonSet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"TaxonSet({list(self.names)!r})"

    @classmethod
    def default(cls, n: int) -> "TaxonSet":
        """Taxa ``A, B, C, ...`` (``T00, T01, ...`` beyond 26)."""
        if n <= 26:
            return cls([chr(ord("A") + i) for i in range(n)])
        width = len(str(n - 1))
        return cls([f"T{i:0{width}d}" for i in range(n)])

    def bit(self, i: int) -> int:
        return 1 << (len(self.names) - 1 - i)

    def clade(self, labels: Iterable[str]) -> int:
        c = 0
        for label in labels:
            c |= self.bit(self.index[label])
        return c

    def members(self, clade: int) -> list[int]:
        n = len(self.names)
        return [i for i in range(n) if clade >> (n - 1 - i) & 1]

    def labels(self, clade: int) -> list[str]:
        return [self.names[i] for i in self.members(clade)]

    def first_taxon(self, clade: int) -> int:
        """Smallest taxon index contained in ``clade``."""
        return len(self.names) - clade.bit_length()

    # text encodings -------------------------------------------------------

    def clade_str(self, clade: int) -> str:
        return format(clade, f"0{len(self.names)}b")

    def parse_clade(self, text: str) -> int:
        if len(text) != len(self.names) or set(text) - {"0", "1"}:
            raise ValueError(f"bad clade bit string {text!r}")
        return int(text, 2)

    def subsplit_str(self, s: Subsplit) -> str:
        return f"{self.clade_str(s.y)}|{self.clade_str(s.z)}"

    def parse_subsplit(self, text: str) -> Subsplit:
        y, z = text.split("|")
        s = Subsplit(self.parse_clade(y), self.parse_clade(z))
        if s.y & s.z or s.y <= s.z:
            raise ValueError(f"not a normalized subsplit: {text!r}")
        return s

    def pcsp_str(self, p: PCSP) -> str:
        return f"{self.subsplit_str(p.parent)}→{self.subsplit_str(p.child)}"

    def parse_pcsp(self, text: str) -> PCSP:
        parent, child = text.split("→")
        return PCSP(self.parse_subsplit(parent), self.parse_subsplit(child))
