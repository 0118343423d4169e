"""Alignments, site-pattern compression and small text formats."""

import csv
from dataclasses import dataclass

import numpy as np

from .taxa import TaxonSet

# IUPAC nucleotide codes as A, C, G, T indicator rows
_IUPAC = {
    "A": "A", "C": "C", "G": "G", "T": "T", "U": "T",
    "R": "AG", "Y": "CT", "S": "CG", "W": "AT", "K": "GT", "M": "AC",
    "B": "CGT", "D": "AGT", "H": "ACT", "V": "ACG",
    "N": "ACGT", "?": "ACGT", "-": "ACGT", ".": "ACGT",
}
_BASES = "ACGT"
INDICATORS = {
    ch: np.array([1.0 if b in bases else 0.0 for b in _BASES])
    for ch, bases in _IUPAC.items()
}


class FastaError(ValueError):
    pass


@dataclass(frozen=True)
class Alignment:
    taxa: TaxonSet
    rows: tuple

    @property
    def n_sites(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def to_fasta(self, width: int = 0) -> str:
        out = []
        for name, row in zip(self.taxa.names, self.rows):
            out.append(f">{name}")
            if width:
                out.extend(row[i:i + width] for i in range(0, len(row), width))
            else:
                out.append(row)
        return "\n".join(out) + "\n"


def make_alignment(seqs: dict) -> Alignment:
    """Alignment from a ``{label: sequence}`` map (rows reordered by label)."""
    if not seqs:
        raise FastaError("empty alignment")
    taxa = TaxonSet(seqs)
    rows = tuple(seqs[n].upper() for n in taxa.names)
    lens = {len(r) for r in rows}
    if len(lens) != 1:
        raise FastaError(f"sequences have unequal lengths: {sorted(lens)}")
    if 0 in lens:
        raise FastaError("sequences are empty")
    for name, row in zip(taxa.names, rows):
        bad = set(row) - set(_IUPAC)
        if bad:
            raise FastaError(f"illegal characters in {name}: {sorted(bad)}")
    return Alignment(taxa, rows)


def parse_fasta(text: str) -> Alignment:
    seqs = {}
    name = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            name = line[1:].strip().split()[0] if line[1:].strip() else ""
            if not name:
                raise FastaError(f"line {lineno}: empty header")
            if name in seqs:
                raise FastaError(f"line {lineno}: duplicate header {name!r}")
            seqs[name] = []
        else:
            if name is None:
                raise FastaError(f"line {lineno}: sequence before first header")
            seqs[name].append(line)
    if not seqs:
        raise FastaError("no sequences found")
    try:
        return make_alignment({k: "".join(v) for k, v in seqs.items()})
    except ValueError as exc:
        raise FastaError(str(exc)) from None


def read_fasta(path) -> Alignment:
    with open(path) as fh:
        return parse_fasta(fh.read())


@dataclass(frozen=True)
class PatternTable:
    """Unique site columns as leaf partials plus their multiplicities.

    ``partials`` has shape ``(n_patterns, n_taxa, 4)``.
    """

    taxa: TaxonSet
    partials: np.ndarray
    weights: np.ndarray

    @property
    def n_patterns(self) -> int:
        return len(self.weights)


def compress_patterns(aln: Alignment, compress: bool = True) -> PatternTable:
    """Deduplicate alignment columns; ``compress=False`` keeps every site."""
    codes = {}
    order = []
    counts = []
    for j in range(aln.n_sites):
        col = tuple(row[j] for row in aln.rows)
        # ambiguity codes with equal indicator rows share one pattern
        key = tuple(_IUPAC[c] for c in col)
        if compress and key in codes:
            counts[codes[key]] += 1
            continue
        codes[key] = len(order)
        order.append(col)
        counts.append(1)
    partials = np.array([[INDICATORS[c] for c in col] for col in order])
    return PatternTable(aln.taxa, partials, np.array(counts, dtype=float))


# small text formats ------------------------------------------------------

def read_reference(path, taxa: TaxonSet | None = None):
    """Reference distribution CSV ``newick,probability`` -> list of (tree, p)."""
    from .newick import NewickError, parse_newick

    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "newick":
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'newick,probability'")
            try:
                tree, _ = parse_newick(row[0].strip(), taxa)
            except NewickError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            taxa = tree.taxa
            p = float(row[1])
            if not p > 0:
                raise ValueError(f"{path}:{lineno}: probability must be positive")
            out.append((tree, p))
    total = sum(p for _, p in out)
    if total > 1 + 1e-9:
        raise ValueError(f"{path}: probabilities sum to {total} > 1")
    return out


def write_reference(path, items, taxa_names=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["newick", "probability"])
        for tree, p in items:
            w.writerow([tree.newick(), repr(float(p))])


def read_sampling_times(path, taxa: TaxonSet) -> np.ndarray:
    """CSV ``taxon,time``; taxa not listed default to 0.  Shifted so min is 0."""
    times = np.zeros(len(taxa))
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "taxon":
                continue
            name, value = row[0].strip(), float(row[1])
            if name not in taxa.index:
                raise ValueError(f"{path}:{lineno}: unknown taxon {name!r}")
            if value < 0:
                raise ValueError(f"{path}:{lineno}: negative sampling time")
            times[taxa.index[name]] = value
    return times - times.min()
