"""Variational Bayesian phylogenetic inference with subsplit Bayesian networks."""

from .taxa import PCSP, Subsplit, TaxonSet, make_subsplit
from .tree import (Tree, enumerate_topologies, primary_subsplit_pairs,
                   random_topology, root_at_edge, subsplit_decomposition, unroot)
from .newick import NewickError, parse_newick, read_trees, write_newick

__version__ = "0.1.0"
