import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbpi import (PCSP, NewickError, Subsplit, TaxonSet, Tree, enumerate_topologies,
                  make_subsplit, parse_newick, primary_subsplit_pairs, random_topology,
                  root_at_edge, subsplit_decomposition, unroot, write_newick)
from vbpi.tree import (double_factorial, edge_split, nni_neighbors, nni_perturbations,
                       reroot_at_node)

T4 = TaxonSet.default(4)


def clade(*labels):
    return T4.clade(labels)


class TestTaxa:
    def test_bit_layout(self):
        assert T4.clade_str(clade("A", "B")) == "1100"
        assert T4.parse_clade("0011") == clade("C", "D")

    def test_subsplit_normalization_idempotent(self):
        a, b = clade("A"), clade("B", "C")
        s = make_subsplit(a, b)
        assert s == make_subsplit(b, a) == Subsplit(a, b)
        assert s.y > s.z and make_subsplit(s.y, s.z) == s

    def test_overlapping_sides_rejected(self):
        with pytest.raises(ValueError):
            make_subsplit(clade("A", "B"), clade("B"))

    def test_text_round_trip(self):
        p = PCSP(make_subsplit(clade("A", "B"), clade("C", "D")),
                 make_subsplit(clade("A"), clade("B")))
        assert T4.parse_pcsp(T4.pcsp_str(p)) == p
        assert T4.subsplit_str(p.parent) == "1100|0011"

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            TaxonSet(["A", "A"])
        with pytest.raises(ValueError):
            TaxonSet(["A", "B C"])

    def test_unnormalized_subsplit_text(self):
        with pytest.raises(ValueError):
            T4.parse_subsplit("0011|1100")


class TestNewick:
    def test_rooted_four(self):
        tree, lengths = parse_newick("((A,B),(C,D));")
        assert tree.rooted and lengths is None
        kids = {tree.clade[c] for c in tree.children[tree.root]}
        assert kids == {clade("A", "B"), clade("C", "D")}

    def test_unrooted_four(self):
        tree, _ = parse_newick("(A,B,(C,D));")
        assert not tree.rooted
        assert len(tree.edges) == 5

    def test_lengths(self):
        tree, lengths = parse_newick("((A:0.1,B:0.2):0.3,C:0.4);")
        t3 = tree.taxa
        d = tree.lengths_to_dict(lengths)
        assert d == {t3.clade(["A"]): 0.1, t3.clade(["B"]): 0.2,
                     t3.clade(["A", "B"]): 0.3, t3.clade(["C"]): 0.4}

    def test_write(self):
        tree, _ = parse_newick("((A,B),(C,D));")
        assert write_newick(tree) == "((A,B),(C,D));"

    def test_write_lengths_every_edge(self):
        tree, lengths = parse_newick("((A:0.1,B:0.2):0.3,(C:0.4,D:0.5):0.6);")
        assert write_newick(tree, lengths).count(":") == len(tree.edges)

    @pytest.mark.parametrize("text", ["((A,B),(C,D)", "((A,B),(A,D));", "(A,B,C,D);",
                                      "((A:0.1,B),C);", "((A:-1,B:1):1,C:1);",
                                      "((A,B),C)D;x", "(A);"])
    def test_errors(self, text):
        with pytest.raises(NewickError):
            parse_newick(text)

    def test_unknown_taxon(self):
        with pytest.raises(NewickError):
            parse_newick("((A,B),(C,X));", T4)

    def test_missing_taxon(self):
        with pytest.raises(NewickError):
            parse_newick("((A,B),C);", T4)

    def test_fixed_point_random_trees(self):
        rng = np.random.default_rng(0)
        taxa = TaxonSet.default(10)
        for _ in range(100):
            rooted = bool(rng.random() < 0.5)
            t = random_topology(taxa, rng, rooted=rooted)
            q = np.zeros(t.n_nodes)
            q[list(t.edges)] = rng.exponential(0.1, len(t.edges))
            text = write_newick(t, q)
            t2, q2 = parse_newick(text, taxa)
            assert t2 == t
            assert write_newick(t2, q2) == text

    def test_internal_labels_ignored(self):
        a, _ = parse_newick("((A,B)x,(C,D)y)root;")
        b, _ = parse_newick("((A,B),(C,D));")
        assert a == b


class TestDecomposition:
    def test_known_decompositions(self):
        top = Tree.from_nested(T4, (((0, (1, 2)), 3)), rooted=True)
        root, pcsps = subsplit_decomposition(top)
        abc = clade("A", "B", "C")
        assert root == make_subsplit(abc, clade("D"))
        assert {p.child for p in pcsps} == {make_subsplit(clade("A"), clade("B", "C")),
                                          make_subsplit(clade("B"), clade("C"))}
        bottom = Tree.from_nested(T4, ((0, 1), (2, 3)), rooted=True)
        root, pcsps = subsplit_decomposition(bottom)
        assert root == make_subsplit(clade("A", "B"), clade("C", "D"))
        assert all(p.parent == root for p in pcsps) and len(pcsps) == 2

    def test_two_taxa(self):
        t2 = TaxonSet.default(2)
        root, pcsps = subsplit_decomposition(Tree.from_nested(t2, (0, 1), rooted=True))
        assert root == make_subsplit(1, 2) and pcsps == []

    @given(st.integers(2, 12), st.integers(0, 10 ** 6))
    def test_depth(self, n, seed):
        t = random_topology(TaxonSet.default(n), np.random.default_rng(seed), rooted=True)
        _, pcsps = subsplit_decomposition(t)
        assert 1 + len(pcsps) == n - 1


class TestRooting:
    def test_four_taxon_rootings(self):
        tu = Tree.from_nested(T4, ((0, 1), (2, 3)), rooted=False)
        rooted = [root_at_edge(tu, v) for v in tu.edges]
        assert len(set(rooted)) == 5
        assert all(unroot(r) == tu for r in rooted)

    @given(st.integers(3, 12), st.integers(0, 10 ** 6))
    def test_rootings_distinct_and_unroot(self, n, seed):
        tu = random_topology(TaxonSet.default(n), np.random.default_rng(seed))
        rooted = [root_at_edge(tu, v) for v in tu.edges]
        assert len(set(rooted)) == len(rooted) == 2 * n - 3
        assert all(unroot(r) == tu for r in rooted)

    def test_lengths_preserved(self):
        rng = np.random.default_rng(1)
        tu = random_topology(TaxonSet.default(7), rng)
        q = np.zeros(tu.n_nodes)
        q[list(tu.edges)] = rng.uniform(0.1, 1, len(tu.edges))
        for v in tu.edges:
            rt, rq = root_at_edge(tu, v, q, fraction=0.3)
            assert np.isclose(rq.sum(), q.sum())
            back, bq = unroot(rt, rq)
            assert back == tu
            assert back.lengths_to_dict(bq) == pytest.approx(tu.lengths_to_dict(q))

    def test_reroot_at_node(self):
        rng = np.random.default_rng(2)
        tu = random_topology(TaxonSet.default(8), rng)
        for node in tu.internal_nodes:
            t2 = reroot_at_node(tu, node)
            assert t2 == tu

    def test_enumeration_counts(self):
        for n in range(3, 8):
            taxa = TaxonSet.default(n)
            rooted = enumerate_topologies(taxa, True)
            unrooted = enumerate_topologies(taxa, False)
            assert len(rooted) == len(set(rooted)) == double_factorial(2 * n - 3)
            assert len(unrooted) == len(set(unrooted)) == double_factorial(2 * n - 5)
        assert len(enumerate_topologies(4, True)) == 15
        assert len(enumerate_topologies(5, False)) == 15


class TestEdges:
    def test_internal_edge_psps(self):
        # ((V,Z),(X,Y)) with the edge between the two cherries
        t = TaxonSet(["V", "X", "Y", "Z"])
        tu, _ = parse_newick("((V,Z),X,Y);", t)
        v = next(v for v in tu.edges if not tu.is_leaf(v))
        vz, xy = t.clade(["V", "Z"]), t.clade(["X", "Y"])
        assert edge_split(tu, v) == make_subsplit(vz, xy)
        psps = set(primary_subsplit_pairs(tu, v))
        split = make_subsplit(vz, xy)
        assert psps == {PCSP(split, make_subsplit(t.clade("X"), t.clade("Y"))),
                        PCSP(split, make_subsplit(t.clade("V"), t.clade("Z")))}

    def test_pendant_edge(self):
        tu = Tree.from_nested(T4, ((0, 1), (2, 3)), rooted=False)
        split = make_subsplit(clade("B", "C", "D"), clade("A"))
        assert edge_split(tu, 0) == split
        psps = primary_subsplit_pairs(tu, 0)
        assert len(psps) == 1 and psps[0].child.clade == clade("B", "C", "D")

    @given(st.integers(4, 10), st.integers(0, 10 ** 6))
    def test_psps_match_rooting(self, n, seed):
        tu = random_topology(TaxonSet.default(n), np.random.default_rng(seed))
        for v in tu.edges:
            root, pcsps = subsplit_decomposition(root_at_edge(tu, v))
            first_level = {p for p in pcsps if p.parent == root}
            assert set(primary_subsplit_pairs(tu, v)) == first_level


class TestNni:
    def test_neighbor_count(self):
        tu = Tree.from_nested(TaxonSet.default(6), (((((0, 1), 2), 3), 4), 5),
                              rooted=False)
        nb = nni_neighbors(tu)
        assert len(nb) == 6 and len(set(nb)) == 6 and tu not in nb

    def test_perturbations_distinct(self):
        rng = np.random.default_rng(0)
        tu = random_topology(TaxonSet.default(6), rng)
        out = nni_perturbations(tu, 20, rng)
        assert len(set(out)) == 20 and tu not in out

    def test_too_many(self):
        tu = random_topology(T4, np.random.default_rng(0))
        with pytest.raises(ValueError):
            nni_perturbations(tu, 3, np.random.default_rng(0))
