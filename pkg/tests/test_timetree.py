import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from oracles import central_diff
from vbpi import TaxonSet, Tree, parse_newick, random_topology
from vbpi.timetree import (ConstantPrior, HeightTransform, LogNormalRatePrior,
                           alpha_from_heights, clock_branch_lengths, coalescent_intervals,
                           coalescent_log_density, height_lower_bounds, heights_from_alpha,
                           isochronous_log_density, skyride_log_prior)

T3 = TaxonSet.default(3)


def _time_tree(n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    tree = random_topology(TaxonSet.default(n), rng, rooted=True)
    times = np.zeros(n)
    times[1:] = rng.uniform(0, spread, n - 1)
    lb = height_lower_bounds(tree, times)
    alpha = rng.normal(0, 1, tree.n_nodes)
    return tree, lb, alpha, rng


class TestTransform:
    def test_three_taxon_at_zero(self):
        tree = Tree.from_nested(T3, ((0, 1), 2), rooted=True)
        lb = height_lower_bounds(tree, np.zeros(3))
        t, log_jac = heights_from_alpha(np.zeros(tree.n_nodes), tree, lb)
        inner = next(v for v in tree.internal_nodes if v != tree.root)
        assert t[tree.root] == 1.0 and t[inner] == 0.5
        assert log_jac == pytest.approx(math.log(0.25), abs=1e-15)

    def test_lower_bounds(self):
        # ((A,B),C) with tips sampled at 2, 0 and 1
        tree, _ = parse_newick("((A,B),C);")
        lb = height_lower_bounds(tree, [2.0, 0.0, 1.0])
        ab = next(v for v in tree.internal_nodes if v != tree.root)
        assert lb[ab] == 2.0 and lb[tree.root] == 2.0

    def test_unrooted_rejected(self):
        tree = random_topology(TaxonSet.default(4), np.random.default_rng(0))
        with pytest.raises(ValueError):
            height_lower_bounds(tree, np.zeros(4))

    @given(st.integers(2, 15), st.integers(0, 10 ** 6), st.floats(0.5, 8))
    def test_order_never_violated(self, n, seed, scale):
        tree, lb, alpha, _ = _time_tree(n, seed)
        t, _ = heights_from_alpha(alpha * scale, tree, lb)
        for v in tree.edges:
            assert t[tree.parent[v]] >= t[v]
        assert np.all(t >= lb - 1e-12)

    @given(st.integers(2, 12), st.integers(0, 10 ** 6))
    def test_round_trip(self, n, seed):
        tree, lb, alpha, _ = _time_tree(n, seed)
        inner = list(tree.internal_nodes)
        t, _ = heights_from_alpha(alpha, tree, lb)
        np.testing.assert_allclose(alpha_from_heights(t, tree, lb)[inner], alpha[inner],
                                   atol=1e-9)

    def test_backward_finite_differences(self):
        tree, lb, alpha, rng = _time_tree(7, 3)
        w = rng.normal(size=tree.n_nodes)
        w[:tree.n_taxa] = 0
        inner = list(tree.internal_nodes)

        def f(a):
            h = HeightTransform(tree, lb, a)
            return w @ h.heights + 0.7 * h.log_jacobian

        g = HeightTransform(tree, lb, alpha).backward(w, jac_weight=0.7)
        np.testing.assert_allclose(g[inner], central_diff(f, alpha)[inner], atol=1e-7)

    def test_batch_matches_single(self):
        tree, lb, alpha, rng = _time_tree(6, 4)
        batch = np.stack([alpha, alpha + rng.normal(size=alpha.size)])
        h = HeightTransform(tree, lb, batch)
        for i in range(2):
            t, lj = heights_from_alpha(batch[i], tree, lb)
            np.testing.assert_allclose(h.heights[i], t, rtol=1e-14)
            assert h.log_jacobian[i] == pytest.approx(lj, rel=1e-14)


class TestClock:
    def test_scaling(self):
        tree, lb, alpha, _ = _time_tree(6, 5)
        t, _ = heights_from_alpha(alpha, tree, lb)
        q1 = clock_branch_lengths(t, 1.0, tree)
        np.testing.assert_allclose(clock_branch_lengths(t, 2.5, tree), 2.5 * q1)
        assert q1[tree.root] == 0
        for v in tree.edges:
            assert q1[v] == pytest.approx(t[tree.parent[v]] - t[v])


class TestCoalescent:
    @given(st.integers(2, 12), st.integers(0, 10 ** 6))
    def test_intervals_cover_tree(self, n, seed):
        tree, lb, alpha, _ = _time_tree(n, seed)
        t, _ = heights_from_alpha(alpha, tree, lb)
        order, lineages, piece = coalescent_intervals(t, tree)
        assert np.all(lineages >= 1)
        assert np.diff(t[order]).sum() == pytest.approx(t.max() - t.min())
        assert piece.min() >= 0 and piece.max() <= n - 2
        # one lineage only above the last event, which is the root
        assert order[-1] == tree.root

    def test_two_tips_closed_form(self):
        tree = Tree.from_nested(TaxonSet.default(2), (0, 1), rooted=True)
        t = np.array([0.0, 0.0, 1.5])
        gamma = 0.3
        expect = -gamma - 1.5 * math.exp(-gamma)
        assert coalescent_log_density(t, tree, gamma) == pytest.approx(expect, rel=1e-14)

    @given(st.integers(2, 10), st.integers(0, 10 ** 6))
    def test_isochronous_agrees(self, n, seed):
        tree, lb, alpha, rng = _time_tree(n, seed, spread=0.0)
        t, _ = heights_from_alpha(alpha, tree, lb)
        gamma = rng.normal(size=n - 1)
        inner = list(tree.internal_nodes)
        a = coalescent_log_density(t, tree, gamma)
        b = isochronous_log_density(t[inner], gamma)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(b))

    def test_gradients(self):
        tree, lb, alpha, rng = _time_tree(7, 6)
        t, _ = heights_from_alpha(alpha, tree, lb)
        gamma = rng.normal(size=6)
        _, d_t, d_g = coalescent_log_density(t, tree, gamma, grad=True)
        inner = list(tree.internal_nodes)
        fd_t = central_diff(lambda x: coalescent_log_density(x, tree, gamma), t)
        np.testing.assert_allclose(d_t[inner], fd_t[inner], atol=1e-7)
        fd_g = central_diff(lambda g: coalescent_log_density(t, tree, g), gamma)
        np.testing.assert_allclose(d_g, fd_g, atol=1e-7)

    def test_bad_heights(self):
        tree = Tree.from_nested(TaxonSet.default(2), (0, 1), rooted=True)
        with pytest.raises(ValueError):
            coalescent_log_density(np.array([0.0, 2.0, 1.0]), tree, 0.0)
        with pytest.raises(ValueError):
            coalescent_log_density(np.array([0.0, 0.0, 1.0]), tree, [0.0, 1.0])


class TestPriors:
    @given(st.integers(0, 10 ** 6), st.floats(-5, 5))
    def test_skyride_shift_invariant(self, seed, c):
        gamma = np.random.default_rng(seed).normal(size=6)
        assert skyride_log_prior(gamma + c) == pytest.approx(skyride_log_prior(gamma),
                                                             rel=1e-12)

    @given(st.integers(0, 10 ** 6))
    def test_skyride_max_at_constant(self, seed):
        gamma = np.random.default_rng(seed).normal(size=6)
        assert skyride_log_prior(gamma) <= skyride_log_prior(np.full(6, 0.4))

    def test_skyride_gradient(self):
        gamma = np.random.default_rng(7).normal(size=6)
        delta = np.array([1.0, 0.5, 2.0, 1.0, 0.3])
        _, g = skyride_log_prior(gamma, delta=delta, grad=True)
        fd = central_diff(lambda x: skyride_log_prior(x, delta=delta), gamma)
        np.testing.assert_allclose(g, fd, atol=1e-7)

    def test_skyride_errors(self):
        with pytest.raises(ValueError):
            skyride_log_prior(np.zeros(4), a=0)
        with pytest.raises(ValueError):
            skyride_log_prior(np.zeros(4), delta=np.ones(2))

    def test_constant_prior(self):
        value, g = ConstantPrior(1.0, 2.0).log_prior(np.array([0.5]))
        assert value == pytest.approx(stats.norm.logpdf(0.5, 1.0, 2.0))
        assert g[0] == pytest.approx(0.125)

    def test_rate_prior(self):
        prior = LogNormalRatePrior()
        value, g = prior.log_prior(2e-3)
        assert value == pytest.approx(
            stats.lognorm.logpdf(2e-3, 1.5, scale=1e-3), rel=1e-12)
        h = 1e-9
        fd = (prior.log_prior(2e-3 + h)[0] - prior.log_prior(2e-3 - h)[0]) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-5)
