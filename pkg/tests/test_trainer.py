import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vbpi.likelihood import simulate_dataset
from vbpi.models import Evaluation, UnrootedVBPI
from vbpi.seqio import compress_patterns
from vbpi.support import build_support
from vbpi.trainer import (Adam, TrainConfig, _clip, anneal_beta, draw_batch,
                          estimate_gradients, load_checkpoint, log_mean_exp, make_streams,
                          multi_sample_elbo, normalized_weights, rws_grad_phi,
                          save_checkpoint, train, vimco_coefficients)
from vbpi.tree import nni_perturbations


def _model(seed=0, n_extra=3, n=5):
    tree, _, aln = simulate_dataset(n, 100, seed=seed)
    trees = [tree] + nni_perturbations(tree, n_extra, np.random.default_rng(seed))
    return tree, UnrootedVBPI(build_support(trees), compress_patterns(aln))


class TestObjectives:
    def test_log_mean_exp_extremes(self):
        assert log_mean_exp(np.array([700.0, 700.0])) == pytest.approx(700.0)
        assert log_mean_exp(np.array([-700.0, -800.0])) == pytest.approx(
            -700.0 + np.log1p(np.exp(-100.0)) - np.log(2))

    def test_single_sample_bound(self):
        assert multi_sample_elbo(np.array([-3.5])) == -3.5
        np.testing.assert_array_equal(normalized_weights(np.array([-3.5])), [1.0])

    def test_equal_values_signal(self):
        k = 6
        np.testing.assert_allclose(vimco_coefficients(np.full(k, -12.0)), -1 / k,
                                   atol=1e-15)

    def test_vimco_needs_two(self):
        with pytest.raises(ValueError):
            vimco_coefficients(np.array([1.0]))

    def test_rws_single_sample_is_score(self):
        score = np.array([[0.3, -0.3]])
        np.testing.assert_allclose(rws_grad_phi(np.array([4.0]), score), [0.3, -0.3])

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
    def test_vimco_shift_invariant(self, values):
        log_f = np.array(values)
        np.testing.assert_allclose(vimco_coefficients(log_f + 123.0),
                                   vimco_coefficients(log_f), atol=1e-9)

    def test_vimco_extreme_ratios(self):
        coef = vimco_coefficients(np.array([700.0, -700.0, 0.0]))
        assert np.all(np.isfinite(coef))


class TestSchedule:
    def test_anneal(self):
        assert anneal_beta(0, 100000) == 0.001
        assert anneal_beta(50000, 100000) == pytest.approx(0.501)
        assert anneal_beta(100000, 100000) == 1.0
        assert anneal_beta(10 ** 7, 100000) == 1.0


class TestAdam:
    def test_first_step(self):
        opt = Adam(lr=0.01)
        p = {"a": np.array([1.0, 2.0, 3.0])}
        out = opt.step(p, {"a": np.array([5.0, -0.2, 0.0])})
        np.testing.assert_allclose(out["a"], [1.01, 1.99, 3.0], atol=1e-8)

    def test_missing_gradient_untouched(self):
        opt = Adam()
        p = {"a": np.ones(2), "b": np.ones(3)}
        out = opt.step(p, {"a": np.ones(2)})
        assert out["b"] is p["b"]

    def test_state_round_trip(self):
        opt = Adam(lr=0.05)
        p = {"a": np.zeros(2)}
        for _ in range(3):
            p = opt.step(p, {"a": np.array([1.0, -2.0])})
        other = Adam(lr=0.05)
        other.load_state(opt.state())
        g = {"a": np.array([0.5, 0.5])}
        np.testing.assert_array_equal(opt.step(p, g)["a"], other.step(p, g)["a"])

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        out = _clip(g, 1.0)
        assert np.hypot(out["a"][0], out["b"][0]) == pytest.approx(1.0)
        assert _clip(g, 10.0) is g


class TestBatch:
    def test_grouping_matches_direct(self):
        tree, model = _model()
        streams = make_streams(3)
        batch = draw_batch(model, 8, streams)
        assert sorted(np.concatenate(batch.groups).tolist()) == list(range(8))
        for idx, ev in zip(batch.groups, batch.evals):
            assert all(batch.trees[j] == ev.tree for j in idx)
            np.testing.assert_array_equal(batch.log_f[idx], ev.log_f)

    def test_gradient_keys(self):
        _, model = _model()
        batch = draw_batch(model, 4, make_streams(0))
        grads = estimate_gradients(model, batch, "rws")
        assert set(grads) == set(model.get_params())
        for k, v in model.get_params().items():
            assert grads[k].shape == v.shape
        with pytest.raises(ValueError):
            estimate_gradients(model, batch, "bogus")


class _Diverging:
    kind = "unrooted"

    def get_params(self):
        return {"x": np.zeros(1)}

    def set_params(self, params):
        pass

    def sample_topologies(self, k, rng):
        return ["t"] * k

    def draw_eps(self, tree, rng):
        return rng.standard_normal(1)

    def evaluate(self, tree, eps, beta=1.0, grad=True):
        b = len(eps)
        return Evaluation(tree, np.full(b, np.nan), np.full(b, np.nan), np.zeros(b),
                          0.0, 0.0, np.zeros(1), {"x": np.zeros((b, 1))})


class TestTrain:
    def test_reproducible(self):
        cfg = TrainConfig(k=4, iters=15, lr=0.01, anneal_period=50, seed=7)
        a = train(_model()[1], cfg).bounds
        b = train(_model()[1], cfg).bounds
        np.testing.assert_array_equal(a, b)

    def test_resume_matches_straight_run(self):
        cfg = TrainConfig(k=4, iters=20, lr=0.01, anneal_period=50, seed=2)
        straight = train(_model()[1], cfg).bounds
        half = TrainConfig(k=4, iters=10, lr=0.01, anneal_period=50, seed=2)
        model = _model()[1]
        first = train(model, half)
        second = train(model, half, optimizer=first.optimizer, streams=first.streams,
                       start=10)
        np.testing.assert_array_equal(np.concatenate([first.bounds, second.bounds]),
                                      straight)

    def test_divergence_guard(self):
        with pytest.raises(FloatingPointError, match="iteration 0"):
            train(_Diverging(), TrainConfig(k=3, iters=5))

    def test_invalid_config(self):
        for bad in (TrainConfig(k=1), TrainConfig(estimator="x"), TrainConfig(lr=0)):
            with pytest.raises(ValueError):
                train(_model()[1], bad)

    def test_trace_file(self, tmp_path):
        path = tmp_path / "trace.csv"
        cfg = TrainConfig(k=3, iters=10, trace_every=4, anneal_period=100)
        result = train(_model()[1], cfg, trace_path=path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["iter", "beta", "lower_bound", "elapsed_s"]
        assert [int(r[0]) for r in rows[1:]] == [4, 8, 10]
        assert float(rows[-1][2]) == result.bounds[-1]

    @pytest.mark.slow
    def test_single_tree_bound_improves(self):
        tree, _, aln = simulate_dataset(5, 200, seed=4)
        model = UnrootedVBPI(build_support([tree]), compress_patterns(aln))
        cfg = TrainConfig(k=10, iters=600, lr=0.01, anneal_period=1, seed=0)
        # iteration 0 is tempered (beta = 0.001), so start the window after it
        bounds = train(model, cfg).bounds[1:]
        ma = np.convolve(bounds, np.ones(50) / 50, mode="valid")
        assert ma[-1] > ma[0] + 5.0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        tree, model = _model()
        cfg = TrainConfig(k=3, iters=5, lr=0.01, anneal_period=10)
        result = train(model, cfg)
        path = tmp_path / "ck.json"
        save_checkpoint(path, model, cfg, result, extra={"note": "x"})
        loaded, d = load_checkpoint(path, model.patterns)
        assert d["iterations"] == 5 and d["note"] == "x"
        for k, v in model.get_params().items():
            np.testing.assert_array_equal(loaded.get_params()[k], v)
        eps = model.draw_eps(tree, np.random.default_rng(0), size=3)
        np.testing.assert_array_equal(loaded.evaluate(tree, eps).log_f,
                                      model.evaluate(tree, eps).log_f)

    def test_version_checked(self, tmp_path):
        _, model = _model()
        path = tmp_path / "ck.json"
        save_checkpoint(path, model, extra={"format_version": 42})
        with pytest.raises(ValueError):
            load_checkpoint(path)
