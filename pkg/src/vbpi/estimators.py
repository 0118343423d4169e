"""Importance-sampling estimators and topology KL after training."""

import math

import numpy as np
from scipy.special import logsumexp

from .trainer import draw_batch, log_mean_exp, make_streams


def _log_stats(log_w):
    """Log of the mean ratio and its delta-method standard error."""
    log_w = np.asarray(log_w, dtype=float)
    m = log_w.size
    est = float(logsumexp(log_w) - math.log(m))
    w = np.exp(log_w - log_w.max())
    rel = np.std(w, ddof=1) / np.mean(w) if m > 1 else float("inf")
    return est, float(rel / math.sqrt(m))


def tree_marginal_likelihood(model, tree, m: int, rng, batch: int = 5000):
    """Marginal likelihood of one topology by importance sampling.

    Draws continuous parameters from the trained conditional variational
    distribution on ``tree`` and averages the likelihood-times-prior ratios.
    Returns ``(log estimate, standard error on the log scale)``.
    """
    if not model.covers(tree):
        raise ValueError("tree is not covered by the support")
    log_w = np.empty(m)
    done = 0
    while done < m:
        b = min(batch, m - done)
        eps = model.draw_eps(tree, rng, size=b)
        ev = model.evaluate(tree, eps, beta=1.0, grad=False, need_tau=False)
        log_w[done:done + b] = ev.log_weight
        done += b
    return _log_stats(log_w)


def bound_samples(model, k: int, repeats: int, seed=0, streams=None) -> np.ndarray:
    """``repeats`` independent draws of the K-sample bound (beta = 1).

    All ``k * repeats`` draws are evaluated grouped by topology.
    """
    streams = streams or make_streams(seed)
    batch = draw_batch(model, k * repeats, streams, beta=1.0, grad=False)
    return log_mean_exp(batch.log_f.reshape(repeats, k), axis=1)


def evidence_estimate(model, k: int = 1000, repeats: int = 100, seed=0):
    """Mean and standard deviation of repeated K-sample bound estimates.

    A lower-bound proxy for the log evidence that tightens as ``k`` grows.
    """
    streams = make_streams(seed)
    vals = np.array([bound_samples(model, k, 1, streams=streams)[0]
                     for _ in range(repeats)])
    return float(vals.mean()), float(vals.std(ddof=1) if repeats > 1 else 0.0), vals


def kl_topology(model, reference):
    """KL divergence from the reference distribution to the SBN.

    ``reference`` is a list of ``(tree, probability)``; probabilities are
    renormalized over the listed trees.  Returns ``(kl, offending)`` where
    ``offending`` lists reference trees with zero SBN probability (then the
    divergence is ``inf``).
    """
    p = np.array([w for _, w in reference], dtype=float)
    p = p / p.sum()
    log_q = np.array([model.sbn.log_prob(t) for t, _ in reference])
    bad = [t for (t, _), lq in zip(reference, log_q) if not np.isfinite(lq)]
    if bad:
        return float("inf"), bad
    return float(np.sum(p * (np.log(p) - log_q))), []
