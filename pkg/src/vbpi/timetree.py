"""Time trees: node-height transform, strict clock, coalescent densities.

Heights are arrays indexed by node id; tip entries hold the sampling times
(measured backwards from the most recent sample).  The unconstrained height
parameters ``alpha`` use the same indexing: the root slot holds the log of
the root height above its lower bound, every other internal slot holds the
logit of the fractional position between the parent height and the node's
lower bound.  Tip slots are ignored.
"""

import numpy as np
from scipy.special import expit, gammaln

from .tree import Tree


def height_lower_bounds(tree: Tree, times) -> np.ndarray:
    """Tips get their sampling time; internal nodes the max over children."""
    if not tree.rooted:
        raise ValueError("time trees are rooted")
    lb = np.zeros(tree.n_nodes)
    lb[:tree.n_taxa] = np.asarray(times, dtype=float)
    for v in tree.internal_nodes:
        lb[v] = max(lb[c] for c in tree.children[v])
    return lb


class HeightTransform:
    """Heights and log-Jacobian for one ``alpha`` vector (or a batch)."""

    def __init__(self, tree: Tree, lb, alpha):
        alpha = np.asarray(alpha, dtype=float)
        self.tree = tree
        self.lb = lb
        self.alpha = alpha
        r = tree.root
        t = np.broadcast_to(lb, alpha.shape).copy()
        theta = np.zeros(alpha.shape)
        span = np.zeros(alpha.shape)          # t_parent - lb_i
        T = np.exp(alpha[..., r])
        t[..., r] = lb[r] + T
        log_jac = alpha[..., r].copy()
        for v in tree.preorder[1:]:
            if tree.is_leaf(v):
                continue
            p = tree.parent[v]
            th = expit(alpha[..., v])
            theta[..., v] = th
            span[..., v] = t[..., p] - lb[v]
            t[..., v] = t[..., p] - th * span[..., v]
            log_jac = log_jac + (np.log(span[..., v]) + np.log(th)
                                 + np.log1p(-th))
        self.T = T
        self.theta = theta
        self.span = span
        self.heights = t
        self.log_jacobian = log_jac

    def backward(self, grad_t, jac_weight=1.0):
        """Gradient in ``alpha`` of ``F(t) + jac_weight * log_jacobian``.

        ``grad_t`` is ``dF/dt`` with the batch shape of ``alpha``; tip
        entries are ignored.
        """
        tree = self.tree
        r = tree.root
        bar = np.array(grad_t, dtype=float, copy=True)
        d_alpha = np.zeros(self.alpha.shape)
        inner = [v for v in tree.internal_nodes if v != r]
        for v in inner:
            # log(t_parent - lb_v) in the Jacobian
            bar[..., tree.parent[v]] += jac_weight / self.span[..., v]
        for v in inner:                      # postorder: children first
            th = self.theta[..., v]
            p = tree.parent[v]
            d_alpha[..., v] = (bar[..., v] * -self.span[..., v] * th * (1 - th)
                               + jac_weight * (1 - 2 * th))
            bar[..., p] += bar[..., v] * (1 - th)
        d_alpha[..., r] = bar[..., r] * self.T + jac_weight
        return d_alpha


def heights_from_alpha(alpha, tree: Tree, lb):
    """Return ``(heights, log_jacobian)``."""
    h = HeightTransform(tree, lb, alpha)
    return h.heights, h.log_jacobian


def alpha_from_heights(t, tree: Tree, lb) -> np.ndarray:
    """Inverse of :func:`heights_from_alpha`."""
    t = np.asarray(t, dtype=float)
    alpha = np.zeros(t.shape)
    r = tree.root
    alpha[..., r] = np.log(t[..., r] - lb[r])
    for v in tree.internal_nodes:
        if v == r:
            continue
        p = tree.parent[v]
        th = (t[..., p] - t[..., v]) / (t[..., p] - lb[v])
        alpha[..., v] = np.log(th) - np.log1p(-th)
    return alpha


def clock_branch_lengths(t, rate, tree: Tree) -> np.ndarray:
    """Strict clock: ``q_v = rate * (t_parent - t_v)``; root slot is 0."""
    t = np.asarray(t, dtype=float)
    rate = np.asarray(rate, dtype=float)
    q = np.zeros(t.shape)
    edges = list(tree.edges)
    parents = [tree.parent[v] for v in edges]
    q[..., edges] = rate[..., None] * (t[..., parents] - t[..., edges])
    return q


# coalescent --------------------------------------------------------------

def _check_heights(t, tree):
    for v in tree.edges:
        gap = t[tree.parent[v]] - t[v]
        if gap < 0 or (gap == 0 and not tree.is_leaf(v)):
            raise ValueError("node heights must decrease from parent to child")


def coalescent_intervals(t, tree: Tree):
    """Event ordering and lineage bookkeeping for a time tree.

    Returns ``(order, lineages, piece)`` where ``order`` sorts nodes by
    (height, node id), ``lineages[k]`` counts lineages on the interval
    between sorted events ``k`` and ``k+1``, and ``piece[k]`` is the Skyride
    index of that interval (0 for the interval just below the root).
    """
    t = np.asarray(t, dtype=float)
    ids = np.arange(tree.n_nodes)
    order = np.lexsort((ids, t))
    is_coal = order >= tree.n_taxa
    step = np.where(is_coal, -1, 1)
    lineages = np.cumsum(step)[:-1]
    # coalescent events at or above each interval's upper end, minus one
    above = np.cumsum(is_coal[::-1])[::-1]
    piece = above[1:] - 1
    return order, lineages, piece


def coalescent_log_density(t, tree: Tree, gamma, grad: bool = False):
    """Heterochronous coalescent log density with piecewise-constant sizes.

    ``gamma`` is the log effective population size: a scalar (constant
    size) or ``N - 1`` Skyride values.  Skyride entry ``j`` applies between
    the ``j``-th and ``(j+1)``-th coalescent events counted down from the
    root; the last entry reaches down to time 0.  With ``grad`` returns
    ``(value, d/dt, d/dgamma)``.
    """
    t = np.asarray(t, dtype=float)
    _check_heights(t, tree)
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    n = tree.n_taxa
    order, lineages, piece = coalescent_intervals(t, tree)
    if gamma.size == 1:
        piece = np.zeros_like(piece)
    elif gamma.size != n - 1:
        raise ValueError(f"expected {n - 1} log population sizes")
    ts = t[order]
    width = np.diff(ts)
    pairs = lineages * (lineages - 1) / 2.0
    inv_ne = np.exp(-gamma[piece])
    rate = pairs * inv_ne
    value = -(rate * width).sum()
    # coalescent events: sorted positions k >= 1 that are internal nodes
    coal_pos = np.nonzero(order >= n)[0]
    below = coal_pos - 1                      # interval just below the event
    value += (np.log(pairs[below]) - gamma[piece[below]]).sum()
    if not grad:
        return float(value)
    d_t_sorted = np.zeros(len(ts))
    d_t_sorted[:-1] += rate                   # lower end of each interval
    d_t_sorted[1:] -= rate                    # upper end
    d_t = np.zeros(tree.n_nodes)
    d_t[order] = d_t_sorted
    d_gamma = np.zeros(gamma.size)
    np.add.at(d_gamma, piece, rate * width)
    np.add.at(d_gamma, piece[below], -1.0)
    return float(value), d_t, d_gamma


def isochronous_log_density(coal_times, gamma) -> float:
    """Coalescent density for tips all sampled at 0, event by event.

    ``coal_times`` are the ``N - 1`` internal heights; ``gamma`` is a scalar
    or ``N - 1`` values ordered from the root interval downwards.
    """
    c = np.sort(np.asarray(coal_times, dtype=float))[::-1]    # t_1 > ... > t_{N-1}
    n = len(c) + 1
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    g = np.full(n - 1, gamma[0]) if gamma.size == 1 else gamma
    tk = np.append(c, 0.0)                                     # t_1 .. t_N
    out = 0.0
    for k in range(2, n + 1):
        a_k = k * (k - 1) / 2.0
        ne_log = g[k - 2]                    # size on (t_k, t_{k-1}]
        out += np.log(a_k) - ne_log - a_k * (tk[k - 2] - tk[k - 1]) * np.exp(-ne_log)
    return float(out)


def skyride_log_prior(gamma, a=0.001, b=0.001, delta=None, grad: bool = False):
    """Log marginal Skyride prior with the GMRF precision integrated out.

    Omits the proportionality constant.  ``delta`` defaults to ones.
    """
    gamma = np.asarray(gamma, dtype=float)
    m = gamma.size                            # N - 1
    delta = np.ones(m - 1) if delta is None else np.asarray(delta, dtype=float)
    if a <= 0 or b <= 0 or np.any(delta <= 0):
        raise ValueError("Skyride hyperparameters must be positive")
    if delta.size != m - 1:
        raise ValueError("need one smoothing coefficient per successive pair")
    diff = np.diff(gamma)
    shape = a + (m - 1) / 2.0
    rate = b + 0.5 * (diff * diff / delta).sum()
    value = a * np.log(b) - gammaln(a) + gammaln(shape) - shape * np.log(rate)
    if not grad:
        return float(value)
    dd = diff / delta
    d = np.zeros(m)
    d[1:] -= shape / rate * dd
    d[:-1] += shape / rate * dd
    return float(value), d


def normal_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * np.log(2 * np.pi)


class ConstantPrior:
    """Constant population size with a normal prior on its log."""

    def __init__(self, mu0=0.0, sigma0=10.0):
        self.mu0 = mu0
        self.sigma0 = sigma0

    def size(self, n_taxa):
        return 1

    def log_prior(self, gamma):
        g = float(np.asarray(gamma).reshape(-1)[0])
        value = normal_logpdf(g, self.mu0, self.sigma0)
        return float(value), np.array([-(g - self.mu0) / self.sigma0 ** 2])

    normalized = True


class SkyridePrior:
    def __init__(self, a=0.001, b=0.001, delta=None):
        self.a = a
        self.b = b
        self.delta = delta

    def size(self, n_taxa):
        return n_taxa - 1

    def log_prior(self, gamma):
        return skyride_log_prior(gamma, self.a, self.b, self.delta, grad=True)

    normalized = False


class LogNormalRatePrior:
    """Lognormal prior on the clock rate (placeholder defaults)."""

    def __init__(self, mu=np.log(1e-3), sigma=1.5):
        self.mu = mu
        self.sigma = sigma

    def log_prior(self, r):
        lr = np.log(r)
        z = (lr - self.mu) / self.sigma
        value = -lr - np.log(self.sigma) - 0.5 * np.log(2 * np.pi) - 0.5 * z * z
        return float(value), float((-1.0 - z / self.sigma) / r)
