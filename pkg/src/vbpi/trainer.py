"""Multi-sample objectives, gradient estimators, Adam and the training loop."""

import csv
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp, softmax

CHECKPOINT_VERSION = 1
STREAMS = ("topology", "branch", "height")


# objectives and estimators -----------------------------------------------

def log_mean_exp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    return logsumexp(x, axis=axis) - math.log(x.shape[axis])


def multi_sample_elbo(log_f) -> float:
    """K-sample lower bound estimate ``log(mean(f))``."""
    return float(log_mean_exp(log_f))


def normalized_weights(log_f) -> np.ndarray:
    return softmax(np.asarray(log_f, dtype=float))


def vimco_coefficients(log_f) -> np.ndarray:
    """Per-sample learning signals minus normalized weights.

    The leave-one-out estimate of each ``f_j`` is the geometric mean of the
    other samples.
    """
    log_f = np.asarray(log_f, dtype=float)
    k = log_f.size
    if k < 2:
        raise ValueError("VIMCO needs at least two samples")
    bound = log_mean_exp(log_f)
    loo = (log_f.sum() - log_f) / (k - 1)
    swapped = np.broadcast_to(log_f, (k, k)).copy()
    np.fill_diagonal(swapped, loo)
    signal = bound - log_mean_exp(swapped, axis=1)
    return signal - normalized_weights(log_f)


def vimco_grad_phi(log_f, scores) -> np.ndarray:
    """``scores[j]`` is the gradient of the log topology probability of draw j."""
    return vimco_coefficients(log_f) @ np.asarray(scores)


def rws_grad_phi(log_f, scores) -> np.ndarray:
    return normalized_weights(log_f) @ np.asarray(scores)


def reparam_grad(log_f, grads) -> np.ndarray:
    """Importance-weighted sum of per-sample pathwise gradients."""
    return normalized_weights(log_f) @ np.asarray(grads)


def anneal_beta(t, period) -> float:
    return min(1.0, 0.001 + t / period)


# optimizer ------------------------------------------------------------------

class Adam:
    """Adam for gradient ascent on a dict of parameter arrays."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p
                continue
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            out[k] = p + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out

    def state(self) -> dict:
        return {"t": self.t, "lr": self.lr,
                "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}

    def load_state(self, d: dict):
        self.t = d["t"]
        self.m = {k: np.array(v) for k, v in d["m"].items()}
        self.v = {k: np.array(v) for k, v in d["v"].items()}


def adam_step(state: Adam, params: dict, grads: dict, step_size=None) -> dict:
    if step_size is not None:
        state.lr = step_size
    return state.step(params, grads)


# sampling a K-sample batch ------------------------------------------------

def make_streams(seed) -> dict:
    """Independent named generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


def continuous_stream(model, streams):
    return streams["height" if model.kind == "timetree" else "branch"]


class Batch:
    """K draws from the variational family, evaluated grouped by topology."""

    def __init__(self, trees, log_f, groups, evals):
        self.trees = trees
        self.log_f = log_f
        self.groups = groups          # list of index arrays, one per topology
        self.evals = evals

    @property
    def bound(self) -> float:
        return multi_sample_elbo(self.log_f)

    def scores(self) -> np.ndarray:
        out = np.empty((len(self.trees), self.evals[0].score.size))
        for idx, ev in zip(self.groups, self.evals):
            out[idx] = ev.score
        return out

    def weighted_grads(self, coef) -> dict:
        total = {}
        for idx, ev in zip(self.groups, self.evals):
            for name, g in ev.grads.items():
                acc = coef[idx] @ g
                total[name] = total[name] + acc if name in total else acc
        return total


def draw_batch(model, k, streams, beta=1.0, grad=True, trees=None) -> Batch:
    if trees is None:
        trees = model.sample_topologies(k, streams["topology"])
    rng = continuous_stream(model, streams)
    eps = [model.draw_eps(t, rng) for t in trees]
    order = {}
    for j, t in enumerate(trees):
        order.setdefault(t, []).append(j)
    log_f = np.empty(len(trees))
    groups, evals = [], []
    for t, idx in order.items():
        idx = np.array(idx)
        ev = model.evaluate(t, np.stack([eps[j] for j in idx]), beta=beta, grad=grad)
        log_f[idx] = ev.log_f
        groups.append(idx)
        evals.append(ev)
    return Batch(trees, log_f, groups, evals)


def estimate_gradients(model, batch: Batch, estimator="vimco") -> dict:
    """Topology gradient (VIMCO or RWS) plus reparameterized continuous parts."""
    scores = batch.scores()
    if estimator == "vimco":
        g_phi = vimco_grad_phi(batch.log_f, scores)
    elif estimator == "rws":
        g_phi = rws_grad_phi(batch.log_f, scores)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    grads = batch.weighted_grads(normalized_weights(batch.log_f))
    grads["phi"] = g_phi
    return grads


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        return {k: g * (max_norm / total) for k, g in grads.items()}
    return grads


# training loop --------------------------------------------------------------

@dataclass
class TrainConfig:
    k: int = 10
    estimator: str = "vimco"
    iters: int = 200000
    lr: float = 0.001
    anneal_period: float = 100000
    seed: int = 0
    trace_every: int = 100
    max_grad_norm: float | None = None

    def validate(self):
        if self.estimator not in ("vimco", "rws"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "vimco" and self.k < 2:
            raise ValueError("VIMCO needs k >= 2")
        if self.k < 1 or self.iters < 0 or self.lr <= 0 or self.anneal_period <= 0:
            raise ValueError("invalid training configuration")


class TrainResult:
    def __init__(self, bounds, betas, trace, optimizer, streams):
        self.bounds = np.asarray(bounds)
        self.betas = np.asarray(betas)
        self.trace = trace
        self.optimizer = optimizer
        self.streams = streams


def train(model, config: TrainConfig, trace_path=None, progress=None,
          optimizer: Adam | None = None, streams=None, start: int = 0) -> TrainResult:
    """Stochastic ascent on the annealed multi-sample bound.

    Every iteration draws ``k`` topologies and continuous draws, forms the
    chosen topology gradient and the reparameterized continuous gradient,
    and takes one Adam step.  Returns per-iteration bounds and the trace
    rows ``(iter, beta, lower_bound, elapsed_s)``.
    """
    config.validate()
    streams = streams or make_streams(config.seed)
    opt = optimizer or Adam(lr=config.lr)
    params = {k: np.array(v, dtype=float) for k, v in model.get_params().items()}
    bounds, betas, trace = [], [], []
    t0 = time.perf_counter()
    fh = writer = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iter", "beta", "lower_bound", "elapsed_s"])
    try:
        for it in range(start, start + config.iters):
            beta = anneal_beta(it, config.anneal_period)
            batch = draw_batch(model, config.k, streams, beta=beta, grad=True)
            bound = batch.bound
            if not math.isfinite(bound):
                raise FloatingPointError(
                    f"non-finite lower bound {bound} at iteration {it} "
                    f"(beta={beta:.4g}, log_f range "
                    f"{np.min(batch.log_f):.4g}..{np.max(batch.log_f):.4g})")
            grads = estimate_gradients(model, batch, config.estimator)
            if config.max_grad_norm:
                grads = _clip(grads, config.max_grad_norm)
            params = opt.step(params, grads)
            model.set_params(params)
            bounds.append(bound)
            betas.append(beta)
            if (it + 1) % config.trace_every == 0 or it == start + config.iters - 1:
                row = (it + 1, beta, bound, time.perf_counter() - t0)
                trace.append(row)
                if writer is not None:
                    writer.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])
                if progress is not None:
                    progress(row)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(bounds, betas, trace, opt, streams)


# checkpoints ------------------------------------------------------------------

def _rng_state(streams):
    return {k: g.bit_generator.state for k, g in streams.items()}


def save_checkpoint(path, model, config: TrainConfig | None = None, result=None,
                    extra=None):
    d = {
        "format_version": CHECKPOINT_VERSION,
        "taxa": list(model.support.taxa.names),
        "support": model.support.to_dict(),
        "model": model.config(),
        "params": {k: np.asarray(v).tolist() for k, v in model.get_params().items()},
        "config": asdict(config) if config is not None else None,
    }
    if result is not None:
        d["optimizer"] = result.optimizer.state()
        d["rng_state"] = _rng_state(result.streams)
        d["iterations"] = int(len(result.bounds))
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_checkpoint(path, patterns=None):
    """Rebuild the model bundle from a checkpoint.

    Returns ``(model, checkpoint_dict)``.
    """
    from .models import TimeTreeVBPI, UnrootedVBPI
    from .sbn import SubsplitSupport

    with open(path) as fh:
        d = json.load(fh)
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
    support = SubsplitSupport.from_dict(d["support"])
    cfg = d["model"]
    if cfg["kind"] == "unrooted":
        model = UnrootedVBPI(support, patterns, psp=cfg["psp"],
                             branch_rate=cfg.get("branch_rate", 10.0))
    else:
        model = TimeTreeVBPI(support, patterns, times=cfg.get("times"),
                             coalescent=cfg["coalescent"], clock_rate=cfg["clock_rate"],
                             psp=cfg["psp"])
    model.set_params({k: np.array(v, dtype=float) for k, v in d["params"].items()})
    return model, d
