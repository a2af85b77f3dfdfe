"""Recurrent temporal RBM trained by backpropagation through time.

At each step ``t`` an RBM over ``(x^{[t]}, h^{[t]})`` is emitted with hidden
bias ``c_t = b_h + U^T r^{[t-1]}`` (``c_0 = b_init``), and the deterministic
recurrent state is the hidden mean ``r^{[t]} = logistic(c_t + W^T x^{[t]})``.
Weight matrices are indexed ``W[visible, hidden]`` and ``U[prev, next]``.

The negative phase comes either from exact enumeration over the ``2^{N_v}``
visible patterns (small models, tests) or from CD-k Gibbs chains started at
the data.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DomainError, NumericalError
from .series import BINARY, Metrics, TimeSeries, TrainConfig, nll_score

MAX_ENUMERATED_VISIBLE = 20
# training metrics use exact enumeration only up to this many visible units
METRIC_ENUMERATION_LIMIT = 12


def softplus(z):
    return np.logaddexp(0.0, z)


@dataclass
class RtrbmParams:
    b_v: np.ndarray
    b_h: np.ndarray
    b_init: np.ndarray
    W: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.b_v = np.asarray(self.b_v, dtype=np.float64).reshape(-1)
        self.b_h = np.asarray(self.b_h, dtype=np.float64).reshape(-1)
        nv, nh = self.b_v.size, self.b_h.size
        self.b_init = np.asarray(self.b_init, dtype=np.float64).reshape(nh)
        self.W = np.asarray(self.W, dtype=np.float64).reshape(nv, nh)
        self.U = np.asarray(self.U, dtype=np.float64).reshape(nh, nh)

    @property
    def n_visible(self) -> int:
        return self.b_v.size

    @property
    def n_hidden(self) -> int:
        return self.b_h.size

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RtrbmParams":
        return cls(np.zeros(n_visible), np.zeros(n_hidden), np.zeros(n_hidden),
                   np.zeros((n_visible, n_hidden)), np.zeros((n_hidden, n_hidden)))

    @classmethod
    def initial(cls, n_visible: int, n_hidden: int, rng: np.random.Generator,
                scale: float = 0.01) -> "RtrbmParams":
        p = cls.zeros(n_visible, n_hidden)
        p.W = rng.uniform(-scale, scale, size=p.W.shape)
        p.U = rng.uniform(-scale, scale, size=p.U.shape)
        return p

    def blocks(self) -> dict[str, np.ndarray]:
        return {"b_v": self.b_v, "b_h": self.b_h, "b_init": self.b_init, "W": self.W, "U": self.U}

    def copy(self) -> "RtrbmParams":
        return RtrbmParams(**{k: v.copy() for k, v in self.blocks().items()})

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.blocks().items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RtrbmParams":
        return cls(d["b_v"], d["b_h"], d["b_init"], d["W"], d["U"])


def hidden_bias(params: RtrbmParams, r_prev) -> np.ndarray:
    """``c = b_h + U^T r_prev``, or ``b_init`` when there is no previous state."""
    if r_prev is None:
        return params.b_init.copy()
    return params.b_h + np.asarray(r_prev, dtype=np.float64) @ params.U


def hidden_mean_recursion(params: RtrbmParams, series) -> np.ndarray:
    """``(T, N_h)`` array of ``r^{[t]}`` along the data."""
    xs = np.atleast_2d(np.asarray(series, dtype=np.float64))
    r = np.empty((xs.shape[0], params.n_hidden))
    prev = None
    for t, x in enumerate(xs):
        r[t] = expit(hidden_bias(params, prev) + x @ params.W)
        prev = r[t]
    return r


def free_energy(params: RtrbmParams, r_prev, x) -> float:
    """``-b_v.x - sum_j softplus(c_j + (W^T x)_j)``."""
    x = np.asarray(x, dtype=np.float64)
    c = hidden_bias(params, r_prev)
    return float(-params.b_v @ x - np.sum(softplus(c + x @ params.W)))


def all_patterns(n: int) -> np.ndarray:
    """Every binary vector of length ``n`` as a ``(2^n, n)`` array."""
    if n > MAX_ENUMERATED_VISIBLE:
        raise DomainError(f"refusing to enumerate 2^{n} patterns (limit {MAX_ENUMERATED_VISIBLE} units)")
    return np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(2 ** n, n)


def _log_probs_all(params: RtrbmParams, c: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    neg_F = patterns @ params.b_v + softplus(c + patterns @ params.W).sum(axis=1)
    return neg_F - logsumexp(neg_F)


def conditional_visible_logprob(params: RtrbmParams, r_prev, x) -> float:
    """Exact ``log P(x | r_prev)`` by enumerating all visible patterns."""
    x = np.asarray(x, dtype=np.float64)
    patterns = all_patterns(params.n_visible)
    c = hidden_bias(params, r_prev)
    neg_F = patterns @ params.b_v + softplus(c + patterns @ params.W).sum(axis=1)
    return float(-free_energy(params, r_prev, x) - logsumexp(neg_F))


def exact_negative_stats(params: RtrbmParams, c: np.ndarray, patterns=None):
    """Model expectations ``E[x]``, ``E[h]``, ``E[x h^T]`` of the step RBM with hidden bias ``c``."""
    if patterns is None:
        patterns = all_patterns(params.n_visible)
    p = np.exp(_log_probs_all(params, c, patterns))
    hm = expit(c + patterns @ params.W)
    return p @ patterns, p @ hm, (patterns * p[:, None]).T @ hm


def cd_negative_sample(params: RtrbmParams, r_prev, x, k: int, rng: np.random.Generator):
    """``k`` alternating Gibbs sweeps ``h | x`` then ``x | h`` started from ``x``."""
    if k < 1:
        raise DomainError("CD needs k >= 1")
    c = hidden_bias(params, r_prev)
    xv = np.asarray(x, dtype=np.float64)
    h = np.zeros(params.n_hidden)
    for _ in range(k):
        h = (rng.random(params.n_hidden) < expit(c + xv @ params.W)).astype(np.float64)
        xv = (rng.random(params.n_visible) < expit(params.b_v + params.W @ h)).astype(np.float64)
    return xv, h


@dataclass
class BpttTape:
    """Forward-pass record for one sequence."""

    x: np.ndarray
    r: np.ndarray
    c: np.ndarray
    neg_x: np.ndarray
    neg_h: np.ndarray
    neg_xh: np.ndarray
    log_probs: list = field(default_factory=list)


def forward(params: RtrbmParams, series, mode: str = "cd", k: int = 1,
            rng: np.random.Generator | None = None, with_log_probs: bool = False) -> BpttTape:
    """Run the recursion along the data and collect negative-phase statistics.

    Args:
        mode: ``"exact"`` (enumeration) or ``"cd"`` (CD-k from the data).
        with_log_probs: also record exact ``log P(x^{[t]} | r^{[t-1]})``.
    """
    xs = np.atleast_2d(np.asarray(series, dtype=np.float64))
    T, nv, nh = xs.shape[0], params.n_visible, params.n_hidden
    if mode not in ("exact", "cd"):
        raise DomainError(f"unknown negative-phase mode {mode!r}")
    if mode == "cd" and rng is None:
        raise DomainError("CD mode needs an rng")
    patterns = all_patterns(nv) if (mode == "exact" or with_log_probs) else None
    r = np.empty((T, nh))
    c = np.empty((T, nh))
    neg_x = np.empty((T, nv))
    neg_h = np.empty((T, nh))
    neg_xh = np.empty((T, nv, nh))
    log_probs = []
    prev = None
    for t in range(T):
        c[t] = hidden_bias(params, prev)
        r[t] = expit(c[t] + xs[t] @ params.W)
        if mode == "exact":
            neg_x[t], neg_h[t], neg_xh[t] = exact_negative_stats(params, c[t], patterns)
        else:
            xt, _ = cd_negative_sample(params, prev, xs[t], k, rng)
            neg_x[t] = xt
            neg_h[t] = expit(c[t] + xt @ params.W)
            neg_xh[t] = np.outer(xt, neg_h[t])
        if with_log_probs:
            lp = _log_probs_all(params, c[t], patterns)
            idx = int(xs[t] @ (2 ** np.arange(nv - 1, -1, -1)))
            log_probs.append(float(lp[idx]))
        prev = r[t]
    return BpttTape(xs, r, c, neg_x, neg_h, neg_xh, log_probs)


def recurrent_gradients(params: RtrbmParams, tape: BpttTape, h_terms=None) -> np.ndarray:
    """Backward recursion ``g^{[s-1]} = U (h^{[s]} + r^{[s]}(1-r^{[s]}) g^{[s]})``, ``g^{[T-1]} = 0``.

    ``h_terms[t]`` defaults to the positive-minus-negative hidden statistic.
    Returns ``(T, N_h)``.
    """
    T = tape.x.shape[0]
    if h_terms is None:
        h_terms = tape.r - tape.neg_h
    g = np.zeros((T, params.n_hidden))
    for s in range(T - 1, 0, -1):
        g[s - 1] = params.U @ (h_terms[s] + tape.r[s] * (1 - tape.r[s]) * g[s])
    return g


def bptt_backward(params: RtrbmParams, tape: BpttTape) -> dict[str, np.ndarray]:
    """Log-likelihood gradient (positive minus negative phase) for every block."""
    delta_c = tape.r - tape.neg_h
    g = recurrent_gradients(params, tape, delta_c)
    through_r = tape.r * (1 - tape.r) * g
    total = delta_c + through_r
    grad_W = tape.x.T @ tape.r - tape.neg_xh.sum(axis=0) + tape.x.T @ through_r
    return {
        "b_v": (tape.x - tape.neg_x).sum(axis=0),
        "b_h": total[1:].sum(axis=0),
        "b_init": total[0].copy(),
        "W": grad_W,
        "U": tape.r[:-1].T @ total[1:],
    }


def sequence_log_likelihood(params: RtrbmParams, series) -> float:
    """Exact ``sum_t log P(x^{[t]} | r^{[t-1]})`` by enumeration."""
    return math.fsum(forward(params, series, "exact", with_log_probs=True).log_probs)


def apply_gradients(params: RtrbmParams, grads: dict, eta: float) -> None:
    for name, block in params.blocks().items():
        block += eta * grads[name]
    for name, block in params.blocks().items():
        if not np.all(np.isfinite(block)):
            raise NumericalError(f"non-finite values in RTRBM block {name}")


def train_epoch(params: RtrbmParams, series, eta: float, k: int = 1, rng=None,
                mode: str = "cd") -> tuple[Metrics, np.ndarray]:
    """Forward pass, backward pass, one gradient-ascent step.

    Returns the metrics of the pre-update parameters and per-step forward
    wall times in nanoseconds.
    """
    xs = np.atleast_2d(np.asarray(series, dtype=np.float64))
    exact_metric = params.n_visible <= METRIC_ENUMERATION_LIMIT
    times = np.empty(xs.shape[0], dtype=np.int64)
    start = time.perf_counter_ns()
    tape = forward(params, xs, mode, k, rng, with_log_probs=exact_metric)
    times[:] = (time.perf_counter_ns() - start) // max(xs.shape[0], 1)
    nll = nll_score(tape.log_probs) if exact_metric else float("nan")
    apply_gradients(params, bptt_backward(params, tape), eta)
    return Metrics(nll), times


def online_bptt(params: RtrbmParams, series, eta: float, k: int = 1, rng=None,
                mode: str = "cd", timer=time.perf_counter_ns) -> np.ndarray:
    """Online training: after each new pattern, redo BPTT over the whole prefix.

    Returns per-step wall times in nanoseconds; the cost of step ``t`` grows
    linearly with ``t``.
    """
    xs = np.atleast_2d(np.asarray(series, dtype=np.float64))
    times = np.empty(xs.shape[0], dtype=np.int64)
    for t in range(xs.shape[0]):
        start = timer()
        tape = forward(params, xs[: t + 1], mode, k, rng)
        apply_gradients(params, bptt_backward(params, tape), eta)
        times[t] = timer() - start
    return times


class Rtrbm:
    """Batch-trained RTRBM with the common model interface."""

    kind = "rtrbm"
    data_kind = BINARY

    def __init__(self, params: RtrbmParams, learning_rate: float = 0.05, cd_steps: int = 1,
                 rng: np.random.Generator | None = None, mode: str = "cd"):
        self.params = params
        self.learning_rate = learning_rate
        self.cd_steps = cd_steps
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode
        self.r_prev: np.ndarray | None = None

    @classmethod
    def from_config(cls, n_visible: int, config: TrainConfig, rng: np.random.Generator,
                    sampler: np.random.Generator | None = None) -> "Rtrbm":
        n_hidden = config.n_hidden or n_visible
        return cls(RtrbmParams.initial(n_visible, n_hidden, rng, config.init_scale),
                   config.learning_rate, config.cd_steps, sampler or rng)

    @property
    def n_units(self) -> int:
        return self.params.n_visible

    def reset(self) -> None:
        self.r_prev = None

    def fit_epoch(self, series: TimeSeries) -> Metrics:
        self.reset()
        metrics, _ = train_epoch(self.params, series.values, self.learning_rate, self.cd_steps,
                                 self.rng, self.mode)
        return metrics

    def score_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        ll = conditional_visible_logprob(self.params, self.r_prev, x)
        self.observe(x)
        return ll

    def observe(self, x) -> None:
        c = hidden_bias(self.params, self.r_prev)
        self.r_prev = expit(c + np.asarray(x, dtype=np.float64) @ self.params.W)

    def score(self, series: TimeSeries) -> np.ndarray:
        self.reset()
        return np.array([self.score_one_step(x) for x in series.values])

    def evaluate(self, series: TimeSeries) -> Metrics:
        return Metrics(nll_score(self.score(series)))

    def predict(self) -> np.ndarray:
        """``E[x | r_prev]``; exact for small models, mean-field otherwise."""
        c = hidden_bias(self.params, self.r_prev)
        if self.params.n_visible <= METRIC_ENUMERATION_LIMIT:
            return exact_negative_stats(self.params, c)[0]
        x = np.full(self.params.n_visible, 0.5)
        for _ in range(50):
            x = expit(self.params.b_v + self.params.W @ expit(c + x @ self.params.W))
        return x

    def forecast(self, horizon: int) -> np.ndarray:
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        saved = None if self.r_prev is None else self.r_prev.copy()
        out = np.empty((horizon, self.n_units))
        try:
            for k in range(horizon):
                out[k] = self.predict()
                self.observe(out[k])
        finally:
            self.r_prev = saved
        return out

    def sample(self, n_steps: int, rng: np.random.Generator, sweeps: int = 100) -> np.ndarray:
        out = np.empty((n_steps, self.n_units))
        for k in range(n_steps):
            start = (rng.random(self.n_units) < 0.5).astype(np.float64)
            out[k], _ = cd_negative_sample(self.params, self.r_prev, start, sweeps, rng)
            self.observe(out[k])
        return out

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "learning_rate": self.learning_rate,
                "cd_steps": self.cd_steps, "mode": self.mode,
                "r_prev": None if self.r_prev is None else self.r_prev.tolist(),
                "rng": self.rng.bit_generator.state}

    @classmethod
    def from_dict(cls, d: dict) -> "Rtrbm":
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        model = cls(RtrbmParams.from_dict(d["params"]), d["learning_rate"], int(d["cd_steps"]), rng, d["mode"])
        model.r_prev = None if d["r_prev"] is None else np.asarray(d["r_prev"], dtype=np.float64)
        return model
