"""Binary dynamic Boltzmann machine.

Two interconvertible parametrisations are provided. The relaxed (matrix)
form ``(b, W^{[1..d-1]}, U^{[1..L]})`` is the canonical one used for
inference, learning and checkpoints. The STDP form ``(b, u, v, lam, mu)``
carries LTP/LTD weights and has its own learning rule; ``stdp_to_relaxed``
maps it onto the relaxed form with ``L = 2``.

Conventions: weight matrices are indexed ``[pre, post]`` so the drive on
unit ``j`` is ``sum_i x_i W_{i,j}``, i.e. ``x @ W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericalError
from .series import BINARY, Metrics, TimeSeries, TrainConfig, accuracy, nll_score
from .traces import TraceState


@dataclass
class RelaxedDybmParams:
    """Relaxed parameters.

    Attributes:
        b: ``(N,)`` bias.
        W: ``(d-1, N, N)``; ``W[k]`` is the weight at lag ``k + 1``.
        U: ``(L, N, N)``; ``U[l]`` weights the trace with decay ``decay_rates[l]``.
        decay_rates: ``(L,)`` trace decay rates.
        delay: conduction delay ``d``.
    """

    b: np.ndarray
    W: np.ndarray
    U: np.ndarray
    decay_rates: np.ndarray
    delay: int

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        n = self.b.size
        self.decay_rates = np.asarray(self.decay_rates, dtype=np.float64).reshape(-1)
        self.W = np.asarray(self.W, dtype=np.float64).reshape(self.delay - 1, n, n)
        self.U = np.asarray(self.U, dtype=np.float64).reshape(self.decay_rates.size, n, n)

    @property
    def n_units(self) -> int:
        return self.b.size

    @classmethod
    def zeros(cls, n_units: int, delay: int = 2, decay_rates=(0.5,)) -> "RelaxedDybmParams":
        rates = np.asarray(decay_rates, dtype=np.float64).reshape(-1)
        return cls(np.zeros(n_units), np.zeros((delay - 1, n_units, n_units)),
                   np.zeros((rates.size, n_units, n_units)), rates, delay)

    @classmethod
    def initial(cls, n_units: int, delay: int, decay_rates, rng: np.random.Generator,
                scale: float = 0.01) -> "RelaxedDybmParams":
        """Zero bias, weights uniform in ``(-scale, scale)``."""
        p = cls.zeros(n_units, delay, decay_rates)
        p.W = rng.uniform(-scale, scale, size=p.W.shape)
        p.U = rng.uniform(-scale, scale, size=p.U.shape)
        return p

    def weight_at_lag(self, delta: int) -> np.ndarray:
        """Effective ``W^{[delta]}`` of the unrolled finite-window machine."""
        if delta < 1:
            raise DomainError("lag must be >= 1")
        if delta < self.delay:
            return self.W[delta - 1]
        powers = self.decay_rates ** (delta - self.delay)
        return np.tensordot(powers, self.U, axes=1)

    def copy(self) -> "RelaxedDybmParams":
        return RelaxedDybmParams(self.b.copy(), self.W.copy(), self.U.copy(),
                                 self.decay_rates.copy(), self.delay)

    def to_dict(self) -> dict:
        return {"b": self.b.tolist(), "W": self.W.tolist(), "U": self.U.tolist(),
                "decay_rates": self.decay_rates.tolist(), "delay": self.delay}

    @classmethod
    def from_dict(cls, d: dict) -> "RelaxedDybmParams":
        return cls(d["b"], d["W"], d["U"], d["decay_rates"], int(d["delay"]))


@dataclass
class StdpDybmParams:
    """STDP parametrisation: bias, LTP weights ``u``, LTD weights ``v``."""

    b: np.ndarray
    u: np.ndarray
    v: np.ndarray
    lam: float
    mu: float
    delay: int

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        n = self.b.size
        self.u = np.asarray(self.u, dtype=np.float64).reshape(n, n)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(n, n)
        if not (0.0 <= self.lam < 1.0 and 0.0 <= self.mu < 1.0):
            raise DomainError("lam and mu must lie in [0, 1)")

    @property
    def n_units(self) -> int:
        return self.b.size

    def copy(self) -> "StdpDybmParams":
        return StdpDybmParams(self.b.copy(), self.u.copy(), self.v.copy(), self.lam, self.mu, self.delay)


def stdp_to_relaxed(params: StdpDybmParams) -> RelaxedDybmParams:
    """Map LTP/LTD weights onto the relaxed form with ``L = 2``.

    ``W^{[delta]} = -mu^{-delta} V - mu^{delta} V^T``, ``U^{[1]} = U`` (decay
    ``lam``), ``U^{[2]} = -mu^d V^T`` (decay ``mu``).
    """
    mu, d, v = params.mu, params.delay, params.v
    W = np.array([-(mu ** -k) * v - (mu ** k) * v.T for k in range(1, d)]).reshape(d - 1, *v.shape)
    U = np.stack([params.u.copy(), -(mu ** d) * v.T])
    return RelaxedDybmParams(params.b.copy(), W, U, np.array([params.lam, mu]), d)


def new_state(params: RelaxedDybmParams) -> TraceState:
    return TraceState(params.n_units, params.decay_rates, params.delay)


def new_stdp_state(params: StdpDybmParams) -> TraceState:
    return TraceState(params.n_units, [params.lam], params.delay, mu=params.mu)


def drive(b, lag_patterns, lag_weights, traces, trace_weights) -> np.ndarray:
    """``b + sum_k lag_k @ W_k + sum_l trace_l @ U_l`` (shared by every variant)."""
    m = b.copy()
    for lag, weight in zip(lag_patterns, lag_weights):
        m += lag @ weight
    for trace, weight in zip(traces, trace_weights):
        m += trace @ weight
    return m


def _check(params: RelaxedDybmParams, state: TraceState) -> None:
    if state.n_units != params.n_units or state.delay != params.delay \
            or state.alpha.shape[0] != params.U.shape[0]:
        raise DomainError("trace state does not match parameter dimensions")


def mean_activation(params: RelaxedDybmParams, state: TraceState) -> np.ndarray:
    """Log-odds ``m^{[t]}`` of every unit firing given the history in ``state``."""
    _check(params, state)
    return drive(params.b, state.fifo.lags(), params.W, state.alpha, params.U)


def firing_probability(m) -> np.ndarray:
    return expit(np.asarray(m, dtype=np.float64))


def bernoulli_log_likelihood(m: np.ndarray, x: np.ndarray) -> float:
    """``sum_j x_j m_j - log(1 + exp(m_j))`` without overflow."""
    return float(np.sum(x * m - np.logaddexp(0.0, m)))


def energy(params: RelaxedDybmParams, state: TraceState, x) -> float:
    """Conditional energy ``-m^T x``."""
    return float(-mean_activation(params, state) @ np.asarray(x, dtype=np.float64))


def step_log_likelihood(params: RelaxedDybmParams, state: TraceState, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return bernoulli_log_likelihood(mean_activation(params, state), x)


def sgd_step_relaxed(params: RelaxedDybmParams, state: TraceState, x, eta: float) -> RelaxedDybmParams:
    """One stochastic-gradient ascent step on the log-likelihood of ``x``.

    Updates ``params`` in place (and returns it); ``state`` is not advanced.
    """
    x = np.asarray(x, dtype=np.float64)
    err = x - firing_probability(mean_activation(params, state))
    _apply_relaxed_update(params, state, err, eta)
    return params


def _apply_relaxed_update(params, state, err, eta):
    params.b += eta * err
    if params.W.shape[0]:
        params.W += eta * state.fifo.lags()[:, :, None] * err[None, None, :]
    if params.U.shape[0]:
        params.U += eta * state.alpha[:, :, None] * err[None, None, :]


# --------------------------------------------------------------------------
# STDP form

def stdp_mean_activation(params: StdpDybmParams, state: TraceState) -> np.ndarray:
    """Negated per-unit energy coefficient from the LTP/LTD decomposition."""
    alpha = state.alpha[0]
    beta = state.beta()
    return params.b + alpha @ params.u - beta @ params.v - params.v @ state.gamma


def stdp_energy(params: StdpDybmParams, state: TraceState, x) -> float:
    """``sum_j (-b_j x_j + E^LTP_j + E^LTD_j)`` evaluated from the traces."""
    x = np.asarray(x, dtype=np.float64)
    alpha, beta, gamma = state.alpha[0], state.beta(), state.gamma
    e_bias = -params.b @ x
    e_ltp = -np.sum(params.u * np.outer(alpha, x))
    e_ltd = np.sum(params.v * np.outer(beta, x)) + np.sum(params.v * np.outer(x, gamma))
    return float(e_bias + e_ltp + e_ltd)


def stdp_step_log_likelihood(params: StdpDybmParams, state: TraceState, x) -> float:
    return bernoulli_log_likelihood(stdp_mean_activation(params, state), np.asarray(x, dtype=np.float64))


def sgd_step_stdp(params: StdpDybmParams, state: TraceState, x, eta: float) -> StdpDybmParams:
    """LTP/LTD learning rule, in place.

    ``v_ij += eta * beta_i (p_j - x_j) + eta * gamma_j (p_i - x_i)`` where
    ``p`` is the firing probability.
    """
    x = np.asarray(x, dtype=np.float64)
    p = firing_probability(stdp_mean_activation(params, state))
    err = x - p
    alpha, beta, gamma = state.alpha[0], state.beta(), state.gamma
    params.b += eta * err
    params.u += eta * np.outer(alpha, err)
    params.v += eta * (np.outer(beta, -err) + np.outer(-err, gamma))
    return params


# --------------------------------------------------------------------------
# sampling and finite windows

def sample_step(params: RelaxedDybmParams, state: TraceState, rng: np.random.Generator) -> np.ndarray:
    """Draw ``x^{[t]}`` unit-wise from the firing probabilities, then advance ``state``."""
    p = firing_probability(mean_activation(params, state))
    x = (rng.random(p.size) < p).astype(np.float64)
    state.step(x)
    return x


def dybmT_energy(params: RelaxedDybmParams, window, x) -> float:
    """Energy of the finite machine with ``T = len(window) + 1`` layers.

    ``window[k]`` is ``x^{[t-k-1]}``; lags at or beyond ``d`` use the
    geometric weights implied by the traces.
    """
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    m = params.b.copy()
    for k, past in enumerate(window):
        if past.size:
            m += past @ params.weight_at_lag(k + 1)
    return float(-m @ x)


# --------------------------------------------------------------------------
# online model

class BinaryDyBM:
    """Online binary DyBM: relaxed parameters plus their trace state."""

    kind = "dybm-binary"
    data_kind = BINARY

    def __init__(self, params: RelaxedDybmParams, learning_rate: float = 0.1,
                 lr_schedule: str = "constant"):
        self.params = params
        self.state = new_state(params)
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.n_updates = 0

    @classmethod
    def from_config(cls, n_units: int, config: TrainConfig, rng: np.random.Generator) -> "BinaryDyBM":
        params = RelaxedDybmParams.initial(n_units, config.delay, config.decay_rates, rng, config.init_scale)
        return cls(params, config.learning_rate, config.lr_schedule)

    @property
    def n_units(self) -> int:
        return self.params.n_units

    def reset(self) -> None:
        self.state.reset()

    def _eta(self) -> float:
        if self.lr_schedule == "inv_sqrt":
            return self.learning_rate / np.sqrt(self.n_updates + 1)
        return self.learning_rate

    def predict(self) -> np.ndarray:
        """Firing probabilities for the next tick."""
        return firing_probability(mean_activation(self.params, self.state))

    def learn_one_step(self, x) -> float:
        """Score ``x``, update parameters, advance the traces. Returns the log-likelihood."""
        x = np.asarray(x, dtype=np.float64)
        m = mean_activation(self.params, self.state)
        ll = bernoulli_log_likelihood(m, x)
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at update {self.n_updates}")
        _apply_relaxed_update(self.params, self.state, x - firing_probability(m), self._eta())
        self.n_updates += 1
        self.state.step(x)
        return ll

    def score_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        ll = bernoulli_log_likelihood(mean_activation(self.params, self.state), x)
        self.state.step(x)
        return ll

    def observe(self, x) -> None:
        self.state.step(np.asarray(x, dtype=np.float64))

    def sample(self, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        return np.array([sample_step(self.params, self.state, rng) for _ in range(n_steps)])

    def forecast(self, horizon: int) -> np.ndarray:
        """Iterated one-step expectations, each fed back as the next input."""
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        state = self.state.copy()
        out = np.empty((horizon, self.n_units))
        for h in range(horizon):
            out[h] = firing_probability(mean_activation(self.params, state))
            state.step(out[h])
        return out

    def fit_epoch(self, series: TimeSeries) -> Metrics:
        """One online pass from an empty history; metrics use pre-update predictions."""
        self.reset()
        lls, preds = [], []
        for x in series.values:
            preds.append(self.predict())
            lls.append(self.learn_one_step(x))
        return Metrics(nll_score(lls), accuracy=accuracy(np.array(preds), series.values))

    def score(self, series: TimeSeries) -> np.ndarray:
        """Per-step log-likelihoods without learning, from an empty history."""
        self.reset()
        return np.array([self.score_one_step(x) for x in series.values])

    def evaluate(self, series: TimeSeries) -> Metrics:
        self.reset()
        lls, preds = [], []
        for x in series.values:
            preds.append(self.predict())
            lls.append(self.score_one_step(x))
        return Metrics(nll_score(lls), accuracy=accuracy(np.array(preds), series.values))

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "state": self.state.to_dict(),
                "learning_rate": self.learning_rate, "lr_schedule": self.lr_schedule,
                "n_updates": self.n_updates}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryDyBM":
        model = cls(RelaxedDybmParams.from_dict(d["params"]), d["learning_rate"], d["lr_schedule"])
        model.state.load_dict(d["state"])
        model.n_updates = int(d["n_updates"])
        return model
