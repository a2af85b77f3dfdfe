"""DyBM with hidden units.

The visible part ``theta = (b, W^{[1..d]}, V^{[1..d]})`` is trained exactly
like a fully visible DyBM, with the hidden history replaced by sampled
values. The hidden part ``phi = (U^{[1..d]}, Z^{[1..d]})`` is trained by a
score-function rule that weights ``grad log p_phi(H)`` of past samples by
the current visible log-likelihood.

Block ``[d]`` of every weight family is the trace block: it multiplies the
visible trace ``alpha`` or the hidden trace ``beta`` (both with decay
``lam``). Hidden units carry no bias.

Internally ``phi`` is one ``(F, N_h)`` matrix whose rows are matched with a
feature vector ``f = [x^{[t-1]}, ..., x^{[t-d+1]}, alpha, h^{[t-1]}, ...,
h^{[t-d+1]}, beta]``, so the hidden drive is ``f @ phi`` and every
gradient summand is ``outer(f, H - q)``. ``U`` and ``Z`` are views into it.
"""

from __future__ import annotations

import math

import numpy as np

from . import binary
from .binary import RelaxedDybmParams, bernoulli_log_likelihood, firing_probability
from .errors import DomainError, NumericalError
from .series import BINARY, Metrics, TimeSeries, TrainConfig, accuracy, nll_score
from .traces import TraceState


class HiddenDybmParams:
    """Parameters of a DyBM with ``n_hidden`` hidden units.

    Attributes:
        core: visible-to-visible part as relaxed params with ``L = 1``;
            ``core.W[k]`` is ``W^{[k+1]}`` and ``core.U[0]`` is ``W^{[d]}``.
        V: ``(d, N_h, N_v)`` hidden-to-visible weights.
        phi: ``(F, N_h)`` stacked hidden-side weights (see ``U``, ``Z``).
    """

    def __init__(self, core: RelaxedDybmParams, n_hidden: int, V=None, phi=None):
        if core.decay_rates.size != 1:
            raise DomainError("hidden-unit DyBM uses a single decay rate")
        self.core = core
        self.n_hidden = int(n_hidden)
        d, nv, nh = core.delay, core.n_units, self.n_hidden
        self.V = np.zeros((d, nh, nv)) if V is None else np.asarray(V, dtype=np.float64).reshape(d, nh, nv)
        shape = (d * (nv + nh), nh)
        self.phi = np.zeros(shape) if phi is None else np.asarray(phi, dtype=np.float64).reshape(shape)

    @property
    def n_visible(self) -> int:
        return self.core.n_units

    @property
    def delay(self) -> int:
        return self.core.delay

    @property
    def lam(self) -> float:
        return float(self.core.decay_rates[0])

    @property
    def U(self) -> np.ndarray:
        """``(d, N_v, N_h)`` view; ``U[d-1]`` is the visible-trace block."""
        return self.phi[: self.delay * self.n_visible].reshape(self.delay, self.n_visible, self.n_hidden)

    @property
    def Z(self) -> np.ndarray:
        """``(d, N_h, N_h)`` view; ``Z[d-1]`` is the hidden-trace block."""
        return self.phi[self.delay * self.n_visible:].reshape(self.delay, self.n_hidden, self.n_hidden)

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int, delay: int = 2, lam: float = 0.5) -> "HiddenDybmParams":
        return cls(RelaxedDybmParams.zeros(n_visible, delay, (lam,)), n_hidden)

    @classmethod
    def initial(cls, n_visible: int, n_hidden: int, delay: int, lam: float,
                rng: np.random.Generator, scale: float = 0.01) -> "HiddenDybmParams":
        core = RelaxedDybmParams.initial(n_visible, delay, (lam,), rng, scale)
        p = cls(core, n_hidden)
        p.V = rng.uniform(-scale, scale, size=p.V.shape)
        p.phi = rng.uniform(-scale, scale, size=p.phi.shape)
        return p

    def copy(self) -> "HiddenDybmParams":
        return HiddenDybmParams(self.core.copy(), self.n_hidden, self.V.copy(), self.phi.copy())

    def to_dict(self) -> dict:
        return {"core": self.core.to_dict(), "n_hidden": self.n_hidden,
                "V": self.V.tolist(), "phi": self.phi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HiddenDybmParams":
        return cls(RelaxedDybmParams.from_dict(d["core"]), int(d["n_hidden"]), d["V"], d["phi"])


class HiddenTraceState:
    """Visible and hidden histories: FIFOs of length ``d-1`` plus ``alpha``/``beta``."""

    def __init__(self, params: HiddenDybmParams):
        self.visible = TraceState(params.n_visible, (params.lam,), params.delay)
        self.hidden = TraceState(params.n_hidden, (params.lam,), params.delay)

    @property
    def alpha(self) -> np.ndarray:
        return self.visible.alpha[0]

    @property
    def beta(self) -> np.ndarray:
        return self.hidden.alpha[0]

    def features(self) -> np.ndarray:
        """Feature vector ``f`` matched with the rows of ``phi``."""
        return np.concatenate([self.visible.fifo.lags().ravel(), self.alpha,
                               self.hidden.fifo.lags().ravel(), self.beta])

    def step(self, x, h) -> None:
        self.visible.step(x)
        self.hidden.step(h)

    def reset(self) -> None:
        self.visible.reset()
        self.hidden.reset()

    def copy(self) -> "HiddenTraceState":
        other = HiddenTraceState.__new__(HiddenTraceState)
        other.visible = self.visible.copy()
        other.hidden = self.hidden.copy()
        return other

    def to_dict(self) -> dict:
        return {"visible": self.visible.to_dict(), "hidden": self.hidden.to_dict()}

    def load_dict(self, d: dict) -> "HiddenTraceState":
        self.visible.load_dict(d["visible"])
        self.hidden.load_dict(d["hidden"])
        return self


def visible_drive(params: HiddenDybmParams, state: HiddenTraceState) -> np.ndarray:
    """Log-odds of the visible units; reduces to the fully visible drive when ``N_h = 0``."""
    m = binary.mean_activation(params.core, state.visible)
    if params.n_hidden:
        m = m + binary.drive(np.zeros(params.n_visible), state.hidden.fifo.lags(), params.V[:-1],
                             state.hidden.alpha, params.V[-1:])
    return m


def hidden_drive(params: HiddenDybmParams, state: HiddenTraceState) -> np.ndarray:
    return state.features() @ params.phi


def visible_energy(params: HiddenDybmParams, state: HiddenTraceState, x) -> float:
    return float(-visible_drive(params, state) @ np.asarray(x, dtype=np.float64))


def hidden_energy(params: HiddenDybmParams, state: HiddenTraceState, h) -> float:
    return float(-hidden_drive(params, state) @ np.asarray(h, dtype=np.float64))


def visible_log_likelihood(params: HiddenDybmParams, state: HiddenTraceState, x) -> float:
    """``log P_theta(x^{[t]} | x^{[<t]}, h^{[<t]})``."""
    return bernoulli_log_likelihood(visible_drive(params, state), np.asarray(x, dtype=np.float64))


def sample_hidden(params: HiddenDybmParams, state: HiddenTraceState, rng: np.random.Generator):
    """Draw ``H^{[t]}`` from the hidden conditional; returns ``(H, q)`` with ``q`` the means."""
    q = firing_probability(hidden_drive(params, state))
    return (rng.random(q.size) < q).astype(np.float64), q


def theta_step(params: HiddenDybmParams, state: HiddenTraceState, x, eta: float) -> HiddenDybmParams:
    """Stochastic-gradient step on ``log P_theta(x | history)`` with the sampled hidden history."""
    x = np.asarray(x, dtype=np.float64)
    err = x - firing_probability(visible_drive(params, state))
    _apply_theta_update(params, state, err, eta)
    return params


def _apply_theta_update(params, state, err, eta):
    binary._apply_relaxed_update(params.core, state.visible, err, eta)
    if params.n_hidden:
        if params.delay > 1:
            params.V[:-1] += eta * state.hidden.fifo.lags()[:, :, None] * err[None, None, :]
        params.V[-1] += eta * np.outer(state.beta, err)


class PhiGradAccumulator:
    """Discounted sum ``G'_t = sum_{s<=t} gamma^{t-s} outer(f_s, H_s - q_s)``."""

    def __init__(self, n_features: int, n_hidden: int, discount: float):
        if not 0.0 <= discount < 1.0:
            raise DomainError("discount must lie in [0, 1)")
        self.discount = float(discount)
        self.G = np.zeros((n_features, n_hidden))

    def advance(self, summand: np.ndarray) -> None:
        self.G *= self.discount
        self.G += summand

    def reset(self) -> None:
        self.G[:] = 0.0

    def copy(self) -> "PhiGradAccumulator":
        other = PhiGradAccumulator(*self.G.shape, self.discount)
        other.G = self.G.copy()
        return other


def phi_summand(features, h, q) -> np.ndarray:
    return np.outer(features, np.asarray(h) - np.asarray(q))


def phi_step(params: HiddenDybmParams, acc: PhiGradAccumulator, log_lik: float, eta: float) -> None:
    """Approximate rule ``phi += eta (1 - gamma) log p_theta G'_{t-1}``."""
    params.phi += eta * (1.0 - acc.discount) * log_lik * acc.G


def exact_phi_gradient(params: HiddenDybmParams, features_history, hidden_history) -> np.ndarray:
    """``sum_s outer(f_s, H_s - E_phi[H_s])`` with the expectation under the current ``phi``.

    Cost grows linearly in the number of stored steps.
    """
    if len(features_history) == 0:
        return np.zeros_like(params.phi)
    F = np.asarray(features_history)
    H = np.asarray(hidden_history)
    return F.T @ (H - firing_probability(F @ params.phi))


def lower_bound_estimate(params: HiddenDybmParams, series, n_samples: int, rng: np.random.Generator):
    """Monte-Carlo estimate of the Jensen lower bound on ``log P(x)``.

    Returns ``(mean, standard_error)`` of ``sum_t log P_theta(x^{[t]} | ...)``
    over ``n_samples`` hidden paths drawn from ``P_phi``.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    values = np.asarray(series, dtype=np.float64)
    totals = np.empty(n_samples)
    for k in range(n_samples):
        state = HiddenTraceState(params)
        total = 0.0
        for x in values:
            total += visible_log_likelihood(params, state, x)
            h, _ = sample_hidden(params, state, rng)
            state.step(x, h)
        totals[k] = total
    se = float(totals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return float(totals.mean()), se


class HiddenDyBM:
    """Online DyBM with hidden units.

    Each step: score ``x`` with the visible conditional, sample ``H^{[t]}``
    from the hidden conditional, update ``theta``, update ``phi`` from the
    accumulator, then fold the new summand into the accumulator.
    """

    kind = "dybm-hidden"
    data_kind = BINARY

    def __init__(self, params: HiddenDybmParams, learning_rate: float = 0.1, discount: float = 0.9,
                 rng: np.random.Generator | None = None, exact_phi: bool = False,
                 lr_schedule: str = "constant"):
        self.params = params
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.state = HiddenTraceState(params)
        self.acc = PhiGradAccumulator(params.phi.shape[0], params.n_hidden, discount)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.exact_phi = exact_phi
        self.n_updates = 0
        self._features: list[np.ndarray] = []
        self._hidden: list[np.ndarray] = []

    @classmethod
    def from_config(cls, n_visible: int, config: TrainConfig, rng: np.random.Generator,
                    sampler: np.random.Generator | None = None) -> "HiddenDyBM":
        lam = config.decay_rates[0] if config.decay_rates else 0.5
        params = HiddenDybmParams.initial(n_visible, config.n_hidden, config.delay, lam, rng, config.init_scale)
        return cls(params, config.learning_rate, config.discount, sampler or rng, config.exact_phi,
                   config.lr_schedule)

    @property
    def n_units(self) -> int:
        return self.params.n_visible

    @property
    def discount(self) -> float:
        return self.acc.discount

    def reset(self) -> None:
        self.state.reset()
        self.acc.reset()
        self._features.clear()
        self._hidden.clear()

    def _eta(self) -> float:
        if self.lr_schedule == "inv_sqrt":
            return self.learning_rate / math.sqrt(self.n_updates + 1)
        return self.learning_rate

    def predict(self) -> np.ndarray:
        return firing_probability(visible_drive(self.params, self.state))

    def learn_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        eta = self._eta()
        m = visible_drive(self.params, self.state)
        ll = bernoulli_log_likelihood(m, x)
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at update {self.n_updates}")
        features = self.state.features()
        q = firing_probability(features @ self.params.phi)
        h = (self.rng.random(q.size) < q).astype(np.float64)

        _apply_theta_update(self.params, self.state, x - firing_probability(m), eta)
        if self.exact_phi:
            self.params.phi += eta * ll * exact_phi_gradient(self.params, self._features, self._hidden)
            self._features.append(features)
            self._hidden.append(h)
        else:
            phi_step(self.params, self.acc, ll, eta)
        self.acc.advance(phi_summand(features, h, q))
        self.n_updates += 1
        self.state.step(x, h)
        return ll

    def score_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        ll = visible_log_likelihood(self.params, self.state, x)
        h, _ = sample_hidden(self.params, self.state, self.rng)
        self.state.step(x, h)
        return ll

    def observe(self, x) -> None:
        h, _ = sample_hidden(self.params, self.state, self.rng)
        self.state.step(np.asarray(x, dtype=np.float64), h)

    def sample(self, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n_steps, self.n_units))
        for k in range(n_steps):
            p = self.predict()
            out[k] = (rng.random(p.size) < p).astype(np.float64)
            h, _ = sample_hidden(self.params, self.state, rng)
            self.state.step(out[k], h)
        return out

    def forecast(self, horizon: int) -> np.ndarray:
        """Iterated visible expectations with hidden units set to their means."""
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        saved = self.state
        self.state = saved.copy()
        try:
            out = np.empty((horizon, self.n_units))
            for k in range(horizon):
                out[k] = self.predict()
                q = firing_probability(hidden_drive(self.params, self.state))
                self.state.step(out[k], q)
        finally:
            self.state = saved
        return out

    def fit_epoch(self, series: TimeSeries) -> Metrics:
        self.reset()
        lls, preds = [], []
        for x in series.values:
            preds.append(self.predict())
            lls.append(self.learn_one_step(x))
        return Metrics(nll_score(lls), accuracy=accuracy(np.array(preds), series.values))

    def score(self, series: TimeSeries) -> np.ndarray:
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
                "discount": self.acc.discount, "accumulator": self.acc.G.tolist(),
                "exact_phi": self.exact_phi,
                "history": {"features": [f.tolist() for f in self._features],
                            "hidden": [h.tolist() for h in self._hidden]},
                "n_updates": self.n_updates, "rng": self.rng.bit_generator.state}

    @classmethod
    def from_dict(cls, d: dict) -> "HiddenDyBM":
        params = HiddenDybmParams.from_dict(d["params"])
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        model = cls(params, d["learning_rate"], d["discount"], rng, bool(d["exact_phi"]), d["lr_schedule"])
        model.state.load_dict(d["state"])
        model.acc.G = np.asarray(d["accumulator"], dtype=np.float64).reshape(model.acc.G.shape)
        model._features = [np.asarray(f, dtype=np.float64) for f in d["history"]["features"]]
        model._hidden = [np.asarray(h, dtype=np.float64) for h in d["history"]["hidden"]]
        model.n_updates = int(d["n_updates"])
        return model
