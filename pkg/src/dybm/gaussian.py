"""Gaussian DyBM for real-valued series, with optional echo-state features.

Each unit is conditionally Gaussian with mean ``m^{[t]}`` (the same linear
drive as the binary model) and its own standard deviation ``sigma_j``. With
no traces (``L = 0``) the one-step predictor is exactly a VAR(d-1) model.

Two update rules are available: plain stochastic gradient on
``(b, W, U, sigma)`` and the natural-gradient rule, which preconditions the
per-unit ``(mean, variance)`` gradient with the inverse Fisher matrix
``diag(v, 2 v^2)`` and updates ``sigma^2`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .binary import RelaxedDybmParams, drive
from .errors import ConfigError, DomainError, NumericalError
from .series import REAL, Metrics, TimeSeries, TrainConfig, nll_score, rmse
from .traces import TraceState

SIGMA_FLOOR = 1e-6
VARIANCE_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class EchoStateNetwork:
    """Fixed random reservoir: ``psi <- (1-rho) psi + rho tanh(W_rec psi + W_in x)``.

    ``W_rec`` is rescaled at construction to the requested spectral radius;
    neither matrix is ever learned.
    """

    def __init__(self, W_rec, W_in, leak: float, psi=None, seed: int | None = None):
        self.W_rec = np.asarray(W_rec, dtype=np.float64)
        self.W_in = np.asarray(W_in, dtype=np.float64)
        if self.W_rec.shape[0] != self.W_rec.shape[1] or self.W_in.shape[0] != self.W_rec.shape[0]:
            raise DomainError("W_rec must be M x M and W_in must be M x N")
        if not (0.0 <= leak <= 1.0):
            raise ConfigError(f"leak must lie in [0, 1], got {leak!r}")
        self.leak = float(leak)
        self.seed = seed
        self.psi = np.zeros(self.size) if psi is None else np.asarray(psi, dtype=np.float64).copy()

    @property
    def size(self) -> int:
        return self.W_rec.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W_in.shape[1]

    @classmethod
    def random(cls, size: int, n_inputs: int, leak: float = 0.5, spectral_radius: float = 0.95,
               seed: int = 0) -> "EchoStateNetwork":
        if not (0.0 < spectral_radius < 1.0):
            raise ConfigError("spectral radius must lie in (0, 1)")
        rng = np.random.default_rng(seed)
        W_rec = rng.normal(size=(size, size))
        radius = np.max(np.abs(np.linalg.eigvals(W_rec))) if size else 0.0
        if radius > 0:
            W_rec *= spectral_radius / radius
        W_in = rng.uniform(-1.0, 1.0, size=(size, n_inputs))
        return cls(W_rec, W_in, leak, seed=seed)

    def spectral_radius(self) -> float:
        if self.size == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvals(self.W_rec))))

    def step(self, x) -> np.ndarray:
        self.psi = esn_step(self, x)
        return self.psi

    def reset(self) -> None:
        self.psi = np.zeros(self.size)

    def copy(self) -> "EchoStateNetwork":
        return EchoStateNetwork(self.W_rec.copy(), self.W_in.copy(), self.leak, self.psi, self.seed)

    def to_dict(self) -> dict:
        return {"W_rec": self.W_rec.tolist(), "W_in": self.W_in.tolist(), "leak": self.leak,
                "psi": self.psi.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EchoStateNetwork":
        return cls(np.asarray(d["W_rec"], dtype=np.float64).reshape(len(d["W_rec"]), -1),
                   np.asarray(d["W_in"], dtype=np.float64).reshape(len(d["W_rec"]), -1),
                   d["leak"], np.asarray(d["psi"], dtype=np.float64), d["seed"])


def esn_step(esn: EchoStateNetwork, x) -> np.ndarray:
    """Next reservoir state for input ``x``; ``esn`` is left untouched."""
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - esn.leak) * esn.psi + esn.leak * np.tanh(esn.W_rec @ esn.psi + esn.W_in @ x)


@dataclass
class GaussianDybmParams:
    core: RelaxedDybmParams
    sigma: np.ndarray
    readout: np.ndarray | None = None  # (M, N) weights on the reservoir state

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(self.core.n_units)
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be strictly positive")
        if self.readout is not None:
            self.readout = np.asarray(self.readout, dtype=np.float64).reshape(-1, self.core.n_units)

    @property
    def n_units(self) -> int:
        return self.core.n_units

    def copy(self) -> "GaussianDybmParams":
        return GaussianDybmParams(self.core.copy(), self.sigma.copy(),
                                  None if self.readout is None else self.readout.copy())

    def to_dict(self) -> dict:
        return {"core": self.core.to_dict(), "sigma": self.sigma.tolist(),
                "readout": None if self.readout is None else self.readout.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianDybmParams":
        return cls(RelaxedDybmParams.from_dict(d["core"]), d["sigma"], d["readout"])


def predict_mean(params: GaussianDybmParams, state: TraceState, esn: EchoStateNetwork | None = None) -> np.ndarray:
    core = params.core
    if state.n_units != core.n_units or state.delay != core.delay:
        raise DomainError("trace state does not match parameter dimensions")
    m = drive(core.b, state.fifo.lags(), core.W, state.alpha, core.U)
    if esn is not None and params.readout is not None:
        if esn.size != params.readout.shape[0]:
            raise DomainError("reservoir size does not match readout")
        m += esn.psi @ params.readout
    return m


def gaussian_log_density(x, m, sigma) -> float:
    r = np.asarray(x, dtype=np.float64) - m
    var = sigma ** 2
    return float(np.sum(-0.5 * r * r / var - 0.5 * (LOG_2PI + np.log(var))))


def step_log_density(params: GaussianDybmParams, state: TraceState, x, esn=None) -> float:
    return gaussian_log_density(x, predict_mean(params, state, esn), params.sigma)


def _check_residual(r: np.ndarray) -> None:
    if not np.all(np.isfinite(r)):
        raise NumericalError("non-finite residual in Gaussian DyBM update")


def _update_mean_params(params, state, esn, direction, eta):
    core = params.core
    core.b += eta * direction
    if core.W.shape[0]:
        core.W += eta * state.fifo.lags()[:, :, None] * direction[None, None, :]
    if core.U.shape[0]:
        core.U += eta * state.alpha[:, :, None] * direction[None, None, :]
    if esn is not None and params.readout is not None:
        params.readout += eta * np.outer(esn.psi, direction)


def sgd_step(params: GaussianDybmParams, state: TraceState, x, eta: float, esn=None) -> GaussianDybmParams:
    """Plain gradient ascent on the log density, in place.

    ``sigma`` is updated with the pre-step residual and clamped at ``SIGMA_FLOOR``.
    """
    x = np.asarray(x, dtype=np.float64)
    r = x - predict_mean(params, state, esn)
    _check_residual(r)
    sigma = params.sigma
    var = sigma ** 2
    _update_mean_params(params, state, esn, r / var, eta)
    params.sigma = np.maximum(sigma + eta * (r * r - var) / (var * sigma), SIGMA_FLOOR)
    return params


def natural_step(params: GaussianDybmParams, state: TraceState, x, eta: float, esn=None) -> GaussianDybmParams:
    """Fisher-preconditioned update, in place; variance floored at ``VARIANCE_FLOOR``."""
    x = np.asarray(x, dtype=np.float64)
    r = x - predict_mean(params, state, esn)
    _check_residual(r)
    var = params.sigma ** 2
    _update_mean_params(params, state, esn, r, eta)
    var = np.maximum(var + eta * (r * r - var), VARIANCE_FLOOR)
    params.sigma = np.sqrt(var)
    return params


def var_predict(coefficients, intercept, history) -> np.ndarray:
    """VAR(p) one-step predictor ``c + sum_k A_k^T x^{[t-k]}``.

    ``coefficients[k]`` multiplies lag ``k + 1`` and ``history[k]`` is
    ``x^{[t-k-1]}``. Missing history counts as zeros.
    """
    out = np.array(intercept, dtype=np.float64)
    for k, A in enumerate(coefficients):
        if k < len(history):
            out = out + np.asarray(A).T @ np.asarray(history[k])
    return out


class GaussianDyBM:
    """Online Gaussian DyBM, optionally fed by an echo-state reservoir."""

    data_kind = REAL

    def __init__(self, params: GaussianDybmParams, learning_rate: float = 0.01, natural: bool = False,
                 esn: EchoStateNetwork | None = None, lr_schedule: str = "constant"):
        if esn is not None and params.readout is None:
            params.readout = np.zeros((esn.size, params.n_units))
        self.params = params
        self.esn = esn
        self.natural = natural
        self.learning_rate = learning_rate
        self.lr_schedule = lr_schedule
        self.state = TraceState(params.n_units, params.core.decay_rates, params.core.delay)
        self.n_updates = 0

    @property
    def kind(self) -> str:
        if self.esn is not None:
            return "dybm-esn"
        return "dybm-gaussian-natural" if self.natural else "dybm-gaussian"

    @property
    def n_units(self) -> int:
        return self.params.n_units

    @classmethod
    def from_config(cls, n_units: int, config: TrainConfig, rng: np.random.Generator,
                    natural: bool = False, esn: bool = False) -> "GaussianDyBM":
        core = RelaxedDybmParams.initial(n_units, config.delay, config.decay_rates, rng, config.init_scale)
        params = GaussianDybmParams(core, np.ones(n_units))
        reservoir = None
        if esn:
            size = config.reservoir_size or 4 * n_units
            seed = int(rng.integers(0, 2**63 - 1))
            reservoir = EchoStateNetwork.random(size, n_units, config.leak, config.spectral_radius, seed)
        return cls(params, config.learning_rate, natural or esn, reservoir, config.lr_schedule)

    def reset(self) -> None:
        self.state.reset()
        if self.esn is not None:
            self.esn.reset()

    def _eta(self) -> float:
        if self.lr_schedule == "inv_sqrt":
            return self.learning_rate / math.sqrt(self.n_updates + 1)
        return self.learning_rate

    def predict(self) -> np.ndarray:
        return predict_mean(self.params, self.state, self.esn)

    def _advance(self, x) -> None:
        self.state.step(x)
        if self.esn is not None:
            self.esn.step(x)

    def learn_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        ll = step_log_density(self.params, self.state, x, self.esn)
        rule = natural_step if self.natural else sgd_step
        rule(self.params, self.state, x, self._eta(), self.esn)
        self.n_updates += 1
        self._advance(x)
        return ll

    def score_one_step(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        ll = step_log_density(self.params, self.state, x, self.esn)
        self._advance(x)
        return ll

    def observe(self, x) -> None:
        self._advance(np.asarray(x, dtype=np.float64))

    def forecast(self, horizon: int) -> np.ndarray:
        """Iterated one-step means, each fed back as the next observation."""
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        state = self.state.copy()
        esn = None if self.esn is None else self.esn.copy()
        out = np.empty((horizon, self.n_units))
        for h in range(horizon):
            out[h] = predict_mean(self.params, state, esn)
            state.step(out[h])
            if esn is not None:
                esn.step(out[h])
        return out

    def sample(self, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n_steps, self.n_units))
        for t in range(n_steps):
            out[t] = self.predict() + self.params.sigma * rng.standard_normal(self.n_units)
            self._advance(out[t])
        return out

    def fit_epoch(self, series: TimeSeries) -> Metrics:
        self.reset()
        lls, preds = [], []
        for x in series.values:
            preds.append(self.predict())
            lls.append(self.learn_one_step(x))
        return Metrics(nll_score(lls), rmse=rmse(np.array(preds), series.values))

    def score(self, series: TimeSeries) -> np.ndarray:
        self.reset()
        return np.array([self.score_one_step(x) for x in series.values])

    def evaluate(self, series: TimeSeries) -> Metrics:
        self.reset()
        lls, preds = [], []
        for x in series.values:
            preds.append(self.predict())
            lls.append(self.score_one_step(x))
        return Metrics(nll_score(lls), rmse=rmse(np.array(preds), series.values))

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "state": self.state.to_dict(),
                "natural": self.natural, "learning_rate": self.learning_rate,
                "lr_schedule": self.lr_schedule, "n_updates": self.n_updates,
                "esn": None if self.esn is None else self.esn.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianDyBM":
        esn = None if d["esn"] is None else EchoStateNetwork.from_dict(d["esn"])
        model = cls(GaussianDybmParams.from_dict(d["params"]), d["learning_rate"], d["natural"],
                    esn, d["lr_schedule"])
        model.state.load_dict(d["state"])
        model.n_updates = int(d["n_updates"])
        return model
