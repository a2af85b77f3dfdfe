"""Functional DyBM: a Gaussian-process mean that evolves over time.

The function observed at time ``t`` is modelled as a GP with covariance
``k_s2(z, z') = k(z, z') + s2 [z == z']`` and mean

    mu(z) = k_s2(z, P) (b + sum_delta W[delta] g^{[t-delta]}(P) + sum_l U[l] alpha_l(P))

where ``P`` are ``M`` fixed landmark points. Landmark values are never
observed directly; each step reconstructs them from the partial observation
with the GP posterior mean and pushes them into the trace/FIFO machinery.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .errors import DomainError, MalformedInputError, NumericalError
from .series import Metrics, TrainConfig, nll_score
from .traces import TraceState

FUNCTIONAL = "functional"


@dataclass
class KernelConfig:
    """RBF base kernel ``exp(-|z - z'|^2 / (2 h^2))`` plus white noise ``noise``."""

    bandwidth: float
    noise: float

    def __post_init__(self):
        if self.bandwidth <= 0 or self.noise <= 0:
            raise DomainError("bandwidth and noise variance must be positive")

    def base(self, A, B) -> np.ndarray:
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * self.bandwidth ** 2))

    def noisy(self, A, B) -> np.ndarray:
        """``k(A, B)`` plus ``noise`` wherever a point of ``A`` equals one of ``B``."""
        A = np.atleast_2d(A)
        B = np.atleast_2d(B)
        same = np.all(A[:, None, :] == B[None, :, :], axis=-1)
        return self.base(A, B) + self.noise * same


@dataclass
class FunctionObservation:
    points: np.ndarray  # (N_t, q)
    values: np.ndarray  # (N_t,)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.points.shape[0] < 1 or self.points.shape[0] != self.values.size:
            raise DomainError("an observation needs N_t >= 1 points with one value each")


def uniform_landmarks(lower, upper, n_landmarks: int) -> np.ndarray:
    """Uniform grid over a 1-D interval or 2-D box."""
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    if lower.size == 1:
        return np.linspace(lower[0], upper[0], n_landmarks)[:, None]
    if lower.size == 2:
        per_axis = max(int(round(math.sqrt(n_landmarks))), 1)
        gx = np.linspace(lower[0], upper[0], per_axis)
        gy = np.linspace(lower[1], upper[1], per_axis)
        return np.array([(a, c) for a in gx for c in gy])
    raise DomainError("only 1-D and 2-D domains are supported")


def median_bandwidth(landmarks) -> float:
    landmarks = np.atleast_2d(landmarks)
    if landmarks.shape[0] < 2:
        return 1.0
    return float(np.median(pdist(landmarks)))


def _cholesky(K: np.ndarray):
    try:
        return cho_factor(K, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalError(f"gram matrix is not positive definite: {exc}") from exc


class FunctionalDyBM:
    """Landmark-parametrised functional DyBM trained online.

    Attributes:
        landmarks: ``(M, q)`` points ``P``.
        b: ``(M,)``; W: ``(d-1, M, M)``; U: ``(L, M, M)``.
        state: traces and FIFO over the reconstructed landmark values.
    """

    kind = "dybm-functional"
    data_kind = FUNCTIONAL

    def __init__(self, landmarks, kernel: KernelConfig, delay: int = 2, decay_rates=(0.5,),
                 learning_rate: float = 0.01, b=None, W=None, U=None):
        self.landmarks = np.atleast_2d(np.asarray(landmarks, dtype=np.float64))
        if len({tuple(p) for p in self.landmarks}) != self.landmarks.shape[0]:
            raise DomainError("landmark points must be distinct")
        self.kernel = kernel
        self.delay = delay
        self.decay_rates = np.asarray(decay_rates, dtype=np.float64).reshape(-1)
        self.learning_rate = learning_rate
        M = self.n_landmarks
        L = self.decay_rates.size
        self.b = np.zeros(M) if b is None else np.asarray(b, dtype=np.float64).reshape(M)
        self.W = np.zeros((delay - 1, M, M)) if W is None else np.asarray(W, dtype=np.float64).reshape(delay - 1, M, M)
        self.U = np.zeros((L, M, M)) if U is None else np.asarray(U, dtype=np.float64).reshape(L, M, M)
        self.state = TraceState(M, self.decay_rates, delay)
        self.K_PP = kernel.noisy(self.landmarks, self.landmarks)

    @property
    def n_landmarks(self) -> int:
        return self.landmarks.shape[0]

    @classmethod
    def from_config(cls, lower, upper, config: TrainConfig, landmarks=None) -> "FunctionalDyBM":
        if landmarks is None:
            landmarks = uniform_landmarks(lower, upper, config.n_landmarks)
        bandwidth = config.bandwidth or median_bandwidth(landmarks)
        return cls(landmarks, KernelConfig(bandwidth, config.noise_variance), config.delay,
                   config.decay_rates, config.learning_rate)

    def reset(self) -> None:
        self.state.reset()

    def landmark_coefficients(self) -> np.ndarray:
        """``b + sum W g^{[t-delta]}(P) + sum U alpha_l(P)`` as an ``(M,)`` vector."""
        c = self.b.copy()
        if self.W.shape[0]:
            c += np.einsum("kij,kj->i", self.W, self.state.fifo.lags())
        if self.U.shape[0]:
            c += np.einsum("lij,lj->i", self.U, self.state.alpha)
        return c

    def mean_at(self, query) -> np.ndarray:
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if query.shape[1] != self.landmarks.shape[1]:
            raise DomainError("query dimension does not match the domain")
        return self.kernel.noisy(query, self.landmarks) @ self.landmark_coefficients()

    def _gram(self, obs: FunctionObservation):
        if len({tuple(p) for p in obs.points}) != obs.points.shape[0]:
            raise DomainError("observation points must be distinct")
        return _cholesky(self.kernel.noisy(obs.points, obs.points))

    def map_estimate(self, obs: FunctionObservation) -> np.ndarray:
        """Posterior-mean reconstruction of the current function at the landmarks."""
        factor = self._gram(obs)
        residual = obs.values - self.mean_at(obs.points)
        weights = cho_solve(factor, residual)
        return self.mean_at(self.landmarks) + self.kernel.base(self.landmarks, obs.points) @ weights

    def step_log_density(self, obs: FunctionObservation) -> float:
        factor = self._gram(obs)
        residual = obs.values - self.mean_at(obs.points)
        quad = residual @ cho_solve(factor, residual)
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        n = residual.size
        return float(-0.5 * quad - 0.5 * (log_det + n * math.log(2.0 * math.pi)))

    def learn_one_step(self, obs: FunctionObservation, eta: float | None = None) -> float:
        """Score, update ``(b, W, U)``, then push the reconstructed landmark values.

        The reconstruction uses the mean in force before the update.
        """
        eta = self.learning_rate if eta is None else eta
        factor = self._gram(obs)
        mean_Z = self.mean_at(obs.points)
        residual = obs.values - mean_Z
        if not np.all(np.isfinite(residual)):
            raise NumericalError("non-finite residual in functional DyBM")
        weights = cho_solve(factor, residual)
        log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
        with np.errstate(over="ignore", invalid="ignore"):
            ll = float(-0.5 * residual @ weights - 0.5 * (log_det + residual.size * math.log(2.0 * math.pi)))
            g_hat = self.mean_at(self.landmarks) + self.kernel.base(self.landmarks, obs.points) @ weights
            direction = self.kernel.noisy(self.landmarks, obs.points) @ weights
            lags = self.state.fifo.lags()
            b = self.b + eta * direction
            W = self.W + eta * direction[None, :, None] * lags[:, None, :]
            U = self.U + eta * direction[None, :, None] * self.state.alpha[:, None, :]
        if not (np.isfinite(ll) and np.all(np.isfinite(b)) and np.all(np.isfinite(W))
                and np.all(np.isfinite(U))):
            raise NumericalError("functional DyBM parameters diverged; lower the learning rate")
        self.b, self.W, self.U = b, W, U
        self.state.step(g_hat)
        return ll

    def score_one_step(self, obs: FunctionObservation) -> float:
        ll = self.step_log_density(obs)
        self.state.step(self.map_estimate(obs))
        return ll

    def forecast(self, horizon: int) -> np.ndarray:
        """Iterated landmark means ``mu(P)``, each fed back as the next landmark values."""
        if horizon < 1:
            raise DomainError("horizon must be >= 1")
        saved = self.state
        self.state = saved.copy()
        try:
            out = np.empty((horizon, self.n_landmarks))
            for h in range(horizon):
                out[h] = self.mean_at(self.landmarks)
                self.state.step(out[h])
        finally:
            self.state = saved
        return out

    def sample(self, n_steps: int, rng: np.random.Generator) -> np.ndarray:
        """Draw landmark values from ``N(mu(P), k_s2(P, P))`` and feed each draw back."""
        chol = np.linalg.cholesky(self.K_PP)
        out = np.empty((n_steps, self.n_landmarks))
        for k in range(n_steps):
            out[k] = self.mean_at(self.landmarks) + chol @ rng.standard_normal(self.n_landmarks)
            self.state.step(out[k])
        return out

    def fit_epoch(self, observations) -> Metrics:
        self.reset()
        return Metrics(nll_score([self.learn_one_step(o) for o in observations]))

    def score(self, observations) -> np.ndarray:
        self.reset()
        return np.array([self.score_one_step(o) for o in observations])

    def evaluate(self, observations) -> Metrics:
        return Metrics(nll_score(self.score(observations)))

    def to_dict(self) -> dict:
        return {"landmarks": self.landmarks.tolist(),
                "kernel": {"bandwidth": self.kernel.bandwidth, "noise": self.kernel.noise},
                "delay": self.delay, "decay_rates": self.decay_rates.tolist(),
                "learning_rate": self.learning_rate, "b": self.b.tolist(),
                "W": self.W.tolist(), "U": self.U.tolist(), "state": self.state.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionalDyBM":
        model = cls(d["landmarks"], KernelConfig(**d["kernel"]), int(d["delay"]), d["decay_rates"],
                    d["learning_rate"], d["b"], d["W"], d["U"])
        model.state.load_dict(d["state"])
        return model


def load_observations(path) -> tuple[list[FunctionObservation], int]:
    """Read ``t, z_1..z_q, value`` rows and group them by ``t`` (sorted).

    Returns the observations and the domain dimension ``q``.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise MalformedInputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise MalformedInputError(f"{path}: header and at least one data row required")
    width = len(rows[0])
    q = width - 2
    if q not in (1, 2):
        raise MalformedInputError(f"{path}: expected columns t, z_1[, z_2], value")
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != width:
            raise MalformedInputError(f"{path}: row {i} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                data[i - 1, j] = float(cell)
            except ValueError:
                raise MalformedInputError(f"{path}: row {i}, column {j}: not a number: {cell!r}") from None
    if not np.all(np.isfinite(data)):
        raise MalformedInputError(f"{path}: non-finite values present")
    observations = []
    for t in np.unique(data[:, 0]):
        block = data[data[:, 0] == t]
        observations.append(FunctionObservation(block[:, 1:1 + q], block[:, -1]))
    return observations, q


def observation_bounds(observations) -> tuple[np.ndarray, np.ndarray]:
    pts = np.vstack([o.points for o in observations])
    return pts.min(axis=0), pts.max(axis=0)
