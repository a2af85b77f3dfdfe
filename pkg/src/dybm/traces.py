"""Eligibility traces and conduction-delay FIFO queues.

All the history a DyBM ever needs is summarised here in O(1) memory:

* ``alpha[l]`` -- synaptic trace with decay ``decay_rates[l]``, a discounted
  sum of the spikes that have already left the FIFO queue,
  ``alpha^{[t-1]} = sum_{s <= t-d} lam^{t-s-d} x^{[s]}``.
* ``gamma`` -- neural trace with decay ``mu`` over the unit's own firings,
  ``gamma^{[t-1]} = sum_{s <= t-1} mu^{t-s} x^{[s]}``.
* ``fifo`` -- the last ``d - 1`` patterns, still travelling to the synapse.

History before the first pattern is taken to be all zeros.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError


def _check_decay(rate: float, name: str = "decay rate") -> None:
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"{name} must lie in [0, 1), got {rate!r}")


class FifoQueue:
    """Fixed-length delay line holding ``x^{[t-1]}, ..., x^{[t-d+1]}``.

    Implemented as a ring buffer so push is O(N) regardless of elapsed time.
    """

    def __init__(self, n_units: int, length: int):
        if length < 0:
            raise DomainError("FIFO length must be >= 0")
        self.n_units = n_units
        self.length = length
        self._buf = np.zeros((length, n_units))
        self._head = 0  # index of the newest entry

    def push(self, x: np.ndarray) -> np.ndarray:
        """Insert ``x`` as the newest entry and return the evicted oldest one.

        With zero length the queue is a pass-through and returns ``x``.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.length == 0:
            return x.copy()
        oldest = (self._head + 1) % self.length
        evicted = self._buf[oldest].copy()
        self._buf[oldest] = x
        self._head = oldest
        return evicted

    def lag(self, delta: int) -> np.ndarray:
        """Return ``x^{[t-delta]}`` for ``1 <= delta <= length``."""
        if not 1 <= delta <= self.length:
            raise DomainError(f"lag {delta} outside 1..{self.length}")
        return self._buf[(self._head - (delta - 1)) % self.length]

    def lags(self) -> np.ndarray:
        """``(length, N)`` array; row ``k`` is ``x^{[t-k-1]}``."""
        if self.length == 0:
            return self._buf
        idx = (self._head - np.arange(self.length)) % self.length
        return self._buf[idx]

    def oldest(self) -> np.ndarray:
        return self.lag(self.length)

    def reset(self) -> None:
        self._buf[:] = 0.0
        self._head = 0

    def copy(self) -> "FifoQueue":
        other = FifoQueue(self.n_units, self.length)
        other._buf = self._buf.copy()
        other._head = self._head
        return other

    def to_list(self) -> list:
        return self.lags().tolist()

    @classmethod
    def from_list(cls, rows, n_units: int, length: int) -> "FifoQueue":
        fifo = cls(n_units, length)
        rows = np.asarray(rows, dtype=np.float64).reshape(length, n_units)
        # rows are newest first; push oldest first
        for row in rows[::-1]:
            fifo.push(row)
        return fifo


def update_synaptic(alpha_row, delivered, decay: float) -> np.ndarray:
    """Advance a synaptic trace by one tick: ``decay * alpha + delivered``.

    ``delivered`` is the pattern leaving the FIFO queue, ``x^{[t-d+1]}``.
    Written this way the trace equals the discounted sum
    ``sum_{s <= t-d} decay^{t-s-d} x^{[s]}`` at every tick.
    """
    _check_decay(decay)
    return decay * np.asarray(alpha_row, dtype=np.float64) + np.asarray(delivered, dtype=np.float64)


def update_neural(gamma, fired, decay: float) -> np.ndarray:
    """Advance a neural trace by one tick: ``decay * (gamma + fired)``."""
    _check_decay(decay)
    return decay * (np.asarray(gamma, dtype=np.float64) + np.asarray(fired, dtype=np.float64))


def compute_beta(fifo: FifoQueue, mu: float, delay: int) -> np.ndarray:
    """Discounted sum over spikes still inside the FIFO queue.

    ``beta^{[t-1]} = sum_{delta=1}^{d-1} mu^{-delta} x^{[t-delta]}``. Always
    evaluated directly from the queue contents; a recursive form of this sum
    multiplies by ``1/mu`` every tick and is numerically unstable.
    """
    _check_decay(mu, "mu")
    if delay - 1 != fifo.length:
        raise DomainError(f"FIFO length {fifo.length} does not match delay {delay}")
    if delay <= 1:
        return np.zeros(fifo.n_units)
    if mu == 0.0:
        raise ConfigError("beta needs mu > 0 when delay > 1")
    weights = mu ** -np.arange(1.0, delay)
    return weights @ fifo.lags()


class TraceState:
    """Synaptic traces for several decay rates, one neural trace, one FIFO.

    Attributes:
        alpha: ``(L, N)`` synaptic traces.
        gamma: ``(N,)`` neural trace (decay ``mu``).
        fifo: delay line of length ``delay - 1``.
    """

    def __init__(self, n_units: int, decay_rates=(), delay: int = 1, mu: float = 0.0):
        if delay < 1:
            raise ConfigError(f"delay must be >= 1, got {delay}")
        rates = np.asarray(list(decay_rates), dtype=np.float64).reshape(-1)
        for r in rates:
            _check_decay(float(r))
        _check_decay(mu, "mu")
        self.n_units = n_units
        self.decay_rates = rates
        self.delay = delay
        self.mu = float(mu)
        self.alpha = np.zeros((rates.size, n_units))
        self.gamma = np.zeros(n_units)
        self.fifo = FifoQueue(n_units, delay - 1)

    def step(self, pattern) -> "TraceState":
        """Deliver the FIFO tail into every synaptic trace and enqueue ``pattern``."""
        x = np.asarray(pattern, dtype=np.float64)
        if x.shape != (self.n_units,):
            raise DomainError(f"pattern has shape {x.shape}, expected ({self.n_units},)")
        delivered = self.fifo.push(x)
        self.alpha *= self.decay_rates[:, None]
        self.alpha += delivered
        self.gamma += x
        self.gamma *= self.mu
        return self

    def beta(self) -> np.ndarray:
        return compute_beta(self.fifo, self.mu, self.delay)

    def reset(self) -> None:
        self.alpha[:] = 0.0
        self.gamma[:] = 0.0
        self.fifo.reset()

    def copy(self) -> "TraceState":
        other = TraceState.__new__(TraceState)
        other.n_units = self.n_units
        other.decay_rates = self.decay_rates.copy()
        other.delay = self.delay
        other.mu = self.mu
        other.alpha = self.alpha.copy()
        other.gamma = self.gamma.copy()
        other.fifo = self.fifo.copy()
        return other

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma.tolist(),
            "fifo": self.fifo.to_list(),
        }

    def load_dict(self, data: dict) -> "TraceState":
        self.alpha = np.asarray(data["alpha"], dtype=np.float64).reshape(self.decay_rates.size, self.n_units)
        self.gamma = np.asarray(data["gamma"], dtype=np.float64).reshape(self.n_units)
        self.fifo = FifoQueue.from_list(data["fifo"], self.n_units, self.delay - 1)
        return self

