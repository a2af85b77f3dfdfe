"""Time-series data model, CSV/JSON ingestion, RNG streams and metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, MalformedInputError

BINARY = "binary"
REAL = "real"
KINDS = (BINARY, REAL)


@dataclass
class TimeSeries:
    """Ordered multivariate observations, one row per tick.

    Attributes:
        values: ``(T, N)`` float64 array.
        kind: ``"binary"`` or ``"real"``.
        names: column labels, length ``N``.
    """

    values: np.ndarray
    kind: str = REAL
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError(f"series must be a non-empty T x N matrix, got shape {values.shape}")
        if self.kind not in KINDS:
            raise DomainError(f"unknown series kind {self.kind!r}")
        if not np.all(np.isfinite(values)):
            raise DomainError("series contains missing or non-finite entries")
        if self.kind == BINARY and not np.all((values == 0.0) | (values == 1.0)):
            bad = np.argwhere((values != 0.0) & (values != 1.0))[0]
            raise DomainError(
                f"binary series has value {float(values[tuple(bad)])!r} at row {bad[0]}, column {bad[1]}")
        if not self.names:
            self.names = [f"x{j}" for j in range(values.shape[1])]
        if len(self.names) != values.shape[1]:
            raise DomainError("names must have one entry per column")
        self.values = values

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_units(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.n_steps

    def __iter__(self):
        return iter(self.values)


def load_csv(path, kind: str = REAL) -> TimeSeries:
    """Read a header-row CSV with one column per dimension, one row per tick."""
    path = Path(path)
    if kind not in KINDS:
        raise DomainError(f"unknown series kind {kind!r}")
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedInputError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedInputError(f"{path}: empty file (header row required)")
    header = [h.strip() for h in rows[0]]
    if len(rows) < 2:
        raise MalformedInputError(f"{path}: no data rows")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedInputError(
                f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i - 1, j] = float(cell)
            except ValueError:
                raise MalformedInputError(
                    f"{path}: row {i}, column {j} ({header[j]!r}): not a number: {cell!r}") from None
    if not np.all(np.isfinite(values)):
        raise MalformedInputError(f"{path}: non-finite values present")
    return TimeSeries(values, kind=kind, names=header)


def format_value(v: float, kind: str = REAL) -> str:
    if kind == BINARY:
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(series: TimeSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(series.names)
        for row in series.values:
            writer.writerow([format_value(v, series.kind) for v in row])


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a plain CSV table; floats at full precision."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                             for v in row])


# --------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    """Run configuration shared by every model family.

    Only ``learning_rate`` through ``cd_steps`` are common; the remaining
    fields are read by the model kinds that need them.
    """

    learning_rate: float = 0.1
    decay_rates: list[float] = field(default_factory=lambda: [0.5])
    delay: int = 2
    epochs: int = 1
    seed: int = 0
    discount: float = 0.9
    cd_steps: int = 1
    lr_schedule: str = "constant"
    n_hidden: int = 0
    init_scale: float = 0.01
    reservoir_size: int = 0
    leak: float = 0.5
    spectral_radius: float = 0.95
    n_landmarks: int = 10
    bandwidth: float | None = None
    noise_variance: float = 0.01
    exact_phi: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (isinstance(self.learning_rate, (int, float)) and self.learning_rate >= 0
                and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be a finite non-negative number, got {self.learning_rate!r}")
        rates = list(self.decay_rates)
        for lam in rates:
            if not (0.0 <= lam < 1.0):
                raise ConfigError(f"decay rates must lie in [0, 1), got {lam!r}")
        self.decay_rates = [float(r) for r in rates]
        if int(self.delay) != self.delay or self.delay < 1:
            raise ConfigError(f"delay must be an integer >= 1, got {self.delay!r}")
        self.delay = int(self.delay)
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        self.epochs = int(self.epochs)
        if not (0.0 <= self.discount < 1.0):
            raise ConfigError(f"discount must lie in [0, 1), got {self.discount!r}")
        if int(self.cd_steps) != self.cd_steps or self.cd_steps < 1:
            raise ConfigError(f"cd_steps must be an integer >= 1, got {self.cd_steps!r}")
        if self.lr_schedule not in ("constant", "inv_sqrt"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'inv_sqrt', got {self.lr_schedule!r}")
        if self.n_hidden < 0 or self.reservoir_size < 0:
            raise ConfigError("n_hidden and reservoir_size must be >= 0")
        if not (0.0 < self.leak <= 1.0):
            raise ConfigError(f"leak must lie in (0, 1], got {self.leak!r}")
        if not (0.0 < self.spectral_radius < 1.0):
            raise ConfigError(f"spectral_radius must lie in (0, 1), got {self.spectral_radius!r}")
        if self.n_landmarks < 1:
            raise ConfigError("n_landmarks must be >= 1")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.noise_variance <= 0:
            raise ConfigError("noise_variance must be positive")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise MalformedInputError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedInputError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise MalformedInputError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def rate_at(self, step: int) -> float:
        """Learning rate for the ``step``-th update (0-based)."""
        if self.lr_schedule == "inv_sqrt":
            return self.learning_rate / math.sqrt(step + 1)
        return self.learning_rate


# --------------------------------------------------------------------------
# randomness

def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))


def rng_streams(seed: int, names: Sequence[str] = ("model", "sampler")) -> dict[str, np.random.Generator]:
    """Independent reproducible substreams, one per name, derived from ``seed``."""
    children = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


# --------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    nll_per_step: float
    rmse: float | None = None
    accuracy: float | None = None


def nll_score(log_likelihoods) -> float:
    """Negated mean of per-step log-likelihoods."""
    ll = np.asarray(list(log_likelihoods), dtype=np.float64)
    if ll.size == 0:
        raise DomainError("nll_score needs at least one log-likelihood")
    return float(-math.fsum(ll) / ll.size)


def rmse(predictions, truth) -> float:
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def threshold(probabilities) -> np.ndarray:
    # ties at exactly 0.5 go to 0
    return (np.asarray(probabilities) > 0.5).astype(np.float64)


def accuracy(probabilities, truth) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    pred = threshold(probabilities)
    if pred.shape != truth.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.mean(pred == truth))
