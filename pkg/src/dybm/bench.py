"""Per-step training-time harness contrasting DyBM and online-BPTT RTRBM."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from .binary import BinaryDyBM
from .errors import DomainError
from .rtrbm import RtrbmParams, online_bptt
from .series import TrainConfig, rng_streams

BENCH_KINDS = ("dybm-binary", "rtrbm")


@dataclass
class BenchReport:
    kind: str
    step_ns: np.ndarray
    slope: float
    p_value: float
    early_mean: float
    late_mean: float

    @property
    def ratio(self) -> float:
        """Mean time of the last 100 steps over that of the first 100."""
        return self.late_mean / self.early_mean

    def rows(self):
        return [(t, int(ns)) for t, ns in enumerate(self.step_ns)]


def random_binary_series(n_steps: int, n_units: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.random((n_steps, n_units)) < 0.5).astype(np.float64)


def time_dybm_steps(series: np.ndarray, config: TrainConfig, rng: np.random.Generator,
                    repeats: int = 5) -> np.ndarray:
    """Per-step wall time of online DyBM training, minimum over ``repeats`` passes.

    Every pass starts from the same initial parameters; the minimum filters
    out scheduler and allocator noise.
    """
    template = BinaryDyBM.from_config(series.shape[1], config, rng)
    best = np.full(series.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
    for _ in range(repeats):
        model = BinaryDyBM.from_dict(template.to_dict())
        clock = time.perf_counter_ns
        for t, x in enumerate(series):
            start = clock()
            model.learn_one_step(x)
            elapsed = clock() - start
            if elapsed < best[t]:
                best[t] = elapsed
    return best


def summarize(kind: str, step_ns) -> BenchReport:
    step_ns = np.asarray(step_ns, dtype=np.int64)
    n = step_ns.size
    if n < 3:
        raise DomainError("bench needs at least 3 steps")
    fit = linregress(np.arange(n, dtype=np.float64), step_ns.astype(np.float64))
    window = max(min(100, n // 10), 1)
    return BenchReport(kind, step_ns, float(fit.slope), float(fit.pvalue),
                       float(step_ns[:window].mean()), float(step_ns[n - window:].mean()))


def run_bench(kind: str, n_units: int = 10, n_steps: int = 1000, seed: int = 0,
              config: TrainConfig | None = None, repeats: int = 5) -> BenchReport:
    if kind not in BENCH_KINDS:
        raise DomainError(f"bench supports {', '.join(BENCH_KINDS)}, not {kind!r}")
    config = config or TrainConfig(seed=seed)
    streams = rng_streams(seed, ("data", "model", "sampler"))
    series = random_binary_series(n_steps, n_units, streams["data"])
    if kind == "dybm-binary":
        return summarize(kind, time_dybm_steps(series, config, streams["model"], repeats))
    params = RtrbmParams.initial(n_units, config.n_hidden or n_units, streams["model"], config.init_scale)
    times = online_bptt(params, series, config.learning_rate, config.cd_steps, streams["sampler"])
    return summarize(kind, times)
