"""Figures written next to the CLI's CSV outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curve(nll, path, rmse=None, accuracy=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = np.arange(1, len(nll) + 1)
    ax.plot(epochs, nll, marker="o", ms=3, label="NLL per step")
    ax.set_xlabel("epoch")
    ax.set_ylabel("NLL per step")
    extra = [(rmse, "RMSE"), (accuracy, "accuracy")]
    extra = [(v, name) for v, name in extra if v is not None and len(v) and v[0] is not None]
    if extra:
        twin = ax.twinx()
        for values, name in extra:
            twin.plot(epochs, values, ls="--", label=name)
        twin.set_ylabel(" / ".join(name for _, name in extra))
        twin.legend(loc="upper right")
    ax.legend(loc="upper left")
    return _save(fig, path)


def plot_forecast(values, names, path, history=None) -> Path:
    values = np.atleast_2d(values)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    offset = 0
    if history is not None and len(history):
        history = np.atleast_2d(history)
        offset = history.shape[0]
        for j in range(history.shape[1]):
            ax.plot(np.arange(offset), history[:, j], color=f"C{j % 10}", alpha=0.5)
    for j in range(values.shape[1]):
        ax.plot(np.arange(offset, offset + values.shape[0]), values[:, j], color=f"C{j % 10}",
                marker=".", label=names[j] if j < len(names) else None)
    ax.set_xlabel("step")
    ax.set_ylabel("forecast")
    if values.shape[1] <= 10:
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_anomaly_trace(nll, path) -> Path:
    nll = np.asarray(nll)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(nll, lw=0.8)
    if nll.size:
        cut = np.quantile(nll, 0.9)
        ax.axhline(cut, color="C3", ls="--", lw=0.8, label="90th percentile")
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("NLL")
    return _save(fig, path)


def plot_samples(values, path) -> Path:
    values = np.atleast_2d(values)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if np.all((values == 0) | (values == 1)):
        ax.imshow(values.T, aspect="auto", interpolation="nearest", cmap="Greys")
        ax.set_ylabel("unit")
    else:
        ax.plot(values)
        ax.set_ylabel("value")
    ax.set_xlabel("step")
    return _save(fig, path)


def plot_bench(step_ns, slope, path, label="") -> Path:
    step_ns = np.asarray(step_ns, dtype=np.float64)
    t = np.arange(step_ns.size)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(t, step_ns / 1e3, lw=0.6, label=label or "step time")
    intercept = step_ns.mean() - slope * t.mean()
    ax.plot(t, (intercept + slope * t) / 1e3, color="C3", label=f"fit, slope {slope:.3g} ns/step")
    ax.set_xlabel("step t")
    ax.set_ylabel("wall time (us)")
    ax.legend()
    return _save(fig, path)
