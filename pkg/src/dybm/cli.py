"""Command-line front end: train, forecast, score, sample and bench.

Every subcommand writes a headed CSV to ``--out`` and, unless ``--no-plot``
is given, a PNG figure with the same stem next to it.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import checkpoint
from .bench import BENCH_KINDS, run_bench
from .binary import BinaryDyBM
from .errors import EXIT_OK, DomainError, DybmError, MalformedInputError
from .functional import FUNCTIONAL, FunctionalDyBM, load_observations, observation_bounds
from .gaussian import GaussianDyBM
from .hidden import HiddenDyBM
from .rtrbm import Rtrbm
from .series import BINARY, REAL, TrainConfig, load_csv, rng_streams, write_table

DATA_KINDS = {
    "dybm-binary": BINARY,
    "dybm-hidden": BINARY,
    "rtrbm": BINARY,
    "dybm-gaussian": REAL,
    "dybm-gaussian-natural": REAL,
    "dybm-esn": REAL,
    "dybm-functional": FUNCTIONAL,
}


def load_data(path, kind: str):
    """Return ``(data, names)``; functional data is a list of observations."""
    data_kind = DATA_KINDS[kind]
    if data_kind == FUNCTIONAL:
        observations, _ = load_observations(path)
        return observations, None
    series = load_csv(path, data_kind)
    return series, series.names


def build_model(kind: str, data, config: TrainConfig):
    streams = rng_streams(config.seed, ("model", "sampler"))
    if kind == "dybm-functional":
        lower, upper = observation_bounds(data)
        return FunctionalDyBM.from_config(lower, upper, config)
    n = data.n_units
    if kind == "dybm-binary":
        return BinaryDyBM.from_config(n, config, streams["model"])
    if kind == "dybm-gaussian":
        return GaussianDyBM.from_config(n, config, streams["model"])
    if kind == "dybm-gaussian-natural":
        return GaussianDyBM.from_config(n, config, streams["model"], natural=True)
    if kind == "dybm-esn":
        return GaussianDyBM.from_config(n, config, streams["model"], esn=True)
    if kind == "dybm-hidden":
        return HiddenDyBM.from_config(n, config, streams["model"], streams["sampler"])
    if kind == "rtrbm":
        return Rtrbm.from_config(n, config, streams["model"], streams["sampler"])
    raise DomainError(f"unknown model kind {kind!r}")


def _config(args) -> TrainConfig:
    config = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = config.to_dict()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return TrainConfig.from_dict(overrides)


def _model_width(model) -> int:
    return model.n_landmarks if isinstance(model, FunctionalDyBM) else model.n_units


def _check_width(model, data) -> None:
    if isinstance(model, FunctionalDyBM):
        q = model.landmarks.shape[1]
        if any(o.points.shape[1] != q for o in data):
            raise DomainError(f"observations do not live in the model's {q}-D domain")
    elif data.n_units != model.n_units:
        raise DomainError(f"data has {data.n_units} columns, model expects {model.n_units}")


def _load_checkpoint(args):
    if not args.checkpoint_in:
        raise MalformedInputError("--checkpoint-in is required")
    return checkpoint.load(args.checkpoint_in, args.model)


def _column_names(model, names):
    if names:
        return list(names)
    return [f"p{j}" for j in range(_model_width(model))] if isinstance(model, FunctionalDyBM) \
        else [f"x{j}" for j in range(model.n_units)]


def _condition(model, data) -> None:
    """Run the model over ``data`` without learning so its state reflects that history."""
    model.reset()
    for x in data:
        model.score_one_step(x)


def cmd_train(args) -> int:
    if not args.model:
        raise MalformedInputError("--model is required for train")
    config = _config(args)
    data, _ = load_data(args.data, args.model)
    if args.checkpoint_in:
        model = checkpoint.load(args.checkpoint_in, args.model)
        _check_width(model, data)
    else:
        model = build_model(args.model, data, config)
    rows = []
    for epoch in range(1, config.epochs + 1):
        metrics = model.fit_epoch(data)
        rows.append((epoch, metrics.nll_per_step, metrics.rmse, metrics.accuracy))
    header = ["epoch", "nll_per_step"]
    has_rmse = bool(rows) and rows[0][2] is not None
    has_acc = bool(rows) and rows[0][3] is not None
    if not rows:
        has_rmse = DATA_KINDS[args.model] == REAL
        has_acc = DATA_KINDS[args.model] == BINARY and args.model != "rtrbm"
    header += ["rmse"] * has_rmse + ["accuracy"] * has_acc
    table = []
    for epoch, nll, err, acc in rows:
        table.append([epoch, float(nll)] + ([float(err)] if has_rmse else []) + ([float(acc)] if has_acc else []))
    if args.checkpoint_out:
        checkpoint.save(model, args.checkpoint_out)
    if args.out:
        write_table(args.out, header, table)
        if not args.no_plot and rows:
            from .plotting import figure_path, plot_training_curve
            plot_training_curve([r[1] for r in rows], figure_path(args.out),
                                [r[2] for r in rows] if has_rmse else None,
                                [r[3] for r in rows] if has_acc else None)
    return EXIT_OK


def cmd_forecast(args) -> int:
    if args.horizon is None or args.horizon < 1:
        raise DomainError("--horizon must be >= 1")
    model = _load_checkpoint(args)
    names, history = None, None
    if args.data:
        data, names = load_data(args.data, model.kind)
        _check_width(model, data)
        _condition(model, data)
        history = None if isinstance(data, list) else data.values
    values = model.forecast(args.horizon)
    names = _column_names(model, names)
    _require_out(args)
    write_table(args.out, names, [[float(v) for v in row] for row in values])
    if not args.no_plot:
        from .plotting import figure_path, plot_forecast
        plot_forecast(values, names, figure_path(args.out), history)
    return EXIT_OK


def cmd_score(args) -> int:
    model = _load_checkpoint(args)
    if not args.data:
        raise MalformedInputError("--data is required for score")
    data, _ = load_data(args.data, model.kind)
    _check_width(model, data)
    nll = -np.asarray(model.score(data), dtype=np.float64)
    _require_out(args)
    write_table(args.out, ["t", "nll"], [(t, float(v)) for t, v in enumerate(nll)])
    if not args.no_plot:
        from .plotting import figure_path, plot_anomaly_trace
        plot_anomaly_trace(nll, figure_path(args.out))
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.horizon is None or args.horizon < 1:
        raise DomainError("--horizon must be >= 1")
    model = _load_checkpoint(args)
    names = None
    if args.data:
        data, names = load_data(args.data, model.kind)
        _check_width(model, data)
        _condition(model, data)
    rng = rng_streams(args.seed if args.seed is not None else 0, ("sample",))["sample"]
    values = model.sample(args.horizon, rng)
    names = _column_names(model, names)
    _require_out(args)
    integral = DATA_KINDS[model.kind] == BINARY
    write_table(args.out, names, [[int(v) if integral else float(v) for v in row] for row in values])
    if not args.no_plot:
        from .plotting import figure_path, plot_samples
        plot_samples(values, figure_path(args.out))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.model not in BENCH_KINDS:
        raise DomainError(f"bench supports --model {' or '.join(BENCH_KINDS)}")
    config = _config(args)
    report = run_bench(args.model, args.units, args.steps, config.seed, config, args.repeats)
    _require_out(args)
    write_table(args.out, ["t", "step_wall_time_ns"], report.rows())
    summary = args.out.with_name(args.out.stem + "_summary.csv")
    write_table(summary, ["kind", "steps", "slope_ns_per_step", "p_value", "late_over_early"],
                [(report.kind, report.step_ns.size, report.slope, report.p_value, report.ratio)])
    print(f"{report.kind}: slope {report.slope:.4g} ns/step, p={report.p_value:.3g}, "
          f"late/early {report.ratio:.3f}")
    if not args.no_plot:
        from .plotting import figure_path, plot_bench
        plot_bench(report.step_ns, report.slope, figure_path(args.out), report.kind)
    return EXIT_OK


def _require_out(args) -> None:
    if not args.out:
        raise MalformedInputError("--out is required")


def build_parser() -> argparse.ArgumentParser:
    from pathlib import Path

    parser = argparse.ArgumentParser(prog="dybm", description="Online time-series learning with DyBMs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required=False):
        p.add_argument("--model", choices=checkpoint.MODEL_KINDS, required=model_required)
        p.add_argument("--data", type=Path)
        p.add_argument("--config", type=Path)
        p.add_argument("--checkpoint-in", type=Path)
        p.add_argument("--checkpoint-out", type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
        return p

    train = common(sub.add_parser("train", help="train a model on a CSV series"), model_required=True)
    train.add_argument("--epochs", type=int)
    train.set_defaults(func=cmd_train)

    forecast = common(sub.add_parser("forecast", help="iterated expected values from a checkpoint"))
    forecast.add_argument("--horizon", type=int, required=True)
    forecast.set_defaults(func=cmd_forecast)

    score = common(sub.add_parser("score", help="per-step NLL (anomaly trace) without learning"))
    score.set_defaults(func=cmd_score)

    sample = common(sub.add_parser("sample", help="draw a sequence from a checkpoint"))
    sample.add_argument("--horizon", type=int, required=True)
    sample.set_defaults(func=cmd_sample)

    bench = common(sub.add_parser("bench", help="per-step training time versus t"), model_required=True)
    bench.add_argument("--units", type=int, default=10)
    bench.add_argument("--steps", type=int, default=1000)
    bench.add_argument("--repeats", type=int, default=5)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DybmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
