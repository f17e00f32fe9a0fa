"""Command-line front end.

Every subcommand writes its artifacts under ``--out-dir``; with a fixed
``--seed`` repeated invocations produce byte-identical CSV files. On failure
the process exits with status 1 and names the failing stage on stderr.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import experiments, featurize, linear_forecast, net_sim, trace_io
from .neural_forecast import RegressionNet, TrainConfig, make_windows, save_checkpoint, save_loss_curve, train
from .reporting import MetricTable, average_power, delay_cdf, rmse, write_plot_script


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"{stage}: {err}")
        self.stage = stage


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(path, sort=False):
    return _stage("load", trace_io.load_trace, path, sort=sort)


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args) -> None:
    out = _out(args)
    if args.labeled:
        traces = [_stage("synth", trace_io.synthesize_labeled_trace, args.seed + i) for i in range(args.count)]
    elif args.app:
        traces = [_stage("synth", trace_io.synthesize_trace, args.app, args.duration, args.seed + i)
                  for i in range(args.count)]
    else:
        traces = [_stage("synth", trace_io.synthesize_user_trace, args.duration, args.seed + i, args.profile)
                  for i in range(args.count)]
    for i, tr in enumerate(traces):
        path = out / (f"trace_{i:02d}.csv" if args.count > 1 else "trace.csv")
        _stage("write", trace_io.save_trace, tr, path)
        print(f"{path}: {len(tr)} packets, {tr.duration:g} s")


def cmd_ingest(args) -> None:
    out = _out(args)
    tr = _load(args.trace, sort=args.sort)
    direction = None if args.direction == "both" else trace_io.Direction[args.direction]
    totals = _stage("quantize", trace_io.tti_byte_totals, tr, args.tti_ms, direction)
    labels = trace_io.QuantizationScheme().label(totals)
    with (out / "tti_labels.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tti", "bytes", "label"])
        for t in np.flatnonzero(totals) if args.nonzero else range(len(totals)):
            w.writerow([int(t), int(totals[t]), int(labels[t])])
    hist = np.bincount(labels, minlength=10)[1:]
    print(f"{len(tr)} packets, {len(labels)} TTIs; label counts 1..9: {' '.join(map(str, hist))}")


def cmd_features(args) -> None:
    out = _out(args)
    tr = _load(args.trace)
    series = _stage("features", featurize.bin_trace, tr, args.tau_s)
    if args.feature_set:
        series = _stage("features", featurize.apply_mask, series, args.feature_set)
    path = out / "features.csv"
    _stage("write", featurize.save_series, series, path)
    print(f"{path}: {len(series)} bins of {args.tau_s:g} s, fields {','.join(series.fields)}")


def _target_series(args):
    if args.series:
        return _stage("load", featurize.load_series, args.series, args.tau_s)
    return _stage("features", featurize.bin_trace, _load(args.trace), args.tau_s)


def _split(n, args):
    n_test = args.test_len or max(1, n // 5)
    if n_test >= n:
        raise StageError("split", ValueError(f"series of {n} bins too short for {n_test} test bins"))
    return n - n_test


def cmd_fit_arima(args) -> None:
    out = _out(args)
    y = _target_series(args).column(args.target)
    split = _split(len(y), args)
    train_y, test_y = y[:split], y[split:]
    oa = linear_forecast.OptimizedArima(range(args.p_max + 1), range(args.d_max + 1), range(args.q_max + 1))
    _stage("fit-arima", oa.fit, train_y)
    oa.grid.to_csv(out / "arima_grid.csv")
    write_plot_script(out / "arima_grid.plot", "ARIMA validation RMSE by order", "arima_grid.csv", "p", "rmse",
                      group="d", kind="line", xlabel="AR order p", ylabel="validation RMSE")
    pred = _stage("forecast", oa.predict, train_y, test_y, args.horizon)
    base = linear_forecast.rolling_forecast(linear_forecast.persistence_model(train_y), train_y, test_y, args.horizon)
    with (out / "arima_forecast.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "truth", "arima", "persistence"])
        for i, (t, p, b) in enumerate(zip(test_y, pred, base)):
            w.writerow([split + i, repr(float(t)), repr(float(p)), repr(float(b))])
    p, d, q = oa.grid.best
    print(f"best ARIMA({p},{d},{q}); test RMSE {rmse(pred, test_y):.4f} vs persistence {rmse(base, test_y):.4f}")


def cmd_train_lstm(args) -> None:
    out = _out(args)
    series = _target_series(args)
    y = series.column(args.target)
    data = featurize.apply_mask(series, args.feature_set).data if args.feature_set else series.data
    split = _split(len(y), args)
    X, Y = make_windows(data[:split], y[:split], args.window, args.horizon)
    if len(X) == 0:
        raise StageError("train-lstm", ValueError("training slice shorter than one window"))
    net = RegressionNet.create(data.shape[1], args.horizon, hidden=args.hidden, seed=args.seed)
    net, losses = _stage("train-lstm", train, net, X, Y,
                         TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed))
    save_checkpoint(net, out / "lstm.json")
    save_loss_curve(losses, out / "loss.csv")
    Xt, Yt = make_windows(data[split - args.window:], y[split - args.window:], args.window, args.horizon)
    pred = np.maximum(net.predict(Xt), 0.0)
    print(f"final training MSE {losses[-1]:.5f}; test RMSE {rmse(pred.ravel(), Yt.ravel()):.4f} "
          f"over {len(Xt)} windows")


def _experiment(args, kind=None):
    cfg = _stage("config", experiments.load_config if args.config else _noconfig, args.config,
                 seed=args.seed, tau=args.tau_s, tti_ms=args.tti_ms,
                 out_dir=str(args.out_dir) if args.out_dir else None)
    if kind and cfg.kind != kind:
        raise StageError("config", ValueError(f"expected kind = {kind}, config has {cfg.kind}"))
    res = _stage("experiment", experiments.run_experiment, cfg)
    _print_table(res.table)
    return res


def _noconfig(_path, **overrides):
    raise ValueError("a config file is required (--config)")


def _print_table(table: MetricTable) -> None:
    for (scheme, axis, value, metric), (mean, std, n) in sorted(table.rows.items()):
        if metric.startswith(("correct_", "actual_", "cdf@")):
            continue
        print(f"{scheme:12s} {axis}={value:<8s} {metric:18s} {mean:12.4f} ± {std:.4f} (n={n})")


def cmd_classify(args) -> None:
    _experiment(args, "CLASSIFY_FOLDS")


def cmd_compare(args) -> None:
    _experiment(args, "DRX_COMPARE")


def cmd_report(args) -> None:
    if args.table:
        _print_table(_stage("report", MetricTable.read_csv, args.table))
    else:
        _experiment(args)


def cmd_simulate(args) -> None:
    out = _out(args)
    if args.traces:
        traffic = [net_sim.UeTraffic.from_trace(_load(p), args.tti_ms) for p in args.traces]
    else:
        traffic = [net_sim.UeTraffic.from_trace(trace_io.synthesize_user_trace(args.duration, args.seed + u,
                                                                               args.profile), args.tti_ms)
                   for u in range(args.n_ues)]
    duration = int(round(args.duration * 1000.0 / args.tti_ms))
    cfg = net_sim.SimConfig(traffic, [args.drx_set] * len(traffic), n_ues=len(traffic), n_carriers=args.n_carriers,
                            carrier_rate=args.carrier_rate, tti_ms=args.tti_ms, duration=duration,
                            scheme=f"set{args.drx_set}", event_log=args.events)
    report = _stage("simulate", net_sim.run, cfg, args.seed)
    report.write_csv(out, "")
    per_ue, mean = average_power(report)
    grid = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
    with (out / "delay_cdf.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delay_ms", "cdf"])
        for g, c in zip(grid, delay_cdf(report, grid)):
            w.writerow([g, repr(float(c))])
    d = report.delays_ms
    print(f"{len(report.pkt_enq)} packets, {len(d)} delivered; mean power {mean:.3f} mW; "
          f"median delay {np.median(d) if len(d) else float('nan'):g} ms")


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (default 0, or the config's)")
    common.add_argument("--out-dir", type=Path, default=None, help="artifact directory (default out/)")
    common.add_argument("--tti-ms", type=float, default=None, help="TTI length in ms (default 1)")
    common.add_argument("--tau-s", type=float, default=None, help="bin width in seconds (default 10)")
    common.add_argument("--config", type=Path, default=None, help="key = value experiment file")

    ap = argparse.ArgumentParser(prog="drxcast", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic traces")
    p.add_argument("--app", choices=[a.name for a in trace_io.App])
    p.add_argument("--profile", default="daily")
    p.add_argument("--labeled", action="store_true", help="one segment of every application per trace")
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="load a trace CSV and quantize per-TTI bytes")
    p.add_argument("trace")
    p.add_argument("--sort", action="store_true", help="sort unsorted timestamps instead of rejecting")
    p.add_argument("--direction", choices=["DL", "UL", "both"], default="DL")
    p.add_argument("--nonzero", action="store_true", help="only write TTIs with arrivals")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("features", parents=[common], help="bin a trace into per-tau features")
    p.add_argument("trace")
    p.add_argument("--feature-set", default="")
    p.set_defaults(fn=cmd_features)

    for name, fn in (("fit-arima", cmd_fit_arima), ("train-lstm", cmd_train_lstm)):
        p = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1].upper()} forecaster on one series")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--trace")
        src.add_argument("--series", help="features CSV")
        p.add_argument("--target", default="num_ul")
        p.add_argument("--test-len", type=int, default=0, help="test bins (default: last fifth)")
        p.add_argument("--horizon", type=int, default=1)
        p.set_defaults(fn=fn)
        if name == "fit-arima":
            p.add_argument("--p-max", type=int, default=8)
            p.add_argument("--d-max", type=int, default=2)
            p.add_argument("--q-max", type=int, default=3)
        else:
            p.add_argument("--feature-set", default="FS6")
            p.add_argument("--window", type=int, default=10)
            p.add_argument("--hidden", type=int, default=16)
            p.add_argument("--epochs", type=int, default=20)
            p.add_argument("--lr", type=float, default=0.005)
            p.add_argument("--batch-size", type=int, default=64)

    for name, fn, what in (("classify", cmd_classify, "leave-one-trace-out classification folds"),
                           ("compare", cmd_compare, "DRX scheme comparison")):
        p = sub.add_parser(name, parents=[common], help=f"run a {what} experiment from --config")
        p.set_defaults(fn=fn)

    p = sub.add_parser("simulate", parents=[common], help="simulate UEs under one static DRX set")
    p.add_argument("traces", nargs="*", help="trace CSVs, one per UE (default: synthetic)")
    p.add_argument("--drx-set", type=int, choices=[1, 2, 3, 4], default=2)
    p.add_argument("--n-ues", type=int, default=10)
    p.add_argument("--n-carriers", type=int, default=5)
    p.add_argument("--carrier-rate", type=float, default=1e6, help="bits per second")
    p.add_argument("--duration", type=float, default=600.0, help="seconds")
    p.add_argument("--profile", default="handset")
    p.add_argument("--events", action="store_true", help="also write the phase event log")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="run any experiment config, or print a metrics table")
    p.add_argument("--table", type=Path, help="existing metrics CSV to print")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("tti_ms", "tau_s"):
        if getattr(args, name) is not None and not getattr(args, name) > 0:
            print(f"drxcast {args.command}: args: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return 2
    if args.command not in ("classify", "compare", "report"):
        args.tti_ms = args.tti_ms or 1.0
        args.tau_s = args.tau_s or 10.0
        args.seed = args.seed or 0
        args.out_dir = args.out_dir or Path("out")
    try:
        args.fn(args)
    except StageError as e:
        print(f"drxcast {args.command}: stage {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"drxcast {args.command}: stage {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
