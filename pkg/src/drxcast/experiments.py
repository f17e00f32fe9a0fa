"""Seeded experiment sweeps: prediction, classification folds and DRX scheme comparison.

An experiment is described by a flat key=value text file::

    # comments start with '#'
    kind = PREDICT_SWEEP
    axis = tau
    values = 2, 10, 30, 60
    schemes = persistence, arima, lstm
    repetitions = 37
    seed = 0

Unknown keys are rejected. List-valued keys take comma separated items.
Every repetition draws its randomness from ``SeedSequence(seed).spawn``, so
results do not depend on the order in which jobs run.
"""
from __future__ import annotations

import csv
import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import adapt, classifier, featurize, linear_forecast, net_sim
from .neural_forecast import RegressionNet, TrainConfig, make_windows, train
from .reporting import MetricTable, delay_cdf, relative_rmse, rmse, write_plot_script
from .trace_io import App, synthesize_labeled_trace, synthesize_user_trace

__all__ = ["KINDS", "ExperimentConfig", "ExperimentError", "ExperimentResult", "load_config", "parse_config",
           "run_experiment"]

KINDS = ("PREDICT_SWEEP", "CLASSIFY_FOLDS", "DRX_COMPARE")
AXES = {
    "PREDICT_SWEEP": ("tau", "train_len", "horizon", "feature_set"),
    "CLASSIFY_FOLDS": ("feature_set", "window_s"),
    "DRX_COMPARE": ("n_ues", "n_carriers", "omega"),
}
SCHEMES = {
    "PREDICT_SWEEP": ("persistence", "arima", "lstm"),
    "CLASSIFY_FOLDS": ("lstm", "raf"),
    "DRX_COMPARE": ("min_energy", "min_delay", "ml"),
}
RAW_HEADER = ["rep", "fold", "scheme", "axis", "value", "metric", "sample"]
CLASS_NAMES = ("surf", "vcall", "voice", "stream")


class ExperimentError(RuntimeError):
    """A sweep point failed; the message names the point."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "PREDICT_SWEEP"
    axis: str = "tau"
    values: tuple = (2, 10, 30, 60)
    schemes: tuple = ()
    repetitions: int = 1
    seed: int = 0
    out_dir: str = "results"
    workers: int = 1
    # traffic
    profile: str = "daily"
    trace_s: float = 2 * 86400.0
    trace_seed: int = 1
    # prediction
    tau: float = 10.0
    train_s: float = 8 * 3600.0
    test_s: float = 2 * 3600.0
    train_cap: int = 1500
    test_cap: int = 500
    train_len: int = 0
    test_len: int = 0
    horizon: int = 1
    feature_set: str = "FS6"
    window: int = 10
    hidden: int = 16
    epochs: int = 20
    batch_size: int = 64
    # classification
    n_traces: int = 16
    window_s: float = 5.0
    stride: int = 5
    n_trees: int = 50
    # DRX
    n_ues: int = 10
    n_carriers: int = 5
    duration_s: float = 600.0
    tti_ms: float = 1.0
    omega: float = 0.5
    epoch_ttis: int = 1000
    cdf_grid: tuple = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
    raw_reports: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.axis not in AXES[self.kind]:
            raise ValueError(f"axis {self.axis!r} not valid for {self.kind}; expected one of {AXES[self.kind]}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.values:
            raise ValueError("values must not be empty")
        for s in self.schemes:
            if s not in SCHEMES[self.kind]:
                raise ValueError(f"scheme {s!r} not valid for {self.kind}")
        for v in self.values:
            _check_axis_value(self, v)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def active_schemes(self) -> tuple:
        return tuple(self.schemes) or SCHEMES[self.kind]

    def at(self, value) -> "ExperimentConfig":
        """The config with the sweep axis pinned to ``value``."""
        return replace(self, **{self.axis: value})

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"


def _check_axis_value(cfg, v) -> None:
    a = cfg.axis
    if a == "feature_set":
        featurize.feature_set(v)
    elif a in ("tau", "window_s") and not v > 0:
        raise ValueError(f"{a} must be positive, got {v}")
    elif a in ("train_len", "horizon", "n_ues", "n_carriers") and (int(v) != v or v < 1):
        raise ValueError(f"{a} must be a positive integer, got {v}")
    elif a == "omega" and not 0 <= v <= 1:
        raise ValueError(f"omega must be in [0, 1], got {v}")


def _convert(text: str, proto):
    if isinstance(proto, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(proto, int):
        return int(text)
    if isinstance(proto, float):
        return float(text)
    return text


def _scalar(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config(text: str, **overrides) -> ExperimentConfig:
    defaults = ExperimentConfig()
    kw = {}
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or key not in known:
            raise ValueError(f"line {lineno}: expected a known key = value, got {raw!r}")
        proto = getattr(defaults, key)
        try:
            if isinstance(proto, tuple):
                kw[key] = tuple(_scalar(x.strip()) for x in val.split(",") if x.strip())
            else:
                kw[key] = _convert(val, proto)
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "kind" in kw and "axis" not in kw:
        kw["axis"] = AXES[kw["kind"]][0]
    return ExperimentConfig(**kw)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


@dataclass
class ExperimentResult:
    table: MetricTable
    raw: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)


def _rep_seeds(seed: int, reps: int) -> list:
    return np.random.SeedSequence(seed).spawn(reps)


# -- prediction ------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _user_series(duration, seed, profile, tau):
    return featurize.bin_trace(synthesize_user_trace(duration, seed=seed, profile=profile), tau)


def _lengths(cfg: ExperimentConfig):
    ntr = cfg.train_len or min(int(cfg.train_s // cfg.tau), cfg.train_cap)
    nte = cfg.test_len or min(int(cfg.test_s // cfg.tau), cfg.test_cap)
    return ntr, nte


def _origins(nte: int, h: int) -> np.ndarray:
    return np.arange(0, nte - h + 1, h)


def _predict_job(cfg: ExperimentConfig, rep: int, ss) -> list:
    """One repetition at one axis point; returns raw rows."""
    series = _user_series(cfg.trace_s, cfg.trace_seed, cfg.profile, cfg.tau)
    y = series.target_values
    ntr, nte = _lengths(cfg)
    h = cfg.horizon
    # the training window always ends at the same point, so a train-length sweep
    # shares one test slice per repetition
    longest = max(cfg.values) if cfg.axis == "train_len" else ntr
    room = len(y) - longest - nte - cfg.window
    if room <= 0:
        raise ValueError(f"trace of {len(y)} bins too short for {longest} train + {nte} test bins")
    rng = np.random.default_rng(ss)
    split = cfg.window + int(rng.integers(0, room)) + longest
    net_seed = int(rng.integers(0, 2**31))
    tr_y, te_y = y[split - ntr:split], y[split:split + nte]
    org = _origins(nte, h)
    truth = np.stack([te_y[o:o + h] for o in org])

    preds = {}
    if "persistence" in cfg.active_schemes:
        last = y[split - 1 + org]
        preds["persistence"] = np.repeat(last[:, None], h, axis=1)
    if "arima" in cfg.active_schemes:
        oa = linear_forecast.OptimizedArima().fit(tr_y)
        steps = [oa.predict(tr_y, te_y, horizon=k) for k in range(1, h + 1)]
        preds["arima"] = np.stack([[steps[k][o + k] for k in range(h)] for o in org])
    if "lstm" in cfg.active_schemes:
        data = featurize.apply_mask(series, cfg.feature_set).data
        X, Y = make_windows(data[split - ntr:split], y[split - ntr:split], cfg.window, h)
        net = RegressionNet.create(data.shape[1], h, hidden=cfg.hidden, seed=net_seed)
        net, _ = train(net, X, Y, TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=net_seed))
        Xt = np.stack([data[split + o - cfg.window:split + o] for o in org])
        preds["lstm"] = np.maximum(net.predict(Xt), 0.0)

    value = getattr(cfg, cfg.axis)
    rows = []
    for scheme in cfg.active_schemes:
        p = preds[scheme]
        rows.append([rep, -1, scheme, cfg.axis, value, "rmse", rmse(p.ravel(), truth.ravel())])
        rows.append([rep, -1, scheme, cfg.axis, value, "relative_rmse", relative_rmse(p.ravel(), truth.ravel())])
    return rows


# -- classification -----------------------------------------------------------

@functools.lru_cache(maxsize=4)
def _labeled_series(seed0, n, tau):
    return tuple(featurize.bin_trace(synthesize_labeled_trace(seed=seed0 + i), tau) for i in range(n))


def _classify_job(cfg: ExperimentConfig, rep: int, ss) -> list:
    tau = cfg.tau
    base = _labeled_series(cfg.trace_seed, cfg.n_traces, tau)
    ser = [featurize.apply_mask(s, cfg.feature_set) for s in base]
    wl = cfg.window_s
    fold_seeds = ss.spawn(len(ser))
    value = getattr(cfg, cfg.axis)
    rows = []
    pooled = {s: ([], []) for s in cfg.active_schemes}
    for k in range(len(ser)):
        seed = int(fold_seeds[k].generate_state(1)[0])
        train_w = [classifier.split_windows(s, wl, stride=cfg.stride) for i, s in enumerate(ser) if i != k]
        X = np.concatenate([w[0] for w in train_w])
        Y = np.concatenate([w[1] for w in train_w])
        _, Yt = classifier.split_windows(ser[k], wl)
        truth = classifier.window_truth(Yt)
        for scheme in cfg.active_schemes:
            if scheme == "lstm":
                model = classifier.ClassifierNet.create(X.shape[2], n_classes=len(App), hidden=cfg.hidden, seed=seed)
                model, _ = train(model, X, Y, TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=seed))
            else:
                model = classifier.fit_forest(X.mean(axis=1), classifier.window_truth(Y), k=cfg.n_trees,
                                              seed=seed, n_classes=len(App))
            pred = classifier.classify_window(model, ser[k], wl)
            pooled[scheme][0].append(pred)
            pooled[scheme][1].append(truth)
            rows += _eval_rows(rep, k, scheme, cfg.axis, value, classifier.evaluate_classification(pred, truth))
    for scheme, (p, t) in pooled.items():
        ev = classifier.evaluate_classification(np.concatenate(p), np.concatenate(t))
        rows += _eval_rows(rep, -1, scheme, cfg.axis, value, ev)
    return rows


def _eval_rows(rep, fold, scheme, axis, value, ev) -> list:
    rows = [[rep, fold, scheme, axis, value, "accuracy", ev.accuracy]]
    for c, name in enumerate(CLASS_NAMES):
        rows.append([rep, fold, scheme, axis, value, f"recall_{name}", float(ev.recall[c])])
        rows.append([rep, fold, scheme, axis, value, f"correct_{name}", int(ev.correct[c])])
        rows.append([rep, fold, scheme, axis, value, f"actual_{name}", int(ev.actual[c])])
    return rows


# -- DRX comparison -------------------------------------------------------------

def _traffic(cfg, seeds):
    return [net_sim.UeTraffic.from_trace(synthesize_user_trace(cfg.duration_s, seed=s, profile=cfg.profile),
                                         cfg.tti_ms) for s in seeds]


def _ml_policies(cfg: ExperimentConfig, train_seeds, seed: int):
    """Per-UE predictors F and a shared mapping H learned from oracle labels."""
    traffic = _traffic(cfg, train_seeds)
    nets = [adapt.train_F(t.labels(), seed=seed + u) for u, t in enumerate(traffic)]
    oracle = adapt.OracleTable.concat([
        adapt.build_oracle(t.labels(), t, nets[u], epoch=cfg.epoch_ttis) for u, t in enumerate(traffic)])
    H = adapt.train_H(oracle, cfg.omega)
    return [adapt.AdaptivePolicy(n, H, epoch=cfg.epoch_ttis) for n in nets]


def _drx_job(cfg: ExperimentConfig, rep: int, ss, out_dir=None) -> list:
    base = cfg.trace_seed + 1000 * rep
    test = _traffic(cfg, [base + u for u in range(cfg.n_ues)])
    value = getattr(cfg, cfg.axis)
    duration = int(round(cfg.duration_s * 1000.0 / cfg.tti_ms))
    rows = []
    for scheme in cfg.active_schemes:
        if scheme == "ml":
            pol = _ml_policies(cfg, [base + 100 + u for u in range(cfg.n_ues)], int(ss.generate_state(1)[0]) % 2**20)
        else:
            pol = [2 if scheme == "min_energy" else 3] * cfg.n_ues
        sim = net_sim.SimConfig(test, pol, n_ues=cfg.n_ues, n_carriers=cfg.n_carriers, tti_ms=cfg.tti_ms,
                                duration=duration, scheme=scheme)
        report = net_sim.run(sim, seed=rep)
        if out_dir is not None and cfg.raw_reports:
            report.write_csv(out_dir, f"raw_{scheme}_{cfg.axis}{value}_rep{rep}_")
        d = report.delays_ms
        rows.append([rep, -1, scheme, cfg.axis, value, "power_mW", float(report.power_mW.mean())])
        rows.append([rep, -1, scheme, cfg.axis, value, "mean_delay_ms", float(d.mean()) if len(d) else float("nan")])
        rows.append([rep, -1, scheme, cfg.axis, value, "median_delay_ms",
                     float(np.median(d)) if len(d) else float("nan")])
        rows.append([rep, -1, scheme, cfg.axis, value, "delivered_frac",
                     len(d) / len(report.pkt_enq) if len(report.pkt_enq) else float("nan")])
        for g, c in zip(cfg.cdf_grid, delay_cdf(report, cfg.cdf_grid)):
            rows.append([rep, -1, scheme, cfg.axis, value, f"cdf@{g}", float(c)])
    return rows


# -- driver ---------------------------------------------------------------------

_JOBS = {"PREDICT_SWEEP": _predict_job, "CLASSIFY_FOLDS": _classify_job, "DRX_COMPARE": _drx_job}


def _run_point(args):
    cfg, rep, ss, out_dir = args
    try:
        if cfg.kind == "DRX_COMPARE":
            return _drx_job(cfg, rep, ss, out_dir)
        return _JOBS[cfg.kind](cfg, rep, ss)
    except Exception as e:
        raise ExperimentError(f"{cfg.kind} failed at {cfg.axis}={getattr(cfg, cfg.axis)} rep {rep}: {e}") from e


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every (axis value, repetition) point and write tables, raw rows and plot scripts."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _rep_seeds(cfg.seed, cfg.repetitions)
    jobs = [(cfg.at(v), r, seeds[r], out) for v in cfg.values for r in range(cfg.repetitions)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_point, jobs))
    else:
        parts = [_run_point(j) for j in jobs]
    raw = sorted((row for part in parts for row in part),
                 key=lambda r: (r[2], r[3], float(r[4]) if not isinstance(r[4], str) else 0.0, str(r[4]),
                                r[5], r[0], r[1]))
    table = _aggregate(raw)
    paths = {"table": out / "metrics.csv", "raw": out / "raw.csv", "config": out / "config.txt"}
    table.write_csv(paths["table"])
    _write_raw(raw, paths["raw"])
    paths["config"].write_text(cfg.to_text(), encoding="utf-8")
    paths.update(_plots(cfg, out))
    if cfg.kind == "CLASSIFY_FOLDS":
        for scheme in cfg.active_schemes:
            p = out / f"classification_{scheme}.csv"
            classifier.write_classification_report(_report_rows(cfg, table, scheme), p)
            paths[f"classification_{scheme}"] = p
    return ExperimentResult(table, raw, paths)


def _report_rows(cfg, table: MetricTable, scheme: str) -> list:
    rows = []
    for v in cfg.values:
        c = cfg.at(v)
        get = functools.partial(table.get, scheme, cfg.axis, v)
        rows.append(classifier.ReportRow(c.feature_set, c.window_s, get("accuracy"),
                                         [get(f"recall_{n}") for n in CLASS_NAMES]))
    return rows


def _aggregate(raw) -> MetricTable:
    groups = {}
    for rep, fold, scheme, axis, value, metric, sample in raw:
        if fold == -1:
            groups.setdefault((scheme, axis, value, metric), []).append(sample)
    table = MetricTable()
    for key, samples in groups.items():
        table.add(*key, samples)
    return table


def _write_raw(raw, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_HEADER)
        for r in raw:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])


def read_raw(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != RAW_HEADER:
        raise ValueError(f"{path}: not a raw results file")
    return [[int(r[0]), int(r[1]), r[2], r[3], r[4], r[5], float(r[6])] for r in rows[1:]]


def _plots(cfg: ExperimentConfig, out: Path) -> dict:
    paths = {}

    def plot(name, **kw):
        p = out / f"{name}.plot"
        write_plot_script(p, data="metrics.csv", **kw)
        paths[name] = p

    if cfg.kind == "PREDICT_SWEEP":
        xl = {"tau": "bin width tau (s)", "train_len": "training length (bins)", "horizon": "horizon (bins)",
              "feature_set": "feature set"}[cfg.axis]
        kind = "bar" if cfg.axis == "feature_set" else "line"
        plot(f"rmse_vs_{cfg.axis}", title=f"Prediction RMSE vs {cfg.axis}", x="value", y="mean", group="scheme",
             kind=kind, xlabel=xl, ylabel="RMSE (packets)", filters={"metric": "rmse"})
        plot(f"relative_rmse_vs_{cfg.axis}", title=f"Relative RMSE vs {cfg.axis}", x="value", y="mean",
             group="scheme", kind=kind, xlabel=xl, ylabel="RMSE / mean target", filters={"metric": "relative_rmse"})
    elif cfg.kind == "CLASSIFY_FOLDS":
        plot("accuracy", title="Classification accuracy", x="value", y="mean", group="scheme", kind="bar",
             xlabel=cfg.axis, ylabel="accuracy", filters={"metric": "accuracy"})
        for name in CLASS_NAMES:
            plot(f"recall_{name}", title=f"Recall ({name})", x="value", y="mean", group="scheme", kind="bar",
                 xlabel=cfg.axis, ylabel="recall", filters={"metric": f"recall_{name}"})
    else:
        plot("power", title="Average UE power", x="scheme", y="mean", kind="bar", xlabel="scheme",
             ylabel="power (mW)", filters={"metric": "power_mW"})
        cdf = out / "delay_cdf.csv"
        table = MetricTable.read_csv(out / "metrics.csv")
        with cdf.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "axis_value", "delay_ms", "cdf"])
            for (scheme, axis, value, metric), (mean, _, _) in sorted(table.rows.items()):
                if metric.startswith("cdf@"):
                    w.writerow([scheme, value, metric[4:], repr(mean)])
        p = out / "delay_cdf.plot"
        write_plot_script(p, "Packet delay CDF", "delay_cdf.csv", "delay_ms", "cdf", group="scheme", kind="step",
                          xlabel="delay (ms)", ylabel="P(delay <= x)")
        paths["delay_cdf"] = p
    return paths
