import numpy as np
import pytest

from drxcast.classifier import read_classification_report
from drxcast.experiments import (
    CLASS_NAMES, ExperimentConfig, ExperimentError, load_config, parse_config, read_raw, run_experiment,
)
from drxcast.reporting import MetricTable, read_plot_script

SMALL_PREDICT = """
kind = PREDICT_SWEEP   # quick sweep
axis = tau
values = 10, 30
repetitions = 2
trace_s = 21600
train_s = 7200
test_s = 1800
train_cap = 300
test_cap = 60
hidden = 4
epochs = 2
"""

SMALL_CLASSIFY = """
kind = CLASSIFY_FOLDS
axis = feature_set
values = FS1, FS6
n_traces = 3
tau = 0.5
hidden = 4
epochs = 2
n_trees = 5
"""

SMALL_DRX = """
kind = DRX_COMPARE
axis = n_ues
values = 2
profile = handset
trace_seed = 0
n_carriers = 1
duration_s = 20
epoch_ttis = 1000
hidden = 4
epochs = 2
"""


def test_parse_config_types_and_comments():
    cfg = parse_config(SMALL_PREDICT)
    assert cfg.values == (10, 30) and cfg.repetitions == 2 and cfg.trace_s == 21600.0
    cfg = parse_config("kind = DRX_COMPARE\nvalues = 0.25, 0.75\naxis = omega\nraw_reports = no\n")
    assert cfg.values == (0.25, 0.75) and cfg.raw_reports is False
    # kind alone picks that kind's first axis
    assert parse_config("kind = CLASSIFY_FOLDS\nvalues = FS2\n").axis == "feature_set"


def test_overrides_win_unless_none():
    cfg = parse_config(SMALL_PREDICT, seed=7, repetitions=None)
    assert cfg.seed == 7 and cfg.repetitions == 2


def test_config_errors_name_the_line():
    with pytest.raises(ValueError, match="line 2"):
        parse_config("kind = PREDICT_SWEEP\nbogus = 3\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config("repetitions = many\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config("no equals sign\n")


def test_config_validation():
    with pytest.raises(ValueError, match="repetitions"):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(kind="NOPE")
    with pytest.raises(ValueError):
        ExperimentConfig(axis="omega")
    with pytest.raises(ValueError):
        ExperimentConfig(values=(10, -1))
    with pytest.raises(ValueError):
        ExperimentConfig(kind="DRX_COMPARE", axis="omega", values=(1.5,))
    with pytest.raises(ValueError):
        ExperimentConfig(kind="CLASSIFY_FOLDS", axis="feature_set", values=("FS9",))
    with pytest.raises(ValueError):
        ExperimentConfig(schemes=("raf",))


def test_config_text_round_trip(tmp_path):
    cfg = parse_config(SMALL_CLASSIFY)
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert load_config(p) == cfg


def check_table_matches_raw(res):
    table = MetricTable.read_csv(res.paths["table"])
    assert table == res.table
    raw = read_raw(res.paths["raw"])
    groups = {}
    for rep, fold, scheme, axis, value, metric, sample in raw:
        if fold == -1:
            groups.setdefault((scheme, axis, value, metric), []).append(sample)
    assert groups.keys() == table.rows.keys()
    for k, s in groups.items():
        mean, std, n = table.rows[k]
        assert mean == pytest.approx(np.mean(s), rel=1e-12, abs=1e-12) and n == len(s)
    return raw


def test_prediction_sweep(tmp_path):
    cfg = parse_config(SMALL_PREDICT)
    res = run_experiment(cfg, tmp_path)
    raw = check_table_matches_raw(res)
    assert {r[2] for r in raw} == {"persistence", "arima", "lstm"}
    assert {r[0] for r in raw} == {0, 1}
    for s in ("persistence", "arima", "lstm"):
        for v in (10, 30):
            assert res.table.rows[(s, "tau", str(v), "rmse")][2] == 2
            assert res.table.get(s, "tau", v, "rmse") >= 0
    plot = read_plot_script(res.paths["rmse_vs_tau"])
    assert plot["data"] == "metrics.csv" and plot["filter"]["metric"] == "rmse"
    assert (tmp_path / "config.txt").read_text() == cfg.to_text()
    # same seed, same numbers
    run_experiment(cfg, tmp_path / "again")
    assert (tmp_path / "again" / "raw.csv").read_bytes() == res.paths["raw"].read_bytes()


def test_classification_folds(tmp_path):
    res = run_experiment(parse_config(SMALL_CLASSIFY), tmp_path)
    raw = check_table_matches_raw(res)
    for scheme in ("lstm", "raf"):
        for fs in ("FS1", "FS6"):
            folds = {}
            for rep, fold, s, axis, value, metric, sample in raw:
                if s == scheme and value == fs and fold >= 0:
                    folds.setdefault(fold, {})[metric] = sample
            assert sorted(folds) == [0, 1, 2]
            for m in folds.values():
                # accuracy is the actual-share weighted mean of the recalls
                total = sum(m[f"actual_{c}"] for c in CLASS_NAMES)
                correct = sum(m[f"correct_{c}"] for c in CLASS_NAMES)
                assert m["accuracy"] == pytest.approx(correct / total)
                for c in CLASS_NAMES:
                    if m[f"actual_{c}"] > 0:
                        assert m[f"recall_{c}"] == pytest.approx(m[f"correct_{c}"] / m[f"actual_{c}"])
        rows = read_classification_report(res.paths[f"classification_{scheme}"])
        assert [r.feature_set for r in rows] == ["FS1", "FS6"]
        assert 0 <= rows[0].accuracy <= 1


def test_drx_comparison(tmp_path):
    res = run_experiment(parse_config(SMALL_DRX), tmp_path)
    check_table_matches_raw(res)
    grid = parse_config(SMALL_DRX).cdf_grid
    for s in ("min_energy", "min_delay", "ml"):
        cdf = [res.table.get(s, "n_ues", 2, f"cdf@{g}") for g in grid]
        assert all(0 <= c <= 1 for c in cdf)
        assert all(a <= b for a, b in zip(cdf, cdf[1:]))
        assert res.table.get(s, "n_ues", 2, "power_mW") > 10
    assert res.table.get("min_energy", "n_ues", 2, "power_mW") < res.table.get("min_delay", "n_ues", 2, "power_mW")
    assert (tmp_path / "delay_cdf.csv").exists()
    assert any(p.name.startswith("raw_ml_n_ues2_rep0_") for p in tmp_path.iterdir())


def test_failures_name_the_point(tmp_path):
    cfg = parse_config(SMALL_PREDICT, trace_s=600.0, values=(10,))
    with pytest.raises(ExperimentError, match="tau=10 rep 0"):
        run_experiment(cfg, tmp_path)
