"""Metrics, result tables and plot-script emission."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .linear_forecast import rmse

__all__ = ["rmse", "relative_rmse", "delay_cdf", "average_power", "MetricTable", "write_plot_script",
           "read_plot_script"]

TABLE_HEADER = ["scheme", "axis", "value", "metric", "mean", "std", "n"]


def relative_rmse(pred, truth) -> float:
    """RMSE divided by the mean test target (nan when that mean is not positive)."""
    m = float(np.mean(np.asarray(truth, float)))
    return rmse(pred, truth) / m if m > 0 else float("nan")


def delay_cdf(report, grid) -> np.ndarray:
    """Fraction of all packets delivered within each grid delay (ms).

    Undelivered packets count in the denominator only, so the curve may end
    below 1.
    """
    total = len(report.pkt_enq) if hasattr(report, "pkt_enq") else len(report)
    if total == 0:
        raise ValueError("no packets in report")
    delays = np.sort(report.delays_ms if hasattr(report, "delays_ms") else np.asarray(report, float))
    return np.searchsorted(delays, np.asarray(grid, float), side="right") / total


def average_power(report):
    """(per-UE mW, fleet mean mW)."""
    if report.duration <= 0:
        raise ValueError("report has no duration")
    per_ue = report.power_mW
    return per_ue, float(per_ue.mean())


@dataclass
class MetricTable:
    """Rows (scheme, axis, value, metric) -> (mean, std, n) over repetitions."""

    rows: dict = field(default_factory=dict)

    def add(self, scheme: str, axis: str, value, metric: str, samples: Sequence[float]) -> None:
        s = np.asarray(samples, float)
        std = float(s.std(ddof=1)) if len(s) > 1 else 0.0
        self.rows[(str(scheme), str(axis), _fmt(value), str(metric))] = (float(s.mean()), std, int(len(s)))

    def get(self, scheme, axis, value, metric) -> float:
        return self.rows[(str(scheme), str(axis), _fmt(value), str(metric))][0]

    def schemes(self) -> list:
        return sorted({k[0] for k in self.rows})

    def values(self, axis: str) -> list:
        return sorted({k[2] for k in self.rows if k[1] == axis}, key=_sort_key)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_HEADER)
            for key in sorted(self.rows, key=lambda k: (k[0], k[1], _sort_key(k[2]), k[3])):
                mean, std, n = self.rows[key]
                w.writerow([*key, repr(mean), repr(std), n])

    @classmethod
    def read_csv(cls, path) -> "MetricTable":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != TABLE_HEADER:
            raise ValueError(f"{path}: not a metric table")
        out = cls()
        for r in rows[1:]:
            out.rows[(r[0], r[1], r[2], r[3])] = (float(r[4]), float(r[5]), int(r[6]))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricTable) or self.rows.keys() != other.rows.keys():
            return False
        return all(_same(self.rows[k], other.rows[k]) for k in self.rows)


def _same(a, b) -> bool:
    return all((math.isnan(x) and math.isnan(y)) or x == y for x, y in zip(a, b))


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _sort_key(v: str):
    try:
        return (0, float(v), "")
    except ValueError:
        return (1, 0.0, v)


# Plot scripts are plain text, one directive per line:
#   title <text> | data <csv file> | x <column> | y <column> | group <column>
#   filter <column>=<value> | kind line|step|bar | xlabel <text> | ylabel <text>
# A renderer draws one series of y over x per distinct value of the group column.

def write_plot_script(path, title: str, data: str, x: str, y: str, group: str = "",
                      kind: str = "line", xlabel: str = "", ylabel: str = "", filters: dict = None) -> None:
    lines = ["# plot-script 1", f"title {title}", f"data {data}", f"x {x}", f"y {y}", f"kind {kind}"]
    if group:
        lines.append(f"group {group}")
    for k, v in (filters or {}).items():
        lines.append(f"filter {k}={v}")
    lines += [f"xlabel {xlabel or x}", f"ylabel {ylabel or y}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_plot_script(path) -> dict:
    out = {"filter": {}}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        if key == "filter":
            k, _, v = rest.partition("=")
            out["filter"][k] = v
        else:
            out[key] = rest
    return out
