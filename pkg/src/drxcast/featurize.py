"""Per-interval traffic features, feature-set masks and experiment splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .trace_io import Direction, Protocol, Trace

FIELDS = ("num_ul", "num_dl", "size_ul", "size_dl", "ratio", "udp_fraction")


@dataclass(frozen=True)
class FeatureVector:
    num_ul_packets: float
    num_dl_packets: float
    size_ul_bytes: float
    size_dl_bytes: float
    ul_dl_ratio: float
    udp_fraction: float

    def __post_init__(self):
        if min(self.num_ul_packets, self.num_dl_packets, self.size_ul_bytes, self.size_dl_bytes) < 0:
            raise ValueError("counts and sizes must be non-negative")
        if not 0.0 <= self.udp_fraction <= 1.0:
            raise ValueError("udp_fraction outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.num_ul_packets, self.num_dl_packets, self.size_ul_bytes,
                         self.size_dl_bytes, self.ul_dl_ratio, self.udp_fraction])


@dataclass(frozen=True)
class FeatureSetMask:
    id: str
    included: tuple  # one bool per entry of FIELDS

    def __post_init__(self):
        if len(self.included) != len(FIELDS):
            raise ValueError(f"mask needs {len(FIELDS)} entries")
        if not any(self.included):
            raise ValueError("mask selects no feature")

    @property
    def fields(self) -> tuple:
        return tuple(f for f, keep in zip(FIELDS, self.included) if keep)

    @classmethod
    def of(cls, *fields: str, id: str = "custom") -> "FeatureSetMask":
        unknown = set(fields) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")
        return cls(id, tuple(f in fields for f in FIELDS))


# Columns of the feature-set table: UL count is in every set.
FEATURE_SETS = {
    "FS1": FeatureSetMask("FS1", (True, True, True, True, True, False)),
    "FS2": FeatureSetMask("FS2", (True, False, False, False, True, False)),
    "FS3": FeatureSetMask("FS3", (True, False, False, False, False, False)),
    "FS4": FeatureSetMask("FS4", (True, True, False, False, True, False)),
    "FS5": FeatureSetMask("FS5", (True, True, False, False, False, False)),
    "FS6": FeatureSetMask("FS6", (True, True, False, False, False, True)),
}
FULL_MASK = FeatureSetMask("ALL", (True,) * len(FIELDS))


def feature_set(name) -> FeatureSetMask:
    if isinstance(name, FeatureSetMask):
        return name
    key = str(name).upper().replace("-", "")
    if key not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {name!r}")
    return FEATURE_SETS[key]


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    """Feature matrix ``data`` (bins x fields) at granularity ``tau`` seconds.

    ``labels`` carries one application index per bin for labeled traces.
    """

    tau: float
    data: np.ndarray
    fields: tuple
    mask_id: str = "ALL"
    target: str = "num_ul"
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != len(self.fields):
            raise ValueError("data shape does not match fields")
        if self.target not in self.fields and self.target != "num_ul":
            raise ValueError(f"target {self.target} not among fields")
        if self.labels is not None and len(self.labels) != len(self.data):
            raise ValueError("labels length mismatch")

    def __len__(self) -> int:
        return len(self.data)

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.fields.index(name)]

    @property
    def target_values(self) -> np.ndarray:
        return self.column(self.target)

    @property
    def target_index(self) -> int:
        return self.fields.index(self.target)

    def vector(self, i: int) -> FeatureVector:
        if self.fields != FIELDS:
            raise ValueError("FeatureVector needs the full feature set")
        return FeatureVector(*map(float, self.data[i]))

    def slice(self, start: int, stop: int) -> "FeatureSeries":
        labels = None if self.labels is None else self.labels[start:stop]
        return replace(self, data=self.data[start:stop], labels=labels)


def bin_trace(trace: Trace, tau: float) -> FeatureSeries:
    """Aggregate packets into [k*tau, (k+1)*tau) bins with the full feature set.

    A packet stamped exactly at the trace's end falls in the last bin.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    tau_us = tau * 1e6
    d_us = round(trace.duration * 1e6)
    n = -(-d_us // int(tau_us)) if float(tau_us).is_integer() else int(np.ceil(d_us / tau_us))
    if n == 0 and len(trace):
        n = 1
    idx = np.minimum(np.floor(np.rint(trace.timestamp * 1e6) / tau_us).astype(np.int64), max(n - 1, 0))

    ul = trace.direction == Direction.UL
    dl = ~ul
    udp = trace.protocol == Protocol.UDP
    num_ul = np.bincount(idx[ul], minlength=n).astype(float)
    num_dl = np.bincount(idx[dl], minlength=n).astype(float)
    size_ul = np.bincount(idx[ul], weights=trace.size[ul], minlength=n)
    size_dl = np.bincount(idx[dl], weights=trace.size[dl], minlength=n)
    n_udp = np.bincount(idx[udp], minlength=n)
    ratio = (num_ul + 1.0) / (num_dl + 1.0)
    udp_fraction = n_udp / np.maximum(1.0, num_ul + num_dl)
    data = np.column_stack([num_ul, num_dl, size_ul, size_dl, ratio, udp_fraction]) if n else np.zeros((0, 6))

    labels = None
    if trace.labeled and n:
        counts = np.zeros((n, int(trace.app.max()) + 1))
        np.add.at(counts, (idx, trace.app.astype(np.int64)), 1)
        labels = np.argmax(counts, axis=1)
        # empty bins inherit the nearest preceding label (or the first seen one)
        has = counts.sum(axis=1) > 0
        pos = np.where(has, np.arange(n), -1)
        pos = np.maximum.accumulate(pos)
        first = int(np.argmax(has))
        pos[pos < 0] = first
        labels = labels[pos]
    return FeatureSeries(float(tau), data, FIELDS, labels=labels)


def apply_mask(series: FeatureSeries, mask) -> FeatureSeries:
    mask = feature_set(mask)
    keep = mask.fields
    if series.target not in keep and series.target != "num_ul":
        raise ValueError(f"mask {mask.id} drops the prediction target {series.target}")
    missing = [f for f in keep if f not in series.fields]
    if missing:
        raise ValueError(f"series lacks features {missing}")
    cols = [series.fields.index(f) for f in keep]
    return replace(series, data=series.data[:, cols], fields=keep, mask_id=mask.id)


def split_experiment(series: FeatureSeries, train_len: int, test_len: int, start: int):
    """Contiguous (train, test) slices starting at bin ``start``."""
    if min(train_len, test_len, start) < 0 or start + train_len + test_len > len(series):
        raise ValueError(
            f"split [{start}, {start + train_len + test_len}) exceeds {len(series)} bins")
    mid = start + train_len
    return series.slice(start, mid), series.slice(mid, mid + test_len)


@dataclass(frozen=True)
class Normalizer:
    """Per-column z-score constants, fitted on a training slice only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=0) if len(data) else np.zeros(data.shape[-1])
        std = data.std(axis=0) if len(data) else np.ones(data.shape[-1])
        std = np.where(std > 1e-12, std, 1.0)
        return cls(np.atleast_1d(mean), np.atleast_1d(std))

    def transform(self, data):
        return (np.asarray(data, dtype=float) - self.mean) / self.std

    def inverse(self, data):
        return np.asarray(data, dtype=float) * self.std + self.mean


def save_series(series: FeatureSeries, path) -> None:
    header = ["bin_index", *series.fields] + (["label"] if series.labels is not None else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in enumerate(series.data):
            out = [i, *(repr(float(v)) for v in row)]
            if series.labels is not None:
                out.append(int(series.labels[i]))
            w.writerow(out)


def load_series(path, tau: float) -> FeatureSeries:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    has_label = header[-1] == "label"
    fields = tuple(header[1:-1] if has_label else header[1:])
    body = rows[1:]
    data = np.array([[float(v) for v in r[1:1 + len(fields)]] for r in body]).reshape(len(body), len(fields))
    labels = np.array([int(r[-1]) for r in body]) if has_label else None
    mask_id = next((k for k, m in FEATURE_SETS.items() if m.fields == fields), "ALL" if fields == FIELDS else "custom")
    return FeatureSeries(tau, data, fields, mask_id=mask_id, labels=labels)
