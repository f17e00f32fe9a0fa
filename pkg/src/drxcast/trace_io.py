"""Packet traces: CSV ingestion, synthetic per-application traffic, TTI quantization.

A :class:`Trace` stores its packets column-wise in numpy arrays; individual
:class:`PacketRecord` objects are only materialised on demand.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

CSV_HEADER = ["timestamp_s", "direction", "size_bytes", "protocol"]
DEFAULT_BOUNDARIES = (0, 50, 100, 500, 1000, 5000, 10000, 50000, 100000)


class Direction(IntEnum):
    UL = 0
    DL = 1


class Protocol(IntEnum):
    TCP = 0
    UDP = 1
    OTHER = 2


class App(IntEnum):
    """Application classes; the integer value is the class index used for tie-breaks."""

    SURF = 0
    VIDEO_CALL = 1
    VOICE_CALL = 2
    VIDEO_STREAM = 3


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    direction: Direction
    size: int
    protocol: Protocol
    app_label: Optional[App] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.size < 0:
            raise ValueError(f"negative size {self.size}")


@dataclass(frozen=True, eq=False)
class Trace:
    """Time-ordered packet trace.

    Columns are parallel arrays. ``app`` holds the App value per packet, or -1
    everywhere for an unlabeled trace.
    """

    timestamp: np.ndarray
    direction: np.ndarray
    size: np.ndarray
    protocol: np.ndarray
    app: np.ndarray
    duration: float

    def __post_init__(self):
        n = len(self.timestamp)
        for name in ("direction", "size", "protocol", "app"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if n:
            if np.any(np.diff(self.timestamp) < 0):
                raise ValueError("records not sorted by timestamp")
            if self.timestamp[0] < 0 or np.any(self.size < 0):
                raise ValueError("negative timestamp or size")
            if self.duration < self.timestamp[-1]:
                raise ValueError("duration shorter than last timestamp")
            labeled = self.app >= 0
            if labeled.any() and not labeled.all():
                raise ValueError("trace mixes labeled and unlabeled records")
        for arr in (self.timestamp, self.direction, self.size, self.protocol, self.app):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def labeled(self) -> bool:
        return len(self) > 0 and bool(self.app[0] >= 0)

    @property
    def records(self) -> list[PacketRecord]:
        return [self.record(i) for i in range(len(self))]

    def record(self, i: int) -> PacketRecord:
        label = int(self.app[i])
        return PacketRecord(
            float(self.timestamp[i]),
            Direction(int(self.direction[i])),
            int(self.size[i]),
            Protocol(int(self.protocol[i])),
            App(label) if label >= 0 else None,
        )

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord], duration: Optional[float] = None) -> "Trace":
        records = list(records)
        ts = np.array([r.timestamp for r in records], dtype=float)
        app = np.array([-1 if r.app_label is None else int(r.app_label) for r in records], dtype=np.int8)
        if duration is None:
            duration = float(ts[-1]) if len(ts) else 0.0
        return cls(
            ts,
            np.array([int(r.direction) for r in records], dtype=np.int8),
            np.array([r.size for r in records], dtype=np.int64),
            np.array([int(r.protocol) for r in records], dtype=np.int8),
            app,
            float(duration),
        )

    @classmethod
    def empty(cls, duration: float = 0.0) -> "Trace":
        return cls(np.zeros(0), np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int8),
                   np.zeros(0, np.int8), float(duration))

    def window(self, start: float, stop: float) -> "Trace":
        """Packets in [start, stop), re-based so that ``start`` becomes time 0."""
        lo, hi = np.searchsorted(self.timestamp, [start, stop], side="left")
        return Trace(
            np.round(self.timestamp[lo:hi] - start, 6),
            self.direction[lo:hi].copy(),
            self.size[lo:hi].copy(),
            self.protocol[lo:hi].copy(),
            self.app[lo:hi].copy(),
            float(stop - start),
        )

    def count(self, direction: Direction) -> int:
        return int(np.count_nonzero(self.direction == direction))


def _parse_enum(enum, text, lineno, what):
    try:
        return enum[text.strip().upper()]
    except KeyError:
        raise TraceFormatError(f"line {lineno}: unknown {what} {text!r}") from None


def load_trace(path, sort: bool = False, duration: Optional[float] = None) -> Trace:
    """Read a trace CSV (``timestamp_s,direction,size_bytes,protocol[,app_label]``).

    Unsorted timestamps raise unless ``sort`` is set, in which case a stable
    sort keeps equal timestamps in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceFormatError("line 1: missing header") from None
        if header[:4] != CSV_HEADER or len(header) > 5 or (len(header) == 5 and header[4] != "app_label"):
            raise TraceFormatError(f"line 1: unexpected header {header}")
        has_label = len(header) == 5

        ts, dirs, sizes, protos, apps = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = float(row[0])
                size = int(row[2])
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            if not math.isfinite(t) or t < 0:
                raise TraceFormatError(f"line {lineno}: bad timestamp {row[0]!r}")
            if size < 0:
                raise TraceFormatError(f"line {lineno}: negative size {size}")
            ts.append(t)
            sizes.append(size)
            dirs.append(_parse_enum(Direction, row[1], lineno, "direction"))
            protos.append(_parse_enum(Protocol, row[3], lineno, "protocol"))
            if has_label:
                label = row[4].strip()
                if not label:
                    raise TraceFormatError(f"line {lineno}: missing app_label in labeled trace")
                apps.append(_parse_enum(App, label, lineno, "app_label"))
            else:
                apps.append(-1)

    ts = np.array(ts, dtype=float)
    order = np.arange(len(ts))
    if len(ts) and np.any(np.diff(ts) < 0):
        if not sort:
            bad = int(np.argmax(np.diff(ts) < 0)) + 3
            raise TraceFormatError(f"line {bad}: timestamps not sorted (pass sort=True to sort)")
        order = np.argsort(ts, kind="stable")
    last = float(ts[order[-1]]) if len(ts) else 0.0
    return Trace(
        ts[order],
        np.array(dirs, dtype=np.int8)[order],
        np.array(sizes, dtype=np.int64)[order],
        np.array(protos, dtype=np.int8)[order],
        np.array(apps, dtype=np.int8)[order],
        last if duration is None else max(float(duration), last),
    )


def save_trace(trace: Trace, path) -> None:
    path = Path(path)
    header = CSV_HEADER + (["app_label"] if trace.labeled else [])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(trace)):
            row = [
                f"{trace.timestamp[i]:.6f}",
                Direction(int(trace.direction[i])).name,
                int(trace.size[i]),
                Protocol(int(trace.protocol[i])).name,
            ]
            if trace.labeled:
                row.append(App(int(trace.app[i])).name)
            writer.writerow(row)


# --- synthetic traffic -------------------------------------------------------

@lru_cache(maxsize=None)
def _defaults_text() -> str:
    return resources.files("drxcast").joinpath("synth_defaults.json").read_text(encoding="utf-8")


def synth_defaults() -> dict:
    """Fresh copy of the versioned synthetic-traffic parameter file."""
    return json.loads(_defaults_text())


def _as_app(app) -> App:
    if isinstance(app, App):
        return app
    try:
        return App[str(app).upper()]
    except KeyError:
        raise ValueError(f"unknown application class {app!r}") from None


def _onoff_intervals(rng, duration, on_mean, off_mean):
    """Alternating (start, stop, is_on) intervals covering [0, duration)."""
    if off_mean <= 0:
        return [(0.0, duration, True)]
    out = []
    t = 0.0
    on = bool(rng.random() < on_mean / (on_mean + off_mean))
    while t < duration:
        length = rng.exponential(on_mean if on else off_mean)
        stop = min(duration, t + length)
        out.append((t, stop, on))
        t = stop
        on = not on
    return out


def _sizes(rng, n, median, sigma, scale, cfg):
    raw = median * scale * np.exp(sigma * rng.standard_normal(n))
    return np.clip(np.rint(raw), cfg["min_size"], cfg["max_size"]).astype(np.int64)


def _segment(rng, cfg, app: App, start, stop, rate_scale=1.0, size_scale=1.0, udp_prob=None):
    """Packets of one application over [start, stop) as column arrays."""
    p = cfg["classes"][app.name]
    cols = {k: [] for k in ("t", "dir", "size", "proto")}
    udp = p["udp_prob"] if udp_prob is None else udp_prob
    for a, b, on in _onoff_intervals(rng, stop - start, p["on_mean_s"], p["off_mean_s"]):
        for direction, key in ((Direction.UL, "ul"), (Direction.DL, "dl")):
            rate = rate_scale * p[("on_rate_" if on else "off_rate_") + key]
            n = rng.poisson(rate * (b - a))
            if n == 0:
                continue
            cols["t"].append(start + a + (b - a) * rng.random(n))
            cols["dir"].append(np.full(n, direction, np.int8))
            median, sigma = p["size_" + key]
            cols["size"].append(_sizes(rng, n, median, sigma, size_scale, cfg))
            cols["proto"].append(np.where(rng.random(n) < udp, Protocol.UDP, Protocol.TCP).astype(np.int8))
    return cols


def _assemble(parts, duration, labels=None) -> Trace:
    ts, dirs, sizes, protos, apps = [], [], [], [], []
    for i, cols in enumerate(parts):
        for k, dst in (("t", ts), ("dir", dirs), ("size", sizes), ("proto", protos)):
            dst.extend(cols[k])
        if labels is not None:
            apps.extend(np.full(len(t), labels[i], np.int8) for t in cols["t"])
    if not ts:
        return Trace.empty(duration)
    t = np.round(np.concatenate(ts), 6)
    t = np.minimum(t, duration)
    app = np.concatenate(apps) if labels is not None else np.full(len(t), -1, np.int8)
    order = np.argsort(t, kind="stable")
    return Trace(
        t[order],
        np.concatenate(dirs)[order],
        np.concatenate(sizes)[order],
        np.concatenate(protos)[order],
        app[order],
        float(duration),
    )


def synthesize_trace(app, duration: float, seed: int, params: Optional[dict] = None) -> Trace:
    """Labeled single-application trace, bit-reproducible for a given seed."""
    app = _as_app(app)
    if not duration > 0:
        raise ValueError("duration must be positive")
    cfg = params or synth_defaults()
    rng = np.random.default_rng(seed)
    return _assemble([_segment(rng, cfg, app, 0.0, float(duration))], float(duration), labels=[int(app)])


def synthesize_labeled_trace(seed: int, segment_s: Optional[float] = None,
                             params: Optional[dict] = None) -> Trace:
    """One controlled capture: a segment of every application, in random order.

    Each capture draws its own per-application packet-size scale and UDP
    share, so size and protocol statistics shift from one capture to the next
    while packet rates stay characteristic of the application.
    """
    cfg = params or synth_defaults()
    lab = cfg["labeled"]
    seg = float(segment_s or lab["segment_s"])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(App))
    lo, hi = lab["udp_prob_range"]
    parts = []
    for k, a in enumerate(order):
        size_scale = float(np.exp(lab["size_scale_sigma"] * rng.standard_normal()))
        udp = float(rng.uniform(lo, hi))
        parts.append(_segment(rng, cfg, App(int(a)), k * seg, (k + 1) * seg, size_scale=size_scale, udp_prob=udp))
    return _assemble(parts, seg * len(order), labels=[int(a) for a in order])


def synthesize_user_trace(duration: float, seed: int, profile: str = "daily",
                          params: Optional[dict] = None) -> Trace:
    """Unlabeled multi-application trace of one user following a usage profile.

    Idle gaps (exponential) with background chatter alternate with
    application sessions (lognormal length, application drawn by weight).
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    cfg = params or synth_defaults()
    try:
        prof = cfg["profiles"][profile]
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}") from None
    rng = np.random.default_rng(seed)
    apps = [App[name] for name in prof["app_weights"]]
    weights = np.array([prof["app_weights"][a.name] for a in apps], dtype=float)
    weights /= weights.sum()
    parts = []
    t = 0.0
    idle = rng.random() < 0.5
    while t < duration:
        if idle:
            stop = min(duration, t + rng.exponential(prof["idle_mean_s"]))
            cols = {k: [] for k in ("t", "dir", "size", "proto")}
            for direction, rate, key in ((Direction.UL, prof["idle_rate_ul"], "ul"),
                                         (Direction.DL, prof["idle_rate_dl"], "dl")):
                n = rng.poisson(rate * (stop - t))
                if n:
                    cols["t"].append(t + (stop - t) * rng.random(n))
                    cols["dir"].append(np.full(n, direction, np.int8))
                    median, sigma = cfg["classes"]["SURF"]["size_" + key]
                    cols["size"].append(_sizes(rng, n, median, sigma, 1.0, cfg))
                    cols["proto"].append(np.full(n, Protocol.TCP, np.int8))
            parts.append(cols)
        else:
            length = prof["session_median_s"] * math.exp(prof["session_sigma"] * rng.standard_normal())
            stop = min(duration, t + length)
            app = apps[int(rng.choice(len(apps), p=weights))]
            parts.append(_segment(rng, cfg, app, t, stop, rate_scale=prof["rate_scale"]))
        t = stop
        idle = not idle
    return _assemble(parts, float(duration))


# --- TTI quantization --------------------------------------------------------

@dataclass(frozen=True)
class QuantizationScheme:
    """Byte boundaries mapping per-TTI arrival totals to labels 1..len(boundaries).

    A total falls in label k when it lies in (boundaries[k-1], boundaries[k]]
    (0-based); zero maps to label 1 and anything above the last boundary
    clamps to the top label.
    """

    boundaries: tuple = DEFAULT_BOUNDARIES

    def __post_init__(self):
        b = np.asarray(self.boundaries)
        if len(b) < 1 or np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def labels(self) -> tuple:
        return tuple(range(1, len(self.boundaries) + 1))

    def label(self, total_bytes) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.boundaries), np.asarray(total_bytes), side="left")
        return np.clip(idx, 1, len(self.boundaries)).astype(np.int8)

    def representative(self, k: int) -> float:
        """A byte total strictly inside bin k."""
        b = self.boundaries
        if k == len(b):
            return 1.5 * b[-1]
        return (b[k - 1] + b[k]) / 2


def _tti_index(timestamps: np.ndarray, tti_ms: float) -> np.ndarray:
    us = np.rint(np.asarray(timestamps) * 1e6)
    return np.floor(us / (tti_ms * 1000.0)).astype(np.int64)


def _ceil_div_us(duration_s: float, step_us: float) -> int:
    d_us = round(duration_s * 1e6)
    if float(step_us).is_integer():
        return -(-d_us // int(step_us))
    return math.ceil(d_us / step_us)


def n_ttis(duration: float, tti_ms: float) -> int:
    return _ceil_div_us(duration, tti_ms * 1000.0)


def tti_byte_totals(trace: Trace, tti_ms: float = 1.0, direction: Optional[Direction] = Direction.DL) -> np.ndarray:
    """Summed arrival bytes per TTI (``direction=None`` sums both directions)."""
    if not tti_ms > 0:
        raise ValueError("tti must be positive")
    n = max(n_ttis(trace.duration, tti_ms), 0)
    keep = np.ones(len(trace), bool) if direction is None else trace.direction == direction
    idx = _tti_index(trace.timestamp[keep], tti_ms)
    if n == 0 and len(idx):
        n = 1
    idx = np.minimum(idx, n - 1)
    return np.bincount(idx, weights=trace.size[keep], minlength=n).astype(np.int64)


def quantize_tti_arrivals(trace: Trace, tti_ms: float = 1.0,
                          scheme: QuantizationScheme = QuantizationScheme(),
                          direction: Optional[Direction] = Direction.DL) -> np.ndarray:
    """One label per TTI for the summed downlink bytes (uplink or both via ``direction``)."""
    return scheme.label(tti_byte_totals(trace, tti_ms, direction))
