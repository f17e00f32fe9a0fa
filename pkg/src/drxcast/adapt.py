"""Traffic-driven DRX adaptation.

Every decision epoch the UE's recent per-TTI label history is condensed into
a 7-entry snapshot (last four labels, then label sums over the last 10, 100
and 1000 TTIs), a per-UE network F predicts the same quantities for the
upcoming TTIs, and a mapping H turns the two aggregates

    x_short = entries 1..5 summed,   x_long = entries 6..7 summed

into one of the four DRX parameter sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .classifier import DecisionTree, fit_tree
from .drx_core import DRX_SETS, Phase, UeState, advance
from .featurize import Normalizer
from .neural_forecast import Activation, RegressionNet, TrainConfig, train

WINDOWS = (10, 100, 1000)
ENTRY_MIN = np.array([1, 1, 1, 1, 10, 100, 1000], dtype=float)
ENTRY_MAX = 9.0 * ENTRY_MIN
SILENT_LABEL = 1
X_SHORT_RANGE = (float(ENTRY_MIN[:5].sum()), float(ENTRY_MAX[:5].sum()))   # 14 .. 126
X_LONG_RANGE = (float(ENTRY_MIN[5:].sum()), float(ENTRY_MAX[5:].sum()))    # 1100 .. 9900

# Sets ordered from most to least sleep: 2, 1, 4, 3.
SLEEP_RANK = {2: 0, 1: 1, 4: 2, 3: 3}


@dataclass(frozen=True)
class TrafficSnapshot:
    entries: tuple

    def __post_init__(self):
        e = np.asarray(self.entries, float)
        if e.shape != (7,) or np.any(e < ENTRY_MIN) or np.any(e > ENTRY_MAX):
            raise ValueError(f"snapshot entries out of range: {self.entries}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.entries, float)


@dataclass(frozen=True)
class PredictionVector:
    entries: tuple

    @property
    def x_short(self) -> float:
        return float(sum(self.entries[:5]))

    @property
    def x_long(self) -> float:
        return float(sum(self.entries[5:]))


def _history_matrix(labels, ts) -> np.ndarray:
    """Snapshots at each TTI in ``ts`` from labels[:t], padded with silence."""
    pad = WINDOWS[-1]
    lab = np.concatenate([np.full(pad, SILENT_LABEL, np.int64), np.asarray(labels, np.int64)])
    csum = np.concatenate([[0], np.cumsum(lab)])
    end = np.asarray(ts, np.int64) + pad
    cols = [lab[end - k] for k in (1, 2, 3, 4)] + [csum[end] - csum[end - w] for w in WINDOWS]
    return np.column_stack(cols).astype(float)


def _future_matrix(labels, ts) -> np.ndarray:
    """Same layout as the snapshot for labels[t:], padded with silence past the end."""
    pad = WINDOWS[-1]
    lab = np.concatenate([np.asarray(labels, np.int64), np.full(pad, SILENT_LABEL, np.int64)])
    csum = np.concatenate([[0], np.cumsum(lab)])
    t = np.asarray(ts, np.int64)
    cols = [lab[t + k] for k in (0, 1, 2, 3)] + [csum[t + w] - csum[t] for w in WINDOWS]
    return np.column_stack(cols).astype(float)


def snapshot(label_history, t: int) -> TrafficSnapshot:
    """Snapshot of the TTIs before ``t``: label_history[:t]."""
    if t < 1:
        raise ValueError("snapshot needs t >= 1")
    hist = np.asarray(label_history)[:t]
    if len(hist) < t:
        raise ValueError(f"history has {len(hist)} TTIs, need {t}")
    return TrafficSnapshot(tuple(float(v) for v in _history_matrix(hist, [t])[0]))


def future_target(labels, t: int) -> np.ndarray:
    return _future_matrix(labels, [t])[0]


# ---------------------------------------------------------------- F

def create_F(hidden: int = 16, seed: int = 0, variant=Activation.STANDARD_TANH) -> RegressionNet:
    net = RegressionNet.create(7, 7, hidden=hidden, variant=variant, seed=seed)
    span = ENTRY_MAX - ENTRY_MIN
    net.x_norm = Normalizer(ENTRY_MIN.copy(), span.copy())
    net.y_norm = Normalizer(ENTRY_MIN.copy(), span.copy())
    return net


def training_pairs(labels, stride: int = 50, start: int = 1):
    """(snapshot, future) pairs every ``stride`` TTIs over a label stream."""
    n = len(labels)
    ts = np.arange(max(start, 1), n, stride)
    return _history_matrix(labels, ts), _future_matrix(labels, ts)


def train_F(labels, hidden: int = 16, stride: int = 50, config: TrainConfig = TrainConfig(epochs=30, batch_size=64),
            seed: int = 0) -> RegressionNet:
    """Fit F offline on one UE's label stream; inputs and outputs are scaled by entry range."""
    X, Y = training_pairs(labels, stride)
    net = create_F(hidden, seed)
    net, _ = train(net, X[:, None, :], Y, replace(config, seed=seed), fit_normalizers=False)
    return net


def predict_F_batch(net: RegressionNet, snaps: np.ndarray) -> np.ndarray:
    if net.x_norm is None or net.y_norm is None:
        raise ValueError("F has not been trained")
    raw = net.predict(np.asarray(snaps, float).reshape(-1, 1, 7))
    return np.clip(raw, ENTRY_MIN, ENTRY_MAX)


def predict_F(net: RegressionNet, snap: TrafficSnapshot) -> PredictionVector:
    """7 predicted entries, each clamped to its admissible range."""
    return PredictionVector(tuple(float(v) for v in predict_F_batch(net, snap.as_array()[None])[0]))


# ---------------------------------------------------------------- H

def activity_score(x: float, lo: float, hi: float) -> float:
    """Range-normalised activity on a 0..10 scale."""
    return (x - lo) / (hi - lo) * 10.0


# rows: x_long region low/mid/high; columns: x_short region low/mid/high
DEFAULT_TABLE = ((2, 1, 1),
                 (2, 1, 3),
                 (4, 4, 3))


@dataclass(frozen=True)
class ThresholdTable:
    boundaries: tuple = (3.0, 8.0)
    short_range: tuple = X_SHORT_RANGE
    long_range: tuple = X_LONG_RANGE
    table: tuple = DEFAULT_TABLE

    def region(self, score: float) -> int:
        # a score on a boundary belongs to the lower region
        return int(np.searchsorted(np.asarray(self.boundaries), score, side="left"))

    def decide(self, x_short: float, x_long: float, app: Optional[int] = None) -> int:
        rs = self.region(activity_score(x_short, *self.short_range))
        rl = self.region(activity_score(x_long, *self.long_range))
        return int(self.table[rl][rs])


@dataclass(frozen=True)
class TreeMapping:
    tree: DecisionTree
    uses_app: bool = False

    def decide(self, x_short: float, x_long: float, app: Optional[int] = None) -> int:
        row = [x_short, x_long] + ([float(app)] if self.uses_app else [])
        return int(self.tree.predict(np.array([row]))[0]) + 1

    def decide_many(self, X) -> np.ndarray:
        return self.tree.predict(np.asarray(X, float)) + 1


def decide(h, prediction: PredictionVector, app: Optional[int] = None) -> int:
    return h.decide(prediction.x_short, prediction.x_long, app)


@dataclass
class AdaptivePolicy:
    """Algorithm state for one UE: frozen F and H, evaluated every ``epoch`` TTIs."""

    net: RegressionNet
    h: object = field(default_factory=ThresholdTable)
    epoch: int = 1000
    initial_set: int = 2

    def __post_init__(self):
        if self.epoch < 1:
            raise ValueError("decision epoch must be at least one TTI")
        if self.initial_set not in DRX_SETS:
            raise ValueError(f"unknown DRX set {self.initial_set}")

    def decide(self, labels, t: int):
        """(set_id, x_short, x_long) from labels[:t]."""
        pred = predict_F(self.net, snapshot(labels, t))
        return decide(self.h, pred), pred.x_short, pred.x_long


# ---------------------------------------------------------------- oracle and train_H

def probe_latency(set_id: int, horizon: int = 2000) -> float:
    """Mean wait until the UE is reachable for a packet arriving at a uniformly
    random TTI within ``horizon`` TTIs after its last delivery."""
    cfg = DRX_SETS[set_id]
    s = UeState.start(cfg)
    reach = np.zeros(horizon + 200, bool)
    for i in range(len(reach)):
        reach[i] = s.reachable
        advance(s, cfg, 1)
    nxt = np.full(len(reach), len(reach), dtype=np.int64)
    last = len(reach)
    for i in range(len(reach) - 1, -1, -1):
        if reach[i]:
            last = i
        nxt[i] = last
    return float(np.mean(nxt[:horizon] - np.arange(horizon)))


@dataclass(eq=False)
class OracleTable:
    """Per-epoch outcomes of every DRX set on the same traffic.

    ``features`` is (n_epochs, 2) with (x_short, x_long) predicted at each
    epoch start; ``delay`` and ``energy`` are (4, n_epochs) sums per set
    (delay of packets enqueued in the epoch, energy spent in it).
    """

    features: np.ndarray
    delay: np.ndarray
    energy: np.ndarray
    set_ids: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        if len(self.features) == 0:
            raise ValueError("empty oracle set")

    @classmethod
    def concat(cls, tables: Sequence["OracleTable"]) -> "OracleTable":
        return cls(np.vstack([t.features for t in tables]),
                   np.hstack([t.delay for t in tables]),
                   np.hstack([t.energy for t in tables]))


def build_oracle(labels, traffic, net: RegressionNet, epoch: int = 1000,
                 carrier_rate: float = 1e6, tti_ms: float = 1.0) -> OracleTable:
    """Run one UE on a dedicated carrier under every static set and record
    per-epoch delay and energy next to F's prediction at the epoch start."""
    from .net_sim import SimConfig, run

    T = len(labels)
    n_ep = T // epoch
    if n_ep < 1:
        raise ValueError("label stream shorter than one epoch")
    T = n_ep * epoch
    starts = np.arange(n_ep) * epoch
    snaps = _history_matrix(labels[:T], np.maximum(starts, 1))
    snaps[0] = _history_matrix(np.zeros(0), [0])[0]
    pred = predict_F_batch(net, snaps)
    feats = np.column_stack([pred[:, :5].sum(axis=1), pred[:, 5:].sum(axis=1)])

    delay = np.zeros((4, n_ep))
    energy = np.zeros((4, n_ep))
    for k, sid in enumerate((1, 2, 3, 4)):
        cfg = SimConfig([traffic], [sid], n_ues=1, n_carriers=1, carrier_rate=carrier_rate,
                        tti_ms=tti_ms, duration=T, zero_pad=True, record_every=epoch)
        rep = run(cfg)
        d = np.where(rep.pkt_del >= 0, rep.pkt_del, T) - rep.pkt_enq
        np.add.at(delay[k], rep.pkt_enq // epoch, d * tti_ms)
        counts = np.diff(rep.checkpoints[:, 0, :], axis=0)          # (n_ep, 6)
        p = rep.power
        rx = counts[:, Phase.RECEIVING]
        sleep = counts[:, Phase.SHORT_SLEEP] + counts[:, Phase.LONG_SLEEP]
        act = counts.sum(axis=1) - rx - sleep
        energy[k] = (rx * p.p_rx + act * p.p_active + sleep * p.p_sleep) * tti_ms / 1000.0
    return OracleTable(feats, delay, energy)


def _edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    qs = np.quantile(values, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.unique(qs)


def idle_power(set_id: int) -> float:
    """Long-run mW of a UE with no traffic (the long-cycle duty cycle)."""
    cfg = DRX_SETS[set_id]
    p = UeState().power
    return (cfg.t_on * p.p_active + (cfg.t_long_cycle - cfg.t_on) * p.p_sleep) / cfg.t_long_cycle


def structural_cost(omega: float, set_ids=(1, 2, 3, 4)) -> np.ndarray:
    """The weighted objective evaluated on each set's traffic-free profile."""
    lat = np.array([probe_latency(s) for s in set_ids])
    idle = np.array([idle_power(s) for s in set_ids])
    return omega * lat / lat.max() + (1 - omega) * idle / idle.max()


def oracle_labels(oracle: OracleTable, omega: float, n_bins: int = 4, z: float = 2.0) -> np.ndarray:
    """Best set id for every epoch, decided per (x_short, x_long) quantile cell.

    Within a cell each epoch gets the weighted normalised cost of every set.
    Sets whose summed cost is not worse than the cheapest by more than ``z``
    paired standard errors count as tied; one traffic realisation cannot
    separate them (wake-up alignment alone moves a few packets by several
    ms). Ties go to the lowest :func:`structural_cost`, then the lower id.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    f = oracle.features
    cs = np.searchsorted(_edges(f[:, 0], n_bins), f[:, 0], side="left")
    cl = np.searchsorted(_edges(f[:, 1], n_bins), f[:, 1], side="left")
    cell = cs * (n_bins + 1) + cl
    d_ref = max(float(oracle.delay.sum(axis=1).max()), 1e-12)
    e_ref = max(float(oracle.energy.sum(axis=1).max()), 1e-12)
    cost = omega * oracle.delay / d_ref + (1 - omega) * oracle.energy / e_ref     # (n_sets, n_epochs)
    prior = structural_cost(omega, oracle.set_ids)
    out = np.zeros(len(f), dtype=np.int64)
    for c in np.unique(cell):
        m = cell == c
        cm = cost[:, m]
        best = int(np.argmin(cm.sum(axis=1)))
        n = cm.shape[1]
        tied = []
        for k in range(len(oracle.set_ids)):
            diff = cm[k] - cm[best]
            spread = z * np.sqrt(n) * diff.std(ddof=1) if n > 1 else 0.0
            if diff.sum() <= spread:
                tied.append(k)
        pick = min(tied, key=lambda k: (prior[k], oracle.set_ids[k]))
        out[m] = oracle.set_ids[pick]
    return out


def train_H(oracle: OracleTable, omega: float, max_depth: int = 3, n_bins: int = 4) -> TreeMapping:
    """Decision-tree H over (x_short, x_long) fitted to the oracle's cell-wise best sets."""
    labels = oracle_labels(oracle, omega, n_bins)
    tree = fit_tree(oracle.features, labels - 1, max_depth=max_depth, n_classes=4)
    return TreeMapping(tree)


def fit_mapping(features, set_ids, max_depth: int = 3) -> TreeMapping:
    """H from explicit (x_short, x_long[, app]) -> best-set pairs."""
    features = np.asarray(features, float)
    set_ids = np.asarray(set_ids, np.int64)
    if len(set_ids) == 0:
        raise ValueError("empty oracle set")
    tree = fit_tree(features, set_ids - 1, max_depth=max_depth, n_classes=4)
    return TreeMapping(tree, uses_app=features.shape[1] == 3)
