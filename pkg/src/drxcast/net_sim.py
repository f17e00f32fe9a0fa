"""Multi-UE downlink simulation: shared carriers, per-UE DRX machines, FIFO scheduling.

The loop only visits TTIs where something can happen (an arrival, a phase
expiry of a UE with pending work, a decision epoch, or a grant opportunity).
UEs with nothing buffered are advanced lazily in bulk, which gives the same
result as ticking every TTI (``fast=False`` does exactly that).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .drx_core import (DRX_SETS, DrxConfig, Packet, Phase, PowerModel, UeState, advance,
                       switch_config, tick, transmission_durations)
from .trace_io import Direction, QuantizationScheme, Trace, tti_byte_totals

PACKET_HEADER = ["ue", "enq_tti", "del_tti", "delay_ms"]
UE_HEADER = ["ue", "energy_mJ", "tti_rx", "tti_active", "tti_sleep"]
DECISION_HEADER = ["tti", "ue", "x_short", "x_long", "set_id"]
EVENT_HEADER = ["tti", "ue_id", "event", "detail"]


class TraceTooShort(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UeTraffic:
    """Downlink arrivals of one UE: byte totals at the TTIs where they are non-zero."""

    tti: np.ndarray
    size: np.ndarray
    n_ttis: int

    def __post_init__(self):
        if len(self.tti) != len(self.size):
            raise ValueError("tti and size lengths differ")
        if len(self.tti) and (np.any(np.diff(self.tti) <= 0) or self.tti[0] < 0 or self.tti[-1] >= self.n_ttis):
            raise ValueError("arrival TTIs must be strictly increasing and inside the trace")

    @classmethod
    def from_totals(cls, totals) -> "UeTraffic":
        totals = np.asarray(totals, dtype=np.int64)
        nz = np.nonzero(totals > 0)[0]
        return cls(nz.astype(np.int64), totals[nz], len(totals))

    @classmethod
    def from_trace(cls, trace: Trace, tti_ms: float = 1.0) -> "UeTraffic":
        return cls.from_totals(tti_byte_totals(trace, tti_ms, Direction.DL))

    @classmethod
    def from_packets(cls, packets, n_ttis: int) -> "UeTraffic":
        """``packets`` is an iterable of (tti, bytes); same-TTI sizes are summed."""
        totals = np.zeros(n_ttis, dtype=np.int64)
        for t, b in packets:
            totals[int(t)] += int(b)
        return cls.from_totals(totals)

    def totals(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n_ttis if n is None else n
        out = np.zeros(n, dtype=np.int64)
        keep = self.tti < n
        out[self.tti[keep]] = self.size[keep]
        return out

    def labels(self, n: Optional[int] = None, scheme: QuantizationScheme = QuantizationScheme()) -> np.ndarray:
        return scheme.label(self.totals(n))


def resolve_policy(policy):
    """Static policies may be given as a DRX-set id or a DrxConfig; anything
    else is treated as an adaptive controller."""
    if isinstance(policy, (int, np.integer)):
        return DRX_SETS[int(policy)]
    return policy


@dataclass
class SimConfig:
    traffic: Sequence[UeTraffic]
    policies: Sequence = ()
    n_ues: int = 10
    n_carriers: int = 5
    carrier_rate: float = 1e6
    tti_ms: float = 1.0
    duration: int = 600_000
    power: PowerModel = PowerModel()
    zero_pad: bool = False
    scheme: str = ""
    event_log: bool = False
    record_every: int = 0         # >0: keep per-UE phase counts every this many TTIs

    def __post_init__(self):
        if self.n_ues < 1 or self.n_carriers < 1:
            raise ValueError("need at least one UE and one carrier")
        if self.duration < 1:
            raise ValueError("duration must be at least one TTI")
        if not self.carrier_rate > 0 or not self.tti_ms > 0:
            raise ValueError("carrier rate and TTI length must be positive")
        if len(self.traffic) != self.n_ues:
            raise ValueError(f"{len(self.traffic)} traffic sources for {self.n_ues} UEs")
        if len(self.policies) not in (0, self.n_ues):
            raise ValueError(f"{len(self.policies)} policies for {self.n_ues} UEs")

    def echo(self) -> dict:
        return {"n_ues": self.n_ues, "n_carriers": self.n_carriers, "carrier_rate": self.carrier_rate,
                "tti_ms": self.tti_ms, "duration": self.duration, "scheme": self.scheme,
                "power": [self.power.p_rx, self.power.p_active, self.power.p_sleep]}


@dataclass(eq=False)
class SimReport:
    scheme: str
    duration: int
    tti_ms: float
    pkt_ue: np.ndarray
    pkt_enq: np.ndarray
    pkt_del: np.ndarray           # -1 while undelivered at the end
    pkt_size: np.ndarray
    pkt_tx: np.ndarray
    phase_ttis: np.ndarray        # (n_ues, 6) TTIs spent in each Phase
    power: PowerModel = PowerModel()
    config: dict = field(default_factory=dict)
    decisions: list = field(default_factory=list)
    events: list = field(default_factory=list)
    checkpoints: Optional[np.ndarray] = None   # (n_points, n_ues, 6) cumulative phase counts

    @property
    def n_ues(self) -> int:
        return len(self.phase_ttis)

    @property
    def delivered(self) -> np.ndarray:
        return self.pkt_del >= 0

    @property
    def delays_ms(self) -> np.ndarray:
        d = self.delivered
        return (self.pkt_del[d] - self.pkt_enq[d]) * self.tti_ms

    @property
    def tti_rx(self) -> np.ndarray:
        return self.phase_ttis[:, Phase.RECEIVING]

    @property
    def tti_sleep(self) -> np.ndarray:
        return self.phase_ttis[:, Phase.SHORT_SLEEP] + self.phase_ttis[:, Phase.LONG_SLEEP]

    @property
    def tti_active(self) -> np.ndarray:
        return self.phase_ttis.sum(axis=1) - self.tti_rx - self.tti_sleep

    @property
    def energy_mJ(self) -> np.ndarray:
        p = self.power
        return (self.tti_rx * p.p_rx + self.tti_active * p.p_active + self.tti_sleep * p.p_sleep) * self.tti_ms / 1000.0

    @property
    def power_mW(self) -> np.ndarray:
        return self.energy_mJ / (self.duration * self.tti_ms / 1000.0)

    def write_csv(self, out_dir, prefix: str = "") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"packets": out / f"{prefix}packets.csv", "ues": out / f"{prefix}ues.csv"}
        with paths["packets"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PACKET_HEADER)
            for u, e, d in zip(self.pkt_ue.tolist(), self.pkt_enq.tolist(), self.pkt_del.tolist()):
                w.writerow([u, e, d, repr((d - e) * self.tti_ms) if d >= 0 else "nan"])
        with paths["ues"].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(UE_HEADER)
            for u in range(self.n_ues):
                w.writerow([u, repr(float(self.energy_mJ[u])), int(self.tti_rx[u]),
                            int(self.tti_active[u]), int(self.tti_sleep[u])])
        if self.decisions:
            paths["decisions"] = out / f"{prefix}decisions.csv"
            write_decision_log(self.decisions, paths["decisions"])
        if self.events:
            paths["events"] = out / f"{prefix}events.csv"
            with paths["events"].open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(EVENT_HEADER)
                w.writerows(self.events)
        return paths


def write_decision_log(rows, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_HEADER)
        for t, u, xs, xl, s in rows:
            w.writerow([t, u, repr(float(xs)), repr(float(xl)), s])


def read_packets_csv(path):
    """(ue, enq_tti, del_tti, delay_ms) arrays from a packets CSV."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != PACKET_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    body = rows[1:]
    ue = np.array([int(r[0]) for r in body], dtype=np.int64)
    enq = np.array([int(r[1]) for r in body], dtype=np.int64)
    dl = np.array([int(r[2]) for r in body], dtype=np.int64)
    delay = np.array([float(r[3]) for r in body])
    return ue, enq, dl, delay


def _merge_arrivals(traffic: Sequence[UeTraffic], duration: int, zero_pad: bool):
    ttis, ues, sizes = [], [], []
    for u, tr in enumerate(traffic):
        if tr.n_ttis < duration and not zero_pad:
            raise TraceTooShort(f"UE {u}: trace covers {tr.n_ttis} TTIs, simulation needs {duration}")
        keep = tr.tti < duration
        ttis.append(tr.tti[keep])
        ues.append(np.full(int(keep.sum()), u, dtype=np.int64))
        sizes.append(tr.size[keep])
    t = np.concatenate(ttis) if ttis else np.zeros(0, np.int64)
    u = np.concatenate(ues) if ues else np.zeros(0, np.int64)
    s = np.concatenate(sizes) if sizes else np.zeros(0, np.int64)
    order = np.lexsort((u, t))
    return t[order], u[order], s[order]


def run(config: SimConfig, seed: int = 0, fast: bool = True) -> SimReport:
    """Simulate ``config.duration`` TTIs.

    Per visited TTI: adaptive UEs decide at their epochs, arrivals enqueue,
    free carriers go to reachable UEs with buffered data in order of
    head-of-line enqueue TTI (then UE id), then every involved UE ticks.
    The run has no random elements; ``seed`` is only echoed in the report.
    """
    n, T = config.n_ues, config.duration
    policies = [resolve_policy(p) for p in (config.policies or [2] * n)]
    adaptive = [not isinstance(p, DrxConfig) for p in policies]
    cfgs = [p if isinstance(p, DrxConfig) else DRX_SETS[p.initial_set] for p in policies]
    labels = [config.traffic[u].labels(T) if adaptive[u] else None for u in range(n)]
    epochs = [p.epoch if adaptive[u] else 0 for u, p in enumerate(policies)]

    a_tti, a_ue, a_size = _merge_arrivals(config.traffic, T, config.zero_pad)
    a_tx = transmission_durations(a_size, config.carrier_rate, config.tti_ms)
    a_tti_l, a_ue_l, a_size_l, a_tx_l = a_tti.tolist(), a_ue.tolist(), a_size.tolist(), a_tx.tolist()
    n_arr = len(a_tti_l)
    packets = []

    states = [UeState.start(cfgs[u], config.power, config.tti_ms) for u in range(n)]
    synced = [0] * n
    active = set()
    receiving = 0
    decisions = []
    log = [] if config.event_log else None
    ptr = 0
    next_epoch = {u: epochs[u] for u in range(n) if adaptive[u]}
    for u in next_epoch:
        decisions.append((0, u, float("nan"), float("nan"), policies[u].initial_set))

    rec = config.record_every
    checkpoints = []
    next_rec = 0 if rec > 0 else T + 1

    t = 0
    while t <= T:
        if t == next_rec:
            for u in range(n):
                if synced[u] < t:
                    advance(states[u], cfgs[u], t - synced[u], synced[u], _ue_log(log, u))
                    synced[u] = t
            checkpoints.append([list(s.phase_ttis) for s in states])
            next_rec = t + rec
        if t == T:
            break
        proc = set(active) if fast else set(range(n))
        # decision epochs
        deciding = [u for u, e in next_epoch.items() if e == t]
        proc.update(deciding)
        # arrivals at t
        arr_here = []
        while ptr < n_arr and a_tti_l[ptr] == t:
            arr_here.append(ptr)
            proc.add(a_ue_l[ptr])
            ptr += 1
        order = sorted(proc)
        for u in order:
            if synced[u] < t:
                advance(states[u], cfgs[u], t - synced[u], synced[u], _ue_log(log, u))
                synced[u] = t
        for u in deciding:
            set_id, xs, xl = policies[u].decide(labels[u], t)
            cfgs[u] = DRX_SETS[set_id]
            switch_config(states[u], cfgs[u])
            decisions.append((t, u, xs, xl, set_id))
            next_epoch[u] = t + epochs[u]
        for i in arr_here:
            pkt = Packet(a_ue_l[i], a_size_l[i], t, a_tx_l[i])
            packets.append(pkt)
            states[pkt.ue].buffer.append(pkt)
            if log is not None:
                log.append((t, pkt.ue, "arrival", pkt.size))

        # grants
        free = config.n_carriers - receiving
        waiting = [u for u in order if states[u].buffer and states[u].reachable]
        granted = set()
        if free > 0 and waiting:
            waiting.sort(key=lambda u: (states[u].buffer[0].enq_tti, u))
            granted = set(waiting[:free])
            receiving += len(granted)
        assert receiving <= config.n_carriers, "carrier capacity exceeded"
        assert len(granted) == min(free, len(waiting)), "carrier idle while a reachable UE has data"

        for u in order:
            busy = u in granted or states[u].phase == Phase.RECEIVING
            tick(states[u], cfgs[u], (), u in granted, t, _ue_log(log, u))
            synced[u] = t + 1
            if busy and states[u].in_service is None:
                receiving -= 1
            if states[u].buffer or states[u].phase == Phase.RECEIVING:
                active.add(u)
            else:
                active.discard(u)

        if not fast:
            t += 1
            continue
        # next TTI at which anything can change
        nxt = T
        if ptr < n_arr:
            nxt = min(nxt, a_tti_l[ptr])
        if next_epoch:
            nxt = min(nxt, min(next_epoch.values()))
        nxt = min(nxt, next_rec)
        free = config.n_carriers - receiving
        for u in active:
            s = states[u]
            if free > 0 and s.buffer and s.reachable:
                nxt = t + 1
                break
            nxt = min(nxt, t + s.phase_timer)
        t = max(nxt, t + 1)

    for u in range(n):
        if synced[u] < T:
            advance(states[u], cfgs[u], T - synced[u], synced[u], _ue_log(log, u))
    if rec > 0 and T % rec:
        checkpoints.append([list(s.phase_ttis) for s in states])

    if log is not None:
        log.sort(key=lambda r: (r[0], r[1]))
    packets.sort(key=lambda p: (p.enq_tti, p.ue))
    return SimReport(
        scheme=config.scheme,
        duration=T,
        tti_ms=config.tti_ms,
        pkt_ue=np.array([p.ue for p in packets], dtype=np.int64),
        pkt_enq=np.array([p.enq_tti for p in packets], dtype=np.int64),
        pkt_del=np.array([p.del_tti for p in packets], dtype=np.int64),
        pkt_size=np.array([p.size for p in packets], dtype=np.int64),
        pkt_tx=np.array([p.tx_ttis for p in packets], dtype=np.int64),
        phase_ttis=np.array([s.phase_ttis for s in states], dtype=np.int64).reshape(n, len(Phase)),
        power=config.power,
        config={**config.echo(), "seed": seed},
        decisions=decisions,
        events=log or [],
        checkpoints=np.array(checkpoints, dtype=np.int64) if rec > 0 else None,
    )


class _UeLog(list):
    """Collects (tti, kind, what) from drx_core and forwards them tagged with the UE id."""

    def __init__(self, sink, ue):
        super().__init__()
        self.sink, self.ue = sink, ue

    def append(self, item):
        tt, kind, what = item
        self.sink.append((tt, self.ue, kind, what.name if kind == "phase" else what.enq_tti))


def _ue_log(log, u):
    return None if log is None else _UeLog(log, u)


def compare_schemes(config: SimConfig, schemes: Sequence, seed: int = 0) -> list:
    """Run the same traffic under several schemes.

    Each scheme is ``(label, policy)`` where ``policy`` is a DRX-set id,
    a DrxConfig, an adaptive controller shared by all UEs, or a per-UE list.
    """
    reports = []
    for label, policy in schemes:
        per_ue = list(policy) if isinstance(policy, (list, tuple)) else [policy] * config.n_ues
        reports.append(run(replace(config, policies=per_ue, scheme=label), seed))
    return reports
