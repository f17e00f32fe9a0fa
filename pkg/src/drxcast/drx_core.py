"""RRC-connected DRX state machine for one UE at TTI resolution.

Cycles are sleep-first: a short cycle is (T_sc - T_on) TTIs asleep followed by
T_on TTIs on, and likewise for long cycles. After the N_sc short cycles the UE
stays in long cycles indefinitely.

Within one TTI the order is: enqueue arrivals, apply a grant, charge the TTI
to the current phase, then count the phase timer down (a phase ending at zero
switches at the end of the TTI).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional

import numpy as np


class Phase(IntEnum):
    RECEIVING = 0
    INACTIVITY = 1
    SHORT_SLEEP = 2
    SHORT_ON = 3
    LONG_SLEEP = 4
    LONG_ON = 5


REACHABLE = frozenset({Phase.INACTIVITY, Phase.SHORT_ON, Phase.LONG_ON})
SLEEPING = frozenset({Phase.SHORT_SLEEP, Phase.LONG_SLEEP})
_REACHABLE_IDX = tuple(p in REACHABLE for p in Phase)


class GrantError(RuntimeError):
    """A carrier was granted to a UE that cannot receive (scheduler bug)."""


@dataclass(frozen=True)
class DrxConfig:
    t_inactivity: int
    t_on: int
    t_short_cycle: int
    n_short_cycles: int
    t_long_cycle: int

    def __post_init__(self):
        if min(self.t_inactivity, self.t_on, self.t_short_cycle, self.t_long_cycle) < 1:
            raise ValueError("DRX timers must be at least 1 ms")
        if self.n_short_cycles < 0:
            raise ValueError("n_short_cycles must be non-negative")
        if self.t_on > self.t_short_cycle or self.t_on > self.t_long_cycle:
            raise ValueError("on-duration longer than a DRX cycle")

    @classmethod
    def from_list(cls, values) -> "DrxConfig":
        """Build from the table order [T_I, T_on, T_sc, N_sc, T_lc]."""
        t_i, t_on, t_sc, n_sc, t_lc = (int(v) for v in values)
        return cls(t_i, t_on, t_sc, n_sc, t_lc)

    def as_list(self) -> list:
        return [self.t_inactivity, self.t_on, self.t_short_cycle, self.n_short_cycles, self.t_long_cycle]


DRX_SETS = {
    1: DrxConfig.from_list([2, 1, 5, 10, 15]),
    2: DrxConfig.from_list([2, 1, 10, 1, 50]),
    3: DrxConfig.from_list([10, 3, 4, 20, 10]),
    4: DrxConfig.from_list([10, 3, 4, 10, 50]),
}
ALWAYS_ON = DrxConfig.from_list([1, 1, 1, 0, 1])


@dataclass(frozen=True)
class PowerModel:
    p_rx: float = 200.0
    p_active: float = 100.0
    p_sleep: float = 10.0

    def __post_init__(self):
        if not self.p_rx > self.p_active > self.p_sleep > 0:
            raise ValueError("power levels must satisfy rx > active > sleep > 0")

    def of(self, phase: Phase) -> float:
        if phase == Phase.RECEIVING:
            return self.p_rx
        return self.p_sleep if phase in SLEEPING else self.p_active


@dataclass
class Packet:
    ue: int
    size: int
    enq_tti: int
    tx_ttis: int
    del_tti: int = -1

    @property
    def delay(self) -> int:
        return self.del_tti - self.enq_tti


@dataclass
class UeState:
    phase: Phase = Phase.INACTIVITY
    phase_timer: int = 1
    short_cycles_done: int = 0
    buffer: deque = field(default_factory=deque)
    in_service: Optional[Packet] = None
    phase_ttis: list = field(default_factory=lambda: [0] * len(Phase))
    power: PowerModel = PowerModel()
    tti_ms: float = 1.0

    @classmethod
    def start(cls, config: DrxConfig, power: PowerModel = PowerModel(), tti_ms: float = 1.0) -> "UeState":
        """Fresh UE at the beginning of an inactivity period."""
        return cls(Phase.INACTIVITY, config.t_inactivity, power=power, tti_ms=tti_ms)

    @property
    def reachable(self) -> bool:
        return _REACHABLE_IDX[self.phase]

    @property
    def tti_rx(self) -> int:
        return self.phase_ttis[Phase.RECEIVING]

    @property
    def tti_sleep(self) -> int:
        return self.phase_ttis[Phase.SHORT_SLEEP] + self.phase_ttis[Phase.LONG_SLEEP]

    @property
    def tti_active(self) -> int:
        return sum(self.phase_ttis) - self.tti_rx - self.tti_sleep

    @property
    def energy_mJ(self) -> float:
        p = self.power
        return (self.tti_rx * p.p_rx + self.tti_active * p.p_active + self.tti_sleep * p.p_sleep) * self.tti_ms / 1000.0


def transmission_duration(size: int, rate_bps: float, tti_ms: float = 1.0) -> int:
    """TTIs needed to send ``size`` bytes at ``rate_bps``; at least one."""
    if not rate_bps > 0:
        raise ValueError("rate must be positive")
    bits = int(size) * 8
    per_tti = rate_bps * tti_ms / 1000.0
    if float(per_tti).is_integer() and per_tti > 0:
        n = -(-bits // int(per_tti))
    else:
        n = math.ceil(bits / per_tti)
    return max(1, int(n))


def transmission_durations(sizes, rate_bps: float, tti_ms: float = 1.0) -> np.ndarray:
    """Vectorised :func:`transmission_duration`."""
    if not rate_bps > 0:
        raise ValueError("rate must be positive")
    bits = np.asarray(sizes, dtype=np.int64) * 8
    per_tti = rate_bps * tti_ms / 1000.0
    if float(per_tti).is_integer() and per_tti > 0:
        n = -(-bits // int(per_tti))
    else:
        n = np.ceil(bits / per_tti).astype(np.int64)
    return np.maximum(n, 1)


def _enter_short_sleep(s: UeState, cfg: DrxConfig) -> None:
    gap = cfg.t_short_cycle - cfg.t_on
    if gap > 0:
        s.phase, s.phase_timer = Phase.SHORT_SLEEP, gap
    else:
        s.phase, s.phase_timer = Phase.SHORT_ON, cfg.t_on


def _enter_long_sleep(s: UeState, cfg: DrxConfig) -> None:
    gap = cfg.t_long_cycle - cfg.t_on
    if gap > 0:
        s.phase, s.phase_timer = Phase.LONG_SLEEP, gap
    else:
        s.phase, s.phase_timer = Phase.LONG_ON, cfg.t_on


def _after_short_cycle(s: UeState, cfg: DrxConfig) -> None:
    if s.short_cycles_done < cfg.n_short_cycles:
        _enter_short_sleep(s, cfg)
    else:
        _enter_long_sleep(s, cfg)


def _transition(s: UeState, cfg: DrxConfig, tti: int, events: Optional[list]) -> None:
    """Phase change at the end of TTI ``tti``."""
    ph = s.phase
    if ph == Phase.RECEIVING:
        pkt = s.in_service
        pkt.del_tti = tti + 1
        s.in_service = None
        if events is not None:
            events.append((tti + 1, "deliver", pkt))
        s.phase, s.phase_timer, s.short_cycles_done = Phase.INACTIVITY, cfg.t_inactivity, 0
    elif ph == Phase.INACTIVITY:
        s.short_cycles_done = 0
        _after_short_cycle(s, cfg)
    elif ph == Phase.SHORT_SLEEP:
        s.phase, s.phase_timer = Phase.SHORT_ON, cfg.t_on
    elif ph == Phase.SHORT_ON:
        s.short_cycles_done += 1
        _after_short_cycle(s, cfg)
    elif ph == Phase.LONG_SLEEP:
        s.phase, s.phase_timer = Phase.LONG_ON, cfg.t_on
    else:
        _enter_long_sleep(s, cfg)
    if events is not None:
        events.append((tti + 1, "phase", s.phase))


def tick(state: UeState, config: DrxConfig, arrivals: Iterable[Packet] = (), grant: bool = False,
         tti: int = 0, events: Optional[list] = None):
    """Advance one TTI in place; returns ``(state, events)``.

    Events are ``(tti, "deliver", packet)`` for completed deliveries (delay =
    completion TTI - enqueue TTI) and ``(tti, "phase", new_phase)`` for phase
    changes, both stamped with the TTI at which they take effect.
    """
    if events is None:
        events = []
    state.buffer.extend(arrivals)
    if grant:
        if not state.reachable:
            raise GrantError(f"grant at TTI {tti} while UE is in {state.phase.name}")
        if not state.buffer:
            raise GrantError(f"grant at TTI {tti} with an empty buffer")
        pkt = state.buffer.popleft()
        state.in_service = pkt
        state.phase, state.phase_timer, state.short_cycles_done = Phase.RECEIVING, pkt.tx_ttis, 0
        events.append((tti, "phase", Phase.RECEIVING))
    state.phase_ttis[state.phase] += 1
    state.phase_timer -= 1
    if state.phase_timer == 0:
        _transition(state, config, tti, events)
    return state, events


def advance(state: UeState, config: DrxConfig, n: int, tti: int = 0, events: Optional[list] = None) -> UeState:
    """Equivalent to ``n`` calls of :func:`tick` without arrivals or grants, starting at ``tti``."""
    while n > 0:
        k = min(n, state.phase_timer)
        state.phase_ttis[state.phase] += k
        state.phase_timer -= k
        n -= k
        tti += k
        if state.phase_timer == 0:
            _transition(state, config, tti - 1, events)
    return state


def switch_config(state: UeState, new: DrxConfig) -> None:
    """Apply a new DRX set mid-run: the current phase keeps running but never
    longer than the new configuration allows."""
    limits = {
        Phase.INACTIVITY: new.t_inactivity,
        Phase.SHORT_SLEEP: new.t_short_cycle - new.t_on,
        Phase.SHORT_ON: new.t_on,
        Phase.LONG_SLEEP: new.t_long_cycle - new.t_on,
        Phase.LONG_ON: new.t_on,
    }
    cap = limits.get(state.phase)
    if cap is not None:
        state.phase_timer = max(1, min(state.phase_timer, cap))
