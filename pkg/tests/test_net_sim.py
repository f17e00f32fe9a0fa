import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drxcast.drx_core import ALWAYS_ON, DRX_SETS
from drxcast.net_sim import (
    PACKET_HEADER, UE_HEADER, SimConfig, TraceTooShort, UeTraffic, compare_schemes,
    read_packets_csv, run,
)

import drx_oracle


def one(arrivals, T, policy=ALWAYS_ON, **kw):
    return SimConfig([UeTraffic.from_packets(arrivals, T)], [policy], n_ues=1, n_carriers=1, duration=T, **kw)


def test_always_on_single_packet():
    rep = run(one([(100, 125)], 1000))
    assert rep.pkt_del.tolist() == [101]
    assert rep.delays_ms.tolist() == [1.0]


def test_two_ues_share_one_carrier():
    tr = [UeTraffic.from_packets([(0, 1250)], 100) for _ in range(2)]
    rep = run(SimConfig(tr, [ALWAYS_ON] * 2, n_ues=2, n_carriers=1, duration=100))
    assert rep.pkt_ue.tolist() == [0, 1]
    assert rep.delays_ms.tolist() == [10.0, 20.0]


def test_older_head_packet_wins_the_carrier():
    # UE 1 queued first, so it is served first despite the higher index
    tr = [UeTraffic.from_packets([(5, 1250)], 100), UeTraffic.from_packets([(0, 1250), (3, 1250)], 100)]
    rep = run(SimConfig(tr, [ALWAYS_ON] * 2, n_ues=2, n_carriers=1, duration=100))
    got = {(u, e): d for u, e, d in zip(rep.pkt_ue.tolist(), rep.pkt_enq.tolist(), rep.pkt_del.tolist())}
    assert got == {(1, 0): 10, (1, 3): 20, (0, 5): 30}


def test_trace_too_short_and_zero_pad():
    cfg = SimConfig([UeTraffic.from_packets([(3, 10)], 50)], [2], n_ues=1, n_carriers=1, duration=100)
    with pytest.raises(TraceTooShort):
        run(cfg)
    cfg.zero_pad = True
    rep = run(cfg)
    assert len(rep.pkt_enq) == 1 and rep.phase_ttis.sum() == 100


def test_config_validation():
    tr = [UeTraffic.from_packets([], 10)]
    with pytest.raises(ValueError):
        SimConfig(tr, n_ues=2, n_carriers=1, duration=10)
    with pytest.raises(ValueError):
        SimConfig(tr, [2, 2], n_ues=1, n_carriers=1, duration=10)
    with pytest.raises(ValueError):
        SimConfig(tr, n_ues=1, n_carriers=0, duration=10)
    with pytest.raises(ValueError):
        UeTraffic(np.array([3, 2]), np.array([1, 1]), 10)


def ue_arrivals(T):
    return st.lists(st.tuples(st.integers(0, T - 1), st.integers(1, 4000)), max_size=15).map(
        lambda xs: sorted({t: b for t, b in xs}.items()))


scenarios = st.integers(1, 4).flatmap(lambda n: st.tuples(
    st.lists(ue_arrivals(1500), min_size=n, max_size=n),
    st.lists(st.sampled_from(sorted(DRX_SETS)), min_size=n, max_size=n),
    st.integers(1, 3)))


def build(arrs, sids, n_c, T=1500):
    return SimConfig([UeTraffic.from_packets(a, T) for a in arrs], sids, n_ues=len(arrs),
                     n_carriers=n_c, duration=T)


@given(scenarios)
def test_matches_multi_ue_brute_force(sc):
    arrs, sids, n_c = sc
    rep = run(build(arrs, sids, n_c))
    delays, counts = drx_oracle.simulate_multi([DRX_SETS[s].as_list() for s in sids], arrs, 1500, n_c)
    got = {(u, e): d - e for u, e, d in zip(rep.pkt_ue.tolist(), rep.pkt_enq.tolist(), rep.pkt_del.tolist())
           if d >= 0}
    assert got == delays
    assert rep.phase_ttis.tolist() == counts


@given(scenarios)
def test_event_skipping_equals_tti_by_tti(sc):
    arrs, sids, n_c = sc
    cfg = build(arrs, sids, n_c)
    a, b = run(cfg, fast=True), run(cfg, fast=False)
    assert np.array_equal(a.pkt_del, b.pkt_del)
    assert np.array_equal(a.phase_ttis, b.phase_ttis)


@given(scenarios)
def test_conservation_and_capacity(sc):
    arrs, sids, n_c = sc
    cfg = build(arrs, sids, n_c)
    cfg.event_log = True
    rep = run(cfg)
    assert len(rep.pkt_enq) == sum(len(a) for a in arrs)
    assert (rep.phase_ttis.sum(axis=1) == 1500).all()
    # every delivered packet occupied exactly tx TTIs of receiving
    d = rep.delivered
    assert rep.tti_rx.sum() >= rep.pkt_tx[d].sum()
    assert (rep.delays_ms >= rep.pkt_tx[d]).all()
    # at no TTI are more UEs receiving than there are carriers
    starts = [(t, ue) for t, ue, kind, what in rep.events if kind == "phase" and what == "RECEIVING"]
    busy = np.zeros(1500 + 4000, dtype=int)
    tx = {(u, e): x for u, e, x in zip(rep.pkt_ue.tolist(), rep.pkt_enq.tolist(), rep.pkt_tx.tolist())}
    order = {}
    for u, e in sorted(tx, key=lambda k: (k[0], k[1])):
        order.setdefault(u, []).append(tx[(u, e)])
    for t, u in starts:
        busy[t:t + order[u].pop(0)] += 1
    assert busy.max() <= n_c


def test_paired_runs_share_traffic_and_are_deterministic():
    rng = np.random.default_rng(0)
    T = 30_000
    arrs = [sorted({int(t): int(rng.integers(40, 3000)) for t in rng.choice(T, 80, replace=False)}.items())
            for _ in range(3)]
    cfg = SimConfig([UeTraffic.from_packets(a, T) for a in arrs], n_ues=3, n_carriers=2, duration=T)
    r2, r3 = compare_schemes(cfg, [("s2", 2), ("s3", 3)])
    assert np.array_equal(r2.pkt_enq, r3.pkt_enq) and np.array_equal(r2.pkt_ue, r3.pkt_ue)
    assert r2.power_mW.mean() < r3.power_mW.mean()
    assert np.median(r3.delays_ms) <= np.median(r2.delays_ms)
    again = compare_schemes(cfg, [("s2", 2)])[0]
    assert np.array_equal(again.pkt_del, r2.pkt_del) and np.array_equal(again.phase_ttis, r2.phase_ttis)


def test_csv_outputs(tmp_path):
    rep = run(one([(10, 500), (900, 40)], 1000, policy=2))
    paths = rep.write_csv(tmp_path, "x_")
    lines = paths["ues"].read_text().splitlines()
    assert lines[0].split(",") == UE_HEADER
    ue, enq, dl, delay = read_packets_csv(paths["packets"])
    assert paths["packets"].read_text().splitlines()[0].split(",") == PACKET_HEADER
    assert enq.tolist() == [10, 900]
    assert np.allclose(delay, rep.delays_ms)


def test_idle_ue_power():
    rep = run(one([], 100_000, policy=2))
    # 12 TTIs of inactivity and short cycle, then 50-TTI long cycles with one awake TTI
    assert rep.power_mW[0] == pytest.approx(11.8, abs=0.02)
    rep = run(one([], 1000, policy=ALWAYS_ON))
    assert rep.power_mW[0] == pytest.approx(100.0)
