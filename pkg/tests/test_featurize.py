import numpy as np
import pytest
from hypothesis import given, strategies as st

from drxcast.featurize import (FEATURE_SETS, FIELDS, FeatureSetMask, Normalizer, apply_mask, bin_trace, feature_set,
                               load_series, save_series, split_experiment)
from drxcast.trace_io import Direction, PacketRecord, Protocol, Trace, synthesize_labeled_trace


def rec(t, d, proto=Protocol.TCP, size=100):
    return PacketRecord(t, d, size, proto)


def test_three_ul_one_dl():
    tr = Trace.from_records([rec(1, Direction.UL), rec(2, Direction.UL), rec(3, Direction.UL), rec(4, Direction.DL)],
                            duration=10)
    s = bin_trace(tr, 10)
    assert len(s) == 1
    v = s.vector(0)
    assert (v.num_ul_packets, v.num_dl_packets, v.ul_dl_ratio) == (3, 1, 2.0)


def test_udp_and_empty_bins():
    tr = Trace.from_records([rec(0.5, Direction.UL, Protocol.UDP), rec(0.7, Direction.DL, Protocol.UDP)], duration=20)
    s = bin_trace(tr, 10)
    assert s.vector(0).udp_fraction == 1.0
    e = s.vector(1)
    assert (e.num_ul_packets, e.num_dl_packets, e.ul_dl_ratio, e.udp_fraction) == (0, 0, 1.0, 0)


def test_empty_trace_gives_zero_bins():
    s = bin_trace(Trace.empty(25), 10)
    assert len(s) == 3 and np.all(s.column("num_ul") == 0)


def test_mask_shapes_and_errors():
    s = bin_trace(synthesize_labeled_trace(seed=1), 1.0)
    assert apply_mask(s, "FS3").fields == ("num_ul",)
    assert len(apply_mask(s, "FS1").fields) == 5
    with pytest.raises(ValueError):
        FeatureSetMask("none", (False,) * len(FIELDS))
    with pytest.raises(ValueError):
        feature_set("FS9")


def test_feature_set_table():
    want = {"FS1": {"num_ul", "num_dl", "size_ul", "size_dl", "ratio"}, "FS2": {"num_ul", "ratio"},
            "FS3": {"num_ul"}, "FS4": {"num_ul", "num_dl", "ratio"}, "FS5": {"num_ul", "num_dl"},
            "FS6": {"num_ul", "num_dl", "udp_fraction"}}
    assert {k: set(m.fields) for k, m in FEATURE_SETS.items()} == want


def test_mask_excluding_non_default_target():
    s = bin_trace(synthesize_labeled_trace(seed=1), 1.0)
    from dataclasses import replace
    s2 = replace(s, target="num_dl")
    with pytest.raises(ValueError):
        apply_mask(s2, "FS3")


def test_split_experiment():
    s = bin_trace(Trace.empty(10000), 1.0)
    tr, te = split_experiment(s, 8000, 2000, 0)
    assert (len(tr), len(te)) == (8000, 2000)
    tr, te = split_experiment(s, 0, 100, 5)
    assert len(tr) == 0 and len(te) == 100
    with pytest.raises(ValueError):
        split_experiment(s, 10, 10, 9990)


timestamps = st.lists(st.tuples(st.floats(0, 99.999, allow_nan=False), st.sampled_from(list(Direction)),
                                st.sampled_from(list(Protocol))), max_size=80)


def make(rows):
    rows = sorted(rows)
    return Trace.from_records([PacketRecord(t, d, 60, p) for t, d, p in rows], duration=100.0)


@given(timestamps, st.sampled_from([0.5, 1.0, 3.0, 10.0, 7.3]))
def test_count_conservation(rows, tau):
    tr = make(rows)
    s = bin_trace(tr, tau)
    assert s.column("num_ul").sum() == tr.count(Direction.UL)
    assert s.column("num_dl").sum() == tr.count(Direction.DL)
    assert np.all((s.column("udp_fraction") >= 0) & (s.column("udp_fraction") <= 1))


@given(timestamps, st.sampled_from([1.0, 2.0, 5.0, 10.0]))
def test_halving_tau(rows, tau):
    tr = make(rows)
    a, b = bin_trace(tr, tau), bin_trace(tr, tau / 2)
    assert len(b) <= 2 * len(a)
    assert b.column("num_ul").sum() == a.column("num_ul").sum()


@given(st.sampled_from(sorted(FEATURE_SETS)))
def test_apply_mask_idempotent(name):
    s = bin_trace(synthesize_labeled_trace(seed=2), 2.0)
    once = apply_mask(s, name)
    twice = apply_mask(once, name)
    assert once.fields == twice.fields and np.array_equal(once.data, twice.data)


def test_series_csv_round_trip(tmp_path):
    s = apply_mask(bin_trace(synthesize_labeled_trace(seed=4), 1.0), "FS4")
    save_series(s, tmp_path / "s.csv")
    back = load_series(tmp_path / "s.csv", 1.0)
    assert back.fields == s.fields and np.array_equal(back.data, s.data)
    assert np.array_equal(back.labels, s.labels)


def test_normalizer_inverse():
    x = np.random.default_rng(0).normal(3, 2, (50, 3))
    n = Normalizer.fit(x)
    assert np.allclose(n.inverse(n.transform(x)), x)
