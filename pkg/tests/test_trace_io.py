import numpy as np
import pytest
from hypothesis import given, strategies as st

from drxcast.trace_io import (App, Direction, PacketRecord, Protocol, QuantizationScheme, Trace, TraceFormatError,
                              load_trace, n_ttis, quantize_tti_arrivals, save_trace, synthesize_labeled_trace,
                              synthesize_trace, synthesize_user_trace, synth_defaults, tti_byte_totals)


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_rows(tmp_path):
    p = write(tmp_path, "timestamp_s,direction,size_bytes,protocol\n0.0,UL,100,TCP\n0.5,DL,1400,TCP\n")
    tr = load_trace(p)
    assert len(tr) == 2
    assert tr.duration >= 0.5
    assert tr.records[1] == PacketRecord(0.5, Direction.DL, 1400, Protocol.TCP)
    assert not tr.labeled


def test_load_header_only(tmp_path):
    tr = load_trace(write(tmp_path, "timestamp_s,direction,size_bytes,protocol\n"))
    assert len(tr) == 0


def test_negative_size_names_line(tmp_path):
    p = write(tmp_path, "timestamp_s,direction,size_bytes,protocol\n0.0,UL,100,TCP\n1.0,DL,-5,UDP\n")
    with pytest.raises(TraceFormatError, match="line 3"):
        load_trace(p)


def test_unsorted_rejected_or_sorted(tmp_path):
    p = write(tmp_path, "timestamp_s,direction,size_bytes,protocol\n2.0,UL,1,TCP\n1.0,DL,2,UDP\n")
    with pytest.raises(TraceFormatError):
        load_trace(p)
    tr = load_trace(p, sort=True)
    assert list(tr.timestamp) == [1.0, 2.0]
    assert list(tr.size) == [2, 1]


def test_duplicate_timestamps_keep_file_order(tmp_path):
    p = write(tmp_path, "timestamp_s,direction,size_bytes,protocol\n1.0,UL,7,TCP\n1.0,DL,8,UDP\n0.5,UL,9,TCP\n")
    tr = load_trace(p, sort=True)
    assert list(tr.size) == [9, 7, 8]


def test_mixed_labels_rejected(tmp_path):
    p = write(tmp_path, "timestamp_s,direction,size_bytes,protocol,app_label\n0,UL,1,TCP,SURF\n1,UL,1,TCP,\n")
    with pytest.raises(TraceFormatError):
        load_trace(p)


def test_synthesis_deterministic():
    a = synthesize_trace(App.VOICE_CALL, 60, seed=7)
    b = synthesize_trace("VOICE_CALL", 60, seed=7)
    for col in ("timestamp", "direction", "size", "protocol", "app"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert a.labeled and set(a.app.tolist()) == {int(App.VOICE_CALL)}


def test_stream_is_downlink_heavy():
    cfg = synth_defaults()["classes"]["VIDEO_STREAM"]
    assert cfg["on_rate_ul"] < cfg["on_rate_dl"]
    tr = synthesize_trace(App.VIDEO_STREAM, 600, seed=1)
    assert tr.count(Direction.DL) > tr.count(Direction.UL)


def test_zero_duration_and_unknown_class():
    with pytest.raises(ValueError):
        synthesize_trace(App.SURF, 0, seed=1)
    with pytest.raises(ValueError):
        synthesize_trace("GAMING", 10, seed=1)


def test_labeled_trace_has_every_app():
    tr = synthesize_labeled_trace(seed=3)
    assert tr.labeled
    assert set(np.unique(tr.app).tolist()) == {int(a) for a in App}


def test_user_trace_unlabeled_and_bounded():
    tr = synthesize_user_trace(600, seed=2, profile="handset")
    assert not tr.labeled
    assert tr.duration == 600 and (len(tr) == 0 or tr.timestamp[-1] <= 600)


@pytest.mark.parametrize("total,label", [(0, 1), (10, 1), (50, 1), (51, 2), (100, 2), (101, 3), (100000, 8),
                                         (100001, 9), (200000, 9)])
def test_quantizer_examples(total, label):
    assert QuantizationScheme().label([total])[0] == label


def scalar_label(total, b=(0, 50, 100, 500, 1000, 5000, 10000, 50000, 100000)):
    for k in range(1, len(b)):
        if total <= b[k]:
            return k
    return len(b)


@given(st.integers(0, 300000))
def test_quantizer_matches_scalar_reference(total):
    assert QuantizationScheme().label([total])[0] == scalar_label(total)


@given(st.integers(0, 300000), st.integers(0, 300000))
def test_quantizer_monotone(a, b):
    la, lb = QuantizationScheme().label([min(a, b), max(a, b)])
    assert la <= lb


def test_quantizer_representatives_round_trip():
    q = QuantizationScheme()
    for k in q.labels:
        assert q.label([q.representative(k)])[0] == k


def test_quantize_tti_arrivals_length_and_direction():
    recs = [PacketRecord(0.0004, Direction.DL, 10, Protocol.TCP), PacketRecord(0.0006, Direction.DL, 60, Protocol.TCP),
            PacketRecord(0.0021, Direction.UL, 5000, Protocol.UDP)]
    tr = Trace.from_records(recs, duration=0.0045)
    labels = quantize_tti_arrivals(tr, tti_ms=1.0)
    assert len(labels) == n_ttis(0.0045, 1.0) == 5
    assert labels.tolist() == [2, 1, 1, 1, 1]   # 70 B in TTI 0, uplink ignored
    assert tti_byte_totals(tr, 1.0, Direction.UL).tolist() == [0, 0, 5000, 0, 0]


records = st.lists(
    st.tuples(st.integers(0, 10**8), st.sampled_from(list(Direction)), st.integers(0, 65535),
              st.sampled_from(list(Protocol))), max_size=40)


@given(records, st.booleans())
def test_save_load_round_trip(tmp_path_factory, rows, labeled):
    rows = sorted(rows, key=lambda r: r[0])
    recs = [PacketRecord(us / 1e6, d, s, p, App.SURF if labeled else None) for us, d, s, p in rows]
    tr = Trace.from_records(recs)
    path = tmp_path_factory.mktemp("rt") / "trace.csv"
    save_trace(tr, path)
    assert load_trace(path).records == recs
