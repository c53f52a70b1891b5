import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liftpd.errors import ConfigError, LabelContractError, MetricsError, TooShortError
from liftpd.windowing import (DhwtConfig, WindowSet, balance_ratio, compute_dhwt_hops,
                              dhwt_segment, fit_dhwt_config, load_windows, save_windows,
                              segment_fixed, segment_fixed_many, window_count, window_label)

from conftest import freeze_stream, make_recording


def test_fixed_counts():
    assert len(segment_fixed(make_recording([1] * 992), 128, 32)) == 28
    assert len(segment_fixed(make_recording([1] * 256), 128, 64)) == 3
    assert len(segment_fixed(make_recording([1] * 128), 128, 32)) == 1


def test_fixed_contents_and_sources():
    rec = make_recording([1] * 300, subject="S04", trial="R02")
    ws = segment_fixed(rec, 100, 64)
    assert [s[2] for s in ws.sources] == [0, 64, 128, 192]
    assert ws.sources[0][:2] == ("S04", "R02")
    assert np.array_equal(ws.values[2], rec.accel[128:228])
    assert ws.labels is None
    assert ws.channels_first().shape == (4, 3, 100)


def test_fixed_errors():
    with pytest.raises(TooShortError):
        segment_fixed(make_recording([1] * 10), 16, 4)
    with pytest.raises(ConfigError):
        segment_fixed(make_recording([1] * 40), 16, 0)
    with pytest.raises(TooShortError):
        segment_fixed_many([make_recording([1] * 10)], 16, 4)


def test_fixed_many_skips_short(caplog):
    ws = segment_fixed_many([make_recording([1] * 10), make_recording([1] * 40)], 16, 8)
    assert len(ws) == 4
    assert "skipping" in caplog.text


def test_compute_dhwt_hops_worked_case():
    hop_min, hop_maj = compute_dhwt_hops(1000, 9000, 128, 32)
    assert (hop_min, hop_maj) == (32, 329)
    assert window_count(1000, 128, 32) == 28
    assert window_count(9000, 128, hop_maj) == 27


def test_compute_dhwt_hops_errors():
    with pytest.raises(TooShortError):
        compute_dhwt_hops(100, 9000, 128, 32)
    with pytest.raises(ConfigError):
        compute_dhwt_hops(1000, 9000, 128, 0)


def test_window_label_threshold():
    assert window_label([2] * 64 + [1] * 64) == 1
    assert window_label([2] * 63 + [1] * 65) == 0
    assert window_label([2] * 10 + [1] * 10, tau=0.6) == 0
    with pytest.raises(LabelContractError):
        window_label([1, 2, 0, 2])


def test_dhwt_rejects_out_of_experiment():
    with pytest.raises(LabelContractError):
        dhwt_segment([make_recording([1] * 200 + [0] * 10)], DhwtConfig(64, 8, 16))


def test_dhwt_grids():
    ann = [1] * 256 + [2] * 256 + [1] * 256
    rec = make_recording(ann)
    ws = dhwt_segment([rec], DhwtConfig(64, 8, 32, 0.5))
    starts = np.array([s[2] for s in ws.sources])
    pos = starts[ws.labels == 1]
    neg = starts[ws.labels == 0]
    assert np.all(pos % 8 == 0) and np.all(neg % 32 == 0)
    for s, lab in zip(starts, ws.labels):
        assert lab == window_label(rec.annotation[s:s + 64])
    assert np.all(np.diff(starts) > 0)


def test_dhwt_preserves_segment_offset():
    rec = make_recording([1, 0, 0] + [1] * 100)
    from liftpd.ingest import split_labeled_segments
    (seg,) = [s for s in split_labeled_segments(rec) if len(s) > 50]
    ws = dhwt_segment([seg], DhwtConfig(32, 8, 16))
    assert ws.sources[0][2] == 3


def test_fit_dhwt_config_balances(rng):
    ann = freeze_stream(20000, 0.15, rng, n_episodes=5)
    cfg = fit_dhwt_config([make_recording(ann)], 128, 32)
    ws = dhwt_segment([make_recording(ann)], cfg)
    assert 0.8 <= balance_ratio(ws) <= 1.25
    assert cfg.digest() == DhwtConfig(128, 32, cfg.hop_majority, 0.5).digest()


def test_balance_ratio_errors():
    ws = segment_fixed(make_recording([1] * 50), 16, 8)
    with pytest.raises(MetricsError):
        balance_ratio(ws)
    labeled = dhwt_segment([make_recording([1] * 50)], DhwtConfig(16, 4, 4))
    with pytest.raises(MetricsError):
        balance_ratio(labeled)


def test_window_set_take_and_concat():
    a = segment_fixed(make_recording([1] * 64, seed=1), 16, 16)
    b = segment_fixed(make_recording([1] * 32, seed=2), 16, 16)
    both = WindowSet.concat([a, b])
    assert len(both) == 6
    assert np.array_equal(both.take([4]).values[0], b.values[0])
    with pytest.raises(ValueError):
        WindowSet.concat([a, segment_fixed(make_recording([1] * 64), 8, 8)])


def test_save_load_windows(tmp_path):
    rec = make_recording(freeze_stream(600, 0.3, np.random.default_rng(0)))
    ws = dhwt_segment([rec], DhwtConfig(64, 8, 16))
    save_windows(ws, tmp_path / "w.bin")
    back = load_windows(tmp_path / "w.bin")
    assert back.values.tobytes() == ws.values.tobytes()
    assert np.array_equal(back.labels, ws.labels)
    assert back.sources == ws.sources and back.provenance == ws.provenance


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(2, 64), st.integers(1, 40))
def test_fixed_matches_enumeration(T, L, hop):
    rec = make_recording([1] * T)
    if T < L:
        with pytest.raises(TooShortError):
            segment_fixed(rec, L, hop)
        return
    ws = segment_fixed(rec, L, hop)
    starts = [s for s in range(0, T - L + 1, hop)]
    assert [src[2] for src in ws.sources] == starts
    for w, s in zip(ws.values, starts):
        assert np.array_equal(w, rec.accel[s:s + L])
