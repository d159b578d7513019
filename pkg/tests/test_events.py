import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relay.events import (
    OUT_OF_RANGE,
    RETAINED,
    SPLIT_FRAGMENT,
    DetectorConfig,
    SaccadeEvent,
    TooShort,
    acceleration_series,
    classify_saccades,
    detect_saccades,
    event_row,
    filter_valid_saccades,
    read_events,
    velocity_series,
    write_events,
)
from relay.geometry import ViewingGeometry, gaze_to_screen_px
from relay.motion import GimbalState
from relay.tracker import SampleStream, build_timeline

GEOM = ViewingGeometry()


def stream_from_angles(yaw_deg, pitch_deg, pupil=100.0):
    x, y = gaze_to_screen_px(np.radians(yaw_deg), np.radians(pitch_deg), GEOM)
    n = len(x)
    return SampleStream(np.arange(n, dtype=np.int64), x, y, np.full(n, pupil), np.ones(n, bool))


def stream_from_moves(start, landings, dwell=300):
    tl = build_timeline(start, landings, dwell, initial_dwell_ms=dwell)
    return stream_from_angles(*tl.gaze_deg())


def test_constant_rotation_reads_its_speed():
    t = np.arange(200) / 1000.0
    s = stream_from_angles(-5.0 + 100.0 * t, np.zeros_like(t))
    v = velocity_series(s, GEOM)
    assert np.isnan(v[:2]).all() and np.isnan(v[-2:]).all()
    # differencing unit rays measures chords, short of the arc by ~theta^2 / 24
    np.testing.assert_allclose(v[2:-2], 100.0, rtol=1e-5)
    acc = acceleration_series(v)
    np.testing.assert_allclose(acc[4:-4], 0.0, atol=1e-3)


def test_filter_reads_triangular_apex_low_by_five_sixths_a_dt():
    # a 32-step move peaks at 20 ms, exactly on a sample: 1600 pps = 180 deg/s
    s = stream_from_moves(GimbalState(0, 0), [GimbalState(32, 0)])
    pv = np.nanmax(velocity_series(s, GEOM))
    a = 80000 * 0.1125
    assert pv == pytest.approx(180.0 - 5.0 / 6.0 * a * 1e-3, rel=1e-5)


def test_single_move_gives_one_saccade_between_two_fixations():
    s = stream_from_moves(GimbalState(0, 0), [GimbalState(89, 0)])  # ~10 deg
    sacc, fix = detect_saccades(s, GEOM)
    assert len(sacc) == 1 and len(fix) == 2
    ev = sacc[0]
    assert 9.0 < ev.amplitude_deg <= 89 * 0.1125 + 1e-9
    assert ev.peak_velocity_degps == pytest.approx(math.sqrt(9000 * 89 * 0.1125) - 7.5, abs=5.0)
    assert fix[0].t_end_ms < ev.t_start_ms <= ev.t_end_ms < fix[1].t_start_ms
    assert ev.mean_pupil_size == 100.0


def test_minimum_amplitude_drops_tiny_runs():
    s = stream_from_moves(GimbalState(0, 0), [GimbalState(3, 0)])
    assert len(detect_saccades(s, GEOM, DetectorConfig(min_amplitude_deg=1.0))[0]) == 0


def test_invalid_samples_split_fixations_and_never_start_saccades():
    s = stream_from_angles(np.zeros(400), np.zeros(400))
    s.valid[200:220] = False
    s.x[200:220] = np.nan
    s.y[200:220] = np.nan
    sacc, fix = detect_saccades(s, GEOM)
    assert sacc == [] and len(fix) == 2


def test_too_short():
    with pytest.raises(TooShort):
        velocity_series(stream_from_angles(np.zeros(3), np.zeros(3)), GEOM)
    assert detect_saccades(stream_from_angles(np.zeros(0), np.zeros(0)), GEOM) == ([], [])


def test_detector_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(velocity_filter_taps=4)
    with pytest.raises(ValueError):
        DetectorConfig(velocity_threshold_degps=0)


def ev(t0, t1, amp):
    return SaccadeEvent(t0, t1, (0.0, 0.0), (1.0, 1.0), amp, 300.0, 100.0)


def test_split_fragments_take_precedence():
    events = [ev(0, 30, 8.0), ev(50, 60, 2.0), ev(400, 430, 20.0), ev(900, 930, 9.0)]
    assert classify_saccades(events) == [SPLIT_FRAGMENT, SPLIT_FRAGMENT, OUT_OF_RANGE, RETAINED]


@given(st.lists(st.tuples(st.integers(0, 200), st.integers(1, 80), st.floats(0.0, 30.0)), max_size=30))
def test_exclusion_accounting(parts):
    t, events = 0, []
    for gap, dur, amp in parts:
        t += gap
        events.append(ev(t, t + dur, amp))
        t += dur
    kept, dropped = filter_valid_saccades(events)
    assert len(kept) + len(dropped) == len(events)
    assert all(4.0 <= e.amplitude_deg <= 14.6 for e in kept)
    assert {r for _, r in dropped} <= {OUT_OF_RANGE, SPLIT_FRAGMENT}


def test_event_csv_round_trip():
    buf = io.StringIO()
    write_events(buf, [event_row(ev(10, 40, 7.123456789), 3, 2, "dark", RETAINED)])
    buf.seek(0)
    (row,) = read_events(buf)
    assert row["trial"] == 3 and row["participant"] == 2 and row["condition"] == "dark"
    assert row["amplitude_deg"] == 7.123457 and row["status"] == RETAINED
