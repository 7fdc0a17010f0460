import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliff_lhmp.ingestion import (
    DataError,
    FormatError,
    RawTrack,
    TooShortError,
    Trajectory,
    derive_velocities,
    filter_and_split,
    parse,
    parse_atc,
    parse_canonical,
    parse_thor,
    prepare_trajectories,
    resample,
    split_gaps,
    write_canonical,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def walk(duration, hz=2.5, speed=1.0, heading=0.0, pid=1, t0=0.0):
    n = int(round(duration * hz)) + 1
    t = t0 + np.arange(n) / hz
    d = speed * (t - t0)
    return RawTrack(pid, t, d * math.cos(heading), d * math.sin(heading))


class TestCanonical:
    def test_grouping(self, tmp_path):
        rows = ["person_id,time_s,x_m,y_m"]
        for i in range(10):
            rows.append(f"2,{i * 0.4},{i},{-i}")
            rows.append(f"1,{i * 0.4},{i * 2},0")
        tracks = parse_canonical(write(tmp_path, "a.csv", "\n".join(rows) + "\n"))
        assert [t.person_id for t in tracks] == [1, 2]
        assert [len(t) for t in tracks] == [10, 10]
        assert tracks[1].x[3] == 3.0 and tracks[1].y[3] == -3.0

    def test_unsorted_rows_are_sorted(self, tmp_path):
        text = "person_id,time_s,x_m,y_m\n1,0.8,2,0\n1,0.0,0,0\n1,0.4,1,0\n"
        (tr,) = parse_canonical(write(tmp_path, "a.csv", text))
        assert list(tr.t) == [0.0, 0.4, 0.8]
        assert list(tr.x) == [0.0, 1.0, 2.0]

    def test_empty_with_header(self, tmp_path):
        assert parse_canonical(write(tmp_path, "a.csv", "person_id,time_s,x_m,y_m\n")) == []

    def test_missing_header(self, tmp_path):
        with pytest.raises(FormatError, match="header"):
            parse_canonical(write(tmp_path, "a.csv", "1,0.0,0,0\n"))
        with pytest.raises(FormatError):
            parse_canonical(write(tmp_path, "b.csv", ""))

    def test_non_numeric_names_line(self, tmp_path):
        text = "person_id,time_s,x_m,y_m\n1,0.0,0,0\n1,0.4,abc,0\n"
        with pytest.raises(FormatError, match="line 3"):
            parse_canonical(write(tmp_path, "a.csv", text))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(FormatError, match="line 2"):
            parse_canonical(write(tmp_path, "a.csv", "person_id,time_s,x_m,y_m\n1,0.0,0\n"))

    def test_duplicate_time_names_person(self, tmp_path):
        text = "person_id,time_s,x_m,y_m\n7,0.0,0,0\n7,0.0,1,0\n"
        with pytest.raises(DataError, match="person_id 7"):
            parse_canonical(write(tmp_path, "a.csv", text))

    @settings(max_examples=40)
    @given(st.lists(
        st.tuples(st.integers(0, 5), st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=3, max_size=3)),
        min_size=1, max_size=30))
    def test_round_trip_exact(self, tmp_path_factory, rows):
        tracks = {}
        for pid, (t, x, y) in rows:
            tracks.setdefault(pid, {})[t] = (x, y)
        raw = []
        for pid in sorted(tracks):
            ts = sorted(tracks[pid])
            raw.append(RawTrack(pid, ts, [tracks[pid][t][0] for t in ts], [tracks[pid][t][1] for t in ts]))
        path = tmp_path_factory.mktemp("rt") / "t.csv"
        write_canonical(raw, path)
        back = parse_canonical(path)
        assert len(back) == len(raw)
        assert all(a.equals(b) for a, b in zip(raw, back))


class TestAtc:
    def test_unit_conversion(self, tmp_path):
        text = "1351039234.567,123,12345,-6789,1500,1200,0.5,0.4\n"
        (tr,) = parse_atc(write(tmp_path, "atc.csv", text))
        assert tr.person_id == 123
        assert tr.t[0] == 1351039234.567
        assert tr.x[0] == pytest.approx(12.345, abs=1e-12)
        assert tr.y[0] == pytest.approx(-6.789, abs=1e-12)

    def test_interleaved_ids_regrouped(self, tmp_path):
        text = "\n".join([
            "10.0,1,0,0,0,0,0,0",
            "10.0,2,5000,0,0,0,0,0",
            "10.1,1,100,0,0,0,0,0",
            "10.1,2,5100,0,0,0,0,0",
            "10.2,1,200,0,0,0,0,0",
        ]) + "\n"
        tracks = parse_atc(write(tmp_path, "atc.csv", text))
        assert [(t.person_id, len(t)) for t in tracks] == [(1, 3), (2, 2)]
        assert list(tracks[0].x) == pytest.approx([0.0, 0.1, 0.2])

    def test_single_row_person_dropped_downstream(self, tmp_path):
        text = "10.0,1,0,0,0,0,0,0\n10.0,2,0,0,0,0,0,0\n10.4,2,400,0,0,0,0,0\n"
        tracks = parse_atc(write(tmp_path, "atc.csv", text))
        assert len(tracks) == 2
        trajs = prepare_trajectories(tracks)
        assert [t.person_id for t in trajs] == [2]

    def test_bad_number(self, tmp_path):
        with pytest.raises(FormatError, match="line 2"):
            parse_atc(write(tmp_path, "atc.csv", "10.0,1,0,0\n10.1,1,x,0\n"))


THOR_TEXT = """\
TRAJECTORIES
Frames: 6\tRate: 100
Frame\tTime\tHelmet_2 X\tHelmet_2 Y\tHelmet_2 Z\tHelmet_10 X\tHelmet_10 Y\tHelmet_10 Z
1\t0.00\t1000\t2000\t1700\t-500\t0\t1800
2\t0.01\t1010\t2000\t1700\t-490\t0\t1800
3\t0.02\tNaN\tNaN\tNaN\t-480\t0\t1800
4\t0.03\t1030\t2000\t1700\t\t\t
5\t0.04\t1040\t2000\t1700\t-460\t0\t1800
6\t0.05\t1050\t2000\t1700\t-450\t0\t1800
"""


class TestThor:
    def test_parse_and_gaps(self, tmp_path):
        tracks = parse_thor(write(tmp_path, "thor.tsv", THOR_TEXT))
        summary = [(t.person_id, t.segment, len(t)) for t in tracks]
        assert summary == [(2, 0, 2), (2, 1, 3), (10, 0, 3), (10, 1, 2)]
        first = tracks[0]
        assert first.x[0] == pytest.approx(1.0) and first.y[0] == pytest.approx(2.0)
        assert tracks[2].x[0] == pytest.approx(-0.5)

    def test_comma_delimited(self, tmp_path):
        text = THOR_TEXT.replace("\t", ",")
        assert len(parse_thor(write(tmp_path, "thor.csv", text))) == 4

    def test_missing_header(self, tmp_path):
        with pytest.raises(FormatError, match="Frame"):
            parse_thor(write(tmp_path, "thor.tsv", "1\t0.0\t1\t2\n"))

    def test_dispatch(self, tmp_path):
        p = write(tmp_path, "thor.tsv", THOR_TEXT)
        assert len(parse(p, "thor")) == 4
        with pytest.raises(ValueError, match="unknown adapter"):
            parse(p, "xyz")


class TestResample:
    def test_identity_at_target_rate(self):
        tr = RawTrack(1, np.arange(6) * 0.4, [0.0, 0.3, 0.1, 0.7, 1.0, 1.2], [0.0, 0.1, 0.4, 0.2, 0.0, 0.3])
        out = resample(tr, 2.5)
        np.testing.assert_allclose(out.x, tr.x, atol=1e-12)
        np.testing.assert_allclose(out.y, tr.y, atol=1e-12)
        np.testing.assert_allclose(out.t, tr.t, atol=1e-12)

    def test_linear_walk_is_exact(self):
        tr = walk(10.0, hz=10.0, speed=1.3, heading=0.7)
        out = resample(tr, 2.5)
        assert len(out) == 26
        d = 1.3 * (out.t - out.t[0])
        np.testing.assert_allclose(out.x, d * math.cos(0.7), atol=1e-9)
        np.testing.assert_allclose(out.y, d * math.sin(0.7), atol=1e-9)

    def test_sinusoid_within_interpolation_error(self):
        # linear interpolation error is bounded by h^2/8 * max|f''|
        h, a, w = 0.1, 0.5, 2.0
        t = np.arange(0, 10 + 1e-9, h)
        tr = RawTrack(1, t, t.copy(), a * np.sin(w * t))
        out = resample(tr, 2.5)
        bound = h * h / 8 * a * w * w
        assert np.max(np.abs(out.y - a * np.sin(w * (out.t - out.t[0])))) <= bound + 1e-12

    def test_too_short(self):
        with pytest.raises(TooShortError):
            resample(RawTrack(1, [0.0, 0.3], [0, 1], [0, 0]), 2.5)
        with pytest.raises(TooShortError):
            resample(RawTrack(1, [0.0], [0], [0]), 2.5)

    def test_grid_starts_at_first_timestamp(self):
        out = resample(walk(4.0, hz=10.0, t0=100.05), 2.5)
        assert out.t[0] == 100.05
        assert np.allclose(np.diff(out.t), 0.4)

    @settings(max_examples=50)
    @given(st.floats(0.1, 3.0), st.floats(0, 2 * math.pi - 1e-6), st.sampled_from([5.0, 10.0, 25.0, 100.0]))
    def test_constant_velocity_round_trip(self, speed, heading, hz):
        out = resample(walk(8.0, hz=hz, speed=speed, heading=heading), 2.5)
        np.testing.assert_allclose(out.rho, speed, atol=1e-9)
        diff = np.angle(np.exp(1j * (out.theta - heading)))
        assert np.max(np.abs(diff)) < 1e-9


class TestDeriveVelocities:
    def test_unit_step(self):
        rho, theta = derive_velocities([0.0, 1.0], [0.0, 0.0], 0.4)
        assert list(rho) == [2.5, 2.5]
        assert list(theta) == [0.0, 0.0]

    def test_diagonal(self):
        rho, theta = derive_velocities([0, 1, 2], [0, 1, 2], 0.4)
        assert rho == pytest.approx([math.sqrt(2) / 0.4] * 3)
        assert theta == pytest.approx([math.pi / 4] * 3)

    def test_stationary_carries_previous_heading(self):
        rho, theta = derive_velocities([0, 0, 0, 1, 1], [0, 0, 0, 1, 1], 1.0)
        assert list(rho[:3]) == [0.0, 0.0, 0.0]
        assert list(theta[:3]) == [0.0, 0.0, 0.0]
        assert theta[3] == pytest.approx(math.pi / 4)
        assert theta[4] == pytest.approx(math.pi / 4)
        assert rho[4] == 0.0

    def test_negative_direction_wrapped(self):
        _, theta = derive_velocities([0, 1], [0, -1], 1.0)
        assert theta[1] == pytest.approx(7 * math.pi / 4)

    def test_needs_two_positions(self):
        with pytest.raises(TooShortError):
            derive_velocities([0.0], [0.0], 0.4)


class TestGaps:
    def test_gap_splits_track(self):
        t = np.r_[np.arange(10) * 0.1, 5.0 + np.arange(10) * 0.1]
        tr = RawTrack(4, t, t, t * 0)
        pieces = split_gaps(tr, 0.8)
        assert [len(p) for p in pieces] == [10, 10]
        trajs = prepare_trajectories([tr])
        assert [(t.person_id, t.segment, t.traj_id) for t in trajs] == [(4, 0, "4"), (4, 1, "4_1")]

    def test_non_uniform_trajectory_rejected(self):
        with pytest.raises(DataError):
            Trajectory(1, [0.0, 0.4, 1.0], [0, 1, 2], [0, 0, 0], [1, 1, 1], [0, 0, 0], 0.4)


class TestFilterAndSplit:
    def _split(self, duration, **kw):
        return filter_and_split(prepare_trajectories([walk(duration)]), **kw)

    def test_sixty_seconds(self):
        (s,) = self._split(60.0, obs_horizon=3.2, max_future=50.0)
        assert len(s.history) == 8
        assert len(s.future) == 125
        assert s.current.time == pytest.approx(3.2)
        assert s.future[0].time == pytest.approx(3.6)

    def test_shorter_than_observation_dropped(self):
        assert self._split(3.0) == []

    def test_ten_seconds(self):
        (s,) = self._split(10.0)
        assert len(s.future) == 17

    def test_slow_dropped(self):
        assert filter_and_split(prepare_trajectories([walk(10.0, speed=0.2)]), continuity_min_speed=0.3) == []
        assert len(filter_and_split(prepare_trajectories([walk(10.0, speed=0.2)]), continuity_min_speed=0.1)) == 1

    @given(st.floats(3.6, 80.0), st.sampled_from([1.2, 2.0, 3.2]))
    def test_history_length_always_op(self, duration, obs):
        out = self._split(duration, obs_horizon=obs)
        for s in out:
            assert len(s.history) == round(obs / 0.4)
            assert 1 <= len(s.future) <= 125
