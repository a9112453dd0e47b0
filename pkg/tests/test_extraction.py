import math

import numpy as np
import pytest

from lcgames.errors import DataError, NumericError
from lcgames.extraction import (
    LaneChangeEvent,
    _slice_window,
    _window_indices,
    assign_lanes,
    compute_features,
    compute_state,
    detect_lane_changes,
    extract_events,
    locate_boundaries,
    read_events_csv,
    write_events_csv,
)
from lcgames.standardize import fit_standardization, standardize_states
from lcgames.tracks import Lane, LaneMap, VehicleTrack

from conftest import (
    LANE_GAP,
    fixture_dataset,
    lane_change_scene,
    make_lc_track,
    make_straight_track,
    straight_lane_map,
)


def _segment_distance(p, a, b):
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
    cx, cy = ax + t * dx, ay + t * dy
    return math.hypot(px - cx, py - cy)


def brute_force_assign(track, lane_map):
    """Scalar exhaustive nearest-point search over the candidate lane set."""
    result = []
    current = None
    for i in range(len(track.time)):
        p = (track.x[i], track.y[i])
        if current is None:
            candidates = list(lane_map.lanes)
        else:
            lane = lane_map.lanes[current]
            candidates = [current]
            for extra in (*lane.exit_ids, lane.left_id, lane.right_id):
                if extra is not None and extra in lane_map.lanes and extra not in candidates:
                    candidates.append(extra)
        best, best_d = None, float("inf")
        for lid in candidates:
            pts = lane_map.lanes[lid].points
            d = min(_segment_distance(p, pts[k], pts[k + 1])
                    for k in range(len(pts) - 1))
            if d < best_d:
                best, best_d = lid, d
        result.append(None if best_d > 3.5 else best)
        current = result[-1]
    return result


class TestAssignLanes:
    def test_sample_on_center_gets_that_lane(self):
        lane_map = straight_lane_map()
        track = make_straight_track("t", "HDV", 0.0, 0.0, 0.0, 10.0, duration=1.0)
        assert set(assign_lanes(track, lane_map)) == {"A"}

    def test_sample_far_from_all_lanes_unassigned(self):
        lane_map = straight_lane_map(with_interpolated=False)
        track = make_straight_track("t", "HDV", 0.0, 0.0, 4.0, 10.0, duration=1.0)
        # 4.0 m above lane A, 7.5 m above B
        assert assign_lanes(track, lane_map) == [None] * 11

    def test_sweep_between_close_lanes_flips_at_midpoint(self):
        xs = np.arange(-50.0, 400.0, 50.0)
        lanes = {
            "D": Lane("D", np.column_stack([xs, np.zeros_like(xs)]), right_id="E"),
            "E": Lane("E", np.column_stack([xs, np.full_like(xs, -3.6)]), left_id="D"),
        }
        lane_map = LaneMap(lanes=lanes)
        track = make_lc_track("t", "HDV", 0.0, 0.0, 10.0, 2.0, 12.0,
                              y_from=0.0, y_to=-3.6, duration=14.0)
        got = assign_lanes(track, lane_map)
        flip = next(i for i, lid in enumerate(got) if lid == "E")
        assert track.y[flip] < -1.8 <= track.y[flip - 1]
        assert got == brute_force_assign(track, lane_map)

    def test_matches_bruteforce_on_fixture_scenes(self):
        tracks, lane_map, _ = fixture_dataset(n_events=4)
        for track in tracks.values():
            assert assign_lanes(track, lane_map) == brute_force_assign(track, lane_map)

    def test_empty_polyline_rejected(self):
        lane_map = LaneMap(lanes={"A": Lane("A", np.zeros((1, 2)))})
        track = make_straight_track("t", "HDV", 0.0, 0.0, 0.0, 10.0, duration=1.0)
        with pytest.raises(DataError):
            assign_lanes(track, lane_map)


class TestDetect:
    def test_crossing_detected_within_one_sample(self):
        scene, crossing = lane_change_scene(index=0, ramp_start=5.7, ramp_duration=3.1)
        lane_map = straight_lane_map()
        assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in scene.items()}
        candidates, _ = detect_lane_changes(assignments, lane_map, scene)
        assert len(candidates) == 1
        assert candidates[0].from_lane == "A" and candidates[0].to_lane == "B"
        assert abs(candidates[0].crossing_time - crossing) <= 0.1 + 1e-9
        assert candidates[0].crossing_time == pytest.approx(7.3)

    def test_straight_track_yields_no_candidates(self):
        lane_map = straight_lane_map()
        track = make_straight_track("t", "HDV", 0.0, 0.0, 0.0, 10.0)
        assignments = {"t": assign_lanes(track, lane_map)}
        candidates, rejections = detect_lane_changes(assignments, lane_map, {"t": track})
        assert candidates == [] and rejections == []

    def test_turning_maneuver_rejected_for_heading(self):
        scene, _ = lane_change_scene(index=0)
        lane_map = straight_lane_map()
        # keep drifting after reaching lane B: final heading ~ atan2(-3.5/3.1, 10) twice over
        turning = make_lc_track("act0", "HDV", 0.0, 0.0, 10.0, 7.0, 18.0,
                                y_from=0.0, y_to=-45.0)
        scene["act0"] = turning
        assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in scene.items()}
        candidates, rejections = detect_lane_changes(assignments, lane_map, scene)
        assert candidates == []
        assert any(r.reason == "heading" for r in rejections)

    def test_fast_event_rejected_for_speed(self):
        scene, _ = lane_change_scene(index=0, v0=26.0)
        lane_map = straight_lane_map()
        assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in scene.items()}
        candidates, rejections = detect_lane_changes(assignments, lane_map, scene)
        assert candidates == []
        assert any(r.reason == "speed" for r in rejections)

    def test_interpolated_target_rejected(self):
        lane_map = straight_lane_map()
        track = make_lc_track("t", "HDV", 0.0, 0.0, 10.0, 7.0, 10.1,
                              y_from=0.0, y_to=LANE_GAP)   # A -> C (interpolated)
        assignments = {"t": assign_lanes(track, lane_map)}
        candidates, rejections = detect_lane_changes(assignments, lane_map, {"t": track})
        assert candidates == []
        assert [r.reason for r in rejections] == ["interpolated"]

    def test_missing_lag_rejected(self):
        scene, _ = lane_change_scene(index=0)
        del scene["lag0"]
        lane_map = straight_lane_map()
        assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in scene.items()}
        candidates, rejections = detect_lane_changes(assignments, lane_map, scene)
        assert candidates == []
        assert any(r.reason == "no_lag" for r in rejections)

    def test_short_track_rejected_for_window(self):
        lane_map = straight_lane_map()
        scene, _ = lane_change_scene(index=0, ramp_start=2.0, ramp_duration=3.1)
        # crossing near t=3.5 but track starts at 0: left half-window missing
        scene["act0"] = make_lc_track("act0", "HDV", 0.0, 0.0, 10.0, 2.0, 5.1)
        assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in scene.items()}
        candidates, rejections = detect_lane_changes(assignments, lane_map, scene)
        assert candidates == []
        assert any(r.reason == "window" for r in rejections)


class TestBoundaries:
    def _track_from_distance_profile(self, times, d_profile):
        """Track above lane B (y = -3.5) whose lateral distance to B is d(t)."""
        y = d_profile - LANE_GAP
        n = len(times)
        return VehicleTrack(track_id="t", vtype="HDV", time=times,
                            x=10.0 * times, y=y, heading=np.zeros(n),
                            speed=np.full(n, 10.0), accel=np.zeros(n),
                            yaw_rate=np.zeros(n))

    def test_piecewise_linear_profile_exact(self):
        lane_map = straight_lane_map()
        times = np.round(np.arange(-0.5, 10.01, 0.1), 10)
        d = np.where(times <= 3.0, 1.0 + (2.5 / 3.0) * (times - 0.0),
                     np.where(times <= 6.0, 3.5 - 1.1 * (times - 3.0),
                              0.2 + 0.5 * (times - 6.0)))
        d[times < 0] = 1.0 - (2.5 / 3.0) * 0.0  # keep pre-zero samples harmless
        track = self._track_from_distance_profile(times, d)
        start, end, fallback = locate_boundaries(track, lane_map.lanes["B"], 4.6)
        assert start == pytest.approx(3.0, abs=1e-12)
        assert end == pytest.approx(6.0, abs=1e-12)
        assert not fallback

    def test_immediate_minimum_after_crossing(self):
        lane_map = straight_lane_map()
        times = np.round(np.arange(0.0, 12.01, 0.1), 10)
        d = np.maximum(3.5 - 0.7 * times, 0.0)   # hits 0 at t=5 and stays
        track = self._track_from_distance_profile(times, d)
        start, end, _ = locate_boundaries(track, lane_map.lanes["B"], 2.6)
        assert end == pytest.approx(2.7, abs=1e-12)   # first sample after crossing
        assert start == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_triangle_symmetric_boundaries(self):
        lane_map = straight_lane_map()
        times = np.round(np.arange(0.0, 12.01, 0.1), 10)
        d = 3.4 - np.minimum(times, 12.0 - times) * 0.5
        track = self._track_from_distance_profile(times, d)
        start, end, _ = locate_boundaries(track, lane_map.lanes["B"], 6.0)
        assert start == pytest.approx(0.0)
        assert end == pytest.approx(6.0)

    def test_monotone_profile_flags_fallback(self):
        lane_map = straight_lane_map()
        times = np.round(np.arange(0.0, 12.01, 0.1), 10)
        d = 3.5 - 0.25 * times    # strictly decreasing over the whole window
        track = self._track_from_distance_profile(times, d)
        start, end, fallback = locate_boundaries(track, lane_map.lanes["B"], 6.0)
        assert fallback
        assert start == pytest.approx(1.0)   # window edge (crossing - 5)
        assert end == pytest.approx(11.0)    # window edge


def _windows_for(scene, lane_map, active_id, lead_id, lag_id, t_c):
    active = scene[active_id]
    idx = _window_indices(active, t_c)
    times = active.time[idx]
    def match(track):
        j = np.searchsorted(track.time, times[0])
        return np.arange(j, j + len(times))
    return (_slice_window(active, idx),
            _slice_window(scene[lead_id], match(scene[lead_id])),
            _slice_window(scene[lag_id], match(scene[lag_id])))


class TestFeatures:
    def test_constant_speed_zero_gain_and_duration(self):
        scene, t_c = lane_change_scene(index=0, a0=0.0, passive_a0=0.0,
                                       lead_wiggle=0.0, active_wiggle=0.0,
                                       ramp_start=7.0, ramp_duration=3.1)
        lane_map = straight_lane_map()
        a_w, _, p_w = _windows_for(scene, lane_map, "act0", "lead0", "lag0", 8.6)
        af, pf, _ = compute_features(a_w, p_w, lane_map.lanes["B"], 7.0, 10.1, 8.6)
        assert af[0] == pytest.approx(3.1)
        assert af[2] == pytest.approx(0.0, abs=1e-12)
        assert pf[0] == pytest.approx(0.0, abs=1e-12)

    def test_speed_gain_step_profile(self):
        scene, _ = lane_change_scene(index=0, a0=0.0, passive_a0=0.0,
                                     lead_wiggle=0.0, active_wiggle=0.0)
        lane_map = straight_lane_map()
        a_w, _, p_w = _windows_for(scene, lane_map, "act0", "lead0", "lag0", 8.6)
        a_w.speed = np.where(a_w.time < 7.0, 10.0, 12.0)   # before 10, after 12
        af, _, _ = compute_features(a_w, p_w, lane_map.lanes["B"], 7.0, 10.1, 8.6)
        assert af[2] == pytest.approx(2.0)

    def test_crossing_angle_45_degrees(self):
        lane_map = straight_lane_map()
        # lateral slope equals longitudinal speed -> 45 degrees at crossing
        active = make_lc_track("a", "HDV", 0.0, 0.0, 1.0, 6.0, 9.5,
                               y_from=0.0, y_to=-3.5)
        lead = make_straight_track("lead", "HDV", 0.0, 10.0, -LANE_GAP, 1.0)
        lag = make_straight_track("lag", "HDV", 0.0, -10.0, -LANE_GAP, 1.0)
        scene = {"a": active, "lead": lead, "lag": lag}
        a_w, _, p_w = _windows_for(scene, lane_map, "a", "lead", "lag", 7.8)
        _, _, angle = compute_features(a_w, p_w, lane_map.lanes["B"], 6.0, 9.5, 7.8)
        assert angle == pytest.approx(45.0, abs=1e-9)

    def test_speed_gain_antisymmetric_under_time_reversal(self):
        scene, _ = lane_change_scene(index=0, a0=0.2, passive_a0=-0.2,
                                     ramp_start=8.5, ramp_duration=3.0)
        lane_map = straight_lane_map()
        # window [5, 15] around crossing 10.0; boundaries symmetric at 8.5/11.5
        a_w, _, p_w = _windows_for(scene, lane_map, "act0", "lead0", "lag0", 10.0)
        af, pf, _ = compute_features(a_w, p_w, lane_map.lanes["B"], 8.5, 11.5, 10.0)
        a_w.speed = a_w.speed[::-1].copy()
        p_w.speed = p_w.speed[::-1].copy()
        af_rev, pf_rev, _ = compute_features(a_w, p_w, lane_map.lanes["B"], 8.5, 11.5, 10.0)
        assert af_rev[2] == pytest.approx(-af[2], abs=1e-12)
        assert pf_rev[0] == pytest.approx(-pf[0], abs=1e-12)

    def test_short_during_period_rejected(self):
        scene, _ = lane_change_scene(index=0)
        lane_map = straight_lane_map()
        a_w, _, p_w = _windows_for(scene, lane_map, "act0", "lead0", "lag0", 8.6)
        with pytest.raises(DataError):
            compute_features(a_w, p_w, lane_map.lanes["B"], 8.6, 8.65, 8.6)


class TestState:
    def _state_for(self, v0=10.0, lead_gap=20.0, passive_a0=0.0, lead_speed=None):
        lane_map = straight_lane_map()
        active = make_lc_track("a", "HDV", 0.0, 0.0, v0, 7.0, 10.1)
        lead = make_straight_track("lead", "HDV", 0.0, lead_gap, -LANE_GAP,
                                   lead_speed if lead_speed is not None else v0)
        lag = make_straight_track("lag", "HDV", 0.0, -15.0, -LANE_GAP, v0,
                                  a0=passive_a0)
        scene = {"a": active, "lead": lead, "lag": lag}
        a_w, l_w, p_w = _windows_for(scene, lane_map, "a", "lead", "lag", 8.6)
        return compute_state(a_w, l_w, p_w, lane_map.lanes["B"], 7.0)

    def test_identical_speeds_zero_relative(self):
        s = self._state_for()
        assert s[4] == pytest.approx(0.0, abs=1e-12)   # lead relative speed
        assert s[8] == pytest.approx(0.0, abs=1e-12)   # passive relative speed

    def test_lead_gap_20m_at_10ms_is_two_seconds(self):
        s = self._state_for(v0=10.0, lead_gap=20.0)
        assert s[3] == pytest.approx(2.0, abs=1e-9)

    def test_constant_passive_deceleration(self):
        s = self._state_for(v0=22.0, passive_a0=-1.0)
        assert s[10] == pytest.approx(-1.0, abs=1e-12)

    def test_follower_speed_clamped_in_gap(self):
        lane_map = straight_lane_map()
        active = make_lc_track("a", "HDV", 0.0, 0.0, 10.0, 7.0, 10.1)
        lead = make_straight_track("lead", "HDV", 0.0, 20.0, -LANE_GAP, 10.0)
        lag = make_straight_track("lag", "HDV", 0.0, -15.0, -LANE_GAP, 0.0)
        scene = {"a": active, "lead": lead, "lag": lag}
        a_w, l_w, p_w = _windows_for(scene, lane_map, "a", "lead", "lag", 8.6)
        s = compute_state(a_w, l_w, p_w, lane_map.lanes["B"], 7.0)
        # lag gap grows as the active pulls away; denominator clamps at 0.1
        assert np.isfinite(s[7]) and s[7] > 0


class TestStandardize:
    def test_two_point_population_zscores(self):
        z, transform = standardize_states(np.array([[1.0], [3.0]]))
        assert np.allclose(z[:, 0], 1.0)                # constant column
        assert np.allclose(z[:, 1], [-1.0, 1.0])        # population std = 1
        assert transform.stds[0] == pytest.approx(1.0)

    def test_already_standardized_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 3))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        z, _ = standardize_states(x)
        assert np.allclose(z[:, 1:], x, atol=1e-9)

    def test_columns_have_zero_mean_unit_variance_and_roundtrip(self):
        rng = np.random.default_rng(1)
        x = rng.normal(loc=3.0, scale=2.5, size=(500, 11))
        z, transform = standardize_states(x)
        assert np.all(np.abs(z[:, 1:].mean(axis=0)) < 1e-9)
        assert np.all(np.abs(z[:, 1:].std(axis=0) - 1.0) < 1e-9)
        assert np.allclose(transform.invert(transform.apply(x)), x, atol=1e-9)
        assert np.all(z[:, 0] == 1.0)

    def test_zero_variance_column_named_in_error(self):
        x = np.column_stack([np.ones(10), np.arange(10.0)])
        with pytest.raises(NumericError, match="zero variance"):
            fit_standardization(x, names=["const_col", "idx"])


class TestExtractPipeline:
    def test_fixture_dataset_extracts_all_events(self, small_dataset):
        tracks, lane_map, crossings = small_dataset
        events, rejections = extract_events(tracks, lane_map)
        assert len(events) == len(crossings)
        by_id = {ev.active_id: ev for ev in events}
        for tid, t_c in crossings.items():
            ev = by_id[tid]
            assert abs(ev.crossing_time - t_c) <= 0.1 + 1e-9
            assert ev.start_time < ev.crossing_time < ev.end_time
            assert not ev.boundary_fallback

    def test_boundaries_match_ramp_endpoints_exactly(self):
        scene, _ = lane_change_scene(index=0, ramp_start=6.8, ramp_duration=3.7)
        lane_map = straight_lane_map()
        events, _ = extract_events(scene, lane_map)
        assert len(events) == 1
        assert events[0].start_time == pytest.approx(6.8, abs=1e-9)
        assert events[0].end_time == pytest.approx(10.5, abs=1e-9)

    def test_events_csv_roundtrip(self, tmp_path, small_dataset):
        tracks, lane_map, _ = small_dataset
        events, _ = extract_events(tracks, lane_map)
        path = tmp_path / "events.csv"
        write_events_csv(path, events)
        back = read_events_csv(path)
        assert len(back) == len(events)
        for a, b in zip(events, back):
            assert a.event_id == b.event_id
            assert np.array_equal(a.active_features, b.active_features)
            assert np.array_equal(a.state, b.state)
