"""Lane-change event extraction from trajectories and a lane-center map.

The pipeline is: per-sample lane assignment -> crossing detection with
heading/speed/lead-lag filters -> boundary location on the lateral-distance
profile -> behavioral features and pre-maneuver state variables.

An event window spans 5 s either side of the crossing instant. The window is
partitioned into before / during / after periods by the located maneuver
boundaries; features are statistics over those periods.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import (
    angle_between,
    circular_mean,
    project_onto_polyline,
    wrap_angle,
)
from .tracks import Lane, LaneMap, VehicleTrack

log = logging.getLogger(__name__)

ASSIGN_DISTANCE_MAX = 3.5      # m, beyond which a sample has no lane
WINDOW_HALF = 5.0              # s either side of the crossing
HEADING_CHANGE_MAX = 0.2       # rad, window-start vs window-end mean heading
HEADING_AVG_SPAN = 1.0         # s over which boundary headings are averaged
SPEED_MEAN_MAX = 25.0          # m/s, mean over the window
MIN_FOLLOWER_SPEED = 0.1       # m/s floor in time-gap denominators
TIME_MATCH_TOL = 0.05 + 1e-9   # cross-track sample alignment tolerance

ACTIVE_FEATURE_NAMES = (
    "lc_duration_s",
    "speed_std_during",
    "speed_gain",
    "max_heading_diff_during",
    "lane_crossing_angle_deg",
    "yaw_rate_std_during",
    "max_lateral_speed_during",
    "max_lateral_accel_during",
    "accel_std_during",
    "max_accel_during",
)
PASSIVE_FEATURE_NAMES = (
    "speed_gain",
    "max_accel_during",
    "min_accel_during",
    "speed_std_during",
)
STATE_NAMES = (
    "active_speed_mean",
    "active_speed_std",
    "active_accel_mean",
    "lead_gap_mean_s",
    "lead_rel_speed_mean",
    "lead_speed_std",
    "lead_accel_mean",
    "lag_gap_mean_s",
    "passive_rel_speed_mean",
    "passive_speed_std",
    "passive_accel_mean",
)

OUTCOMES = ("CC", "CD", "DC", "DD")


@dataclass
class LaneChangeEvent:
    """One accepted lane change with its features and pre-maneuver state."""

    event_id: str
    active_id: str
    lead_id: str
    passive_id: str
    crossing_time: float
    start_time: float
    end_time: float
    active_type: str
    passive_type: str
    active_features: np.ndarray      # 10-vector, ACTIVE_FEATURE_NAMES order
    passive_features: np.ndarray     # 4-vector, PASSIVE_FEATURE_NAMES order
    state: np.ndarray                # 11-vector, STATE_NAMES order
    lane_crossing_angle: float       # degrees
    boundary_fallback: bool = False
    active_label: str | None = None
    passive_label: str | None = None
    outcome: str | None = None


@dataclass
class Rejection:
    track_id: str
    time: float
    reason: str


@dataclass
class Candidate:
    """A crossing that has passed the detection filters."""

    track_id: str
    crossing_time: float
    crossing_idx: int          # index into the active track
    from_lane: str
    to_lane: str
    lead_id: str
    passive_id: str


def assign_lanes(track: VehicleTrack, lane_map: LaneMap) -> list[str | None]:
    """Assign each sample to a lane center, or None when too far from all.

    The first sample (and any sample following an unassigned one) searches
    every lane; afterwards only the current lane, its exits, and its left
    and right neighbors are candidates. Distances above 3.5 m leave the
    sample unassigned.
    """
    lane_map.validate()
    xy = track.xy
    dist_cache: dict[str, np.ndarray] = {}

    def dist_series(lane_id: str) -> np.ndarray:
        if lane_id not in dist_cache:
            lane = lane_map.lanes[lane_id]
            dist_cache[lane_id] = project_onto_polyline(lane.points, xy)[0]
        return dist_cache[lane_id]

    all_ids = list(lane_map.lanes)
    result: list[str | None] = []
    current: str | None = None
    for i in range(len(track.time)):
        if current is None:
            candidates = all_ids
        else:
            lane = lane_map.lanes[current]
            candidates = [current]
            for extra in (*lane.exit_ids, lane.left_id, lane.right_id):
                if extra is not None and extra in lane_map.lanes and extra not in candidates:
                    candidates.append(extra)
        best_id, best_dist = None, np.inf
        for lid in candidates:
            d = dist_series(lid)[i]
            if d < best_dist:
                best_id, best_dist = lid, d
        if best_dist > ASSIGN_DISTANCE_MAX:
            best_id = None
        result.append(best_id)
        current = best_id
    return result


def _window_indices(track: VehicleTrack, t_c: float) -> np.ndarray | None:
    """Sample indices covering [t_c - 5, t_c + 5]; None if not fully covered."""
    lo, hi = t_c - WINDOW_HALF, t_c + WINDOW_HALF
    if track.time[0] > lo + 1e-9 or track.time[-1] < hi - 1e-9:
        return None
    mask = (track.time >= lo - 1e-9) & (track.time <= hi + 1e-9)
    return np.flatnonzero(mask)


def _match_times(track: VehicleTrack, times: np.ndarray) -> np.ndarray | None:
    """Indices of ``track`` samples aligned with ``times``; None on a gap."""
    idx = np.searchsorted(track.time, times)
    idx = np.clip(idx, 0, len(track.time) - 1)
    left = np.clip(idx - 1, 0, len(track.time) - 1)
    use_left = np.abs(track.time[left] - times) < np.abs(track.time[idx] - times)
    idx = np.where(use_left, left, idx)
    if np.any(np.abs(track.time[idx] - times) > TIME_MATCH_TOL):
        return None
    return idx


def _heading_change(track: VehicleTrack, window: np.ndarray) -> float:
    """Mean-heading difference between the first and last second of a window."""
    t = track.time[window]
    head = track.heading[window]
    first = head[t <= t[0] + HEADING_AVG_SPAN + 1e-9]
    last = head[t >= t[-1] - HEADING_AVG_SPAN - 1e-9]
    return abs(wrap_angle(circular_mean(last) - circular_mean(first)))


def detect_lane_changes(
    assignments: dict[str, list[str | None]],
    lane_map: LaneMap,
    tracks: dict[str, VehicleTrack],
) -> tuple[list[Candidate], list[Rejection]]:
    """Find lane-to-adjacent-lane transitions and filter to usable events.

    A candidate is emitted at the first sample assigned to the previous
    lane's left or right neighbor. Candidates are dropped when the target
    lane is interpolated, the window is not covered, the heading or speed
    filter fails, or no lead/lag vehicle is present in the target lane.
    """
    candidates: list[Candidate] = []
    rejections: list[Rejection] = []

    for tid, lane_seq in assignments.items():
        track = tracks[tid]
        for i in range(1, len(lane_seq)):
            prev, cur = lane_seq[i - 1], lane_seq[i]
            if prev is None or cur is None or cur == prev:
                continue
            left_id, right_id = lane_map.neighbor_ids(prev)
            if cur not in (left_id, right_id):
                continue
            t_c = float(track.time[i])
            if lane_map.lanes[cur].interpolated:
                rejections.append(Rejection(tid, t_c, "interpolated"))
                continue
            window = _window_indices(track, t_c)
            if window is None:
                rejections.append(Rejection(tid, t_c, "window"))
                continue
            if _heading_change(track, window) >= HEADING_CHANGE_MAX:
                rejections.append(Rejection(tid, t_c, "heading"))
                continue
            if float(np.mean(track.speed[window])) >= SPEED_MEAN_MAX:
                rejections.append(Rejection(tid, t_c, "speed"))
                continue
            lead_id, passive_id = _find_lead_lag(
                tid, i, cur, t_c, assignments, lane_map, tracks
            )
            if lead_id is None:
                rejections.append(Rejection(tid, t_c, "no_lead"))
                continue
            if passive_id is None:
                rejections.append(Rejection(tid, t_c, "no_lag"))
                continue
            candidates.append(Candidate(
                track_id=tid, crossing_time=t_c, crossing_idx=i,
                from_lane=prev, to_lane=cur,
                lead_id=lead_id, passive_id=passive_id,
            ))
    return candidates, rejections


def _find_lead_lag(active_id, crossing_idx, target_lane_id, t_c,
                   assignments, lane_map, tracks):
    """Nearest vehicles ahead/behind the active one in the target lane.

    Both must be assigned to the target lane at the crossing instant and
    cover the full event window.
    """
    lane = lane_map.lanes[target_lane_id]
    active = tracks[active_id]
    s_active = project_onto_polyline(
        lane.points, active.xy[crossing_idx:crossing_idx + 1])[1][0]

    lead_id, lag_id = None, None
    lead_gap, lag_gap = np.inf, np.inf
    for tid, other in tracks.items():
        if tid == active_id:
            continue
        j = int(np.argmin(np.abs(other.time - t_c)))
        if abs(other.time[j] - t_c) > TIME_MATCH_TOL:
            continue
        if assignments[tid][j] != target_lane_id:
            continue
        if _window_indices(other, t_c) is None:
            continue
        s_other = project_onto_polyline(lane.points, other.xy[j:j + 1])[1][0]
        gap = s_other - s_active
        if gap > 0 and gap < lead_gap:
            lead_id, lead_gap = tid, gap
        elif gap < 0 and -gap < lag_gap:
            lag_id, lag_gap = tid, -gap
    return lead_id, lag_id


def locate_boundaries(
    track: VehicleTrack, target_lane: Lane, crossing_time: float,
) -> tuple[float, float, bool]:
    """Locate maneuver start/end on the lateral-distance profile.

    With d(t) the distance to the target lane center over the event window,
    the start is the latest local maximum of d at or before the crossing and
    the end is the earliest local minimum at or after it. A profile that is
    monotone out to a window edge leaves that boundary at the edge, flagged.
    """
    window = _window_indices(track, crossing_time)
    if window is None:
        raise DataError(f"track {track.track_id}: window not covered at {crossing_time}")
    d = project_onto_polyline(target_lane.points, track.xy[window])[0]
    t = track.time[window]
    c = int(np.argmin(np.abs(t - crossing_time)))

    fallback = False
    i = c
    while i > 0 and d[i - 1] > d[i]:
        i -= 1
    if i == 0 and (c == 0 or d[0] > d[1]):
        fallback = True
    if i == c:                      # no rising approach; keep start < crossing
        i = max(c - 1, 0)
        fallback = True

    j = c
    while j < len(d) - 1 and d[j + 1] < d[j]:
        j += 1
    if j == len(d) - 1:
        fallback = True
    if j == c:
        j = min(c + 1, len(d) - 1)
        fallback = True

    return float(t[i]), float(t[j]), fallback


@dataclass
class _Window:
    """Aligned per-vehicle arrays over one event window."""

    time: np.ndarray
    xy: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    yaw_rate: np.ndarray


def _slice_window(track: VehicleTrack, idx: np.ndarray) -> _Window:
    return _Window(
        time=track.time[idx], xy=track.xy[idx], heading=track.heading[idx],
        speed=track.speed[idx], accel=track.accel[idx], yaw_rate=track.yaw_rate[idx],
    )


def compute_features(
    active: _Window, passive: _Window, target_lane: Lane,
    start_time: float, end_time: float, crossing_time: float,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Behavioral features for the active (10) and passive (4) vehicles.

    During-period statistics run over [start, end]; speed gain is the
    after-period mean speed minus the before-period mean speed.
    """
    t = active.time
    before = t < start_time - 1e-9
    during = (t >= start_time - 1e-9) & (t <= end_time + 1e-9)
    after = t > end_time + 1e-9
    if during.sum() < 2:
        raise DataError("during-LC period has fewer than 2 samples")
    if before.sum() < 1 or after.sum() < 1:
        raise DataError("before/after-LC period is empty")

    c = int(np.argmin(np.abs(t - crossing_time)))
    _, _, tangents = project_onto_polyline(target_lane.points, active.xy)
    vel_c = np.array([
        active.speed[c] * np.cos(active.heading[c]),
        active.speed[c] * np.sin(active.heading[c]),
    ])
    crossing_angle_deg = float(np.degrees(angle_between(tangents[c], vel_c)))

    # lateral speed relative to the target-lane tangent at each during sample
    head_d = active.heading[during]
    tang_d = tangents[during]
    tangent_angle = np.arctan2(tang_d[:, 1], tang_d[:, 0])
    lateral_speed = active.speed[during] * np.sin(wrap_angle(head_d - tangent_angle))
    lateral_accel = active.speed[during] * active.yaw_rate[during]

    head_ref = active.heading[during][0]
    speed_gain_active = float(np.mean(active.speed[after]) - np.mean(active.speed[before]))
    active_features = np.array([
        end_time - start_time,
        float(np.std(active.speed[during])),
        speed_gain_active,
        float(np.max(np.abs(wrap_angle(head_d - head_ref)))),
        crossing_angle_deg,
        float(np.std(active.yaw_rate[during])),
        float(np.max(np.abs(lateral_speed))),
        float(np.max(np.abs(lateral_accel))),
        float(np.std(active.accel[during])),
        float(np.max(active.accel[during])),
    ])

    speed_gain_passive = float(np.mean(passive.speed[after]) - np.mean(passive.speed[before]))
    passive_features = np.array([
        speed_gain_passive,
        float(np.max(passive.accel[during])),
        float(np.min(passive.accel[during])),
        float(np.std(passive.speed[during])),
    ])
    return active_features, passive_features, crossing_angle_deg


def compute_state(
    active: _Window, lead: _Window, passive: _Window,
    target_lane: Lane, start_time: float,
) -> np.ndarray:
    """Pre-maneuver state vector (11 variables over the before period).

    Time gaps divide along-lane spacing by the follower's speed, clamped at
    0.1 m/s; relative speeds are the other vehicle's minus the active one's.
    """
    before = active.time < start_time - 1e-9
    if before.sum() < 2:
        raise DataError("before-LC period has fewer than 2 samples")

    s_active = project_onto_polyline(target_lane.points, active.xy[before])[1]
    s_lead = project_onto_polyline(target_lane.points, lead.xy[before])[1]
    s_passive = project_onto_polyline(target_lane.points, passive.xy[before])[1]

    v_active = active.speed[before]
    v_lead = lead.speed[before]
    v_passive = passive.speed[before]

    lead_gap = (s_lead - s_active) / np.maximum(v_active, MIN_FOLLOWER_SPEED)
    lag_gap = (s_active - s_passive) / np.maximum(v_passive, MIN_FOLLOWER_SPEED)

    return np.array([
        float(np.mean(v_active)),
        float(np.std(v_active)),
        float(np.mean(active.accel[before])),
        float(np.mean(lead_gap)),
        float(np.mean(v_lead - v_active)),
        float(np.std(v_lead)),
        float(np.mean(lead.accel[before])),
        float(np.mean(lag_gap)),
        float(np.mean(v_passive - v_active)),
        float(np.std(v_passive)),
        float(np.mean(passive.accel[before])),
    ])


def extract_events(
    tracks: dict[str, VehicleTrack], lane_map: LaneMap,
) -> tuple[list[LaneChangeEvent], list[Rejection]]:
    """Run the full extraction pipeline over all tracks."""
    assignments = {tid: assign_lanes(tr, lane_map) for tid, tr in tracks.items()}
    candidates, rejections = detect_lane_changes(assignments, lane_map, tracks)

    events: list[LaneChangeEvent] = []
    for cand in candidates:
        active = tracks[cand.track_id]
        lane = lane_map.lanes[cand.to_lane]
        start_t, end_t, fallback = locate_boundaries(active, lane, cand.crossing_time)

        a_idx = _window_indices(active, cand.crossing_time)
        times = active.time[a_idx]
        lead_idx = _match_times(tracks[cand.lead_id], times)
        pas_idx = _match_times(tracks[cand.passive_id], times)
        if lead_idx is None or pas_idx is None:
            rejections.append(Rejection(cand.track_id, cand.crossing_time, "coverage"))
            continue
        a_w = _slice_window(active, a_idx)
        l_w = _slice_window(tracks[cand.lead_id], lead_idx)
        p_w = _slice_window(tracks[cand.passive_id], pas_idx)

        try:
            active_f, passive_f, angle = compute_features(
                a_w, p_w, lane, start_t, end_t, cand.crossing_time)
            state = compute_state(a_w, l_w, p_w, lane, start_t)
        except DataError as exc:
            reason = "short_during" if "during" in str(exc) else "short_before"
            rejections.append(Rejection(cand.track_id, cand.crossing_time, reason))
            log.debug("candidate %s@%s rejected: %s", cand.track_id, cand.crossing_time, exc)
            continue

        events.append(LaneChangeEvent(
            event_id=f"{cand.track_id}@{cand.crossing_time:.1f}",
            active_id=cand.track_id,
            lead_id=cand.lead_id,
            passive_id=cand.passive_id,
            crossing_time=cand.crossing_time,
            start_time=start_t,
            end_time=end_t,
            active_type=active.vtype,
            passive_type=tracks[cand.passive_id].vtype,
            active_features=active_f,
            passive_features=passive_f,
            state=state,
            lane_crossing_angle=angle,
            boundary_fallback=fallback,
        ))
    return events, rejections


# ---------------------------------------------------------------------------
# Event CSV format

EVENT_BASE_COLUMNS = [
    "event_id", "active_id", "lead_id", "passive_id",
    "crossing_time", "start_time", "end_time",
    "active_type", "passive_type", "lane_crossing_angle", "boundary_fallback",
]
EVENT_FEATURE_COLUMNS = (
    [f"a{i + 1}" for i in range(len(ACTIVE_FEATURE_NAMES))]
    + [f"p{i + 1}" for i in range(len(PASSIVE_FEATURE_NAMES))]
    + [f"s{i + 1}" for i in range(len(STATE_NAMES))]
)
EVENT_LABEL_COLUMNS = ["active_label", "passive_label", "outcome"]


def write_events_csv(path: str | Path, events: list[LaneChangeEvent],
                     labeled: bool = False) -> None:
    columns = EVENT_BASE_COLUMNS + EVENT_FEATURE_COLUMNS
    if labeled:
        columns = columns + EVENT_LABEL_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for ev in events:
            row = [
                ev.event_id, ev.active_id, ev.lead_id, ev.passive_id,
                repr(float(ev.crossing_time)), repr(float(ev.start_time)),
                repr(float(ev.end_time)), ev.active_type, ev.passive_type,
                repr(float(ev.lane_crossing_angle)), int(ev.boundary_fallback),
            ]
            row += [repr(float(v)) for v in ev.active_features]
            row += [repr(float(v)) for v in ev.passive_features]
            row += [repr(float(v)) for v in ev.state]
            if labeled:
                row += [ev.active_label or "", ev.passive_label or "", ev.outcome or ""]
            writer.writerow(row)


def read_events_csv(path: str | Path) -> list[LaneChangeEvent]:
    path = Path(path)
    events: list[LaneChangeEvent] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = set(EVENT_BASE_COLUMNS + EVENT_FEATURE_COLUMNS)
        have = set(reader.fieldnames or ())
        if not required <= have:
            missing = sorted(required - have)
            raise DataError(f"{path}: missing columns {missing}")
        labeled = set(EVENT_LABEL_COLUMNS) <= have
        for line_no, row in enumerate(reader, start=2):
            try:
                events.append(LaneChangeEvent(
                    event_id=row["event_id"],
                    active_id=row["active_id"],
                    lead_id=row["lead_id"],
                    passive_id=row["passive_id"],
                    crossing_time=float(row["crossing_time"]),
                    start_time=float(row["start_time"]),
                    end_time=float(row["end_time"]),
                    active_type=row["active_type"],
                    passive_type=row["passive_type"],
                    active_features=np.array(
                        [float(row[f"a{i + 1}"]) for i in range(10)]),
                    passive_features=np.array(
                        [float(row[f"p{i + 1}"]) for i in range(4)]),
                    state=np.array([float(row[f"s{i + 1}"]) for i in range(11)]),
                    lane_crossing_angle=float(row["lane_crossing_angle"]),
                    boundary_fallback=bool(int(row["boundary_fallback"])),
                    active_label=(row["active_label"] or None) if labeled else None,
                    passive_label=(row["passive_label"] or None) if labeled else None,
                    outcome=(row["outcome"] or None) if labeled else None,
                ))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{line_no}: bad event row ({exc})") from None
    return events


def write_rejections_csv(path: str | Path, rejections: list[Rejection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["track_id", "time", "reason"])
        for r in rejections:
            writer.writerow([r.track_id, repr(float(r.time)), r.reason])
