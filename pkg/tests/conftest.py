"""Shared synthetic fixtures: straight-lane maps and lane-change tracks.

Tracks are sampled on the 0.1 s grid with analytically consistent channels
(position integrates speed; accel is the speed derivative). The lateral
profile is a linear ramp between two lane centers, which makes maneuver
boundaries land exactly on the ramp endpoints.
"""

from __future__ import annotations

import numpy as np
import pytest

from lcgames.tracks import Lane, LaneMap, VehicleTrack

LANE_GAP = 3.5


def straight_lane_map(x_min=-100.0, x_max=1000.0, spacing=50.0,
                      with_interpolated=True) -> LaneMap:
    """Lanes A (y=0), B (y=-3.5, right of A), and interpolated C (y=+3.5)."""
    xs = np.arange(x_min, x_max + spacing, spacing)

    def lane(lane_id, y, **kwargs):
        pts = np.column_stack([xs, np.full_like(xs, y)])
        return Lane(lane_id=lane_id, points=pts, **kwargs)

    lanes = {
        "A": lane("A", 0.0, right_id="B", left_id="C" if with_interpolated else None),
        "B": lane("B", -LANE_GAP, left_id="A"),
    }
    if with_interpolated:
        lanes["C"] = lane("C", LANE_GAP, right_id="A", interpolated=True)
    return LaneMap(lanes=lanes)


def make_lc_track(track_id, vtype, t0, x0, v0, ramp_start, ramp_end,
                  y_from=0.0, y_to=-LANE_GAP, duration=20.0, a0=0.0,
                  wiggle_amp=0.0, wiggle_omega=1.0) -> VehicleTrack:
    """Active lane-change track: linear lateral ramp, smooth speed profile.

    ``ramp_start``/``ramp_end`` are seconds relative to ``t0`` and should be
    multiples of 0.1 so the boundaries land on samples.
    """
    n = int(round(duration / 0.1)) + 1
    t_rel = np.arange(n) * 0.1
    time = t0 + t_rel

    vx = v0 + a0 * t_rel + wiggle_amp * np.sin(wiggle_omega * t_rel)
    accel = a0 + wiggle_amp * wiggle_omega * np.cos(wiggle_omega * t_rel)
    x = x0 + v0 * t_rel + 0.5 * a0 * t_rel ** 2 \
        + (wiggle_amp / wiggle_omega) * (1.0 - np.cos(wiggle_omega * t_rel))

    frac = np.clip((t_rel - ramp_start) / max(ramp_end - ramp_start, 1e-9), 0.0, 1.0)
    y = y_from + frac * (y_to - y_from)
    vy = np.where((t_rel >= ramp_start) & (t_rel < ramp_end),
                  (y_to - y_from) / max(ramp_end - ramp_start, 1e-9), 0.0)

    heading = np.arctan2(vy, vx)
    yaw_rate = np.gradient(heading, 0.1)
    return VehicleTrack(track_id=track_id, vtype=vtype, time=time, x=x, y=y,
                        heading=heading, speed=vx, accel=accel, yaw_rate=yaw_rate)


def make_straight_track(track_id, vtype, t0, x0, y, v0, duration=20.0, a0=0.0,
                        wiggle_amp=0.0, wiggle_omega=1.0) -> VehicleTrack:
    """Constant-lane track with an optional speed ramp and sinusoid."""
    n = int(round(duration / 0.1)) + 1
    t_rel = np.arange(n) * 0.1
    time = t0 + t_rel
    speed = v0 + a0 * t_rel + wiggle_amp * np.sin(wiggle_omega * t_rel)
    accel = a0 + wiggle_amp * wiggle_omega * np.cos(wiggle_omega * t_rel)
    x = x0 + v0 * t_rel + 0.5 * a0 * t_rel ** 2 \
        + (wiggle_amp / wiggle_omega) * (1.0 - np.cos(wiggle_omega * t_rel))
    zeros = np.zeros(n)
    return VehicleTrack(track_id=track_id, vtype=vtype, time=time, x=x,
                        y=np.full(n, float(y)), heading=zeros, speed=speed,
                        accel=accel, yaw_rate=zeros)


def lane_change_scene(index=0, pair=("HDV", "HDV"), v0=10.0, ramp_start=7.0,
                      ramp_duration=3.1, lead_gap=25.0, lag_gap=20.0,
                      a0=0.1, passive_a0=-0.1, lead_wiggle=0.2,
                      active_wiggle=0.15):
    """One complete lane-change event: active + lead + lag tracks.

    Events are staggered 30 s apart in time and 500 m in x so they never
    interact. Returns (tracks dict, expected crossing time).
    """
    t0 = 30.0 * index
    x0 = 500.0 * index
    active = make_lc_track(f"act{index}", pair[0], t0, x0, v0,
                           ramp_start, ramp_start + ramp_duration,
                           a0=a0, wiggle_amp=active_wiggle, wiggle_omega=0.9)
    lead = make_straight_track(f"lead{index}", "HDV", t0, x0 + lead_gap,
                               -LANE_GAP, v0, a0=0.0, wiggle_amp=lead_wiggle,
                               wiggle_omega=1.3)
    lag = make_straight_track(f"lag{index}", pair[1], t0, x0 - lag_gap,
                              -LANE_GAP, v0, a0=passive_a0, wiggle_amp=0.1,
                              wiggle_omega=0.7)
    crossing = t0 + ramp_start + ramp_duration / 2.0
    return {tr.track_id: tr for tr in (active, lead, lag)}, crossing


def fixture_dataset(n_events=36, seed=20240501):
    """Varied, clusterable multi-event data set plus rejection fixtures.

    Half the active vehicles change lanes briskly (short ramp, stronger
    accel), half smoothly; passive vehicles either brake (yield) or speed
    up. Returns (tracks, lane_map, expected crossing times).
    """
    rng = np.random.default_rng(seed)
    pairs = (["HDV", "HDV"], ["HDV", "AV"], ["AV", "HDV"])
    tracks: dict[str, VehicleTrack] = {}
    crossings = {}
    for i in range(n_events):
        aggressive = i % 2 == 0
        pair = pairs[i % 3]
        ramp = rng.uniform(2.1, 2.9) if aggressive else rng.uniform(4.1, 4.9)
        ramp = round(ramp, 1)
        scene, crossing = lane_change_scene(
            index=i, pair=tuple(pair),
            v0=rng.uniform(8.0, 14.0),
            ramp_start=round(rng.uniform(6.5, 7.5), 1),
            ramp_duration=ramp,
            lead_gap=rng.uniform(18.0, 35.0),
            lag_gap=rng.uniform(14.0, 30.0),
            a0=rng.uniform(0.1, 0.35) if aggressive else rng.uniform(-0.15, 0.1),
            passive_a0=rng.uniform(0.1, 0.3) if i % 4 < 2 else rng.uniform(-0.35, -0.15),
            lead_wiggle=rng.uniform(0.1, 0.4),
            active_wiggle=rng.uniform(0.2, 0.45) if aggressive else rng.uniform(0.05, 0.15),
        )
        tracks.update(scene)
        crossings[f"act{i}"] = crossing
    lane_map = straight_lane_map(x_max=500.0 * n_events + 500.0)
    return tracks, lane_map, crossings


@pytest.fixture(scope="session")
def small_dataset():
    return fixture_dataset(n_events=36)
