"""Trajectory and lane-map containers plus their CSV formats.

Trajectory CSV header:
    track_id,time,x,y,heading,speed,accel,yaw_rate,vtype
Lane map CSV header:
    lane_id,seq,x,y,left_id,right_id,exit_ids,interpolated

Tracks are sampled at 10 Hz; ``vtype`` is AV or HDV. ``exit_ids`` is a
semicolon-separated list (may be empty); ``interpolated`` marks virtual
intersection lanes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MapFormatError

SAMPLE_DT = 0.1
SAMPLE_DT_TOL = 1e-6
VEHICLE_TYPES = ("AV", "HDV")

TRAJECTORY_HEADER = ["track_id", "time", "x", "y", "heading", "speed", "accel", "yaw_rate", "vtype"]
MAP_HEADER = ["lane_id", "seq", "x", "y", "left_id", "right_id", "exit_ids", "interpolated"]


@dataclass
class VehicleTrack:
    """One vehicle's kinematic samples on a fixed 0.1 s grid."""

    track_id: str
    vtype: str
    time: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    yaw_rate: np.ndarray

    def validate(self) -> None:
        n = len(self.time)
        if n == 0:
            raise DataError(f"track {self.track_id}: no samples")
        if self.vtype not in VEHICLE_TYPES:
            raise DataError(f"track {self.track_id}: vtype {self.vtype!r} not in {VEHICLE_TYPES}")
        dt = np.diff(self.time)
        if np.any(dt <= 0):
            raise DataError(f"track {self.track_id}: time not strictly increasing")
        if np.any(np.abs(dt - SAMPLE_DT) > SAMPLE_DT_TOL):
            raise DataError(f"track {self.track_id}: samples not on a {SAMPLE_DT} s grid")
        if np.any(self.speed < 0):
            raise DataError(f"track {self.track_id}: negative speed")

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


@dataclass
class Lane:
    """A lane-center polyline with its declared adjacency."""

    lane_id: str
    points: np.ndarray
    left_id: str | None = None
    right_id: str | None = None
    exit_ids: tuple[str, ...] = ()
    interpolated: bool = False


@dataclass
class LaneMap:
    lanes: dict[str, Lane] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.lanes:
            raise MapFormatError("lane map is empty")
        for lane in self.lanes.values():
            if lane.points.ndim != 2 or lane.points.shape[0] < 2:
                raise MapFormatError(f"lane {lane.lane_id}: polyline needs >= 2 points")
        for lane in self.lanes.values():
            for attr, mirror in (("left_id", "right_id"), ("right_id", "left_id")):
                other_id = getattr(lane, attr)
                if other_id is None:
                    continue
                other = self.lanes.get(other_id)
                if other is None:
                    raise MapFormatError(f"lane {lane.lane_id}: unknown {attr} {other_id!r}")
                declared = getattr(other, mirror)
                if declared is not None and declared != lane.lane_id:
                    raise MapFormatError(
                        f"lanes {lane.lane_id}/{other_id}: asymmetric adjacency"
                    )

    def neighbor_ids(self, lane_id: str) -> tuple[str | None, str | None]:
        lane = self.lanes[lane_id]
        return lane.left_id, lane.right_id


def _parse_float(value: str, path: Path, line_no: int, column: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{path}:{line_no}: bad {column} value {value!r}") from None


def read_trajectories(path: str | Path) -> dict[str, VehicleTrack]:
    """Read a trajectory CSV into per-track arrays, validating each track."""
    path = Path(path)
    rows: dict[str, list[list[float]]] = {}
    vtypes: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != TRAJECTORY_HEADER:
            raise DataError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if any(row.get(c) is None for c in TRAJECTORY_HEADER):
                raise DataError(f"{path}:{line_no}: wrong column count")
            tid = row["track_id"]
            values = [_parse_float(row[c], path, line_no, c)
                      for c in ("time", "x", "y", "heading", "speed", "accel", "yaw_rate")]
            rows.setdefault(tid, []).append(values)
            vtype = row["vtype"].strip()
            if vtype not in VEHICLE_TYPES:
                raise DataError(f"{path}:{line_no}: vtype {vtype!r} not in {VEHICLE_TYPES}")
            prev = vtypes.setdefault(tid, vtype)
            if prev != vtype:
                raise DataError(f"{path}:{line_no}: track {tid} changes vtype")

    tracks: dict[str, VehicleTrack] = {}
    for tid, data in rows.items():
        arr = np.asarray(data, dtype=float)
        order = np.argsort(arr[:, 0], kind="stable")
        arr = arr[order]
        track = VehicleTrack(
            track_id=tid,
            vtype=vtypes[tid],
            time=arr[:, 0],
            x=arr[:, 1],
            y=arr[:, 2],
            heading=arr[:, 3],
            speed=arr[:, 4],
            accel=arr[:, 5],
            yaw_rate=arr[:, 6],
        )
        track.validate()
        tracks[tid] = track
    return tracks


def write_trajectories(path: str | Path, tracks: dict[str, VehicleTrack]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for track in tracks.values():
            for i in range(len(track.time)):
                writer.writerow([
                    track.track_id,
                    repr(float(track.time[i])),
                    repr(float(track.x[i])),
                    repr(float(track.y[i])),
                    repr(float(track.heading[i])),
                    repr(float(track.speed[i])),
                    repr(float(track.accel[i])),
                    repr(float(track.yaw_rate[i])),
                    track.vtype,
                ])


def read_lane_map(path: str | Path) -> LaneMap:
    """Read a lane-map CSV; rows for one lane must share its metadata."""
    path = Path(path)
    points: dict[str, list[tuple[int, float, float]]] = {}
    meta: dict[str, tuple] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != MAP_HEADER:
            raise DataError(f"{path}: expected header {','.join(MAP_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if any(row.get(c) is None for c in MAP_HEADER):
                raise DataError(f"{path}:{line_no}: wrong column count")
            lid = row["lane_id"]
            seq = int(_parse_float(row["seq"], path, line_no, "seq"))
            x = _parse_float(row["x"], path, line_no, "x")
            y = _parse_float(row["y"], path, line_no, "y")
            left = row["left_id"].strip() or None
            right = row["right_id"].strip() or None
            exits = tuple(e for e in row["exit_ids"].split(";") if e.strip())
            interp = row["interpolated"].strip() in ("1", "true", "True")
            this_meta = (left, right, exits, interp)
            prev = meta.setdefault(lid, this_meta)
            if prev != this_meta:
                raise DataError(f"{path}:{line_no}: lane {lid} metadata changes between rows")
            points.setdefault(lid, []).append((seq, x, y))

    lanes: dict[str, Lane] = {}
    for lid, pts in points.items():
        pts.sort(key=lambda p: p[0])
        arr = np.asarray([(x, y) for _, x, y in pts], dtype=float)
        left, right, exits, interp = meta[lid]
        lanes[lid] = Lane(lane_id=lid, points=arr, left_id=left, right_id=right,
                          exit_ids=exits, interpolated=interp)
    lane_map = LaneMap(lanes=lanes)
    lane_map.validate()
    return lane_map


def write_lane_map(path: str | Path, lane_map: LaneMap) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MAP_HEADER)
        for lane in lane_map.lanes.values():
            for seq, (x, y) in enumerate(lane.points):
                writer.writerow([
                    lane.lane_id, seq, repr(float(x)), repr(float(y)),
                    lane.left_id or "", lane.right_id or "",
                    ";".join(lane.exit_ids), int(lane.interpolated),
                ])
