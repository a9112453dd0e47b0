"""Planar polyline geometry used for lane-center matching.

All geometry is 2-D; elevation is ignored throughout the package. Distances
to a lane center are measured against the segment chain (exact projection
onto each segment), not against the vertex set.
"""

from __future__ import annotations

import numpy as np


def cumulative_arclength(points: np.ndarray) -> np.ndarray:
    """Arc length from the first vertex to each vertex of a polyline."""
    seg = np.diff(points, axis=0)
    return np.concatenate(([0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))))


def project_onto_polyline(points: np.ndarray, xy: np.ndarray):
    """Project sample positions onto a polyline.

    Args:
        points: polyline vertices, shape (K, 2), K >= 2.
        xy: sample positions, shape (N, 2).

    Returns:
        (dist, arc, tangent): perpendicular distance to the chain (N,),
        arc-length coordinate of the foot point (N,), and the unit tangent
        of the segment carrying the foot point (N, 2).
    """
    points = np.asarray(points, dtype=float)
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    a = points[:-1]                      # (K-1, 2)
    d = points[1:] - a                   # (K-1, 2)
    seg_len2 = np.einsum("ij,ij->i", d, d)
    seg_len2 = np.maximum(seg_len2, 1e-300)   # guard duplicate vertices

    rel = xy[:, None, :] - a[None, :, :]              # (N, K-1, 2)
    t = np.einsum("nkj,kj->nk", rel, d) / seg_len2    # (N, K-1)
    np.clip(t, 0.0, 1.0, out=t)
    foot = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist2 = np.einsum("nkj,nkj->nk", xy[:, None, :] - foot, xy[:, None, :] - foot)

    k = np.argmin(dist2, axis=1)
    n_idx = np.arange(xy.shape[0])
    dist = np.sqrt(dist2[n_idx, k])

    cum = cumulative_arclength(points)
    seg_len = np.sqrt(seg_len2)
    arc = cum[k] + t[n_idx, k] * seg_len[k]
    tangent = d[k] / seg_len[k, None]
    return dist, arc, tangent


def distance_to_polyline(points: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Perpendicular distance of each sample to the polyline chain."""
    return project_onto_polyline(points, xy)[0]


def wrap_angle(angle):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def circular_mean(angles: np.ndarray) -> float:
    """Mean direction of a set of angles, safe near the +-pi wrap."""
    angles = np.asarray(angles, dtype=float)
    return float(np.arctan2(np.mean(np.sin(angles)), np.mean(np.cos(angles))))


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Unsigned angle in radians between two planar vectors, in [0, pi]."""
    nu = np.hypot(u[0], u[1])
    nv = np.hypot(v[0], v[1])
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = np.clip((u[0] * v[0] + u[1] * v[1]) / (nu * nv), -1.0, 1.0)
    return float(np.arccos(c))
