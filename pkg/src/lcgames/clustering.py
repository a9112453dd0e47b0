"""Two-group behavior clustering and its MANOVA separation check.

Active and passive vehicles are each split into two k-means clusters on
standardized behavioral features, then the clusters are named cooperative or
defective from raw-feature means: the active cluster with the longer mean
maneuver duration is cooperative; the passive cluster with the smaller mean
speed gain is cooperative. Ties fall back to the smaller mean peak
acceleration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import DegenerateClusterError, NumericError
from .extraction import LaneChangeEvent
from .standardize import fit_standardization

COOPERATIVE = "cooperative"
DEFECTIVE = "defective"

KMEANS_TOL = 1e-8
KMEANS_MAX_ITER = 300


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray            # (k, d), standardized units
    assignment: np.ndarray           # (n,) cluster indices
    role: str                        # "active" or "passive"
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)
    label_map: dict[int, str] | None = None

    def labels(self) -> list[str]:
        if self.label_map is None:
            raise NumericError("cluster model is unlabeled")
        return [self.label_map[int(c)] for c in self.assignment]


@dataclass
class ManovaResult:
    wilks_lambda: float
    f_value: float
    p_value: float
    df: tuple[int, int]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centroids], axis=0)
        total = d2.sum()
        if total <= 0:
            centroids.append(points[rng.integers(n)])
            continue
        probs = d2 / total
        centroids.append(points[rng.choice(n, p=probs)])
    return np.asarray(centroids)


def _lloyd(points: np.ndarray, centroids: np.ndarray):
    """Lloyd iterations until centroid shift < 1e-8 or 300 iterations.

    Returns (centroids, assignment, inertia, n_iter, inertia_history) or
    None when a cluster empties out.
    """
    history = []
    assignment = None
    for it in range(1, KMEANS_MAX_ITER + 1):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assignment = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(points)), assignment].sum())
        history.append(inertia)
        new_centroids = np.empty_like(centroids)
        for c in range(centroids.shape[0]):
            mask = assignment == c
            if not mask.any():
                return None
            new_centroids[c] = points[mask].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < KMEANS_TOL:
            break
    return centroids, assignment, history[-1], it, history


def kmeans_fit(points: np.ndarray, k: int = 2, seed: int = 0,
               restarts: int = 10, role: str = "active") -> ClusterModel:
    """K-means with k-means++ seeding, keeping the best of ``restarts`` runs.

    A restart that converges with an empty cluster is discarded; if every
    restart degenerates, the input cannot support k clusters.
    """
    points = np.asarray(points, dtype=float)
    if len(np.unique(points, axis=0)) < k:
        raise DegenerateClusterError(
            f"need at least {k} distinct points, got {len(np.unique(points, axis=0))}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        init = _kmeans_pp_init(points, k, rng)
        out = _lloyd(points, init)
        if out is None:
            continue
        if best is None or out[2] < best[2]:
            best = out
    if best is None:
        raise DegenerateClusterError("all k-means restarts produced an empty cluster")
    centroids, assignment, inertia, n_iter, history = best
    return ClusterModel(k=k, centroids=centroids, assignment=assignment,
                        role=role, inertia=inertia, n_iter=n_iter,
                        inertia_history=history)


# Raw-feature indices driving the labeling rule, per role:
# (primary criterion, prefer-larger?, tie-break max-accel index)
_LABEL_RULES = {
    "active": (0, True, 9),     # longer mean duration => cooperative
    "passive": (0, False, 1),   # smaller mean speed gain => cooperative
}


def label_clusters(model: ClusterModel, raw_features: np.ndarray) -> ClusterModel:
    """Name the two clusters from raw-feature means (see module docstring)."""
    if model.k != 2:
        raise NumericError("labeling rule is defined for exactly two clusters")
    primary_idx, prefer_larger, tie_idx = _LABEL_RULES[model.role]
    raw_features = np.asarray(raw_features, dtype=float)
    means = np.array([
        raw_features[model.assignment == c].mean(axis=0) for c in (0, 1)
    ])
    primary = means[:, primary_idx]
    if primary[0] != primary[1]:
        coop = int(np.argmax(primary)) if prefer_larger else int(np.argmin(primary))
    else:
        tie = means[:, tie_idx]
        if tie[0] == tie[1]:
            raise NumericError(
                "clusters tie on both labeling criteria; manual labeling required")
        coop = int(np.argmin(tie))
    label_map = {coop: COOPERATIVE, 1 - coop: DEFECTIVE}
    return replace(model, label_map=label_map)


def outcome_of(active_label: str, passive_label: str) -> str:
    """Joint outcome code; first letter is the active vehicle's behavior."""
    first = "C" if active_label == COOPERATIVE else "D"
    second = "C" if passive_label == COOPERATIVE else "D"
    return first + second


def manova_two_group(points: np.ndarray, assignment: np.ndarray) -> ManovaResult:
    """Two-group MANOVA via Wilks' lambda with the exact two-group F transform.

    Lambda = det(W) / det(W + B) with W and B the within/between SSCP
    matrices; for two groups F = ((n - p - 1) / p) * (1 - Lambda) / Lambda
    is exact with df (p, n - p - 1).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    assignment = np.asarray(assignment)
    groups = np.unique(assignment)
    if len(groups) != 2:
        raise NumericError("MANOVA here handles exactly two groups")
    n, p = points.shape
    for g in groups:
        if (assignment == g).sum() <= p:
            raise NumericError("each group needs more points than features")

    grand = points.mean(axis=0)
    w = np.zeros((p, p))
    b = np.zeros((p, p))
    for g in groups:
        sub = points[assignment == g]
        mu = sub.mean(axis=0)
        dev = sub - mu
        w += dev.T @ dev
        dm = (mu - grand)[:, None]
        b += len(sub) * (dm @ dm.T)

    sign_w, logdet_w = np.linalg.slogdet(w)
    sign_t, logdet_t = np.linalg.slogdet(w + b)
    if sign_w <= 0 or sign_t <= 0:
        raise NumericError("singular within-group SSCP; consider removing features")
    lam = float(np.exp(logdet_w - logdet_t))
    df1, df2 = p, n - p - 1
    f_value = (df2 / df1) * (1.0 - lam) / lam
    p_value = float(stats.f.sf(f_value, df1, df2))
    return ManovaResult(wilks_lambda=lam, f_value=float(f_value),
                        p_value=p_value, df=(df1, df2))


def cluster_events(events: list[LaneChangeEvent], seed: int = 0,
                   restarts: int = 10) -> tuple[list[LaneChangeEvent], dict]:
    """Cluster both roles, label every event, and build the report payload."""
    active_raw = np.array([ev.active_features for ev in events])
    passive_raw = np.array([ev.passive_features for ev in events])

    report: dict = {}
    labels: dict[str, list[str]] = {}
    for role, raw in (("active", active_raw), ("passive", passive_raw)):
        z = fit_standardization(raw).apply(raw)
        model = kmeans_fit(z, k=2, seed=seed, restarts=restarts, role=role)
        model = label_clusters(model, raw)
        manova = manova_two_group(z, model.assignment)
        labels[role] = model.labels()
        report[role] = {
            "centroids": model.centroids.tolist(),
            "label_map": {str(k): v for k, v in sorted(model.label_map.items())},
            "cluster_feature_means": {
                str(c): raw[model.assignment == c].mean(axis=0).tolist()
                for c in (0, 1)
            },
            "cluster_sizes": {
                str(c): int((model.assignment == c).sum()) for c in (0, 1)
            },
            "inertia": model.inertia,
            "manova": {
                "wilks_lambda": manova.wilks_lambda,
                "f_value": manova.f_value,
                "p_value": manova.p_value,
                "df": list(manova.df),
            },
        }

    labeled = []
    for i, ev in enumerate(events):
        a, p = labels["active"][i], labels["passive"][i]
        labeled.append(replace(ev, active_label=a, passive_label=p,
                               outcome=outcome_of(a, p)))
    return labeled, report
