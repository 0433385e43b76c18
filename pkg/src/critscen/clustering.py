"""DBSCAN over criticality-metric vectors and failure-mode labelling."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

NOMINAL = "nominal"
OFF_ROAD = "off_road"
APRIORI_INFEASIBLE = "apriori_infeasible"
MIXED = "mixed"
CRITICAL_MODES = (OFF_ROAD, APRIORI_INFEASIBLE)

NOISE = -1


@dataclass(frozen=True)
class DbscanSettings:
    eps: float = 0.05
    min_pts: int = 4
    normalization: str = "minmax"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.normalization not in ("minmax", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass
class ClusterLabeling:
    labels: np.ndarray
    cluster_sizes: dict[int, int]
    mode_map: dict[int, str] = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)

    @property
    def noise_count(self) -> int:
        return int(np.count_nonzero(self.labels == NOISE))

    def clusters_with_mode(self, mode: str) -> list[int]:
        return [cid for cid, m in self.mode_map.items() if m == mode]


def minmax_normalize(points: np.ndarray) -> np.ndarray:
    """Scale each column to [0, 1]; constant columns map to 0."""
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span[span == 0] = 1.0
    return (points - lo) / span


def dbscan(points, s: DbscanSettings | None = None) -> ClusterLabeling:
    """Density-based clustering with deterministic scan-order semantics.

    A point is core when at least ``min_pts`` points (itself included) lie
    within Euclidean distance ``eps``. Clusters are started at unlabelled core
    points in input order and grown breadth-first; a border point keeps the
    first cluster that reaches it.
    """
    s = s or DbscanSettings()
    try:
        pts = np.asarray(points, dtype=float)
    except ValueError:
        raise ValueError("metric vectors must all have the same length") from None
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("need a non-empty list of equal-length metric vectors")
    if s.normalization == "minmax":
        pts = minmax_normalize(pts)

    # Identical points share neighbourhoods, so cluster the unique ones with
    # multiplicities; first occurrence keeps the scan order.
    uniq, first, inverse, counts = np.unique(
        pts, axis=0, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    order = np.argsort(first, kind="stable")
    uniq, counts = uniq[order], counts[order]
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    inverse = rank[inverse]

    tree = cKDTree(uniq)
    neighbours = tree.query_ball_point(uniq, r=s.eps, return_sorted=True)
    weight = np.array([counts[nb].sum() for nb in neighbours])
    core = weight >= s.min_pts

    ulabels = np.full(uniq.shape[0], NOISE, dtype=int)
    next_id = 0
    for i in range(uniq.shape[0]):
        if ulabels[i] != NOISE or not core[i]:
            continue
        ulabels[i] = next_id
        queue = deque([i])
        while queue:
            p = queue.popleft()
            nb = np.asarray(neighbours[p], dtype=int)
            fresh = nb[ulabels[nb] == NOISE]
            ulabels[fresh] = next_id
            queue.extend(fresh[core[fresh]].tolist())
        next_id += 1

    labels = ulabels[inverse]
    sizes = {cid: int(np.count_nonzero(labels == cid)) for cid in range(next_id)}
    return ClusterLabeling(labels, sizes)


def failure_mode(out, threshold: float = 3.5) -> str:
    """Classify one outcome: a-priori infeasible, off road (strictly above threshold), or nominal."""
    if out.status == 4:
        return APRIORI_INFEASIBLE
    if out.c_lat > threshold:
        return OFF_ROAD
    return NOMINAL


def label_modes(labels: ClusterLabeling, outcomes, threshold: float = 3.5,
                purity: float = 0.9) -> ClusterLabeling:
    """Attach the majority failure mode to every cluster; impure clusters become ``mixed``."""
    if len(outcomes) != labels.labels.size:
        raise ValueError("labels and outcomes are not aligned")
    modes = [failure_mode(o, threshold) for o in outcomes]
    mode_map = {}
    for cid in labels.cluster_sizes:
        members = Counter(modes[i] for i in np.flatnonzero(labels.labels == cid))
        mode, count = members.most_common(1)[0]
        mode_map[cid] = mode if count >= purity * sum(members.values()) else MIXED
    return ClusterLabeling(labels.labels, dict(labels.cluster_sizes), mode_map)


def cluster_report(labels: ClusterLabeling, metrics) -> dict:
    """JSON-ready per-cluster summary: size, mode and metric centroid."""
    metrics = np.asarray(metrics, dtype=float)
    clusters = []
    for cid, size in labels.cluster_sizes.items():
        members = metrics[labels.labels == cid]
        clusters.append({
            "id": cid,
            "size": size,
            "mode": labels.mode_map.get(cid, ""),
            "centroid": [float(v) for v in members.mean(axis=0)],
        })
    return {
        "n_points": int(labels.labels.size),
        "n_clusters": labels.n_clusters,
        "noise": labels.noise_count,
        "clusters": clusters,
    }
