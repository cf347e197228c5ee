"""Density clustering of candidate matches in descriptor space.

Candidates are compared with the bounded distance

    B(c1, c2) = 1 - lambda4 Se_c(f_c1, f_c2) - lambda5 Se_g(f_g1, f_g2)

which is 0 for identical descriptors and approaches 1 for unrelated
ones. DBSCAN runs on the precomputed pairwise distance matrix; the
neighborhood of a point includes the point itself, so with min_pts = 1
every point is core and the clustering reduces to connected components
of the eps-graph. Cluster ids are assigned in first-member order, which
makes the labeling independent of any internal iteration details.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .config import Config


@dataclass(frozen=True)
class Candidate:
    """One candidate match proposed for the pixel under decision.

    Attributes:
        x, y: integer position in the source view, inside its bounds.
        source_index: which source view it came from.
        confidence: similarity of the neighbor that proposed it.
        origin: which neighbor proposed it ('left', 'up', 'right',
            'bottom').
    """

    x: int
    y: int
    source_index: int
    confidence: float
    origin: str = ""


@dataclass
class ClusterSet:
    """Clusters as index lists into the candidate sequence, plus noise."""

    clusters: list[list[int]]
    noise: list[int]


@njit(cache=True)
def _pair_distance(fc1, fg1, fc2, fg2, l4, l5, inv2sc2, inv2sg2):
    dc = 0.0
    for i in range(3):
        t = fc1[i] - fc2[i]
        dc += t * t
    dg = 0.0
    for i in range(fg1.shape[0]):
        t = fg1[i] - fg2[i]
        dg += t * t
    return 1.0 - l4 * np.exp(-dc * inv2sc2) - l5 * np.exp(-dg * inv2sg2)


@njit(cache=True)
def _dbscan_core(dist, eps, min_pts):
    """Label points of a precomputed distance matrix; -1 marks noise.

    Core points have at least ``min_pts`` neighbors within ``eps``
    (themselves included). Clusters grow from unvisited core points in
    index order via breadth-first expansion; border points adopt the
    first cluster that reaches them.
    """
    n = dist.shape[0]
    labels = np.full(n, -1, dtype=np.int32)
    counts = np.zeros(n, dtype=np.int32)
    for i in range(n):
        c = 0
        for j in range(n):
            if dist[i, j] <= eps:
                c += 1
        counts[i] = c
    queue = np.empty(n, dtype=np.int32)
    next_label = 0
    for i in range(n):
        if labels[i] != -1 or counts[i] < min_pts:
            continue
        labels[i] = next_label
        head = 0
        tail = 0
        queue[tail] = i
        tail += 1
        while head < tail:
            p = queue[head]
            head += 1
            if counts[p] < min_pts:
                continue
            for j in range(n):
                if dist[p, j] <= eps and labels[j] == -1:
                    labels[j] = next_label
                    queue[tail] = j
                    tail += 1
        next_label += 1
    return labels


def descriptor_distance(fc1: np.ndarray, fg1: np.ndarray, fc2: np.ndarray,
                        fg2: np.ndarray, config: Config | None = None
                        ) -> float:
    """Distance between two (f_c, f_g) descriptor pairs, in [0, 1]."""
    cfg = config or Config()
    return float(_pair_distance(
        np.asarray(fc1, dtype=np.float64).ravel(),
        np.asarray(fg1, dtype=np.float64).ravel(),
        np.asarray(fc2, dtype=np.float64).ravel(),
        np.asarray(fg2, dtype=np.float64).ravel(),
        cfg.lambda4, cfg.lambda5,
        1.0 / (2.0 * cfg.sigma_c ** 2), 1.0 / (2.0 * cfg.sigma_g ** 2)))


def cluster_distance(c1: Candidate, c2: Candidate, fields: Sequence,
                     config: Config | None = None) -> float:
    """Distance between two candidates, looked up in their source fields.

    ``fields`` maps source_index to that view's DescriptorField.
    """
    f1 = fields[c1.source_index]
    f2 = fields[c2.source_index]
    return descriptor_distance(f1.fc[c1.y, c1.x], f1.fg[c1.y, c1.x],
                               f2.fc[c2.y, c2.x], f2.fg[c2.y, c2.x], config)


def dbscan(candidates: Sequence, eps: float, min_pts: int = 1,
           metric: Callable | None = None,
           dist_matrix: np.ndarray | None = None) -> ClusterSet:
    """Cluster candidates by density on a pairwise distance.

    Either ``metric(c_i, c_j) -> float`` or a precomputed symmetric
    ``dist_matrix`` must be supplied. Every input index appears in
    exactly one cluster or in ``noise`` (never both). With min_pts = 1
    noise is empty and clusters are the eps-graph connected components.
    """
    n = len(candidates)
    if n == 0:
        return ClusterSet(clusters=[], noise=[])
    if dist_matrix is None:
        if metric is None:
            raise ValueError("either metric or dist_matrix is required")
        dist_matrix = np.zeros((n, n), dtype=np.float64)
        for i in range(n):
            for j in range(i + 1, n):
                d = float(metric(candidates[i], candidates[j]))
                dist_matrix[i, j] = d
                dist_matrix[j, i] = d
    labels = _dbscan_core(np.ascontiguousarray(dist_matrix, dtype=np.float64),
                          float(eps), int(min_pts))
    k = int(labels.max()) + 1 if labels.size else 0
    clusters = [[] for _ in range(k)]
    noise = []
    for i, lab in enumerate(labels):
        if lab < 0:
            noise.append(i)
        else:
            clusters[lab].append(i)
    return ClusterSet(clusters=clusters, noise=noise)
