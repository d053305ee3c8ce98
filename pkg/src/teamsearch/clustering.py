"""Competency-weighted k-means with centroids anchored at robot poses."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .world import AgentSpec


def coverage_competency(specs: list[AgentSpec]) -> np.ndarray:
    """eta_j = SR_min / SR_j where SR_j = v_max_j * sense_range_j."""
    if not specs:
        raise ValueError("need at least one agent")
    sr = np.array([s.v_max * s.sense_range for s in specs], dtype=float)
    if np.any(sr <= 0):
        raise ValueError("sensing capacity must be positive for every agent")
    return sr.min() / sr


@dataclass
class ClusterPartition:
    points: np.ndarray  # (m, 2)
    labels: np.ndarray  # (m,) cluster index per waypoint
    centroids: np.ndarray  # (k, 2)
    anchored: np.ndarray  # (k,) bool
    cost: float
    history: list[float] = field(default_factory=list)
    # indices into ``history`` at which a relocation happened
    relocations: list[int] = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def _weighted_dists(points, centroids, eta):
    d = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
    return d * eta[None, :]


def _cost(points, labels, centroids, eta) -> float:
    if len(points) == 0:
        return 0.0
    d = np.linalg.norm(points - centroids[labels], axis=1)
    return float(np.sum(eta[labels] * d))


def partition_cost(partition: ClusterPartition, eta) -> float:
    """Sum over clusters of eta_j * ||w - mu_j|| for each member w."""
    return _cost(partition.points, partition.labels, partition.centroids, np.asarray(eta, dtype=float))


def _sum_dist(pts, c) -> float:
    return float(np.linalg.norm(pts - c, axis=1).sum())


def _move_centroid(pts: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Member mean if it lowers the summed distance, else one Weiszfeld step, else stay."""
    best, best_cost = current, _sum_dist(pts, current)
    mean = pts.mean(axis=0)
    d = np.maximum(np.linalg.norm(pts - current, axis=1), 1e-12)
    weisz = (pts / d[:, None]).sum(axis=0) / (1.0 / d).sum()
    for cand in (mean, weisz):
        c = _sum_dist(pts, cand)
        if c < best_cost:
            best, best_cost = cand, c
    return best


def _equal_skill_unanchor(poses, eta, anchored, radius):
    k = len(poses)
    for i in range(k):
        for j in range(i + 1, k):
            if not (anchored[i] and anchored[j]) or not np.isclose(eta[i], eta[j]):
                continue
            if np.linalg.norm(poses[i] - poses[j]) > radius:
                continue
            others = [h for h in range(k) if h not in (i, j)]
            si = sum(np.linalg.norm(poses[i] - poses[h]) for h in others)
            sj = sum(np.linalg.norm(poses[j] - poses[h]) for h in others)
            anchored[i if si > sj else j] = False


def heterogeneous_kmeans(points, agent_poses, eta, epsilon: float = 1e-6, max_loop: int = 100,
                         min_points: int = 3, adjacency_radius: float | None = None) -> ClusterPartition:
    """Assign waypoints to agents by eta-weighted distance to robot-anchored centroids.

    Centroids start at ``agent_poses`` and stay there unless unanchored by
    the equal-skill adjacency rule (two equal-eta agents within
    ``adjacency_radius``) or by the minimum-allocation rule (fewer than
    ``min_points`` members), which relocates a centroid to the waypoint
    with the largest weighted cost and resumes the loop. Each agent is
    relocated at most once. Ties in weighted distance go to the lower index.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("no waypoints to cluster")
    centroids = np.asarray(agent_poses, dtype=float).reshape(-1, 2).copy()
    eta = np.asarray(eta, dtype=float)
    k = len(centroids)
    if k == 0:
        raise ValueError("need at least one agent")
    if eta.shape != (k,):
        raise ValueError("eta must have one entry per agent")
    anchored = np.ones(k, dtype=bool)
    if adjacency_radius is not None and k > 1:
        _equal_skill_unanchor(centroids, eta, anchored, adjacency_radius)

    history: list[float] = []
    relocations: list[int] = []
    relocated = np.zeros(k, dtype=bool)
    iterations = 0

    def assign(c):
        return np.argmin(_weighted_dists(pts, c, eta), axis=1)

    while True:
        prev = 0.0
        for _ in range(max_loop):
            iterations += 1
            labels = assign(centroids)
            for j in np.flatnonzero(~anchored):
                mem = pts[labels == j]
                if len(mem):
                    centroids[j] = _move_centroid(mem, centroids[j])
            cost = _cost(pts, labels, centroids, eta)
            history.append(cost)
            if abs(cost - prev) < epsilon:
                break
            prev = cost
        labels = assign(centroids)
        history.append(_cost(pts, labels, centroids, eta))

        counts = np.bincount(labels, minlength=k)
        short = [j for j in range(k) if counts[j] < min_points and not relocated[j]]
        if not short or len(pts) <= k:
            break
        relocations.append(len(history))
        for j in short:
            contrib = eta[labels] * np.linalg.norm(pts - centroids[labels], axis=1)
            target = int(np.argmax(contrib))
            anchored[j] = False
            relocated[j] = True
            centroids[j] = pts[target]
            labels = assign(centroids)

    labels = assign(centroids)
    return ClusterPartition(pts, labels, centroids, anchored, _cost(pts, labels, centroids, eta),
                            history, relocations, iterations)


def write_partition_csv(path, partition: ClusterPartition, waypoint_ids=None, agent_ids=None) -> None:
    wids = range(len(partition.labels)) if waypoint_ids is None else waypoint_ids
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["waypoint_id", "agent_id"])
        for wid, lab in zip(wids, partition.labels.tolist()):
            wr.writerow([wid, lab if agent_ids is None else agent_ids[lab]])
