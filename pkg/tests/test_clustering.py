import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from teamsearch.clustering import (coverage_competency, heterogeneous_kmeans, partition_cost,
                                   write_partition_csv)
from teamsearch.world import AgentSpec
from oracles import weighted_cost


def specs(speeds, ranges):
    return [AgentSpec(i, v, 1.0, r) for i, (v, r) in enumerate(zip(speeds, ranges))]


def test_competency_examples():
    np.testing.assert_allclose(coverage_competency(specs([1, 1], [2, 2])), [1, 1])
    np.testing.assert_allclose(coverage_competency(specs([1, 2], [1, 1])), [1, 0.5])
    np.testing.assert_allclose(coverage_competency(specs([1, 1, 2], [1, 3, 2])), [1, 1 / 3, 0.25])
    with pytest.raises(ValueError):
        coverage_competency([])


def test_single_agent_takes_everything():
    pts = np.array([[1.0, 2.0], [5.0, 5.0], [9.0, 0.0]])
    p = heterogeneous_kmeans(pts, [[0.0, 0.0]], [1.0])
    assert (p.labels == 0).all()
    assert p.cost == pytest.approx(sum(np.hypot(*pt) for pt in pts))


def test_equidistant_tie_goes_to_lower_index():
    p = heterogeneous_kmeans([[5.0, 0.0]], [[0.0, 0.0], [10.0, 0.0]], [1.0, 1.0], min_points=0)
    assert p.labels.tolist() == [0]


def test_weighted_distance_example():
    # distances 10 and 18, eta (1, 0.5) -> weighted (10, 9)
    p = heterogeneous_kmeans([[10.0, 0.0]], [[0.0, 0.0], [28.0, 0.0]], [1.0, 0.5], min_points=0)
    assert p.labels.tolist() == [1]


def test_partition_cost_examples():
    p = heterogeneous_kmeans([[3.0, 0.0]], [[0.0, 0.0]], [1.0])
    assert partition_cost(p, [1.0]) == pytest.approx(3.0)
    p.points, p.labels = np.zeros((0, 2)), np.zeros(0, dtype=int)
    assert partition_cost(p, [1.0]) == 0.0


def _instance(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    m = int(rng.integers(1, 21))
    pts = rng.uniform(0, 30, (m, 2))
    poses = rng.uniform(0, 30, (k, 2))
    eta = rng.choice([1.0, 0.5, 0.25], k)
    return pts, poses, eta


@given(st.integers(0, 2**31 - 1))
def test_no_single_point_move_lowers_cost(seed):
    pts, poses, eta = _instance(seed)
    p = heterogeneous_kmeans(pts, poses, eta, adjacency_radius=5.0)
    base = weighted_cost(pts, p.centroids, p.labels, eta)
    assert base == pytest.approx(partition_cost(p, eta), abs=1e-9)
    assert p.cost == pytest.approx(base, abs=1e-9)
    for i, j in itertools.product(range(len(pts)), range(len(poses))):
        labels = p.labels.copy()
        labels[i] = j
        assert weighted_cost(pts, p.centroids, labels, eta) >= base - 1e-9


@given(st.integers(0, 2**31 - 1))
def test_cost_monotone_between_relocations(seed):
    pts, poses, eta = _instance(seed)
    p = heterogeneous_kmeans(pts, poses, eta, adjacency_radius=5.0)
    bounds = [0] + p.relocations + [len(p.history)]
    for a, b in zip(bounds, bounds[1:]):
        seg = p.history[a:b]
        assert all(y <= x + 1e-9 for x, y in zip(seg, seg[1:]))


@given(st.integers(0, 2**31 - 1))
def test_anchored_centroids_never_move(seed):
    pts, poses, eta = _instance(seed)
    p = heterogeneous_kmeans(pts, poses, eta)
    np.testing.assert_array_equal(p.centroids[p.anchored], poses[p.anchored])


def test_min_points_relocates_starved_agent():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 20, (30, 2))
    # agent 1 is far less capable and starts beside agent 0
    anchored = heterogeneous_kmeans(pts, [[10.0, 10.0], [10.5, 10.0]], [0.25, 1.0], min_points=0)
    assert anchored.counts()[1] < 3 and not anchored.relocations
    p = heterogeneous_kmeans(pts, [[10.0, 10.0], [10.5, 10.0]], [0.25, 1.0], min_points=3)
    # the starved agent's centroid moves once, onto the costliest waypoint, and keeps it
    assert not p.anchored[1] and len(p.relocations) == 1
    assert p.counts()[1] > anchored.counts()[1]
    assert any(np.array_equal(p.centroids[1], q) for q in pts)


def test_equal_skill_neighbours_unanchor_the_outer_one():
    poses = np.array([[0.0, 0.0], [1.0, 0.0], [20.0, 0.0]])
    pts = np.random.default_rng(1).uniform(0, 20, (30, 2))
    p = heterogeneous_kmeans(pts, poses, [1.0, 1.0, 0.5], adjacency_radius=5.0, min_points=0)
    assert p.anchored.tolist() == [False, True, True]


def test_smaller_eta_gets_at_least_as_many_symmetric_points():
    xs = np.linspace(-10, 10, 21)
    pts = np.array([(x, y) for x in xs for y in (-3.0, 0.0, 3.0)])
    p = heterogeneous_kmeans(pts, [[-5.0, 0.0], [5.0, 0.0]], [1.0, 0.5], min_points=0)
    c = p.counts()
    assert c[1] >= c[0]


def test_partition_csv(tmp_path):
    p = heterogeneous_kmeans([[1.0, 0.0], [9.0, 0.0]], [[0.0, 0.0], [10.0, 0.0]], [1.0, 1.0], min_points=0)
    write_partition_csv(tmp_path / "p.csv", p, [7, 8], [3, 4])
    assert (tmp_path / "p.csv").read_text().splitlines() == ["waypoint_id,agent_id", "7,3", "8,4"]
