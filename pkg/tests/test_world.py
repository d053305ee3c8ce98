import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from teamsearch.world import (P_LO, AgentSpec, EntropyMap, Pose, StaticMap, apply_observation, cell_entropy,
                              decay_entropy, map_entropy, normalize_angle, visible_cells, visible_from_cell)
from oracles import binary_entropy, visible_oracle


def spec(r, v=1.0):
    return AgentSpec(0, v, 3.0, r)


def test_cell_entropy_examples():
    assert cell_entropy(0.5) == 1.0
    assert cell_entropy(0.0) == 0.0 and cell_entropy(1.0) == 0.0
    # frozen from a 40-digit evaluation of the binary entropy formula
    assert cell_entropy(0.9) == pytest.approx(0.4689955935892812, abs=1e-12)
    assert cell_entropy(0.9) == pytest.approx(binary_entropy(0.9), abs=1e-12)
    assert round(cell_entropy(0.9), 4) == 0.4690


@pytest.mark.parametrize("bad", [-0.1, 1.1, float("nan")])
def test_cell_entropy_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        cell_entropy(bad)


@given(st.floats(0.0, 1.0))
def test_cell_entropy_symmetric_and_bounded(m):
    h = cell_entropy(m)
    assert 0.0 <= h <= 1.0
    assert h == pytest.approx(cell_entropy(1.0 - m), abs=1e-12)


def test_map_entropy_examples():
    sm = StaticMap(np.zeros((10, 10), bool))
    assert map_entropy(EntropyMap.unknown(sm)) == 100.0
    known = EntropyMap(np.full((10, 10), P_LO))
    assert map_entropy(known) == pytest.approx(100 * 0.08079313589591118, abs=1e-9)
    assert map_entropy(EntropyMap(np.zeros((0, 0)))) == 0.0


def test_visible_open_map_full_square():
    sm = StaticMap(np.zeros((9, 9), bool))
    vis = visible_cells(Pose(4.5, 4.5), spec(2.0), sm)
    assert len(vis) == 25
    vis = visible_cells(Pose(0.5, 0.5), spec(2.0), sm)
    assert len(vis) == 9  # clipped to bounds


def test_visible_wall_blocks_columns_beyond():
    grid = np.zeros((9, 9), bool)
    grid[:, 5] = True
    sm = StaticMap(grid)
    vis = visible_cells(Pose(4.5, 4.5), spec(3.0), sm)
    cols = vis % 9
    assert cols.max() == 5  # the wall itself is seen, nothing behind it
    assert set(vis.tolist()) == visible_oracle(grid, 4, 4, 3)
    assert 4 * 9 + 5 in vis
    # diagonal neighbours of the wall cell are reached past its corner and stay hidden
    assert 3 * 9 + 5 not in vis and 5 * 9 + 5 not in vis


def test_visible_matches_ray_oracle_single_obstacle():
    grid = np.zeros((11, 11), bool)
    grid[5, 7] = True
    sm = StaticMap(grid)
    got = set(visible_from_cell(sm, 5, 5, 4).tolist())
    assert got == visible_oracle(grid, 5, 5, 4)
    assert 5 * 11 + 9 not in got  # shadowed cell straight behind the obstacle


@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_visible_matches_ray_oracle_random(seed, r):
    rng = np.random.default_rng(seed)
    grid = rng.random((12, 12)) < 0.25
    ox, oy = rng.integers(0, 12, 2).tolist()
    sm = StaticMap(grid)
    got = set(visible_from_cell(sm, ox, oy, r).tolist())
    assert got == visible_oracle(grid, ox, oy, r)
    h, w = grid.shape
    square = {y * w + x for y in range(max(0, oy - r), min(h, oy + r + 1))
              for x in range(max(0, ox - r), min(w, ox + r + 1))}
    assert got <= square


def test_apply_observation_examples():
    sm = StaticMap(np.zeros((10, 10), bool))
    em = EntropyMap.unknown(sm)
    before = map_entropy(em)
    vis = visible_cells(Pose(4.5, 4.5), spec(2.0), sm)
    apply_observation(em, vis, sm)
    assert before - map_entropy(em) == pytest.approx(25 * (1 - cell_entropy(P_LO)), abs=1e-9)
    snap = em.m.copy()
    apply_observation(em, [], sm)
    apply_observation(em, vis, sm)
    np.testing.assert_array_equal(em.m, snap)


@given(st.integers(0, 2**31 - 1))
def test_apply_observation_never_increases_entropy(seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((8, 8)) < 0.2
    sm = StaticMap(grid)
    em = EntropyMap(rng.uniform(0.0, 1.0, (8, 8)))
    before = map_entropy(em)
    apply_observation(em, rng.choice(64, 10, replace=False), sm)
    assert map_entropy(em) <= before + 1e-12


def test_observation_marks_obstacles_high():
    grid = np.zeros((3, 3), bool)
    grid[1, 1] = True
    sm = StaticMap(grid)
    em = EntropyMap.unknown(sm)
    apply_observation(em, [4, 0], sm)
    assert em.m[1, 1] == 0.99 and em.m[0, 0] == 0.01


def test_decay_examples():
    em = EntropyMap(np.array([[1.0, 0.0, 0.3]]))
    snap = em.m.copy()
    decay_entropy(em, 0.0)
    np.testing.assert_array_equal(em.m, snap)
    decay_entropy(em, 0.1)
    assert em.m[0, 0] == pytest.approx(0.95)
    for _ in range(500):
        decay_entropy(em, 0.1)
    np.testing.assert_allclose(em.m, 0.5, atol=1e-9)
    with pytest.raises(ValueError):
        decay_entropy(em, 1.0)


@given(st.floats(0.0, 1.0).filter(lambda m: abs(m - 0.5) > 1e-3), st.floats(0.01, 0.9))
def test_decay_increases_entropy_of_known_cells(m, rate):
    em = EntropyMap(np.array([[m]]))
    h0 = cell_entropy(m)
    decay_entropy(em, rate)
    assert cell_entropy(em.m[0, 0]) > h0


def test_static_map_io_roundtrip(tmp_path):
    sm = StaticMap.from_ascii("..#\n#..\n...\n")
    assert sm.cells[0, 2] and sm.cells[1, 0]
    assert StaticMap.from_ascii(sm.to_ascii()) == sm
    sm.save_pgm(tmp_path / "m.pgm")
    assert StaticMap.load(tmp_path / "m.pgm") == sm
    (tmp_path / "m.txt").write_text(sm.to_ascii())
    assert StaticMap.load(tmp_path / "m.txt") == sm


def test_static_map_queries():
    sm = StaticMap.from_rectangles(6, 4, [(2, 0, 2, 3)])
    assert sm.is_obstacle(2, 1) and sm.is_obstacle(-1, 0) and not sm.is_obstacle(0, 0)
    assert sm.cell_of(2.7, 1.2) == (2, 1)
    assert sm.center_of(1, 2) == (1.5, 2.5)
    assert not sm.point_free(2.5, 0.5) and sm.point_free(0.5, 0.5)
    reach = sm.reachable_from([(0, 0)])
    assert reach[:, :2].all() and not reach[:, 3:].any()


def test_normalize_angle_and_pose():
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert Pose(0, 0, 2 * math.pi + 0.5).theta == pytest.approx(0.5)


def test_agent_spec_validation():
    with pytest.raises(ValueError):
        AgentSpec(0, 0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        AgentSpec(0, 1.0, 1.0, -2.0)
