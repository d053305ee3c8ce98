"""Block-lattice extraction of coverage waypoints over the unknown part of the search map."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import EntropyMap, Pose, StaticMap, UNKNOWN, visible_from_cell

EPS_UNKNOWN = 0.2
THETA_BLOCK = 0.0

# E, N, W, S
_BLOCK_STEPS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass(frozen=True)
class UnitFov:
    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("unit FoV side must be >= 1 cell")

    @property
    def half(self) -> int:
        return (self.side - 1) // 2

    @classmethod
    def from_specs(cls, specs, static_map: StaticMap) -> "UnitFov":
        r = min(static_map.range_cells(s.sense_range) for s in specs)
        return cls(2 * r + 1)


@dataclass(frozen=True)
class Waypoint:
    id: int
    x: float
    y: float
    cell: tuple[int, int]
    block: tuple[int, int]

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


def _block_bounds(bx, by, side, shape):
    h, w = shape
    return bx * side, min((bx + 1) * side, w), by * side, min((by + 1) * side, h)


def _targets(emap: EntropyMap, static_map: StaticMap, eps_unknown: float) -> np.ndarray:
    return (np.abs(emap.m - UNKNOWN) < eps_unknown) & static_map.free


def _block_is_unknown(targets, static_map, x0, x1, y0, y1, theta_block) -> bool:
    n_free = int(static_map.free[y0:y1, x0:x1].sum())
    if n_free == 0:
        return False
    return targets[y0:y1, x0:x1].sum() / n_free > theta_block


def _sees_block(static_map, targets_flat, ix, iy, r, bounds) -> bool:
    x0, x1, y0, y1 = bounds
    vis = visible_from_cell(static_map, ix, iy, r)
    vy, vx = np.divmod(vis, static_map.width)
    inside = (vx >= x0) & (vx < x1) & (vy >= y0) & (vy < y1)
    return bool(np.any(targets_flat[vis[inside]]))


def _candidates(x0, x1, y0, y1, cx, cy, usable):
    ys, xs = np.nonzero(usable[y0:y1, x0:x1])
    xs, ys = xs + x0, ys + y0
    d2 = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2
    order = np.lexsort((xs, ys, d2))
    return zip(xs[order].tolist(), ys[order].tolist())


def _place(static_map, targets_flat, usable, bx, by, unit, shape):
    """Free cell nearest the block centre that sees an unknown cell of the block."""
    bounds = _block_bounds(bx, by, unit.side, shape)
    x0, x1, y0, y1 = bounds
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    r = unit.half
    for ix, iy in _candidates(x0, x1, y0, y1, cx, cy, usable):
        if _sees_block(static_map, targets_flat, ix, iy, r, bounds):
            return ix, iy
    # fall back to the surrounding ring of blocks
    h, w = shape
    ox0, oy0 = max(0, x0 - unit.side), max(0, y0 - unit.side)
    ox1, oy1 = min(w, x1 + unit.side), min(h, y1 + unit.side)
    ring = usable.copy()
    ring[y0:y1, x0:x1] = False
    for ix, iy in _candidates(ox0, ox1, oy0, oy1, cx, cy, ring):
        if _sees_block(static_map, targets_flat, ix, iy, r, bounds):
            return ix, iy
    return None


def extract_unknown_regions(emap: EntropyMap, static_map: StaticMap, unit: UnitFov, start: Pose,
                            reachable: np.ndarray | None = None, eps_unknown: float = EPS_UNKNOWN,
                            theta_block: float = THETA_BLOCK) -> list[Waypoint]:
    """One waypoint per unknown ``unit.side``-square block, in breadth-first block order from ``start``.

    A block is unknown when the fraction of its free cells with
    ``|m - 0.5| < eps_unknown`` exceeds ``theta_block``. Its waypoint is the
    free (and, if given, ``reachable``) cell closest to the block centre from
    which at least one of those cells is visible at the unit half-width.
    Blocks with no such vantage point are skipped.
    """
    if emap.shape != static_map.cells.shape:
        raise ValueError("entropy map and static map geometry differ")
    shape = static_map.cells.shape
    h, w = shape
    targets = _targets(emap, static_map, eps_unknown)
    if not targets.any():
        return []
    targets_flat = targets.ravel()
    usable = static_map.free if reachable is None else (static_map.free & reachable)
    nbx, nby = -(-w // unit.side), -(-h // unit.side)

    sx, sy = static_map.cell_of(start.x, start.y)
    seed = (min(max(sx, 0), w - 1) // unit.side, min(max(sy, 0), h - 1) // unit.side)
    seen = np.zeros((nby, nbx), dtype=bool)
    seen[seed[1], seed[0]] = True
    queue = deque([seed])
    out: list[Waypoint] = []
    res = static_map.resolution
    while queue:
        bx, by = queue.popleft()
        x0, x1, y0, y1 = _block_bounds(bx, by, unit.side, shape)
        if _block_is_unknown(targets, static_map, x0, x1, y0, y1, theta_block):
            cell = _place(static_map, targets_flat, usable, bx, by, unit, shape)
            if cell is not None:
                out.append(Waypoint(len(out), (cell[0] + 0.5) * res, (cell[1] + 0.5) * res, cell, (bx, by)))
        for dx, dy in _BLOCK_STEPS:
            nx, ny = bx + dx, by + dy
            if 0 <= nx < nbx and 0 <= ny < nby and not seen[ny, nx]:
                seen[ny, nx] = True
                queue.append((nx, ny))
    return out


def coverage_check(waypoints, emap: EntropyMap, static_map: StaticMap, unit: UnitFov,
                   mask: np.ndarray | None = None, eps_unknown: float = EPS_UNKNOWN) -> bool:
    """True iff every unknown free cell (restricted to ``mask``) lies in some waypoint's block."""
    targets = _targets(emap, static_map, eps_unknown)
    if mask is not None:
        targets &= mask
    covered = np.zeros_like(targets)
    for wp in waypoints:
        x0, x1, y0, y1 = _block_bounds(*wp.block, unit.side, targets.shape)
        covered[y0:y1, x0:x1] = True
    return not np.any(targets & ~covered)


def write_waypoints_csv(path, waypoints) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "x", "y"])
        for wp in waypoints:
            wr.writerow([wp.id, repr(wp.x), repr(wp.y)])


def read_waypoints_csv(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        return [(int(r["id"]), float(r["x"]), float(r["y"])) for r in csv.DictReader(fh)]
