"""Route realization (A*), timing, information gain and sequential team path selection."""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tsp import Route
from .world import AgentSpec, EntropyMap, StaticMap, cell_entropy, visible_from_cell

SQRT2 = math.sqrt(2.0)
DEFAULT_COST_WEIGHT = 0.1

_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


class UnreachableWaypoint(RuntimeError):
    def __init__(self, leg: int, src, dst, agent_id=None):
        self.leg, self.src, self.dst, self.agent_id = leg, src, dst, agent_id
        super().__init__(f"agent {agent_id}: leg {leg} from cell {src} to cell {dst} is unreachable")


def _free_flat(static_map: StaticMap) -> list[bool]:
    cached = getattr(static_map, "_free_list", None)
    if cached is None:
        cached = static_map.free.ravel().tolist()
        static_map._free_list = cached
    return cached


def astar(static_map: StaticMap, src: tuple[int, int], dst: tuple[int, int]) -> list[tuple[int, int]] | None:
    """Shortest 8-connected cell path with octile costs, no corner cutting. ``None`` if unreachable."""
    w, h = static_map.width, static_map.height
    free = _free_flat(static_map)
    sx, sy = src
    gx, gy = dst
    if not (static_map.in_bounds(sx, sy) and static_map.in_bounds(gx, gy)):
        return None
    s, g = sy * w + sx, gy * w + gx
    if not (free[s] and free[g]):
        return None
    if s == g:
        return [src]

    def hfun(ix, iy):
        dx, dy = abs(ix - gx), abs(iy - gy)
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    gcost = {s: 0.0}
    parent = {s: -1}
    counter = 0
    heap = [(hfun(sx, sy), 0.0, counter, s)]
    closed = set()
    while heap:
        _, _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        gc = gcost[cur]
        if cur == g:
            break
        closed.add(cur)
        cy, cx = divmod(cur, w)
        for dx, dy in _STEPS:
            nx, ny = cx + dx, cy + dy
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            nb = ny * w + nx
            if not free[nb] or nb in closed:
                continue
            if dx and dy:
                if not (free[cy * w + nx] and free[ny * w + cx]):
                    continue
                step = SQRT2
            else:
                step = 1.0
            ng = gc + step
            if ng < gcost.get(nb, math.inf) - 1e-12:
                gcost[nb] = ng
                parent[nb] = cur
                counter += 1
                # prefer deeper nodes on f ties
                heapq.heappush(heap, (ng + hfun(nx, ny), -ng, counter, nb))
    if g not in parent:
        return None
    path = []
    cur = g
    while cur != -1:
        cy, cx = divmod(cur, w)
        path.append((cx, cy))
        cur = parent[cur]
    return path[::-1]


def polyline_length(poly: np.ndarray) -> float:
    if len(poly) < 2:
        return 0.0
    seg = np.diff(poly, axis=0)
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


class LegCache:
    """Memo of A* legs keyed by unordered cell pair; a reversed shortest path is a shortest path."""

    def __init__(self, static_map: StaticMap):
        self.static_map = static_map
        self._legs: dict[tuple, list | None] = {}

    def leg(self, a, b):
        key = (a, b) if a <= b else (b, a)
        if key not in self._legs:
            self._legs[key] = astar(self.static_map, key[0], key[1])
        path = self._legs[key]
        if path is None:
            return None
        return path if key[0] == a else path[::-1]


def realize_path(route: Route, static_map: StaticMap, cache: LegCache | None = None) -> np.ndarray:
    """Collision-free polyline (metres) through the route stops, joined by A* legs."""
    cache = cache or LegCache(static_map)
    res = static_map.resolution
    start = np.asarray(route.start, dtype=float)
    cur = static_map.cell_of(*start)
    pts = [start]
    for leg, (x, y) in enumerate(np.asarray(route.points).reshape(-1, 2).tolist()):
        nxt = static_map.cell_of(x, y)
        cells = cache.leg(cur, nxt)
        if cells is None:
            raise UnreachableWaypoint(leg, cur, nxt, route.agent_id)
        pts.extend(((cx + 0.5) * res, (cy + 0.5) * res) for cx, cy in (cells if leg == 0 else cells[1:]))
        cur = nxt
    poly = np.asarray(pts, dtype=float).reshape(-1, 2)
    if len(poly) > 1:
        keep = np.ones(len(poly), dtype=bool)
        keep[1:] = np.any(np.diff(poly, axis=0) != 0, axis=1)
        poly = poly[keep]
    return poly


@dataclass
class TimedPath:
    t: np.ndarray  # (K,)
    xy: np.ndarray  # (K, 2)
    theta: np.ndarray  # (K,)

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1]) if len(self.t) else 0.0


def reparameterize(polyline, v_max: float, dt: float, theta0: float = 0.0) -> TimedPath:
    """Sample the polyline every ``v_max * dt`` metres of arc length, always ending at its end."""
    if v_max <= 0 or dt <= 0:
        raise ValueError("v_max and dt must be > 0")
    poly = np.asarray(polyline, dtype=float).reshape(-1, 2)
    seg = np.diff(poly, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    nz = seg_len > 0
    poly = np.vstack([poly[:1], poly[1:][nz]])
    seg, seg_len = seg[nz], seg_len[nz]
    total = float(seg_len.sum())
    if total == 0.0:
        return TimedPath(np.zeros(1), poly[:1].copy(), np.array([theta0]))
    step = v_max * dt
    s = np.arange(0.0, total, step)
    if total - s[-1] > 1e-9:
        s = np.append(s, total)
    else:
        s[-1] = total
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    xy = poly[idx] + seg[idx] * frac[:, None]
    theta = np.arctan2(seg[idx, 1], seg[idx, 0])
    return TimedPath(s / v_max, xy, theta)


@dataclass
class CandidatePath:
    agent_id: int
    direction: str  # "forward" | "reverse"
    timed: TimedPath
    viewpoints: np.ndarray  # indices into timed poses
    route: Route | None = None
    ig: float = 0.0
    cost: float = 0.0
    utility: float = 0.0
    cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def travel_time(self) -> float:
        return self.timed.duration


def viewpoint_indices(n_poses: int, spec: AgentSpec, dt: float) -> np.ndarray:
    """Every k-th pose so consecutive viewpoints sit about one sensing range apart, plus the last."""
    k = max(1, int(round(spec.sense_range / (spec.v_max * dt))))
    idx = np.arange(0, n_poses, k)
    if idx[-1] != n_poses - 1:
        idx = np.append(idx, n_poses - 1)
    return idx


def make_candidate(route: Route, direction: str, static_map: StaticMap, spec: AgentSpec, dt: float,
                   theta0: float = 0.0, cache: LegCache | None = None) -> CandidatePath:
    r = route if direction == "forward" else route.reversed()
    timed = reparameterize(realize_path(r, static_map, cache), spec.v_max, dt, theta0)
    return CandidatePath(route.agent_id, direction, timed, viewpoint_indices(len(timed), spec, dt), r)


def path_cells(path: CandidatePath, static_map: StaticMap, spec: AgentSpec) -> np.ndarray:
    """Union of cells visible from the path's sampled viewpoints."""
    r = static_map.range_cells(spec.sense_range)
    res = static_map.resolution
    xy = path.timed.xy[path.viewpoints]
    cells = np.floor(xy / res).astype(np.int64)
    parts = [visible_from_cell(static_map, int(cx), int(cy), r) for cx, cy in np.unique(cells, axis=0)]
    return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)


def info_gain(path: CandidatePath, emap: EntropyMap, spec: AgentSpec, static_map: StaticMap,
              virtual_observed=None, weights=None):
    """Entropy (bits) of the distinct cells seen from the path's viewpoints, minus ``virtual_observed``.

    Returns ``(ig, cells)`` where ``cells`` are the newly counted flat
    indices. ``weights`` optionally scales each cell's entropy.
    """
    cells = path_cells(path, static_map, spec)
    if virtual_observed is not None:
        mask = _as_mask(virtual_observed, emap.m.size)
        cells = cells[~mask[cells]]
    h = cell_entropy(emap.m.reshape(-1)[cells])
    if weights is not None:
        h = h * np.asarray(weights, dtype=float).reshape(-1)[cells]
    return float(np.sum(h)), cells


def _as_mask(observed, size) -> np.ndarray:
    if isinstance(observed, np.ndarray) and observed.dtype == bool:
        return observed.reshape(-1)
    mask = np.zeros(size, dtype=bool)
    idx = np.fromiter(observed, dtype=np.int64) if not isinstance(observed, np.ndarray) else observed
    mask[idx] = True
    return mask


def utility(path: CandidatePath, emap: EntropyMap, spec: AgentSpec, static_map: StaticMap,
            virtual_observed=None, cost_weight: float = DEFAULT_COST_WEIGHT, weights=None) -> float:
    """IG minus ``cost_weight`` times travel time. Fills ``path.ig``, ``path.cost``, ``path.utility``."""
    ig, cells = info_gain(path, emap, spec, static_map, virtual_observed, weights)
    path.ig = ig
    path.cost = path.travel_time
    path.utility = ig - cost_weight * path.cost
    path.cells = cells
    return path.utility


@dataclass
class TeamPlan:
    paths: dict[int, CandidatePath]
    order: list[int]
    rejected: dict[int, CandidatePath] = field(default_factory=dict, repr=False)

    @property
    def total_utility(self) -> float:
        return float(sum(p.utility for p in self.paths.values()))

    def to_records(self) -> list[dict]:
        out = []
        for aid in self.order:
            p = self.paths[aid]
            out.append({
                "agent_id": aid,
                "direction": p.direction,
                "poses": [[round(float(t), 9), round(float(x), 9), round(float(y), 9), round(float(th), 9)]
                          for t, (x, y), th in zip(p.timed.t, p.timed.xy, p.timed.theta)],
                "ig": p.ig,
                "cost": p.cost,
                "utility": p.utility,
            })
        return out

    def write_jsonl(self, fh) -> None:
        for rec in self.to_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def competency_order(agent_ids, eta) -> list[int]:
    """Most capable (smallest eta) first; ties by agent id."""
    return [a for _, a in sorted(zip(np.asarray(eta, dtype=float).tolist(), agent_ids))]


def select_team_paths(routes: dict[int, Route], emap: EntropyMap, static_map: StaticMap,
                      specs: dict[int, AgentSpec], order, dt: float,
                      cost_weight: float = DEFAULT_COST_WEIGHT, weights=None,
                      headings: dict[int, float] | None = None, cache: LegCache | None = None) -> TeamPlan:
    """Greedy sequential choice between each route's forward and reverse realization.

    Agents go in ``order``; each scores both directions against the cells
    already committed by earlier agents, keeps the better (forward on ties)
    and commits its cells.
    """
    cache = cache or LegCache(static_map)
    headings = headings or {}
    virtual = np.zeros(emap.m.size, dtype=bool)
    chosen, rejected = {}, {}
    for aid in order:
        route, spec = routes[aid], specs[aid]
        th = headings.get(aid, 0.0)
        fwd = make_candidate(route, "forward", static_map, spec, dt, th, cache)
        utility(fwd, emap, spec, static_map, virtual, cost_weight, weights)
        best, other = fwd, None
        if len(route) > 1:
            rev = make_candidate(route, "reverse", static_map, spec, dt, th, cache)
            utility(rev, emap, spec, static_map, virtual, cost_weight, weights)
            best, other = (rev, fwd) if rev.utility > fwd.utility else (fwd, rev)
        chosen[aid] = best
        if other is not None:
            rejected[aid] = other
        virtual[best.cells] = True
    return TeamPlan(chosen, list(order), rejected)
