"""Open-tour TSP from a fixed start: vectorised genetic algorithm plus an exhaustive oracle."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

BRUTE_FORCE_LIMIT = 10


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    generations: int = 500
    crossover_rate: float = 0.9
    mutation_rate: float = 0.05
    elite_count: int = 2
    seed: int = 0
    tournament_size: int = 3
    # generations are capped at gen_cap_per_point * n for small instances
    gen_cap_per_point: int = 50
    # stop once the best length has not improved for this many generations (None: never)
    stall_generations: int | None = 200

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be in [0, population_size)")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")


@dataclass
class Route:
    agent_id: int
    start: tuple[float, float]
    points: np.ndarray  # (n, 2) in visiting order
    order: tuple[int, ...]  # indices into the caller's point list
    length: float
    ids: tuple[int, ...] = field(default=())

    def __len__(self):
        return len(self.order)

    def reversed(self) -> "Route":
        pts = self.points[::-1].copy()
        return Route(self.agent_id, self.start, pts, self.order[::-1],
                     _open_length(np.asarray(self.start), pts), self.ids[::-1])


def _open_length(start: np.ndarray, ordered: np.ndarray) -> float:
    if len(ordered) == 0:
        return 0.0
    legs = np.diff(np.vstack([start, ordered]), axis=0)
    return float(np.hypot(legs[:, 0], legs[:, 1]).sum())


def route_length(route: Route) -> float:
    """Start-to-first leg plus consecutive Euclidean legs."""
    return _open_length(np.asarray(route.start, dtype=float), np.asarray(route.points, dtype=float).reshape(-1, 2))


def _make_route(start, pts, order, agent_id, ids) -> Route:
    order = tuple(int(i) for i in order)
    ordered = pts[list(order)] if order else np.zeros((0, 2))
    rid = tuple(ids[i] for i in order) if ids is not None else ()
    return Route(agent_id, (float(start[0]), float(start[1])), ordered, order,
                 _open_length(start, ordered), rid)


def _prepare(start, points):
    start = np.asarray(start, dtype=float).reshape(2)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("no points to route")
    return start, pts


def nearest_neighbour_order(start, pts) -> list[int]:
    left = list(range(len(pts)))
    cur = np.asarray(start, dtype=float)
    order = []
    while left:
        d = np.linalg.norm(pts[left] - cur, axis=1)
        nxt = left.pop(int(np.argmin(d)))
        order.append(nxt)
        cur = pts[nxt]
    return order


def _randomized_greedy(d0, d, rng, p_nearest: float = 0.7) -> np.ndarray:
    """Nearest-neighbour tour that takes the second-nearest city with probability 1 - p_nearest."""
    n = len(d0)
    left = np.ones(n, dtype=bool)
    row = d0
    out = np.empty(n, dtype=np.int64)
    for step in range(n):
        cand = np.flatnonzero(left)
        near = cand[np.argsort(row[cand], kind="stable")[:2]]
        pick = near[0] if len(near) == 1 or rng.random() < p_nearest else near[1]
        out[step] = pick
        left[pick] = False
        row = d[pick]
    return out


class _Evaluator:
    def __init__(self, start, pts):
        self.d0 = np.linalg.norm(pts - start, axis=1)
        self.d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)

    def __call__(self, pop: np.ndarray) -> np.ndarray:
        return self.d0[pop[:, 0]] + self.d[pop[:, :-1], pop[:, 1:]].sum(axis=1)


def _ordered_crossover(p1, p2, rng):
    c, n = p1.shape
    a = rng.integers(0, n, c)
    b = rng.integers(0, n, c)
    lo, hi = np.minimum(a, b), np.maximum(a, b) + 1
    cols = np.arange(n)
    seg = (cols >= lo[:, None]) & (cols < hi[:, None])
    in_seg = np.zeros((c, n), dtype=bool)
    np.put_along_axis(in_seg, p1, seg, axis=1)
    keep = ~np.take_along_axis(in_seg, p2, axis=1)
    child = np.empty_like(p1)
    child[seg] = p1[seg]
    child[~seg] = p2[keep]
    return child


def solve_tsp_ga(start, points, config: GaConfig = GaConfig(), agent_id: int = 0, ids=None,
                 on_generation=None) -> Route:
    """Best open tour found by a GA (tournament selection, OX crossover, swap mutation, elitism).

    The initial population contains the nearest-neighbour tour, so the
    result is never longer than it. ``on_generation(gen, population,
    lengths)`` is called once per generation, including the initial one.
    """
    start, pts = _prepare(start, points)
    n = len(pts)
    nn = nearest_neighbour_order(start, pts)
    if n <= 2:
        if n == 2:
            ev = _Evaluator(start, pts)
            cands = np.array([nn, nn[::-1]])
            nn = cands[int(np.argmin(ev(cands)))].tolist()
        return _make_route(start, pts, nn, agent_id, ids)

    rng = np.random.default_rng(config.seed)
    size = config.population_size
    pop = np.empty((size, n), dtype=np.int64)
    pop[0] = nn
    n_greedy = (size - 1) // 10
    evaluate = _Evaluator(start, pts)
    for k in range(1, 1 + n_greedy):
        pop[k] = _randomized_greedy(evaluate.d0, evaluate.d, rng)
    pop[1 + n_greedy:] = rng.permuted(np.tile(np.arange(n), (size - 1 - n_greedy, 1)), axis=1)
    lengths = evaluate(pop)
    if on_generation is not None:
        on_generation(0, pop, lengths)

    n_elite = config.elite_count
    n_child = size - n_elite
    generations = min(config.generations, config.gen_cap_per_point * n)
    best_len, last_gain = lengths.min(), 0
    for gen in range(1, generations + 1):
        if config.stall_generations is not None and gen - last_gain > config.stall_generations:
            break
        rank = np.argsort(lengths, kind="stable")
        elites = pop[rank[:n_elite]]
        cand = rng.integers(0, size, (2 * n_child, config.tournament_size))
        winners = cand[np.arange(2 * n_child), np.argmin(lengths[cand], axis=1)]
        p1, p2 = pop[winners[:n_child]], pop[winners[n_child:]]
        child = _ordered_crossover(p1, p2, rng)
        do_cx = rng.random(n_child) < config.crossover_rate
        child = np.where(do_cx[:, None], child, p1)
        # each position swaps with a random partner with probability mutation_rate
        mr, mi = np.nonzero(rng.random((n_child, n)) < config.mutation_rate)
        for r, i, j in zip(mr.tolist(), mi.tolist(), rng.integers(0, n, mr.size).tolist()):
            child[r, i], child[r, j] = child[r, j], child[r, i]
        pop = np.vstack([elites, child])
        # replace duplicate tours with random immigrants to keep the population diverse
        _, first = np.unique(pop, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(n_elite, size), first)
        if dup.size:
            pop[dup] = rng.permuted(np.tile(np.arange(n), (dup.size, 1)), axis=1)
        lengths = evaluate(pop)
        if lengths.min() < best_len - 1e-12:
            best_len, last_gain = lengths.min(), gen
        if on_generation is not None:
            on_generation(gen, pop, lengths)

    best = int(np.argmin(lengths))
    return _make_route(start, pts, pop[best].tolist(), agent_id, ids)


def brute_force_tsp(start, points, agent_id: int = 0, ids=None, tol: float = 1e-9) -> Route:
    """Exhaustive shortest open tour; among equal lengths the lexicographically first ordering wins."""
    start, pts = _prepare(start, points)
    n = len(pts)
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT} points, got {n}")
    evaluate = _Evaluator(start, pts)
    best_len, best_perm = np.inf, None
    perms = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(perms, 200_000)), dtype=np.int64)
        if chunk.size == 0:
            break
        lengths = evaluate(chunk)
        lo = lengths.min()
        if lo < best_len - tol:
            idx = int(np.flatnonzero(lengths <= lo + tol)[0])
            best_len, best_perm = float(lengths[idx]), chunk[idx].tolist()
    return _make_route(start, pts, best_perm, agent_id, ids)


def write_routes_csv(path, routes) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["agent_id", "seq", "waypoint_id", "x", "y"])
        for r in routes:
            for seq, (x, y) in enumerate(r.points.tolist()):
                wid = r.ids[seq] if r.ids else r.order[seq]
                wr.writerow([r.agent_id, seq, wid, repr(x), repr(y)])
