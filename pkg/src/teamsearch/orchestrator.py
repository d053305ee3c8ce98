"""Mission loop: motion with local avoidance, sensing, belief updates, re-planning and metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import belief as bel
from .clustering import ClusterPartition, coverage_competency, heterogeneous_kmeans
from .pathsel import (CandidatePath, LegCache, TeamPlan, UnreachableWaypoint, competency_order,
                      select_team_paths)
from .tsp import GaConfig, Route, solve_tsp_ga
from .waypoints import UnitFov, Waypoint, extract_unknown_regions
from .world import (AgentSpec, EntropyMap, Pose, StaticMap, apply_observation, decay_entropy,
                    normalize_angle, visible_cells)

ACTIVE, FAILED, DONE = "active", "failed", "done"


@dataclass(frozen=True)
class MissionConfig:
    dt: float = 0.5
    p_detect: float = 0.9
    # fraction of non-failed agents that must be done to re-plan; None: any newly finished agent
    replan_done_fraction: float | None = None
    t_fail: float = 10.0
    failures: tuple[tuple[int, float], ...] = ()
    competency_enabled: bool = True
    seed: int = 0
    time_cap: float = 3600.0
    cost_weight: float = 0.1
    safety_radius: float = 0.3
    decay_rate: float = 0.0
    n_particles: int = 1000
    target_noise: float = 0.0
    model_changes: tuple = ()  # (time, ContextPrior | None) pairs
    kmeans_epsilon: float = 1e-6
    kmeans_max_loop: int = 100
    min_points: int = 3
    ga: GaConfig = GaConfig()
    rollout_horizon: float = 1.0
    waf_literal: bool = False
    log_moves: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.replan_done_fraction is not None and not 0 < self.replan_done_fraction <= 1:
            raise ValueError("replan_done_fraction must be in (0, 1]")
        if self.t_fail <= self.dt:
            raise ValueError("t_fail must exceed dt")
        if not 0 < self.p_detect <= 1:
            raise ValueError("p_detect must be in (0, 1]")


@dataclass
class AgentState:
    spec: AgentSpec
    pose: Pose
    status: str = ACTIVE
    plan: CandidatePath | None = None
    plan_index: int = 0
    last_progress_time: float = 0.0

    @property
    def id(self) -> int:
        return self.spec.id


@dataclass
class MissionMetrics:
    status: str
    mission_time: float
    target_found_time: float | None
    coverage: list[tuple[float, float]]
    swept_area: dict[int, int]
    waf: float
    replan_count: int
    plan_latencies: list[float] = field(default_factory=list)
    min_separation: float = math.inf

    @property
    def final_coverage(self) -> float:
        return self.coverage[-1][1] if self.coverage else 0.0


@dataclass
class PlanResult:
    waypoints: list[Waypoint]
    partition: ClusterPartition | None
    routes: dict[int, Route]
    plan: TeamPlan | None
    dropped: list[tuple[int, int]]
    latency: float = 0.0


@dataclass
class MissionResult:
    metrics: MissionMetrics
    events: list[dict]
    entropy_map: EntropyMap


def inject_failure(config: MissionConfig, agent_id: int, t: float, agent_ids=None) -> MissionConfig:
    """Return a copy of ``config`` with one more scheduled failure."""
    if t < 0:
        raise ValueError("failure time must be >= 0")
    if agent_ids is not None and agent_id not in set(agent_ids):
        raise KeyError(f"unknown agent id {agent_id}")
    return replace(config, failures=tuple(config.failures) + ((int(agent_id), float(t)),))


def compute_waf(areas, eta, literal: bool = False) -> float:
    """Spread of capacity-normalised swept areas; 0 when areas are proportional to capacity.

    Each agent's area is divided by its relative capacity ``1 / eta`` (or,
    with ``literal``, by ``eta``), scaled so the mean is 1, and the
    population standard deviation is returned.
    """
    a = np.asarray(areas, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if a.size == 0 or not np.any(a > 0):
        raise ValueError("WAF needs at least one agent with nonzero swept area")
    u = a / eta if literal else a * eta
    return float(np.std(u / u.mean()))


def check_replan(states: list[AgentState], config: MissionConfig, events: dict) -> tuple[bool, str | None]:
    """Decide whether to re-plan. ``events`` holds the sets/lists accumulated since the last plan:
    ``failed``, ``done`` and ``model``."""
    if events.get("failed"):
        return True, "failure"
    if events.get("model"):
        return True, "model"
    if events.get("done"):
        alive = [s for s in states if s.status != FAILED]
        n_done = sum(s.status == DONE for s in alive)
        if config.replan_done_fraction is None:
            return True, "done-fraction"
        if alive and n_done / len(alive) >= config.replan_done_fraction:
            return True, "done-fraction"
    return False, None


# ---- local avoidance ----------------------------------------------------------

_V_LEVELS = np.linspace(0.0, 1.0, 6)
_W_LEVELS = np.linspace(-1.0, 1.0, 11)


def _substep(dt: float) -> float:
    return dt / math.ceil(dt / 0.1 - 1e-9)


def _rollout(pose: Pose, v: np.ndarray, w: np.ndarray, h: float, steps: int):
    """Unicycle midpoint integration; returns x, y, theta of shape (C, steps)."""
    c = len(v)
    xs, ys, ths = np.empty((c, steps)), np.empty((c, steps)), np.empty((c, steps))
    x = np.full(c, pose.x)
    y = np.full(c, pose.y)
    th = np.full(c, pose.theta)
    for k in range(steps):
        mid = th + 0.5 * w * h
        x = x + v * np.cos(mid) * h
        y = y + v * np.sin(mid) * h
        th = th + w * h
        xs[:, k], ys[:, k], ths[:, k] = x, y, th
    return xs, ys, ths


def _blocked(xs, ys, static_map: StaticMap) -> np.ndarray:
    res = static_map.resolution
    ix = np.floor(xs / res).astype(np.int64)
    iy = np.floor(ys / res).astype(np.int64)
    oob = (ix < 0) | (iy < 0) | (ix >= static_map.width) | (iy >= static_map.height)
    hit = oob.copy()
    ok = ~oob
    hit[ok] = static_map.cells[iy[ok], ix[ok]]
    return hit.any(axis=1)


def local_avoidance(state: AgentState, neighbors, static_map: StaticMap, dt: float, goal,
                    safety_radius: float = 0.3, horizon: float = 1.0, return_pose: bool = False):
    """Dynamic-window style (v, omega) choice toward ``goal`` (x, y).

    Samples controls inside the kinematic limits, discards those whose
    rollout over ``max(horizon, dt)`` leaves free space or comes within
    ``safety_radius`` of a (static) neighbour, and keeps the one making the
    most progress toward ``goal`` after ``dt``, with a small heading term.
    With nothing admissible the agent stays put and turns toward the goal.
    """
    spec = state.spec
    pose = state.pose
    h = _substep(dt)
    n_dt = int(round(dt / h))
    steps = max(n_dt, int(math.ceil(max(horizon, dt) / h - 1e-9)))
    vv, ww = np.meshgrid(_V_LEVELS * spec.v_max, _W_LEVELS * spec.omega_max, indexing="ij")
    v, w = vv.ravel(), ww.ravel()
    xs, ys, ths = _rollout(pose, v, w, h, steps)

    bad = _blocked(xs, ys, static_map)
    nb = np.asarray(neighbors, dtype=float).reshape(-1, 2)
    if len(nb):
        reach = spec.v_max * steps * h + safety_radius
        near = nb[np.hypot(nb[:, 0] - pose.x, nb[:, 1] - pose.y) < reach]
        if len(near):
            d = np.hypot(xs[:, :, None] - near[:, 0], ys[:, :, None] - near[:, 1])
            bad |= (d < safety_radius).any(axis=(1, 2))
    bad[v == 0] &= False  # turning in place is always admissible

    gx, gy = goal
    ex, ey, eth = xs[:, n_dt - 1], ys[:, n_dt - 1], ths[:, n_dt - 1]
    d0 = math.hypot(gx - pose.x, gy - pose.y)
    d1 = np.hypot(gx - ex, gy - ey)
    herr = np.abs(np.angle(np.exp(1j * (np.arctan2(gy - ey, gx - ex) - eth))))
    score = (d0 - d1) - 0.1 * herr * (d1 > 1e-6)
    score[bad] = -np.inf
    best = int(np.argmax(score))
    if not np.isfinite(score[best]):
        best = int(np.argmax(np.where(v == 0, -herr, -np.inf)))
    out = (float(v[best]), float(w[best]))
    if return_pose:
        return out, Pose(float(ex[best]), float(ey[best]), float(eth[best]))
    return out


# ---- planning -----------------------------------------------------------------

def _empty_route(aid: int, pose: Pose) -> Route:
    return Route(aid, (pose.x, pose.y), np.zeros((0, 2)), (), 0.0, ())


def _drop_stop(route: Route, leg: int) -> Route:
    keep = [i for i in range(len(route)) if i != leg]
    pts = route.points[keep]
    order = tuple(route.order[i] for i in keep)
    ids = tuple(route.ids[i] for i in keep) if route.ids else ()
    start = np.asarray(route.start)
    legs = np.diff(np.vstack([start, pts]), axis=0) if len(pts) else np.zeros((0, 2))
    return Route(route.agent_id, route.start, pts, order, float(np.hypot(*legs.T).sum()), ids)


def plan_team(emap: EntropyMap, states: list[AgentState], config: MissionConfig, static_map: StaticMap,
              reachable: np.ndarray | None = None, plan_index: int = 0, weights=None,
              components: np.ndarray | None = None) -> PlanResult:
    """Waypoint extraction, weighted clustering, per-cluster GA-TSP and team path selection."""
    t0 = time.perf_counter()
    alive = [s for s in states if s.status != FAILED]
    if not alive:
        raise ValueError("no operational agents to plan for")
    specs = [s.spec for s in alive]
    unit = UnitFov.from_specs(specs, static_map)
    wps = extract_unknown_regions(emap, static_map, unit, alive[0].pose, reachable)
    if not wps:
        return PlanResult([], None, {}, None, [], time.perf_counter() - t0)

    eta = coverage_competency(specs) if config.competency_enabled else np.ones(len(specs))
    pts = np.array([wp.xy for wp in wps])
    poses = np.array([(s.pose.x, s.pose.y) for s in alive])
    partition = heterogeneous_kmeans(pts, poses, eta, config.kmeans_epsilon, config.kmeans_max_loop,
                                     config.min_points, adjacency_radius=unit.side * static_map.resolution)
    if components is None:
        components, _ = ndimage.label(static_map.free)
    dropped: list[tuple[int, int]] = []
    routes: dict[int, Route] = {}
    for j, s in enumerate(alive):
        members = partition.members(j)
        sx, sy = static_map.cell_of(s.pose.x, s.pose.y)
        comp = components[sy, sx]
        ok = [i for i in members.tolist() if components[wps[i].cell[1], wps[i].cell[0]] == comp]
        dropped.extend((s.id, wps[i].id) for i in members.tolist() if i not in set(ok))
        if not ok:
            routes[s.id] = _empty_route(s.id, s.pose)
            continue
        seed = int(np.random.SeedSequence([config.seed, plan_index, s.id]).generate_state(1)[0])
        routes[s.id] = solve_tsp_ga((s.pose.x, s.pose.y), pts[ok], replace(config.ga, seed=seed), s.id,
                                    ids=[wps[i].id for i in ok])

    spec_by_id = {s.id: s.spec for s in alive}
    order = competency_order([s.id for s in alive], eta)
    headings = {s.id: s.pose.theta for s in alive}
    cache = LegCache(static_map)
    while True:
        try:
            plan = select_team_paths(routes, emap, static_map, spec_by_id, order, config.dt,
                                     config.cost_weight, weights, headings, cache)
            break
        except UnreachableWaypoint as exc:
            r = routes[exc.agent_id]
            # the failing leg could come from either direction; drop the stop it leads to
            fwd_dst = [static_map.cell_of(x, y) for x, y in r.points.tolist()]
            leg = fwd_dst.index(exc.dst) if exc.dst in fwd_dst else min(exc.leg, len(r) - 1)
            dropped.append((exc.agent_id, r.ids[leg] if r.ids else leg))
            routes[exc.agent_id] = _drop_stop(r, leg)
    return PlanResult(wps, partition, routes, plan, dropped, time.perf_counter() - t0)


# ---- mission ------------------------------------------------------------------

def _r(x: float) -> float:
    return round(float(x), 6)


def run_mission(static_map: StaticMap, agents, target=None, config: MissionConfig = MissionConfig(),
                prior: bel.ContextPrior | None = None, frame_every: int = 0, frame_sink=None,
                plan_sink=None) -> MissionResult:
    """Simulate a search/coverage mission until the target is found, coverage completes or time runs out.

    ``agents`` is a sequence of ``(AgentSpec, Pose)``. ``target`` is an
    ``(x, y)`` position or ``None`` for pure coverage. ``frame_sink(step, t,
    emap)`` is called every ``frame_every`` steps; ``plan_sink(index, t,
    PlanResult)`` after every planning event.
    """
    states = [AgentState(spec, pose) for spec, pose in agents]
    if not states:
        raise ValueError("need at least one agent")
    ids = [s.id for s in states]
    if len(set(ids)) != len(ids):
        raise ValueError("agent ids must be unique")
    for s in states:
        if not static_map.point_free(s.pose.x, s.pose.y):
            raise ValueError(f"agent {s.id} starts outside free space")
    for i, a in enumerate(states):
        for b in states[i + 1:]:
            if math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y) < config.safety_radius:
                raise ValueError(f"agents {a.id} and {b.id} start closer than the safety radius")
    if target is not None and not static_map.point_free(*target):
        raise ValueError("target lies outside free space")
    for aid, _ in config.failures:
        if aid not in ids:
            raise KeyError(f"failure scheduled for unknown agent id {aid}")

    ss = np.random.SeedSequence(config.seed)
    det_rng, bel_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    emap = EntropyMap.unknown(static_map)
    starts = [static_map.cell_of(s.pose.x, s.pose.y) for s in states]
    reachable = static_map.reachable_from(starts)
    reach_flat = reachable.ravel()
    n_reach = int(reach_flat.sum())
    components, _ = ndimage.label(static_map.free)
    free_flat = static_map.free.ravel()
    known = np.zeros(static_map.n_cells, dtype=bool)
    n_known_reach = 0
    swept = {s.id: 0 for s in states}
    target_flat = None
    if target is not None:
        tx, ty = static_map.cell_of(*target)
        target_flat = ty * static_map.width + tx
    track_belief = target is not None or prior is not None
    particles = None
    if track_belief:
        particles = bel.init_particles(static_map, config.n_particles, prior, bel_rng)
    model = bel.SensingModel(config.p_detect)
    eta_true = coverage_competency([s.spec for s in states])
    pending_fail = sorted(config.failures, key=lambda f: (f[1], f[0]))
    pending_model = sorted(config.model_changes, key=lambda m: m[0])

    events: list[dict] = []
    coverage: list[tuple[float, float]] = []
    latencies: list[float] = []
    since_plan = {"failed": set(), "done": set(), "model": []}
    plan_count = 0
    replans = 0
    min_sep = math.inf

    def log(t, kind, payload):
        events.append({"t": _r(t), "type": kind, "payload": payload})

    def sense(t):
        nonlocal n_known_reach, particles
        fovs, found_by = [], None
        new_counts = {}
        for s in states:
            if s.status == FAILED:
                continue
            vis = visible_cells(s.pose, s.spec, static_map)
            fovs.append(vis)
            fresh = vis[~known[vis]]
            if fresh.size:
                known[fresh] = True
                n_fresh_free = int(free_flat[fresh].sum())
                swept[s.id] += n_fresh_free
                n_known_reach += int(reach_flat[fresh].sum())
                new_counts[s.id] = n_fresh_free
            if target_flat is not None and found_by is None and np.any(vis == target_flat):
                if det_rng.random() < config.p_detect:
                    found_by = s.id
            apply_observation(emap, vis, static_map)
        if new_counts:
            log(t, "observe", {str(k): v for k, v in new_counts.items()})
        coverage.append((_r(t), n_known_reach / n_reach if n_reach else 1.0))
        if track_belief and found_by is None and fovs:
            particles = bel.update(particles, static_map, fovs, [False] * len(fovs), model, bel_rng)
            particles = bel.predict(particles, static_map, config.target_noise, bel_rng)
        return found_by

    def plan(t, reason):
        nonlocal plan_count
        weights = None
        if prior is not None and particles is not None:
            weights = bel.belief_grid(particles, static_map) * float(free_flat.sum())
        result = plan_team(emap, states, config, static_map, reachable, plan_count, weights, components)
        latencies.append(result.latency)
        if plan_sink is not None:
            plan_sink(plan_count, t, result)
        plan_count += 1
        payload = {"reason": reason, "n_waypoints": len(result.waypoints),
                   "dropped": [list(d) for d in result.dropped], "agents": {}}
        for s in states:
            if s.status == FAILED:
                continue
            path = result.plan.paths.get(s.id) if result.plan else None
            s.plan, s.plan_index, s.last_progress_time = path, 0, t
            route = result.routes.get(s.id)
            if path is None or route is None or len(route) == 0:
                s.status = DONE
                payload["agents"][str(s.id)] = {"n": 0}
            else:
                s.status = ACTIVE
                payload["agents"][str(s.id)] = {"n": len(route), "dir": path.direction,
                                                "ig": _r(path.ig), "T": _r(path.travel_time)}
        log(t, "plan", payload)
        for k in since_plan:
            since_plan[k] = set() if k != "model" else []
        return result

    t = 0.0
    step = 0
    status = None
    found_time = None
    found_by = sense(t)
    if found_by is not None:
        status, found_time = "found", t
        log(t, "detect", {"agent": found_by})
    else:
        if plan(t, "initial").plan is None:
            status = "covered" if target is None else "exhausted"

    reach_tol = 0.3 * static_map.resolution
    while status is None:
        if frame_sink is not None and frame_every and step % frame_every == 0:
            frame_sink(step, t, emap)
        if t >= config.time_cap - 1e-9:
            status = "timeout"
            break
        # motion, sequential in agent order so each agent sees the others' latest poses
        moves = {}
        for s in states:
            if s.status != ACTIVE or s.plan is None:
                continue
            xy = s.plan.timed.xy
            last = len(xy) - 1
            others = [(o.pose.x, o.pose.y) for o in states if o is not s and o.status != FAILED]
            idx = s.plan_index
            while idx < last:
                nxt = xy[idx + 1]
                occupied = any(math.hypot(nxt[0] - ox, nxt[1] - oy) < config.safety_radius + reach_tol
                               for ox, oy in others)
                if occupied or math.hypot(nxt[0] - s.pose.x, nxt[1] - s.pose.y) < reach_tol:
                    idx += 1
                else:
                    break
            if idx != s.plan_index:
                s.plan_index, s.last_progress_time = idx, t
            if s.plan_index >= last:
                continue
            goal = xy[s.plan_index + 1]
            _, new_pose = local_avoidance(s, others, static_map, config.dt, goal, config.safety_radius,
                                          config.rollout_horizon, return_pose=True)
            s.pose = Pose(new_pose.x, new_pose.y, normalize_angle(new_pose.theta))
            if math.hypot(goal[0] - s.pose.x, goal[1] - s.pose.y) < reach_tol:
                s.plan_index += 1
                s.last_progress_time = t + config.dt
            moves[str(s.id)] = [_r(s.pose.x), _r(s.pose.y), _r(s.pose.theta)]
        step += 1
        t = round(step * config.dt, 9)
        if config.log_moves and moves:
            log(t, "move", moves)

        for s in states:
            if s.status == ACTIVE and s.plan is not None and s.plan_index >= len(s.plan.timed) - 1:
                s.status = DONE
                since_plan["done"].add(s.id)
                log(t, "done", {"agent": s.id})
        while pending_fail and pending_fail[0][1] <= t + 1e-9:
            aid, _ = pending_fail.pop(0)
            s = next(a for a in states if a.id == aid)
            if s.status != FAILED:
                s.status = FAILED
                since_plan["failed"].add(aid)
                log(t, "fail", {"agent": aid, "cause": "scheduled"})
        for s in states:
            if s.status == ACTIVE and t - s.last_progress_time > config.t_fail + 1e-9:
                s.status = FAILED
                since_plan["failed"].add(s.id)
                log(t, "fail", {"agent": s.id, "cause": "stalled"})
        while pending_model and pending_model[0][0] <= t + 1e-9:
            _, new_prior = pending_model.pop(0)
            if new_prior is not None:
                prior = new_prior
                particles = bel.init_particles(static_map, config.n_particles, prior, bel_rng)
                track_belief = True
            since_plan["model"].append(t)

        alive = [s for s in states if s.status != FAILED]
        for i, a in enumerate(alive):
            for b in alive[i + 1:]:
                min_sep = min(min_sep, math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y))

        found_by = sense(t)
        if found_by is not None:
            status, found_time = "found", t
            log(t, "detect", {"agent": found_by})
            break
        if n_known_reach >= n_reach and target is None:
            status = "covered"
            break
        if not alive:
            status = "exhausted"
            break
        decay_entropy(emap, config.decay_rate)

        trigger, reason = check_replan(states, config, since_plan)
        if trigger:
            replans += 1
            log(t, "replan", {"reason": reason})
            if plan(t, reason).plan is None:
                status = "covered" if target is None else "exhausted"

    if frame_sink is not None and frame_every:
        frame_sink(step, t, emap)
    areas = [swept[i] for i in ids]
    try:
        waf = compute_waf(areas, eta_true, config.waf_literal)
    except ValueError:
        waf = float("nan")
    metrics = MissionMetrics(status, t, found_time, coverage, swept, waf, replans, latencies, min_sep)
    return MissionResult(metrics, events, emap)
