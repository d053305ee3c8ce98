"""Scenario files: an INI-style description of map, agents, target, prior and mission overrides.

Example::

    [scenario]
    id = warehouse
    seed = 0

    [map]
    source = generate          # or a path to an ASCII ('.'/'#') or PGM map
    width = 40
    height = 40
    resolution = 1.0
    obstacles = 8,8,14,12; 25,5,28,20   # inclusive cell rectangles x0,y0,x1,y1

    [agent.0]
    v_max = 1.0
    omega_max = 3.0
    sense_range = 2.0
    start = 1.5 1.5 0.0        # x y theta, or "random"

    [target]
    position = 30.5 30.5       # or "none" for pure coverage

    [prior.0]
    pi = 1.0
    mu = 30 30
    sigma = 9 0 0 9

    [mission]
    dt = 0.5
    p_detect = 0.9
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .belief import ContextPrior, GaussianComponent
from .orchestrator import MissionConfig
from .world import AgentSpec, Pose, StaticMap

# mission keys accepted in scenario files and their parsers
_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _opt_float(text: str):
    return None if text.strip().lower() == "none" else float(text)


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


MISSION_KEYS = {
    "dt": float,
    "p_detect": float,
    "replan_done_fraction": _opt_float,
    "t_fail": float,
    "time_cap": float,
    "cost_weight": float,
    "safety_radius": float,
    "decay_rate": float,
    "n_particles": int,
    "target_noise": float,
    "competency_enabled": _bool,
    "min_points": int,
    "waf_literal": _bool,
}


class ScenarioError(ValueError):
    """Invalid scenario text; the message names the section, key and line where possible."""


@dataclass(frozen=True)
class AgentEntry:
    spec: AgentSpec
    start: Pose | None  # None: drawn uniformly over free cells per trial


@dataclass
class Scenario:
    id: str
    agents: list[AgentEntry]
    seed: int = 0
    map_source: str = "generate"
    width: int = 40
    height: int = 40
    resolution: float = 1.0
    obstacles: tuple[tuple[int, int, int, int], ...] = ()
    target: tuple[float, float] | None = None
    prior: ContextPrior | None = None
    mission: dict[str, str] = field(default_factory=dict)
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def load_map(self) -> StaticMap:
        if self.map_source == "generate":
            return StaticMap.from_rectangles(self.width, self.height, self.obstacles, self.resolution)
        path = Path(self.map_source)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return StaticMap.load(path, self.resolution)

    def mission_config(self, seed: int, **overrides) -> MissionConfig:
        kw = {k: MISSION_KEYS[k](v) for k, v in self.mission.items()}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return MissionConfig(seed=seed, **kw)

    def instantiate(self, seed: int, static_map: StaticMap | None = None):
        """Agents as ``(AgentSpec, Pose)`` with random starts drawn from ``seed``."""
        static_map = static_map or self.load_map()
        validate(self, static_map)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        taken = {static_map.cell_of(a.start.x, a.start.y) for a in self.agents if a.start is not None}
        free = [int(i) for i in np.flatnonzero(static_map.free.ravel())
                if (int(i) % static_map.width, int(i) // static_map.width) not in taken]
        n_random = sum(a.start is None for a in self.agents)
        if n_random > len(free):
            raise ScenarioError(f"map has {len(free)} free cells, too few for {n_random} random starts")
        picks = iter(rng.choice(free, n_random, replace=False).tolist()) if n_random else iter(())
        out = []
        res = static_map.resolution
        for a in self.agents:
            if a.start is None:
                c = next(picks)
                pose = Pose((c % static_map.width + 0.5) * res, (c // static_map.width + 0.5) * res,
                            float(rng.uniform(-np.pi, np.pi)))
            else:
                pose = a.start
            out.append((a.spec, pose))
        return out


def validate(scenario: Scenario, static_map: StaticMap) -> None:
    if not scenario.agents:
        raise ScenarioError("scenario has no agents")
    ids = [a.spec.id for a in scenario.agents]
    if len(set(ids)) != len(ids):
        raise ScenarioError("agent ids must be unique")
    for a in scenario.agents:
        if a.start is not None and not static_map.point_free(a.start.x, a.start.y):
            raise ScenarioError(f"[agent.{a.spec.id}] start ({a.start.x}, {a.start.y}) is not in free space")
    if scenario.target is not None and not static_map.point_free(*scenario.target):
        raise ScenarioError(f"[target] position {scenario.target} is not in free space")


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    in_sec = False
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            in_sec = s == f"[{section}]"
            if in_sec and key is None:
                return no
        elif in_sec and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return no
    return None


def _floats(text: str, n: int | None = None) -> list[float]:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _rects(text: str):
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        vals = [int(v) for v in part.split(",")]
        if len(vals) != 4:
            raise ValueError(f"rectangle {part!r} needs x0,y0,x1,y1")
        out.append(tuple(vals))
    return tuple(out)


def parse(text: str, base_dir=None) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc

    def get(section, key, conv, default=dataclasses.MISSING):
        if not cp.has_option(section, key):
            if default is dataclasses.MISSING:
                raise ScenarioError(f"[{section}] missing key {key!r} (line {_line_of(text, section)})")
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"[{section}] {key} (line {_line_of(text, section, key)}): {exc}") from exc

    if not cp.has_section("scenario"):
        raise ScenarioError("missing [scenario] section")
    kw = {"id": get("scenario", "id", str), "seed": get("scenario", "seed", int, 0)}
    if cp.has_section("map"):
        kw["map_source"] = get("map", "source", str.strip, "generate")
        kw["width"] = get("map", "width", int, 40)
        kw["height"] = get("map", "height", int, 40)
        kw["resolution"] = get("map", "resolution", float, 1.0)
        kw["obstacles"] = get("map", "obstacles", _rects, ())

    agents = []
    for sec in cp.sections():
        m = re.fullmatch(r"agent\.(\d+)", sec)
        if not m:
            continue
        aid = int(m.group(1))

        def start(raw):
            if raw.strip().lower() == "random":
                return None
            return Pose(*_floats(raw, 3))
        try:
            spec = AgentSpec(aid, get(sec, "v_max", float), get(sec, "omega_max", float, 3.0),
                             get(sec, "sense_range", float))
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(f"[{sec}] (line {_line_of(text, sec)}): {exc}") from exc
        agents.append(AgentEntry(spec, get(sec, "start", start, None)))
    kw["agents"] = agents

    if cp.has_section("target"):
        kw["target"] = get("target", "position",
                           lambda r: None if r.strip().lower() == "none" else tuple(_floats(r, 2)), None)
    comps = []
    for sec in sorted((s for s in cp.sections() if re.fullmatch(r"prior\.\d+", s)),
                      key=lambda s: int(s.split(".")[1])):
        sig = get(sec, "sigma", lambda r: _floats(r, 4))
        comps.append(GaussianComponent(get(sec, "pi", float), tuple(get(sec, "mu", lambda r: _floats(r, 2))),
                                       ((sig[0], sig[1]), (sig[2], sig[3]))))
    if comps:
        try:
            kw["prior"] = ContextPrior(tuple(comps))
        except ValueError as exc:
            raise ScenarioError(f"[prior.*]: {exc}") from exc
    if cp.has_section("mission"):
        mission = {}
        for key, raw in cp.items("mission"):
            if key not in MISSION_KEYS:
                raise ScenarioError(f"[mission] unknown key {key!r} (line {_line_of(text, 'mission', key)})")
            get("mission", key, MISSION_KEYS[key])
            mission[key] = raw.strip()
        kw["mission"] = mission
    return Scenario(base_dir=Path(base_dir) if base_dir is not None else None, **kw)


def load(path) -> Scenario:
    path = Path(path)
    return parse(path.read_text(), path.parent)


def serialize(s: Scenario) -> str:
    lines = ["[scenario]", f"id = {s.id}", f"seed = {s.seed}", "", "[map]", f"source = {s.map_source}",
             f"width = {s.width}", f"height = {s.height}", f"resolution = {s.resolution!r}"]
    if s.obstacles:
        lines.append("obstacles = " + "; ".join(",".join(map(str, r)) for r in s.obstacles))
    for a in s.agents:
        sp = a.spec
        start = "random" if a.start is None else f"{a.start.x!r} {a.start.y!r} {a.start.theta!r}"
        lines += ["", f"[agent.{sp.id}]", f"v_max = {sp.v_max!r}", f"omega_max = {sp.omega_max!r}",
                  f"sense_range = {sp.sense_range!r}", f"start = {start}"]
    target = "none" if s.target is None else f"{s.target[0]!r} {s.target[1]!r}"
    lines += ["", "[target]", f"position = {target}"]
    if s.prior is not None:
        for i, c in enumerate(s.prior.components):
            sig = " ".join(repr(v) for row in c.sigma for v in row)
            lines += ["", f"[prior.{i}]", f"pi = {c.pi!r}", f"mu = {c.mu[0]!r} {c.mu[1]!r}", f"sigma = {sig}"]
    if s.mission:
        lines += ["", "[mission]"] + [f"{k} = {v}" for k, v in s.mission.items()]
    return "\n".join(lines) + "\n"


def random_agents(n: int, rng, speeds=(1.0, 2.0), ranges=(2.0, 4.0), omega_max: float = 3.0) -> list[AgentEntry]:
    """``n`` agents with speed and range drawn uniformly from the given sets and random starts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [AgentEntry(AgentSpec(i, float(rng.choice(speeds)), omega_max, float(rng.choice(ranges))), None)
            for i in range(n)]


def scaled(s: Scenario, size: int) -> Scenario:
    """Copy of a generated-map scenario resized to ``size`` x ``size`` with obstacles scaled along."""
    if s.map_source != "generate":
        raise ValueError("only generated maps can be rescaled")
    fx, fy = size / s.width, size / s.height
    rects = tuple((int(x0 * fx), int(y0 * fy), int((x1 + 1) * fx) - 1, int((y1 + 1) * fy) - 1)
                  for x0, y0, x1, y1 in s.obstacles)
    return dataclasses.replace(s, width=size, height=size, obstacles=rects)
