"""Command line: batch trials, paired competency ablation and agent-count sweeps."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenario as scn
from .clustering import write_partition_csv
from .orchestrator import MissionMetrics, run_mission
from .tsp import write_routes_csv
from .waypoints import write_waypoints_csv

log = logging.getLogger("teamsearch")

TRIAL_FIELDS = ["scenario_id", "seed", "arm", "n_agents", "status", "mission_time", "target_found_time",
                "final_coverage", "waf", "replan_count", "swept_area", "error"]
TIMING_FIELDS = ["scenario_id", "seed", "arm", "plan_event", "latency_s"]


@dataclass
class TrialReport:
    scenario_id: str
    seed: int
    arm: str
    n_agents: int
    metrics: MissionMetrics | None = None
    error: str | None = None
    plan_latencies: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> dict:
        m = self.metrics
        row = {"scenario_id": self.scenario_id, "seed": self.seed, "arm": self.arm, "n_agents": self.n_agents,
               "error": self.error or ""}
        if m is None:
            return {**{k: "" for k in TRIAL_FIELDS}, **row}
        row.update(status=m.status, mission_time=repr(m.mission_time),
                   target_found_time="" if m.target_found_time is None else repr(m.target_found_time),
                   final_coverage=repr(m.final_coverage), waf=repr(m.waf), replan_count=m.replan_count,
                   swept_area=";".join(f"{k}:{v}" for k, v in sorted(m.swept_area.items())))
        return row


def _trial_dir(out_dir: Path, seed: int, arm: str) -> Path:
    d = out_dir / f"trial_{seed}_{arm}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_trial(scenario: scn.Scenario, seed: int, arm: str = "competency", out_dir=None, frames: int = 0,
              static_map=None, agents=None, **overrides) -> TrialReport:
    """One mission. Any exception becomes an error row instead of propagating."""
    n = len(scenario.agents) if agents is None else len(agents)
    report = TrialReport(scenario.id, seed, arm, n)
    try:
        static_map = static_map or scenario.load_map()
        agents = agents or scenario.instantiate(seed, static_map)
        config = scenario.mission_config(seed, **overrides)
        tdir = _trial_dir(Path(out_dir), seed, arm) if out_dir is not None else None
        frame_sink = plan_sink = None
        plans_fh = None
        if tdir is not None:
            plans_fh = open(tdir / "plans.jsonl", "w")
            ids = [a[0].id for a in agents]

            def plan_sink(k, t, result):
                write_waypoints_csv(tdir / f"waypoints_{k:03d}.csv", result.waypoints)
                if result.partition is not None:
                    alive = [i for i in ids if i in result.routes]
                    write_partition_csv(tdir / f"partition_{k:03d}.csv", result.partition,
                                        [w.id for w in result.waypoints], alive)
                write_routes_csv(tdir / f"routes_{k:03d}.csv", list(result.routes.values()))
                if result.plan is not None:
                    for rec in result.plan.to_records():
                        plans_fh.write(json.dumps({"plan_event": k, "t": t, **rec}, sort_keys=True) + "\n")

            if frames:
                (tdir / "frames").mkdir(exist_ok=True)

                def frame_sink(step, t, emap):
                    emap.save_pgm(tdir / "frames" / f"frame_{step:05d}.pgm")
        try:
            result = run_mission(static_map, agents, scenario.target, config, scenario.prior,
                                 frame_every=frames, frame_sink=frame_sink, plan_sink=plan_sink)
        finally:
            if plans_fh is not None:
                plans_fh.close()
        report.metrics = result.metrics
        report.plan_latencies = list(result.metrics.plan_latencies)
        if tdir is not None:
            with open(tdir / "events.jsonl", "w") as fh:
                for ev in result.events:
                    fh.write(json.dumps(ev, sort_keys=True) + "\n")
    except Exception as exc:  # noqa: BLE001 - reported per trial
        log.exception("trial %s seed %d failed", scenario.id, seed)
        report.error = f"{type(exc).__name__}: {exc}"
    return report


def run_batch(scenario: scn.Scenario, trials: int, overrides: dict | None = None, seed: int | None = None,
              out_dir=None, frames: int = 0, arm: str = "competency") -> list[TrialReport]:
    """Trials with seeds ``seed .. seed + trials - 1``; random starts are redrawn per seed."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = scenario.seed if seed is None else seed
    static_map = scenario.load_map()
    scn.validate(scenario, static_map)
    return [run_trial(scenario, s, arm, out_dir, frames, static_map, **(overrides or {}))
            for s in range(base, base + trials)]


def run_ablation(scenario: scn.Scenario, trials: int, overrides: dict | None = None, seed: int | None = None,
                 out_dir=None, frames: int = 0) -> list[TrialReport]:
    """Both arms over the same seeds (and therefore the same starts), interleaved per seed."""
    overrides = dict(overrides or {})
    overrides.pop("competency_enabled", None)
    base = scenario.seed if seed is None else seed
    static_map = scenario.load_map()
    scn.validate(scenario, static_map)
    out = []
    for s in range(base, base + trials):
        out.append(run_trial(scenario, s, "competency", out_dir, frames, static_map, competency_enabled=True,
                             **overrides))
        out.append(run_trial(scenario, s, "no-competency", out_dir, frames, static_map,
                             competency_enabled=False, **overrides))
    return out


def grid_size_for(n: int) -> int:
    """Map side used by the sweep for ``n`` agents: 40, 80 or 200 cells."""
    return 40 if n <= 3 else 80 if n <= 20 else 200


def sweep_agents(template: scn.Scenario, n_list, trials: int, seed: int | None = None, speeds=(1.0, 2.0),
                 ranges=(2.0, 4.0), auto_grid: bool = True, overrides: dict | None = None,
                 out_dir=None) -> tuple[list[dict], list[TrialReport]]:
    """Mean WAF and planning time per team size, with random heterogeneous agents and random starts."""
    base = template.seed if seed is None else seed
    table, reports = [], []
    for n in n_list:
        if n < 1:
            raise ValueError("each n must be >= 1")
        s = scn.scaled(template, grid_size_for(n)) if auto_grid else template
        static_map = s.load_map()
        if int(static_map.free.sum()) < n:
            raise ValueError(f"map has too few free cells for {n} starts")
        batch = []
        for k in range(base, base + trials):
            rng = np.random.default_rng(np.random.SeedSequence([k, n]))
            inst = dataclasses.replace(s, id=f"{s.id}-n{n}", agents=scn.random_agents(n, rng, speeds, ranges))
            sub = Path(out_dir) / f"n{n}" if out_dir is not None else None
            batch.append(run_trial(inst, k, "competency", sub, 0, static_map, **(overrides or {})))
        reports += batch
        ok = [r for r in batch if r.ok]
        wafs = [r.metrics.waf for r in ok]
        lat = [x for r in ok for x in r.plan_latencies]
        table.append({"n": n, "grid": static_map.width, "trials": len(batch), "errors": len(batch) - len(ok),
                      "mean_waf": float(np.mean(wafs)) if wafs else math.nan,
                      "std_waf": float(np.std(wafs)) if wafs else math.nan,
                      "mean_mission_time": float(np.mean([r.metrics.mission_time for r in ok])) if ok else math.nan,
                      "mean_plan_s": float(np.mean(lat)) if lat else math.nan,
                      "first_plan_s": float(np.mean([r.plan_latencies[0] for r in ok])) if ok else math.nan})
    return table, reports


def write_trials_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, TRIAL_FIELDS)
        wr.writeheader()
        for r in reports:
            wr.writerow(r.row())


def write_timings_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TIMING_FIELDS)
        for r in reports:
            for k, lat in enumerate(r.plan_latencies):
                wr.writerow([r.scenario_id, r.seed, r.arm, k, f"{lat:.6f}"])


def summarize(reports) -> dict[str, dict]:
    """Per arm: trial and error counts, mean/std mission time, mean WAF, mean final coverage."""
    out = {}
    for arm in dict.fromkeys(r.arm for r in reports):
        ok = [r.metrics for r in reports if r.arm == arm and r.ok]
        times = [m.mission_time for m in ok]
        wafs = [m.waf for m in ok if not math.isnan(m.waf)]
        out[arm] = {"trials": sum(r.arm == arm for r in reports), "errors": sum(r.arm == arm and not r.ok for r in reports),
                    "mean_time": float(np.mean(times)) if times else math.nan,
                    "std_time": float(np.std(times)) if times else math.nan,
                    "mean_waf": float(np.mean(wafs)) if wafs else math.nan,
                    "mean_coverage": float(np.mean([m.final_coverage for m in ok])) if ok else math.nan}
    return out


def _print_summary(summary: dict, stream=None) -> None:
    stream = stream or sys.stdout
    for arm, s in summary.items():
        print(f"{arm}: trials={s['trials']} errors={s['errors']} mission_time={s['mean_time']:.2f} "
              f"+/- {s['std_time']:.2f} s  mean_waf={s['mean_waf']:.4f}  coverage={s['mean_coverage']:.4f}",
              file=stream)


def _fail_spec(text: str) -> tuple[int, float]:
    try:
        aid, t = text.split("@")
        return int(aid), float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AGENT@TIME, got {text!r}") from None


def _threshold(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("replan threshold must be in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teamsearch", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, type=Path)
    common.add_argument("--trials", type=int, default=1)
    common.add_argument("--seed", type=int, default=None, help="first seed (default: the scenario's)")
    common.add_argument("--out-dir", type=Path, default=None)
    common.add_argument("--fail", type=_fail_spec, action="append", default=[], metavar="AGENT@TIME")
    common.add_argument("--replan-threshold", type=_threshold, default=None,
                        help="fraction of agents done that triggers a re-plan (default: any agent)")
    common.add_argument("--frames", type=int, default=0, metavar="K", help="dump an entropy PGM every K steps")
    common.add_argument("--waf-literal", action="store_true", help="use the A/eta form of WAF")

    run = sub.add_parser("run", parents=[common], help="run a batch of trials")
    run.add_argument("--no-competency", action="store_true", help="treat all agents as equally capable")
    sub.add_parser("ablation", parents=[common], help="paired runs with and without competency weighting")
    sw = sub.add_parser("sweep", parents=[common], help="mean WAF versus number of agents")
    sw.add_argument("--n", type=int, nargs="+", default=[2, 5, 10, 20, 50])
    sw.add_argument("--fixed-grid", action="store_true", help="keep the scenario map size for every n")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return 2
    try:
        scenario = scn.load(args.scenario)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    overrides = {"replan_done_fraction": args.replan_threshold, "waf_literal": args.waf_literal or None}
    if args.fail:
        ids = {a.spec.id for a in scenario.agents}
        bad = [a for a, _ in args.fail if a not in ids and args.command != "sweep"]
        if bad:
            print(f"error: --fail names unknown agent(s) {bad}", file=sys.stderr)
            return 2
        overrides["failures"] = tuple(args.fail)
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "run":
            if args.no_competency:
                overrides["competency_enabled"] = False
            arm = "no-competency" if args.no_competency else "competency"
            reports = run_batch(scenario, args.trials, overrides, args.seed, args.out_dir, args.frames, arm)
        elif args.command == "ablation":
            reports = run_ablation(scenario, args.trials, overrides, args.seed, args.out_dir, args.frames)
        else:
            table, reports = sweep_agents(scenario, args.n, args.trials, args.seed, auto_grid=not args.fixed_grid,
                                          overrides=overrides, out_dir=args.out_dir)
            for row in table:
                print(f"n={row['n']:3d} grid={row['grid']} mean_waf={row['mean_waf']:.4f} "
                      f"std_waf={row['std_waf']:.4f} mean_plan_s={row['mean_plan_s']:.3f} errors={row['errors']}")
            if args.out_dir is not None:
                with open(args.out_dir / "sweep.csv", "w", newline="") as fh:
                    wr = csv.DictWriter(fh, list(table[0]))
                    wr.writeheader()
                    wr.writerows(table)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.out_dir is not None:
        write_trials_csv(args.out_dir / "trials.csv", reports)
        write_timings_csv(args.out_dir / "timings.csv", reports)
    _print_summary(summarize(reports))
    return 0 if all(r.ok for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
