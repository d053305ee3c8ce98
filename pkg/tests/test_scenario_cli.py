import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from teamsearch import cli
from teamsearch import scenario as scn
from teamsearch.belief import ContextPrior
from teamsearch.world import AgentSpec, Pose

SMALL = """\
[scenario]
id = small
seed = 4

[map]
source = generate
width = 16
height = 16
obstacles = 5,5,6,10; 10,2,13,3   # two blocks

[agent.0]
v_max = 1.0
sense_range = 2
start = random

[agent.1]
v_max = 2.0
omega_max = 3.0
sense_range = 2
start = 14.5 14.5 0.0

[target]
position = none

[mission]
dt = 0.5
replan_done_fraction = none
"""


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_parse_small(small):
    s = scn.load(small)
    assert s.id == "small" and s.seed == 4 and s.width == 16
    assert s.obstacles == ((5, 5, 6, 10), (10, 2, 13, 3))
    assert s.agents[0].start is None and s.agents[1].start == Pose(14.5, 14.5, 0.0)
    assert s.agents[0].spec.omega_max == 3.0
    assert s.target is None
    sm = s.load_map()
    assert sm.cells[5, 5] and sm.cells[10, 6] and not sm.cells[11, 6]
    assert s.mission_config(1).replan_done_fraction is None


def test_round_trip_small(small):
    s = scn.load(small)
    assert scn.parse(serialize := scn.serialize(s)) == s
    assert scn.serialize(scn.parse(serialize)) == serialize


_num = st.floats(0.5, 30.0, allow_nan=False).map(lambda x: round(x, 3))


@given(st.lists(st.tuples(st.floats(0.1, 5.0), st.floats(0.5, 6.0), st.one_of(st.none(), _num)), min_size=1,
                max_size=4),
       st.one_of(st.none(), st.tuples(_num, _num)), st.booleans(), st.integers(0, 10**6))
def test_round_trip_property(agents, target, with_prior, seed):
    entries = [scn.AgentEntry(AgentSpec(i, v, 2.5, r), None if x is None else Pose(x, x / 2, 0.25))
               for i, (v, r, x) in enumerate(agents)]
    prior = ContextPrior.from_records([{"pi": 0.25, "mu": (3.0, 4.0), "sigma": [[2.0, 0.5], [0.5, 1.0]]},
                                       {"pi": 0.75, "mu": (10.1, 1.7), "sigma": [[1.0, 0.0], [0.0, 3.0]]}])
    s = scn.Scenario("p", entries, seed, width=31, height=17, resolution=0.5, obstacles=((1, 2, 3, 4),),
                     target=target, prior=prior if with_prior else None, mission={"p_detect": "0.8"})
    assert scn.parse(scn.serialize(s)) == s


def _line(text, needle):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if ln.startswith(needle))


@pytest.mark.parametrize("old,new,needle", [
    ("v_max = 2.0", "v_max = fast", "v_max = fast"),
    ("dt = 0.5", "dt = 0.5\nbogus = 1", "bogus"),
    ("obstacles = 5,5,6,10", "obstacles = 5,5,6", "obstacles"),
    ("sense_range = 2\nstart = random", "start = random", "[agent.0]"),
])
def test_parse_errors_name_line(old, new, needle):
    text = SMALL.replace(old, new)
    with pytest.raises(scn.ScenarioError, match=rf"line {_line(text, needle)}\)"):
        scn.parse(text)


def test_parse_error_missing_section():
    with pytest.raises(scn.ScenarioError, match=r"\[scenario\]"):
        scn.parse(SMALL.replace("[scenario]", "[scenery]"))


def test_validation_errors():
    s = scn.parse(SMALL.replace("start = 14.5 14.5 0.0", "start = 5.5 5.5 0.0"))
    with pytest.raises(scn.ScenarioError, match="free space"):
        s.instantiate(0)
    s = scn.parse(SMALL.replace("position = none", "position = 5.5 6.5"))
    with pytest.raises(scn.ScenarioError, match="target"):
        s.instantiate(0)


def test_random_starts_free_distinct_and_seeded(small):
    s = scn.load(small)
    sm = s.load_map()
    a = s.instantiate(1, sm)
    assert s.instantiate(1, sm) == a
    starts = {s.instantiate(k, sm)[0][1] for k in range(10)}
    assert len(starts) > 5
    for k in range(20):
        poses = [p for _, p in s.instantiate(k, sm)]
        assert all(sm.point_free(p.x, p.y) for p in poses)
        assert sm.cell_of(poses[0].x, poses[0].y) != sm.cell_of(14.5, 14.5)


def test_run_batch_rows_and_determinism(small, tmp_path):
    s = scn.load(small)
    one = cli.run_batch(s, 1)
    assert len(one) == 1 and one[0].seed == 4 and one[0].ok
    assert one[0].metrics.final_coverage == 1.0
    a = cli.run_batch(s, 2, out_dir=tmp_path / "a")
    b = cli.run_batch(s, 2, out_dir=tmp_path / "b")
    assert [r.row() for r in a] == [r.row() for r in b]
    fa = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    fb = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert fa == fb and fa
    for rel in fa:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    with pytest.raises(ValueError):
        cli.run_batch(s, 0)


def test_trial_artifacts(small, tmp_path):
    s = scn.load(small)
    cli.run_trial(s, 0, out_dir=tmp_path, frames=10)
    d = tmp_path / "trial_0_competency"
    names = {p.name for p in d.iterdir()}
    assert {"events.jsonl", "plans.jsonl", "waypoints_000.csv", "partition_000.csv", "routes_000.csv",
            "frames"} <= names
    assert (d / "frames" / "frame_00000.pgm").read_bytes().startswith(b"P5")


def test_error_row_not_exception(small):
    s = scn.load(small)
    rep = cli.run_trial(s, 0, p_detect=2.0)
    assert not rep.ok and "ValueError" in rep.error
    assert rep.row()["error"] and rep.row()["status"] == ""


def test_ablation_pairs_arms(small):
    s = scn.load(small)
    reps = cli.run_ablation(s, 2, seed=0)
    assert [(r.seed, r.arm) for r in reps] == [(0, "competency"), (0, "no-competency"),
                                               (1, "competency"), (1, "no-competency")]
    # same seed means same starts, so the first observation is shared
    assert all(r.ok for r in reps)


def test_summary_recomputable_from_rows(small, tmp_path):
    s = scn.load(small)
    reps = cli.run_ablation(s, 2, seed=0)
    cli.write_trials_csv(tmp_path / "t.csv", reps)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == cli.TRIAL_FIELDS
    summ = cli.summarize(reps)
    for arm, st_ in summ.items():
        times = [float(r["mission_time"]) for r in rows if r["arm"] == arm and not r["error"]]
        assert st_["mean_time"] == pytest.approx(np.mean(times), abs=0)
        assert st_["std_time"] == pytest.approx(np.std(times), abs=0)
        assert st_["mean_waf"] == pytest.approx(np.mean([float(r["waf"]) for r in rows if r["arm"] == arm]), abs=0)


def test_sweep_single_agent_waf_zero_and_small_map_error():
    tmpl = scn.parse(SMALL)
    table, reps = cli.sweep_agents(tmpl, [1, 2], 2, seed=0, auto_grid=False)
    assert table[0]["n"] == 1 and table[0]["mean_waf"] == 0.0
    assert table[1]["errors"] == 0 and table[1]["mean_waf"] < 0.4
    assert all(r.metrics.final_coverage == 1.0 for r in reps)
    with pytest.raises(ValueError):
        cli.sweep_agents(tmpl, [1000], 1, auto_grid=False)
    with pytest.raises(ValueError):
        cli.sweep_agents(tmpl, [0], 1)


def test_grid_size_for():
    assert [cli.grid_size_for(n) for n in (1, 3, 10, 20, 50)] == [40, 40, 80, 80, 200]


def test_random_agents_spec_set():
    ags = scn.random_agents(40, np.random.default_rng(0))
    assert {a.spec.v_max for a in ags} == {1.0, 2.0} and {a.spec.sense_range for a in ags} == {2.0, 4.0}
    assert all(a.start is None for a in ags)


def test_main_exit_codes(small, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", str(small), "--trials", "1", "--out-dir", str(out)]) == 0
    assert (out / "trials.csv").exists() and (out / "timings.csv").exists()
    assert "competency: trials=1 errors=0" in capsys.readouterr().out
    assert cli.main(["run", "--scenario", str(small), "--fail", "0@3", "--replan-threshold", "0.5",
                     "--no-competency"]) == 0
    assert "no-competency" in capsys.readouterr().out
    assert cli.main(["run", "--scenario", str(small), "--fail", "9@3"]) == 2
    assert cli.main(["run", "--scenario", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["run", "--scenario", str(small), "--trials", "0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["run", "--scenario", str(small), "--replan-threshold", "1.5"])
    bad = tmp_path / "bad.ini"
    bad.write_text(SMALL.replace("dt = 0.5", "dt = 0.5\np_detect = 7"))
    assert cli.main(["run", "--scenario", str(bad)]) == 1  # the trial errors, the row records it
    assert cli.main(["ablation", "--scenario", str(small), "--trials", "1"]) == 0
    assert cli.main(["sweep", "--scenario", str(small), "--n", "1", "2", "--fixed-grid", "--out-dir", str(out)]) == 0
    assert (out / "sweep.csv").exists()


def test_shipped_scenarios_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "scenarios"
    files = sorted(root.glob("*.ini"))
    assert len(files) >= 6
    for f in files:
        s = scn.load(f)
        sm = s.load_map()
        agents = s.instantiate(0, sm)
        assert all(sm.point_free(p.x, p.y) for _, p in agents)
        assert math.isfinite(s.mission_config(0).dt)
