import json

import numpy as np
import pytest

from staghunt import cli, reporting
from staghunt import env as E
from staghunt.render import render
from staghunt.reporting import ConvergenceKind as CK

TINY = ["--set", "train_batch=200", "--set", "sgd_minibatch=64", "--set", "sgd_iters=1",
        "--set", "num_envs=4", "--set", "hidden=8"]


def _flat_curve(value, n=30):
    return [{"iteration": i, "mean_combined_reward": value, "std_combined_reward": 0.0,
             "agent0_mean": value / 2, "agent1_mean": value / 2, "episodes": 10, "truncated": 0}
            for i in range(n)]


# ---------------------------------------------------------------- classification

@pytest.mark.parametrize("value,kind", [
    (4.0, CK.SUBOPTIMAL_FORAGE), (4.5, CK.SUBOPTIMAL_FORAGE), (4.51, CK.MIXED),
    (30.0, CK.MIXED), (49.49, CK.MIXED), (49.5, CK.PURE_HUNT), (50.0, CK.PURE_HUNT),
])
def test_classify_thresholds(value, kind):
    c = reporting.classify_curve(_flat_curve(value))
    assert c.kind is kind
    assert c.group == ("B" if kind is CK.SUBOPTIMAL_FORAGE else "A")


def test_classify_uses_final_window():
    rows = _flat_curve(50.0, 40)
    for r in rows[-20:]:
        r["mean_combined_reward"] = 3.0
    assert reporting.classify_curve(rows).kind is CK.SUBOPTIMAL_FORAGE
    rows[-1]["episodes"] = 0
    rows[-1]["mean_combined_reward"] = 0.0
    assert reporting.final_window_mean(rows) == 3.0
    with pytest.raises(reporting.SchemaError):
        reporting.classify_curve([])


# ---------------------------------------------------------------- CSV schemas

def test_curve_round_trip_and_errors(tmp_path):
    from staghunt.ppo import TrainCurvePoint
    pts = [TrainCurvePoint(i, 1.0 / 3 + i, 0.1, 0.2, 0.3, 5, 1) for i in range(4)]
    p = reporting.write_curve(tmp_path / "c.csv", pts)
    rows = reporting.read_curve(p)
    assert [r["mean_combined_reward"] for r in rows] == [x.mean_combined_reward for x in pts]
    p2 = reporting.write_stage_curve(tmp_path / "s.csv", pts[:2], pts[2:])
    assert [r["stage"] for r in reporting.read_curve(p2)] == [1, 1, 2, 2]
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(reporting.CURVE_COLUMNS) + "\n0,1,2,3,4,5,6\n1,x,2,3,4,5,6\n")
    with pytest.raises(reporting.SchemaError, match=":3:"):
        reporting.read_curve(bad)
    bad.write_text("a,b\n")
    with pytest.raises(reporting.SchemaError, match=":1:"):
        reporting.read_curve(bad)


def test_aggregate_recomputes():
    rng = np.random.default_rng(0)
    curves = []
    for _ in range(5):
        c = _flat_curve(0.0, 6)
        for r in c:
            r["mean_combined_reward"] = float(rng.normal(10, 3))
        curves.append(c)
    agg = reporting.aggregate_curves(curves)
    for i, row in enumerate(agg):
        vals = [c[i]["mean_combined_reward"] for c in curves]
        assert abs(row["mean_combined_reward"] - np.mean(vals)) < 1e-9
        assert abs(row["std_combined_reward"] - np.std(vals)) < 1e-9
    single = reporting.aggregate_curves(curves[:1])
    assert all(r["std_combined_reward"] == 0.0 for r in single)


# ---------------------------------------------------------------- config grammar

def test_config_grammar(tmp_path):
    f = tmp_path / "exp.cfg"
    f.write_text("# experiment\nsubject = RRR\niterations = 7   # short\n\nlearning_rate = 1e-4\n"
                 "time_limit = none\n")
    cfg = reporting.load_config(f, ["trials=2"])
    assert (cfg.subject, cfg.iterations, cfg.trials, cfg.time_limit) == ("RRR", 7, 2, None)
    assert cfg.hp.learning_rate == 1e-4 and cfg.hp.clip == 0.3
    again = reporting.parse_assignments(reporting.dump_config(cfg).splitlines())
    assert reporting.build_config(again) == cfg
    for bad in ("nonsense", "unknown_key = 1", "iterations = abc"):
        with pytest.raises(ValueError):
            reporting.parse_assignments([bad])
    with pytest.raises(ValueError):
        reporting.build_config({"trainer": "other"})


# ---------------------------------------------------------------- rendering

def test_render_glyphs():
    s = E.reset(E.variant("FFF"), np.random.default_rng(0))
    lines = render(s, E.variant("FFF")).splitlines()
    assert lines[1][1] == "A" and lines[1][5] == "B" and lines[3][3] == "S"
    assert sum(line.count("p") for line in lines) == 2
    s2 = E.EnvState(((2, 2), (0, 0)), (False, True), (2, 2), s.plants)
    lines = render(s2, E.variant("FFF")).splitlines()
    assert lines[3][3] == "*" and lines[1][1] == "b"


# ---------------------------------------------------------------- commands

def test_cli_train_and_analyze(tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(["train", "--env", "FFF", "--iterations", "2", "--trials", "2", "--out", str(out)] + TINY)
    assert rc == 0
    agg = reporting.read_curve(out / "aggregate.csv")
    curves = [reporting.read_curve(out / f"trial_{k}" / "curve.csv") for k in range(2)]
    assert reporting.isclose_rows(agg, reporting.aggregate_curves(curves))
    assert (out / "trial_1" / "agent0.json").exists()
    resolved = reporting.load_config(out / "config.resolved")
    assert resolved.iterations == 2 and resolved.hp.train_batch == 200
    trials = json.loads((out / "trials.json").read_text())
    assert [t["seed"] for t in trials["completed"]] == [0, 1] and trials["failed"] == []
    # rerun reproduces the curves exactly
    out2 = tmp_path / "run2"
    cli.main(["train", "--env", "FFF", "--iterations", "2", "--trials", "2", "--out", str(out2)] + TINY)
    assert (out / "trial_0" / "curve.csv").read_text() == (out2 / "trial_0" / "curve.csv").read_text()
    capsys.readouterr()
    rc = cli.main(["analyze", str(out / "trial_0" / "curve.csv"), "--out", str(tmp_path / "cls.csv")])
    assert rc == 0 and "group" in capsys.readouterr().out
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    assert cli.main(["analyze", str(bad)]) == 1


def test_cli_curriculum_metadata(tmp_path):
    out = tmp_path / "cur"
    rc = cli.main(["curriculum", "--targets", "FFR", "RRR", "--stage1-iterations", "1",
                   "--stage2-iterations", "1", "--trials", "1", "--out", str(out)] + TINY)
    assert rc == 0
    meta = json.loads((out / "FFR" / "trial_0" / "metadata.json").read_text())
    assert meta["stage1"]["label"] == "cFFR" and meta["stage2"]["label"] == "FFR"
    assert meta["stage1"]["step_penalty"] == -0.5 and meta["stage2"]["step_penalty"] == 0
    assert len(meta["stage1_checkpoint_digest"]) == 32
    reg = json.loads((out / "registry.json").read_text())
    assert set(reg) == {"FFR", "RRR"} and len(reg["RRR"]["cooperative"]) == 1
    rows = reporting.read_curve(out / "FFR" / "trial_0" / "curve.csv")
    assert [r["stage"] for r in rows] == [1, 2]


def test_cli_egta_scripted(tmp_path, capsys):
    rc = cli.main(["egta", "--scripted", "--env", "FFF", "-n", "50", "--classify-episodes", "20",
                   "--fixed-spawn-seed", "11", "--out", str(tmp_path / "e")])
    assert rc == 0
    text = capsys.readouterr().out
    assert "(2.00, 2.00)" in text
    data = json.loads((tmp_path / "e" / "egta.json").read_text())
    assert data["P"] == 2.0 and set(data["cell_seeds"]) == {"CC", "CD", "DC", "DD"}
    assert cli.main(["egta", "--c1", "GreedyHunt"]) == 2


def test_cli_render_and_oracle_check(tmp_path, capsys):
    traj = tmp_path / "t.csv"
    assert cli.main(["render", "--env", "FFF", "--steps", "5", "--trajectory", str(traj)]) == 0
    out = capsys.readouterr().out
    assert "A/B agents" in out and "rewards=(25, 25)" in out
    assert traj.read_text().startswith("t,agent0_x")
    assert cli.main(["oracle-check", "--envs", "FFF", "--size", "3"]) == 0
    assert "mismatches=0" in capsys.readouterr().out
