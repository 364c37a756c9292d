"""Command line entry point: ``staghunt <subcommand>``.

Subcommands: train, curriculum, egta, analyze, render, oracle-check.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import env as E
from . import egta, oracle, reporting
from .curriculum import CurriculumPlan, run_curriculum
from .policy import load_checkpoint, save_checkpoint
from .ppo import train_centralized, train_ippo
from .render import LEGEND, frame

log = logging.getLogger("staghunt")


def _env_config(label: str, time_limit) -> E.EnvConfig:
    return dataclasses.replace(E.config_for(label), time_limit=time_limit)


# ---------------------------------------------------------------- train

def run_train_trial(cfg: reporting.ExperimentConfig, trial: int, out: str) -> dict:
    seed = cfg.seed + trial
    tdir = Path(out) / f"trial_{trial}"
    tdir.mkdir(parents=True, exist_ok=True)
    env_cfg = _env_config(cfg.subject, cfg.time_limit)
    trainer = train_ippo if cfg.trainer == "ippo" else train_centralized
    t0 = time.time()
    res = trainer(env_cfg, cfg.hp, cfg.iterations, seed)
    reporting.write_curve(tdir / "curve.csv", res.curve)
    ckpts = []
    for i, p in enumerate(res.policies):
        name = f"agent{i}" if cfg.trainer == "ippo" else "joint"
        meta = {"env": env_cfg.label, "trainer": cfg.trainer, "seed": seed, "agent": i,
                "iterations": cfg.iterations}
        save_checkpoint(p, tdir / name, meta)
        ckpts.append(str(tdir / name))
    return {"trial": trial, "seed": seed, "curve": str(tdir / "curve.csv"), "checkpoints": ckpts,
            "seconds": round(time.time() - t0, 1)}


def _run_trials(fn, cfg, out: Path) -> tuple[list[dict], list[dict]]:
    done, failed = [], []
    jobs = list(range(cfg.trials))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futs = {k: pool.submit(fn, cfg, k, str(out)) for k in jobs}
            for k, fut in futs.items():
                try:
                    done.append(fut.result())
                except Exception as exc:  # a failed trial must not take its siblings down
                    failed.append({"trial": k, "error": repr(exc)})
    else:
        for k in jobs:
            try:
                done.append(fn(cfg, k, str(out)))
            except Exception as exc:
                log.error("trial %d failed:\n%s", k, traceback.format_exc())
                failed.append({"trial": k, "error": repr(exc)})
    return done, failed


def cmd_train(cfg: reporting.ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(reporting.dump_config(cfg))
    done, failed = _run_trials(run_train_trial, cfg, out)
    if done:
        curves = [reporting.read_curve(Path(d["curve"])) for d in sorted(done, key=lambda d: d["trial"])]
        reporting.write_aggregate(out / "aggregate.csv", reporting.aggregate_curves(curves))
    (out / "trials.json").write_text(json.dumps({"completed": done, "failed": failed}, indent=2) + "\n")
    for d in done:
        print(f"trial {d['trial']} seed {d['seed']}: {d['curve']} ({d['seconds']}s)")
    for f in failed:
        print(f"trial {f['trial']} FAILED: {f['error']}", file=sys.stderr)
    return 1 if failed else 0


# ---------------------------------------------------------------- curriculum

def run_curriculum_trial(cfg: reporting.ExperimentConfig, trial: int, out: str, target: str | None = None) -> dict:
    target = target or cfg.subject
    seed = cfg.seed + trial
    plan = CurriculumPlan(target, cfg.stage1_iterations, cfg.stage2_iterations, cfg.hp, seed)
    tdir = Path(out) / target / f"trial_{trial}"
    tdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    res = run_curriculum(plan, checkpoint_dir=tdir)
    reporting.write_stage_curve(tdir / "curve.csv", res.stage1_curve, res.stage2_curve)
    cfg1, cfg2 = plan.stage_configs()
    ckpts = []
    for i, p in enumerate(res.policies):
        stem = tdir / f"stage2_agent{i}"
        save_checkpoint(p, stem, {"stage": 2, "env": cfg2.label, "seed": plan.stage_seeds()[1],
                                  "agent": i, "stage1_digest": res.handoff_digest})
        ckpts.append(str(stem))
    meta = {
        "target": target, "trial": trial, "seed": seed,
        "stage1": {"label": cfg1.label, "iterations": plan.stage1_iterations,
                   "payoffs": dataclasses.asdict(cfg1.payoffs), "step_penalty": cfg1.step_penalty},
        "stage2": {"label": cfg2.label, "iterations": plan.stage2_iterations,
                   "payoffs": dataclasses.asdict(cfg2.payoffs), "step_penalty": cfg2.step_penalty},
        "stage1_checkpoint_digest": res.handoff_digest,
        "cooperative_checkpoints": ckpts,
        "seconds": round(time.time() - t0, 1),
    }
    (tdir / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return {"trial": trial, "seed": seed, "curve": str(tdir / "curve.csv"), "checkpoints": ckpts,
            "target": target, "seconds": meta["seconds"]}


def cmd_curriculum(cfg: reporting.ExperimentConfig, targets: list[str]) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(reporting.dump_config(cfg))
    registry = {}
    any_failed = False
    for target in targets:
        fn = _TargetTrial(target)
        done, failed = _run_trials(fn, cfg, out)
        any_failed |= bool(failed)
        registry[target] = {"cooperative": [d["checkpoints"] for d in sorted(done, key=lambda d: d["trial"])],
                            "failed": failed}
        for d in done:
            print(f"{target} trial {d['trial']}: {d['curve']} ({d['seconds']}s)")
        for f in failed:
            print(f"{target} trial {f['trial']} FAILED: {f['error']}", file=sys.stderr)
    (out / "registry.json").write_text(json.dumps(registry, indent=2) + "\n")
    return 1 if any_failed else 0


class _TargetTrial:
    def __init__(self, target):
        self.target = target

    def __call__(self, cfg, trial, out):
        return run_curriculum_trial(cfg, trial, out, self.target)


# ---------------------------------------------------------------- egta

def _load_policy(spec: str):
    kinds = {k.value.lower(): k for k in oracle.ScriptedKind}
    if spec.lower() in kinds:
        return oracle.ScriptedPolicy(kinds[spec.lower()])
    params, _ = load_checkpoint(spec)
    return egta.NeuralPolicy(params, name=Path(spec).name)


def cmd_egta(policies: dict[str, str], label: str, n: int, seed: int, out: Path | None,
             classify_episodes: int = 500, fixed_spawn_seed: int | None = None,
             time_limit: int | None = 500) -> int:
    config = _env_config(label, time_limit)
    pol = {k: _load_policy(v) for k, v in policies.items()}
    lines = []
    for name, pair, want in (("cooperative", (pol["c1"], pol["c2"]), egta.PolicyClass.COOPERATIVE),
                             ("defective", (pol["d1"], pol["d2"]), egta.PolicyClass.DEFECTIVE)):
        c = egta.classify_policy(pair, config, classify_episodes, seed + 101, fixed_spawn_seed=fixed_spawn_seed)
        msg = f"{name} pair: alpha={c.alpha:.3f} -> {c.cls.value}"
        if c.cls is not want:
            msg = "WARNING " + msg + f" (expected {want.value})"
            log.warning(msg)
        lines.append(msg)
    matrix = egta.empirical_payoffs(pol["c1"], pol["d1"], pol["c2"], pol["d2"], config, n, seed,
                                    fixed_spawn_seed)
    cert = egta.certify(matrix)
    audit = egta.nash_deviation_audit(matrix, config.payoffs.f)
    report = "\n".join([
        f"Empirical meta-game on {label} ({n} episodes per cell)",
        *lines,
        egta.matrix_table(matrix),
        cert.report(),
        audit.report(),
    ])
    print(report)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "payoffs.csv").write_text(egta.matrix_csv(matrix))
        (out / "report.txt").write_text(report + "\n")
        (out / "egta.json").write_text(json.dumps({
            "env": label, "episodes": n, "seed": seed, "fixed_spawn_seed": fixed_spawn_seed,
            "policies": policies,
            "cell_seeds": {k: c.seed for k, c in matrix.cells.items()},
            "R": matrix.R, "P": matrix.P, "S": matrix.S, "T": matrix.T,
            "is_mgsd": cert.is_mgsd, "is_stag_hunt_ordered": cert.is_stag_hunt_ordered,
            "deviation_audit_passed": audit.passed,
        }, indent=2) + "\n")
    return 0


# ---------------------------------------------------------------- analyze / render / oracle

def cmd_analyze(paths: list[str], window: int, eps: float, out: Path | None) -> int:
    rows = []
    for p in paths:
        curve = reporting.read_curve(Path(p))
        stages = sorted({r["stage"] for r in curve}) if curve and "stage" in curve[0] else [None]
        for st in stages:
            sub = [r for r in curve if st is None or r["stage"] == st]
            c = reporting.classify_curve(sub, window, eps)
            rows.append([p if st is None else f"{p}#stage{st}", f"{c.window_mean:.4f}", c.kind.value, c.group])
    print(f"{'curve':<50} {'window_mean':>12} {'class':>18} group")
    for r in rows:
        print(f"{r[0]:<50} {r[1]:>12} {r[2]:>18} {r[3]}")
    if out is not None:
        reporting.write_rows(out, ("curve", "window_mean", "class", "group"), rows)
    return 0


def cmd_render(label: str, seed: int, steps: int, agents: list[str], time_limit=500,
               trajectory: Path | None = None) -> int:
    config = _env_config(label, time_limit)
    pols = [_load_policy(a) for a in agents]
    from .seeding import stream
    spawn, stag, act = stream(seed, "spawn"), stream(seed, "stag"), stream(seed, "sampling")
    s = E.reset(config, spawn)
    print(LEGEND)
    print(frame(s, config))
    states, acts, results = [], [], []
    for _ in range(steps):
        if s.done:
            break
        a = [E.STAY if s.frozen[i] else int(pols[i].act([s], i, config, act)[0]) for i in (0, 1)]
        s, res = E.step(s, a, config, stag)
        states.append(s), acts.append(a), results.append(res)
        print(f"actions=({E.ACTION_NAMES[a[0]]}, {E.ACTION_NAMES[a[1]]})")
        print(frame(s, config, res.rewards))
    if trajectory is not None:
        trajectory.write_text(E.dump_trajectory(states, acts, results))
    return 0


def cmd_oracle_check(labels: list[str], size: int) -> int:
    bad = 0
    for label in labels:
        cfg = dataclasses.replace(E.config_for(label), width=size, height=size)
        t0 = time.time()
        rep = oracle.transition_equivalence_check(cfg)
        print(f"{label} {size}x{size}: states={rep.states} comparisons={rep.comparisons} "
              f"mismatches={rep.mismatches} border_clamps={rep.border_clamps} "
              f"stag_on_plant={rep.stag_on_plant} ({time.time() - t0:.1f}s)")
        bad += rep.mismatches
    return 1 if bad else 0


# ---------------------------------------------------------------- argument parsing

def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--iterations", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--workers", type=int)


def _resolve_config(args, subject: str | None = None, **extra) -> reporting.ExperimentConfig:
    overrides = list(args.set)
    for key in ("iterations", "trials", "seed", "out_dir", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            overrides.append(f"{key} = {v}")
    for key, v in extra.items():
        if v is not None:
            overrides.append(f"{key} = {v}")
    if subject is not None:
        overrides.append(f"subject = {subject}")
    return reporting.load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="staghunt", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train IPPO or centralised PPO on one variant")
    p.add_argument("--env", help="variant label, e.g. FFF or cFFR")
    p.add_argument("--trainer", choices=("ippo", "centralized"))
    _add_config_args(p)

    p = sub.add_parser("curriculum", help="two-stage cXXX -> XXX curriculum")
    p.add_argument("--targets", nargs="+", default=None, help="target variants (default: subject)")
    p.add_argument("--stage1-iterations", type=int)
    p.add_argument("--stage2-iterations", type=int)
    _add_config_args(p)

    p = sub.add_parser("egta", help="empirical meta-game from four policies")
    p.add_argument("--env", default="FFR")
    for k in ("c1", "d1", "c2", "d2"):
        p.add_argument(f"--{k}", help="checkpoint stem or scripted kind (GreedyHunt, GreedyForage, ...)")
    p.add_argument("--scripted", action="store_true", help="GreedyHunt/GreedyForage stand-ins")
    p.add_argument("-n", "--episodes", type=int, default=5000)
    p.add_argument("--classify-episodes", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed-spawn-seed", type=int)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("analyze", help="classify final convergence of curve CSVs")
    p.add_argument("curves", nargs="+")
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("render", help="ASCII frames of one episode")
    p.add_argument("--env", default="FFF")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--agents", nargs=2, default=["GreedyHunt", "GreedyHunt"],
                   help="two checkpoint stems or scripted kinds")
    p.add_argument("--trajectory", type=Path, help="also write the trajectory CSV here")

    p = sub.add_parser("oracle-check", help="env vs reference transition enumeration")
    p.add_argument("--envs", nargs="+", default=["FFF", "FFR"])
    p.add_argument("--size", type=int, default=3)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            return cmd_train(_resolve_config(args, args.env, trainer=args.trainer))
        if args.command == "curriculum":
            cfg = _resolve_config(args, None, stage1_iterations=args.stage1_iterations,
                                  stage2_iterations=args.stage2_iterations)
            return cmd_curriculum(cfg, args.targets or [cfg.subject])
        if args.command == "egta":
            if args.scripted:
                pols = {"c1": "GreedyHunt", "c2": "GreedyHunt", "d1": "GreedyForage", "d2": "GreedyForage"}
            else:
                pols = {k: getattr(args, k) for k in ("c1", "d1", "c2", "d2")}
                missing = [k for k, v in pols.items() if v is None]
                if missing:
                    print(f"missing policies: {missing} (or pass --scripted)", file=sys.stderr)
                    return 2
            return cmd_egta(pols, args.env, args.episodes, args.seed, args.out,
                            args.classify_episodes, args.fixed_spawn_seed)
        if args.command == "analyze":
            return cmd_analyze(args.curves, args.window, args.eps, args.out)
        if args.command == "render":
            return cmd_render(args.env, args.seed, args.steps, args.agents, trajectory=args.trajectory)
        if args.command == "oracle-check":
            return cmd_oracle_check(args.envs, args.size)
    except (OSError, ValueError, reporting.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
