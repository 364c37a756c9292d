"""CSV schemas, aggregation, convergence classification and the config file grammar.

Config grammar: one ``key = value`` per line; ``#`` starts a comment;
blank lines are ignored.  Values are parsed according to the declared
type of the key (int, float, bool as true/false, str); the literal
``none`` clears an optional value.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ppo import Hyperparams, TrainCurvePoint

CURVE_COLUMNS = ("iteration", "mean_combined_reward", "std_combined_reward",
                 "agent0_mean", "agent1_mean", "episodes", "truncated")
STAGE_CURVE_COLUMNS = CURVE_COLUMNS + ("stage",)
AGGREGATE_COLUMNS = ("iteration", "mean_combined_reward", "std_combined_reward",
                     "agent0_mean", "agent1_mean", "trials")


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------- curves

def curve_rows(curve: Iterable[TrainCurvePoint], stage: int | None = None) -> list[list]:
    rows = []
    for p in curve:
        row = [p.iteration, repr(p.mean_combined_reward), repr(p.std_combined_reward),
               repr(p.agent0_mean), repr(p.agent1_mean), p.episodes, p.truncated]
        if stage is not None:
            row.append(stage)
        rows.append(row)
    return rows


def write_curve(path: str | Path, curve: Sequence[TrainCurvePoint], stage: int | None = None) -> Path:
    return write_rows(path, STAGE_CURVE_COLUMNS if stage is not None else CURVE_COLUMNS,
                      curve_rows(curve, stage))


def write_stage_curve(path, stage1: Sequence[TrainCurvePoint], stage2: Sequence[TrainCurvePoint]) -> Path:
    return write_rows(path, STAGE_CURVE_COLUMNS, curve_rows(stage1, 1) + curve_rows(stage2, 2))


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


_INT_COLS = {"iteration", "episodes", "truncated", "stage", "trials"}


def read_curve(path_or_text, columns: Sequence[str] | None = None) -> list[dict]:
    """Parse a curve CSV (plain, stage-tagged or aggregate) into typed rows.

    Raises :class:`SchemaError` naming the offending line.
    """
    text = path_or_text
    name = "<text>"
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        name = str(path_or_text)
        text = Path(path_or_text).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise SchemaError(f"{name}: empty file") from None
    allowed = [tuple(columns)] if columns else [CURVE_COLUMNS, STAGE_CURVE_COLUMNS, AGGREGATE_COLUMNS]
    if header not in allowed:
        raise SchemaError(f"{name}:1: unexpected header {','.join(header)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise SchemaError(f"{name}:{lineno}: expected {len(header)} fields, got {len(rec)}")
        row = {}
        for col, val in zip(header, rec):
            try:
                row[col] = int(val) if col in _INT_COLS else float(val)
            except ValueError:
                raise SchemaError(f"{name}:{lineno}: bad value {val!r} for {col}") from None
        rows.append(row)
    return rows


def aggregate_curves(curves: Sequence[Sequence[dict]]) -> list[dict]:
    """Mean and population std across trials, iteration by iteration."""
    if not curves:
        raise ValueError("nothing to aggregate")
    n = min(len(c) for c in curves)
    out = []
    for i in range(n):
        m = np.array([c[i]["mean_combined_reward"] for c in curves])
        out.append({
            "iteration": curves[0][i]["iteration"],
            "mean_combined_reward": float(m.mean()),
            "std_combined_reward": float(m.std()),
            "agent0_mean": float(np.mean([c[i]["agent0_mean"] for c in curves])),
            "agent1_mean": float(np.mean([c[i]["agent1_mean"] for c in curves])),
            "trials": len(curves),
        })
    return out


def write_aggregate(path, rows: Sequence[dict]) -> Path:
    return write_rows(path, AGGREGATE_COLUMNS,
                      [[r["iteration"]] + [repr(r[c]) for c in AGGREGATE_COLUMNS[1:-1]] + [r["trials"]]
                       for r in rows])


# ---------------------------------------------------------------- convergence

class ConvergenceKind(str, Enum):
    SUBOPTIMAL_FORAGE = "SuboptimalForage"
    MIXED = "Mixed"
    PURE_HUNT = "PureHunt"


@dataclass(frozen=True)
class ConvergenceClass:
    kind: ConvergenceKind
    window_mean: float
    window: int

    @property
    def group(self) -> str:
        return "B" if self.kind is ConvergenceKind.SUBOPTIMAL_FORAGE else "A"


def classify_reward(value: float, eps: float = 0.5, forage_total: float = 4.0,
                    hunt_total: float = 50.0) -> ConvergenceKind:
    if value <= forage_total + eps:
        return ConvergenceKind.SUBOPTIMAL_FORAGE
    if value >= hunt_total - eps:
        return ConvergenceKind.PURE_HUNT
    return ConvergenceKind.MIXED


def final_window_mean(rows: Sequence[dict], window: int = 20) -> float:
    """Mean combined reward over the last ``window`` iterations that completed episodes."""
    tail = rows[-window:]
    vals = [r["mean_combined_reward"] for r in tail if r.get("episodes", 1) > 0]
    return float(np.mean(vals)) if vals else 0.0


def classify_curve(rows: Sequence[dict], window: int = 20, eps: float = 0.5) -> ConvergenceClass:
    if not rows:
        raise SchemaError("empty curve")
    m = final_window_mean(rows, window)
    return ConvergenceClass(classify_reward(m, eps), m, min(window, len(rows)))


# ---------------------------------------------------------------- experiment config

@dataclass
class ExperimentConfig:
    subject: str = "FFF"
    trainer: str = "ippo"
    iterations: int = 1000
    trials: int = 5
    seed: int = 0
    out_dir: str = "runs"
    workers: int = 1
    stage1_iterations: int = 500
    stage2_iterations: int = 500
    time_limit: int | None = 500
    hp: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        if self.trainer not in ("ippo", "centralized"):
            raise ValueError(f"trainer must be ippo or centralized, got {self.trainer!r}")
        if self.trials < 1 or self.workers < 1 or self.iterations < 0:
            raise ValueError("trials and workers must be >= 1, iterations >= 0")

    def trial_seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.trials)]


def _field_types() -> dict[str, tuple[str, type, bool]]:
    """key -> (owner, base type, optional)."""
    out = {}
    for owner, cls in (("exp", ExperimentConfig), ("hp", Hyperparams)):
        for f in dataclasses.fields(cls):
            if f.name == "hp":
                continue
            t = f.type if not isinstance(f.type, str) else f.type
            optional = "None" in str(t)
            base = str(t).replace("| None", "").strip()
            out[f.name] = (owner, {"int": int, "float": float, "str": str, "bool": bool}[base], optional)
    return out


def _parse_value(key: str, raw: str, typ: type, optional: bool):
    raw = raw.strip()
    if optional and raw.lower() == "none":
        return None
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected true/false, got {raw!r}")
    if typ is str:
        return raw.strip("\"'")
    return typ(raw)


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict[str, object]:
    types = _field_types()
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        _, typ, opt = types[key]
        try:
            out[key] = _parse_value(key, raw, typ, opt)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return out


def build_config(values: dict[str, object], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    types = _field_types()
    exp = {k: v for k, v in values.items() if types[k][0] == "exp"}
    hp = {k: v for k, v in values.items() if types[k][0] == "hp"}
    return dataclasses.replace(base, hp=dataclasses.replace(base.hp, **hp), **exp)


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    values = {}
    if path is not None:
        values.update(parse_assignments(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_assignments(overrides, "<override>"))
    return build_config(values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["# fully resolved experiment configuration"]
    for f in dataclasses.fields(cfg):
        if f.name == "hp":
            continue
        lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    lines.append("# PPO hyperparameters")
    for f in dataclasses.fields(cfg.hp):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.hp, f.name))}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def isclose_rows(a: Sequence[dict], b: Sequence[dict], tol: float = 1e-9) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if x.keys() != y.keys():
            return False
        for k in x:
            if not math.isclose(x[k], y[k], rel_tol=0, abs_tol=tol):
                return False
    return True
