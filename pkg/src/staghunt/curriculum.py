"""Two-stage curriculum: pre-train where only hunting pays, then fine-tune on the target."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import env as E
from .policy import MlpParams, load_checkpoint, save_checkpoint
from .ppo import Hyperparams, TrainCurvePoint, TrainResult, train_ippo


@dataclass(frozen=True)
class CurriculumPlan:
    target: str = "FFR"
    stage1_iterations: int = 500
    stage2_iterations: int = 500
    hp: Hyperparams = field(default_factory=Hyperparams)
    seed: int = 0

    def __post_init__(self):
        if self.target not in E.VARIANT_LABELS:
            raise ValueError(f"unknown target variant {self.target!r}")
        if self.stage1_iterations < 0 or self.stage2_iterations < 0:
            raise ValueError("stage iteration counts must be non-negative")

    def stage_configs(self) -> tuple[E.EnvConfig, E.EnvConfig]:
        target = E.variant(self.target)
        return E.coop_variant(target), target

    def stage_seeds(self) -> tuple[int, int]:
        return 2 * self.seed, 2 * self.seed + 1


@dataclass
class CurriculumResult:
    stage1: TrainResult
    stage2: TrainResult
    handoff_digest: str

    @property
    def policies(self) -> list[MlpParams]:
        return self.stage2.policies

    @property
    def stage1_curve(self) -> list[TrainCurvePoint]:
        return self.stage1.curve

    @property
    def stage2_curve(self) -> list[TrainCurvePoint]:
        return self.stage2.curve


def run_curriculum(plan: CurriculumPlan, checkpoint_dir: str | Path | None = None,
                   callback: Callable | None = None) -> CurriculumResult:
    """Stage 1 in ``cXXX`` then stage 2 in ``XXX`` starting from stage 1's parameters.

    Stage 2 starts with fresh optimiser state.  With ``checkpoint_dir`` the
    hand-off goes through the on-disk checkpoint format.
    """
    cfg1, cfg2 = plan.stage_configs()
    s1, s2 = plan.stage_seeds()
    cb1 = (lambda p, l: callback(1, p, l)) if callback else None
    cb2 = (lambda p, l: callback(2, p, l)) if callback else None
    stage1 = train_ippo(cfg1, plan.hp, plan.stage1_iterations, s1, callback=cb1)
    handoff = [p.copy() for p in stage1.policies]
    if checkpoint_dir is not None:
        d = Path(checkpoint_dir)
        loaded = []
        for i, p in enumerate(handoff):
            stem = d / f"stage1_agent{i}"
            save_checkpoint(p, stem, {"stage": 1, "env": cfg1.label, "seed": s1, "agent": i})
            q, _ = load_checkpoint(stem)
            if q != p:
                raise RuntimeError(f"checkpoint round-trip changed parameters for agent {i}")
            loaded.append(q)
        handoff = loaded
    digest = "".join(p.digest()[:16] for p in handoff)
    stage2 = train_ippo(cfg2, plan.hp, plan.stage2_iterations, s2, init=handoff, callback=cb2)
    return CurriculumResult(stage1, stage2, digest)
