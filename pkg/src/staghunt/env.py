"""Gridworld Stag Hunt Markov game.

Two agents, one stag and two plants live on a small grid.  Every timestep
the non-frozen agents move simultaneously, then the stag moves, then
rewards are settled on the final occupancy:

* both active agents on the stag cell: each gets ``h`` and freezes
* a single active agent on the stag cell: it gets ``m`` and freezes
* an active agent on a plant cell (and not on the stag): it gets ``f``
  and freezes

An episode ends once both agents are frozen, or is truncated at the
configured time limit.  Coordinates are ``(x, y)`` with ``x`` the column,
``y`` the row and ``(0, 0)`` the upper-left cell.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .matrix_game import StagHuntPayoffs

GridPos = tuple[int, int]

UP, DOWN, LEFT, RIGHT, STAY = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("Up", "Down", "Left", "Right", "Stay")
_DELTAS = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))
OBS_DIM = 12


class Spawn(str, Enum):
    FIXED = "Fixed"
    RANDOM = "Random"


class StagMove(str, Enum):
    FOLLOWS = "Follows"
    RANDOM = "Random"


VARIANT_LABELS = ("FFF", "RFF", "FRF", "FFR", "RRF", "FRR", "RFR", "RRR")
GROUP_A = ("FFF", "RFF", "FRF", "RRF", "FRR")
GROUP_B = ("FFR", "RFR", "RRR")


@dataclass(frozen=True)
class EnvConfig:
    width: int = 5
    height: int = 5
    payoffs: StagHuntPayoffs = field(default_factory=StagHuntPayoffs)
    step_penalty: float = 0.0
    agent_spawn: Spawn = Spawn.FIXED
    stag_spawn: Spawn = Spawn.FIXED
    stag_move: StagMove = StagMove.FOLLOWS
    time_limit: int | None = 500
    label: str = "FFF"

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError(f"grid must be at least 3x3, got {self.width}x{self.height}")
        p = self.payoffs
        if not (p.h > p.f_star >= p.f > p.m):
            raise ValueError(f"payoffs must satisfy h > f* >= f > m, got {p}")
        if self.time_limit is not None and self.time_limit < 1:
            raise ValueError("time_limit must be positive or None")


@dataclass(frozen=True)
class EnvState:
    agents: tuple[GridPos, GridPos]
    frozen: tuple[bool, bool]
    stag: GridPos
    plants: tuple[GridPos, GridPos]
    t: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    rewards: tuple[float, float]
    newly_frozen: tuple[bool, bool]
    done: bool
    truncated: bool


def variant(label: str) -> EnvConfig:
    if label not in VARIANT_LABELS:
        raise ValueError(f"unknown variant {label!r}; expected one of {VARIANT_LABELS}")
    spawn = {"F": Spawn.FIXED, "R": Spawn.RANDOM}
    move = {"F": StagMove.FOLLOWS, "R": StagMove.RANDOM}
    return EnvConfig(
        agent_spawn=spawn[label[0]],
        stag_spawn=spawn[label[1]],
        stag_move=move[label[2]],
        label=label,
    )


def coop_variant(base: EnvConfig) -> EnvConfig:
    """Cooperation-inducing copy of ``base``: no foraging reward, -0.5 per step."""
    p = base.payoffs
    label = base.label if base.label.startswith("c") else "c" + base.label
    return replace(
        base,
        payoffs=StagHuntPayoffs(h=p.h, f=0.0, f_star=0.0, m=p.m),
        step_penalty=-0.5,
        label=label,
    )


def config_for(label: str) -> EnvConfig:
    """Resolve ``XXX`` or ``cXXX`` labels."""
    if label.startswith("c"):
        return coop_variant(variant(label[1:]))
    return variant(label)


def cells(config: EnvConfig) -> list[GridPos]:
    return [(x, y) for y in range(config.height) for x in range(config.width)]


def reset(config: EnvConfig, rng: np.random.Generator) -> EnvState:
    w, h = config.width, config.height
    if w * h < 5:
        raise ValueError("grid needs room for five distinct entities")
    taken: list[GridPos] = []

    def draw() -> GridPos:
        free = [c for c in cells(config) if c not in taken]
        pos = free[int(rng.integers(len(free)))]
        taken.append(pos)
        return pos

    # fixed entities claim their cells before anything is sampled
    agents: list[GridPos | None] = [None, None]
    stag: GridPos | None = None
    if config.agent_spawn is Spawn.FIXED:
        agents = [(0, 0), (w - 1, 0)]
        taken.extend(agents)
    if config.stag_spawn is Spawn.FIXED:
        stag = (w // 2, h // 2)
        taken.append(stag)
    if config.agent_spawn is Spawn.RANDOM:
        agents = [draw(), draw()]
    if config.stag_spawn is Spawn.RANDOM:
        stag = draw()
    plants = (draw(), draw())
    return EnvState(
        agents=(agents[0], agents[1]),
        frozen=(False, False),
        stag=stag,
        plants=plants,
    )


def _clamp_move(pos: GridPos, action: int, w: int, h: int) -> GridPos:
    dx, dy = _DELTAS[action]
    x, y = pos[0] + dx, pos[1] + dy
    if 0 <= x < w and 0 <= y < h:
        return (x, y)
    return pos


def neighbours(pos: GridPos, config: EnvConfig) -> list[GridPos]:
    """In-grid 4-neighbours sorted by (y, x)."""
    x, y = pos
    out = [(x, y - 1), (x - 1, y), (x + 1, y), (x, y + 1)]
    return [(a, b) for a, b in out if 0 <= a < config.width and 0 <= b < config.height]


def _d2(a: GridPos, b: GridPos) -> int:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def move_agents(state: EnvState, actions: Sequence[int], config: EnvConfig) -> EnvState:
    w, h = config.width, config.height
    a0, a1 = state.agents
    if not state.frozen[0]:
        a0 = _clamp_move(a0, actions[0], w, h)
    if not state.frozen[1]:
        a1 = _clamp_move(a1, actions[1], w, h)
    return EnvState((a0, a1), state.frozen, state.stag, state.plants, state.t, state.done)


def stag_move_follow(state: EnvState, config: EnvConfig) -> GridPos:
    active = [i for i in (0, 1) if not state.frozen[i]]
    if not active:
        raise ValueError("no active agent for the stag to follow")
    # min() keeps the first of equal keys, so ties go to agent 0
    target = min(active, key=lambda i: _d2(state.agents[i], state.stag))
    goal = state.agents[target]
    return min(neighbours(state.stag, config), key=lambda c: (_d2(c, goal), c[1], c[0]))


def stag_move_random(state: EnvState, config: EnvConfig, rng: np.random.Generator) -> GridPos:
    opts = neighbours(state.stag, config)
    return opts[int(rng.integers(len(opts)))]


def stag_options(state: EnvState, config: EnvConfig) -> list[tuple[GridPos, float]]:
    """Distribution of the stag's next cell given post-move agent positions."""
    if config.stag_move is StagMove.FOLLOWS:
        return [(stag_move_follow(state, config), 1.0)]
    opts = neighbours(state.stag, config)
    return [(c, 1.0 / len(opts)) for c in opts]


def settle(state: EnvState, stag: GridPos, config: EnvConfig) -> tuple[EnvState, StepResult]:
    """Place the stag at ``stag`` and evaluate rewards on the final occupancy."""
    p = config.payoffs
    frozen = list(state.frozen)
    active = (not frozen[0], not frozen[1])
    rewards = [0.0, 0.0]
    newly = [False, False]
    on_stag = [active[i] and state.agents[i] == stag for i in (0, 1)]
    if on_stag[0] and on_stag[1]:
        rewards = [p.h, p.h]
        newly = [True, True]
    else:
        for i in (0, 1):
            if on_stag[i]:
                rewards[i] = p.m
                newly[i] = True
            elif active[i] and state.agents[i] in state.plants:
                rewards[i] = p.f
                newly[i] = True
    if config.step_penalty:
        for i in (0, 1):
            if active[i]:
                rewards[i] += config.step_penalty
    for i in (0, 1):
        frozen[i] = frozen[i] or newly[i]
    t = state.t + 1
    terminated = frozen[0] and frozen[1]
    truncated = (not terminated) and config.time_limit is not None and t >= config.time_limit
    new = EnvState(
        state.agents, (frozen[0], frozen[1]), stag, state.plants, t, terminated or truncated
    )
    return new, StepResult((rewards[0], rewards[1]), (newly[0], newly[1]), terminated, truncated)


def step(
    state: EnvState, actions: Sequence[int], config: EnvConfig, rng: np.random.Generator
) -> tuple[EnvState, StepResult]:
    if state.done:
        raise RuntimeError("step() called on a finished episode")
    for a in actions:
        if not 0 <= a < N_ACTIONS:
            raise ValueError(f"invalid action {a}")
    moved = move_agents(state, actions, config)
    if config.stag_move is StagMove.FOLLOWS:
        stag = stag_move_follow(moved, config)
    else:
        stag = stag_move_random(moved, config, rng)
    return settle(moved, stag, config)


def observe(state: EnvState, agent_id: int, config: EnvConfig) -> np.ndarray:
    out = np.empty(OBS_DIM)
    _fill_obs(out, state, agent_id, config)
    return out


def _fill_obs(out: np.ndarray, state: EnvState, agent_id: int, config: EnvConfig) -> None:
    sx = 1.0 / (config.width - 1)
    sy = 1.0 / (config.height - 1)
    me, other = state.agents[agent_id], state.agents[1 - agent_id]
    (p0, p1) = state.plants
    out[:10] = (
        me[0] * sx, me[1] * sy,
        other[0] * sx, other[1] * sy,
        state.stag[0] * sx, state.stag[1] * sy,
        p0[0] * sx, p0[1] * sy,
        p1[0] * sx, p1[1] * sy,
    )
    out[10] = float(state.frozen[agent_id])
    out[11] = float(state.frozen[1 - agent_id])


def observe_batch(states: Sequence[EnvState], agent_id: int, config: EnvConfig) -> np.ndarray:
    out = np.empty((len(states), OBS_DIM))
    for k, s in enumerate(states):
        _fill_obs(out[k], s, agent_id, config)
    return out


class StagHuntEnv:
    """Stateful wrapper owning its spawn and stag random streams."""

    def __init__(self, config: EnvConfig, spawn_rng: np.random.Generator,
                 stag_rng: np.random.Generator | None = None):
        self.config = config
        self.spawn_rng = spawn_rng
        self.stag_rng = stag_rng if stag_rng is not None else spawn_rng
        self.state: EnvState | None = None

    def reset(self) -> EnvState:
        self.state = reset(self.config, self.spawn_rng)
        return self.state

    def step(self, actions: Sequence[int]) -> StepResult:
        self.state, res = step(self.state, actions, self.config, self.stag_rng)
        return res


TRAJECTORY_HEADER = (
    "t", "agent0_x", "agent0_y", "agent1_x", "agent1_y", "stag_x", "stag_y",
    "action0", "action1", "reward0", "reward1", "frozen0", "frozen1",
)


def trajectory_rows(
    states: Sequence[EnvState], actions: Sequence[Sequence[int]], results: Sequence[StepResult]
) -> Iterable[list]:
    """Rows for the trajectory CSV: the state after each step plus what caused it."""
    for s, a, r in zip(states, actions, results):
        yield [
            s.t, *s.agents[0], *s.agents[1], *s.stag,
            ACTION_NAMES[a[0]], ACTION_NAMES[a[1]],
            r.rewards[0], r.rewards[1], int(s.frozen[0]), int(s.frozen[1]),
        ]


def dump_trajectory(states, actions, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    w.writerows(trajectory_rows(states, actions, results))
    return buf.getvalue()
