"""Ground truth for the environment: scripted agents and exact expectations.

``exact_value`` pushes the full probability distribution over episode
states forward one step at a time, so identical states reached through
different histories are merged and the expectation is exact.
``reference_transitions`` is a second, deliberately separate reading of
the grid rules used to cross-check :mod:`staghunt.env`.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import env as E


class ScriptedKind(str, Enum):
    GREEDY_HUNT = "GreedyHunt"
    GREEDY_FORAGE = "GreedyForage"
    STATIONARY = "Stationary"
    UNIFORM_RANDOM = "UniformRandom"


def _toward(src: E.GridPos, dst: E.GridPos) -> int:
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    if dx == 0 and dy == 0:
        return E.STAY
    if abs(dx) >= abs(dy):
        return E.RIGHT if dx > 0 else E.LEFT
    return E.DOWN if dy > 0 else E.UP


def _nearest_plant(state: E.EnvState, agent_id: int) -> E.GridPos:
    me = state.agents[agent_id]
    return min(state.plants, key=lambda p: (p[0] - me[0]) ** 2 + (p[1] - me[1]) ** 2)


def action_distribution(kind: ScriptedKind, state: E.EnvState, agent_id: int) -> list[tuple[int, float]]:
    if kind is ScriptedKind.UNIFORM_RANDOM:
        return [(a, 1.0 / E.N_ACTIONS) for a in range(E.N_ACTIONS)]
    if kind is ScriptedKind.STATIONARY:
        return [(E.STAY, 1.0)]
    me = state.agents[agent_id]
    if kind is ScriptedKind.GREEDY_HUNT:
        return [(_toward(me, state.stag), 1.0)]
    return [(_toward(me, _nearest_plant(state, agent_id)), 1.0)]


def scripted_action(kind: ScriptedKind, state: E.EnvState, agent_id: int,
                    rng: np.random.Generator | None = None) -> int:
    if kind is ScriptedKind.UNIFORM_RANDOM:
        return int(rng.integers(E.N_ACTIONS))
    return action_distribution(kind, state, agent_id)[0][0]


class ScriptedPolicy:
    """Adapter giving scripted agents the batched ``act`` interface used by rollouts."""

    def __init__(self, kind: ScriptedKind | str):
        self.kind = ScriptedKind(kind)

    def act(self, states, agent_id: int, config: E.EnvConfig, rng: np.random.Generator) -> np.ndarray:
        return np.array([scripted_action(self.kind, s, agent_id, rng) for s in states], dtype=np.int64)

    def __repr__(self):
        return f"ScriptedPolicy({self.kind.value})"


# ---------------------------------------------------------------- exact values

@dataclass(frozen=True)
class ExactValue:
    discounted: tuple[float, float]
    undiscounted: tuple[float, float]
    gamma: float
    horizon: int
    truncation_mass: float
    max_states: int


class StateBudgetExceeded(RuntimeError):
    pass


def exact_value(config: E.EnvConfig, kinds: tuple[ScriptedKind, ScriptedKind], start: E.EnvState,
                gamma: float = 1.0, horizon: int = 200, budget: int = 200_000) -> ExactValue:
    """Exact expected returns of a scripted pair from ``start`` over ``horizon`` steps."""
    kinds = tuple(ScriptedKind(k) for k in kinds)
    dist = {start: 1.0}
    disc = [0.0, 0.0]
    undisc = [0.0, 0.0]
    widest = 1
    t = 0
    while dist and t < horizon:
        nxt: dict[E.EnvState, float] = defaultdict(float)
        g = gamma ** t
        for s, ps in dist.items():
            d0 = action_distribution(kinds[0], s, 0) if not s.frozen[0] else [(E.STAY, 1.0)]
            d1 = action_distribution(kinds[1], s, 1) if not s.frozen[1] else [(E.STAY, 1.0)]
            for (a0, q0), (a1, q1) in itertools.product(d0, d1):
                moved = E.move_agents(s, (a0, a1), config)
                for stag, qs in E.stag_options(moved, config):
                    ns, res = E.settle(moved, stag, config)
                    w = ps * q0 * q1 * qs
                    for i in (0, 1):
                        disc[i] += w * g * res.rewards[i]
                        undisc[i] += w * res.rewards[i]
                    if not ns.done:
                        nxt[ns] += w
        dist = nxt
        widest = max(widest, len(dist))
        if len(dist) > budget:
            raise StateBudgetExceeded(f"{len(dist)} live states at t={t + 1} exceeds budget {budget}")
        t += 1
    mass = float(sum(dist.values()))
    return ExactValue((disc[0], disc[1]), (undisc[0], undisc[1]), gamma, horizon,
                      min(max(mass, 0.0), 1.0), widest)


@dataclass(frozen=True)
class MonteCarloValue:
    mean: tuple[float, float]
    stderr: tuple[float, float]
    n: int
    returns: np.ndarray  # (n, 2) discounted returns per episode


def monte_carlo_value(config: E.EnvConfig, kinds: tuple[ScriptedKind, ScriptedKind], n: int,
                      gamma: float, rng: np.random.Generator, start: E.EnvState | None = None,
                      horizon: int = 200, spawn_rng: np.random.Generator | None = None) -> MonteCarloValue:
    """Sample estimate of the same quantity ``exact_value`` computes.

    Episodes start from ``start`` when given, otherwise from a fresh reset
    drawn with ``spawn_rng``.
    """
    if n < 1:
        raise ValueError("need at least one episode")
    kinds = tuple(ScriptedKind(k) for k in kinds)
    spawn_rng = spawn_rng if spawn_rng is not None else rng
    out = np.zeros((n, 2))
    for ep in range(n):
        s = start if start is not None else E.reset(config, spawn_rng)
        t = 0
        while not s.done and t < horizon:
            acts = [E.STAY if s.frozen[i] else scripted_action(kinds[i], s, i, rng) for i in (0, 1)]
            s, res = E.step(s, acts, config, rng)
            out[ep] += (gamma ** t) * np.asarray(res.rewards)
            t += 1
    se = out.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(2)
    return MonteCarloValue(tuple(out.mean(axis=0)), tuple(se), n, out)


# ---------------------------------------------------------------- reference dynamics

_MOVES = {"Up": (0, -1), "Down": (0, 1), "Left": (-1, 0), "Right": (1, 0), "Stay": (0, 0)}


def reference_transitions(state: E.EnvState, actions, config: E.EnvConfig):
    """All ``(next_state, rewards, probability)`` outcomes of one timestep.

    Written directly from the rules of the game without calling into
    :mod:`staghunt.env` beyond its data types.
    """
    W, H = config.width, config.height
    pay = config.payoffs
    pos = [list(state.agents[0]), list(state.agents[1])]
    for i in range(2):
        if state.frozen[i]:
            continue
        dx, dy = _MOVES[E.ACTION_NAMES[actions[i]]]
        nx, ny = pos[i][0] + dx, pos[i][1] + dy
        if nx < 0 or nx >= W or ny < 0 or ny >= H:
            nx, ny = pos[i]  # walls block
        pos[i] = [nx, ny]

    sx, sy = state.stag
    cand = []
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        if 0 <= sx + dx < W and 0 <= sy + dy < H:
            cand.append((sx + dx, sy + dy))
    if config.stag_move is E.StagMove.FOLLOWS:
        live = [i for i in range(2) if not state.frozen[i]]
        dist = [math.hypot(pos[i][0] - sx, pos[i][1] - sy) for i in live]
        target = pos[live[dist.index(min(dist))]]
        scored = sorted(cand, key=lambda c: (math.hypot(c[0] - target[0], c[1] - target[1]), c[1], c[0]))
        branches = [(scored[0], 1.0)]
    else:
        branches = [(c, 1.0 / len(cand)) for c in cand]

    outcomes = []
    for stag, prob in branches:
        frozen = list(state.frozen)
        reward = [0.0, 0.0]
        hunters = [i for i in range(2) if not state.frozen[i] and tuple(pos[i]) == stag]
        if len(hunters) == 2:
            reward = [pay.h, pay.h]
            frozen = [True, True]
        else:
            for i in hunters:
                reward[i] = pay.m
                frozen[i] = True
            for i in range(2):
                if not state.frozen[i] and i not in hunters and tuple(pos[i]) in state.plants:
                    reward[i] = pay.f
                    frozen[i] = True
        for i in range(2):
            if not state.frozen[i]:
                reward[i] += config.step_penalty
        t = state.t + 1
        over = all(frozen) or (config.time_limit is not None and t >= config.time_limit)
        ns = E.EnvState((tuple(pos[0]), tuple(pos[1])), (frozen[0], frozen[1]), stag,
                        state.plants, t, over)
        outcomes.append((ns, (reward[0], reward[1]), prob))
    return outcomes


def _env_transitions(state, actions, config):
    moved = E.move_agents(state, actions, config)
    out = []
    for stag, prob in E.stag_options(moved, config):
        ns, res = E.settle(moved, stag, config)
        out.append((ns, res.rewards, prob))
    return out


def start_states(config: E.EnvConfig) -> list[E.EnvState]:
    """Every state ``reset`` can produce for ``config``."""
    grid = E.cells(config)
    w, h = config.width, config.height
    agent_opts = ([((0, 0), (w - 1, 0))] if config.agent_spawn is E.Spawn.FIXED
                  else list(itertools.permutations(grid, 2)))
    stag_opts = [(w // 2, h // 2)] if config.stag_spawn is E.Spawn.FIXED else grid
    out = []
    for agents in agent_opts:
        for stag in stag_opts:
            if stag in agents:
                continue
            free = [c for c in grid if c not in agents and c != stag]
            for plants in itertools.permutations(free, 2):
                out.append(E.EnvState(agents, (False, False), stag, plants))
    return out


@dataclass
class EquivalenceReport:
    states: int = 0
    comparisons: int = 0
    mismatches: int = 0
    border_clamps: int = 0
    stag_on_plant: int = 0
    examples: list = None

    @property
    def ok(self) -> bool:
        return self.mismatches == 0 and self.comparisons > 0


def _canon(outs):
    return sorted(((s.agents, s.frozen, s.stag, s.plants, s.done), r, round(p, 12)) for s, r, p in outs)


def transition_equivalence_check(config: E.EnvConfig, max_states: int = 500_000) -> EquivalenceReport:
    """Compare env dynamics with the reference over every reachable (state, joint action)."""
    config = replace(config, time_limit=None)
    rep = EquivalenceReport(examples=[])
    seen = set()
    frontier = start_states(config)
    for s in frontier:
        seen.add(s)
    actions = list(itertools.product(range(E.N_ACTIONS), repeat=2))
    while frontier:
        nxt = []
        for s in frontier:
            rep.states += 1
            for acts in actions:
                if (s.frozen[0] and acts[0] != E.STAY) or (s.frozen[1] and acts[1] != E.STAY):
                    continue  # frozen agents ignore actions; one representative suffices
                mine = _env_transitions(s, acts, config)
                ref = reference_transitions(s, acts, config)
                rep.comparisons += len(ref)
                for i in (0, 1):
                    if not s.frozen[i] and acts[i] != E.STAY and mine[0][0].agents[i] == s.agents[i]:
                        rep.border_clamps += 1
                if _canon(mine) != _canon(ref):
                    rep.mismatches += 1
                    if len(rep.examples) < 10:
                        rep.examples.append((s, acts, mine, ref))
                for ns, _, _ in ref:
                    if ns.stag in ns.plants:
                        rep.stag_on_plant += 1
                    if ns.done:
                        continue
                    key = replace(ns, t=0)
                    if key not in seen:
                        seen.add(key)
                        nxt.append(key)
        if len(seen) > max_states:
            raise StateBudgetExceeded(f"more than {max_states} reachable states")
        frontier = nxt
    return rep
