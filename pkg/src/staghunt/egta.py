"""Empirical game-theoretic analysis of trained (or scripted) policies.

Cooperative and defective policies are cross-played in the four pairings
of a 2x2 meta-game; the mean episode returns form an empirical payoff
matrix which is then checked against the social-dilemma inequalities.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

from . import env as E
from .matrix_game import FORAGE, HUNT, Payoff2x2, from_mgsd, is_social_dilemma, pure_nash
from .policy import MlpParams, forward, sample_action
from .seeding import stream

log = logging.getLogger(__name__)


class Policy(Protocol):
    def act(self, states: Sequence[E.EnvState], agent_id: int, config: E.EnvConfig,
            rng: np.random.Generator) -> np.ndarray: ...


class NeuralPolicy:
    def __init__(self, params: MlpParams, name: str = "neural"):
        if params.dims.obs_dim != E.OBS_DIM or params.dims.n_actions != E.N_ACTIONS:
            raise ValueError("expected a per-agent policy (12 inputs, 5 actions)")
        self.params = params
        self.name = name

    def act(self, states, agent_id, config, rng):
        logits, _ = forward(self.params, E.observe_batch(states, agent_id, config))
        a, _ = sample_action(logits, rng)
        return a

    def __repr__(self):
        return f"NeuralPolicy({self.name})"


class MixturePolicy:
    """Per episode, behave like ``first`` with probability ``p`` else like ``second``.

    The choice is stored per environment slot by :func:`play_episodes`
    through ``begin_episode``.
    """

    def __init__(self, first: Policy, second: Policy, p: float):
        self.first, self.second, self.p = first, second, p
        self._pick: dict[int, bool] = {}

    def begin_episode(self, slot: int, rng: np.random.Generator):
        self._pick[slot] = bool(rng.random() < self.p)

    def act(self, states, agent_id, config, rng, slots=None):
        slots = slots if slots is not None else range(len(states))
        out = np.empty(len(states), dtype=np.int64)
        use_first = np.array([self._pick.get(k, True) for k in slots], dtype=bool)
        if use_first.any():
            out[use_first] = self.first.act([s for s, u in zip(states, use_first) if u], agent_id, config, rng)
        if (~use_first).any():
            out[~use_first] = self.second.act([s for s, u in zip(states, use_first) if not u], agent_id, config, rng)
        return out


@dataclass
class EpisodeBatch:
    returns: np.ndarray  # (n, 2) undiscounted
    joint_hunt: np.ndarray  # (n,) bool
    truncated: np.ndarray  # (n,) bool
    lengths: np.ndarray

    @property
    def n(self) -> int:
        return len(self.returns)


def play_episodes(config: E.EnvConfig, policies: tuple[Policy, Policy], n: int, seed: int,
                  fixed_spawn_seed: int | None = None, pool: int = 64) -> EpisodeBatch:
    """Play ``n`` complete episodes with agent ``i`` controlled by ``policies[i]``.

    ``fixed_spawn_seed`` replays the same initial state (plants included)
    in every episode.
    """
    if n < 1:
        raise ValueError("need at least one episode")
    spawn_rng = stream(seed, "spawn")
    stag_rng = stream(seed, "stag")
    act_rng = stream(seed, "sampling")

    def new_state():
        if fixed_spawn_seed is not None:
            return E.reset(config, np.random.default_rng(fixed_spawn_seed))
        return E.reset(config, spawn_rng)

    returns = np.zeros((n, 2))
    hunt = np.zeros(n, dtype=bool)
    trunc = np.zeros(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    live: list[tuple[int, E.EnvState]] = []  # (episode index, state)
    started = 0

    def begin(slot_ep):
        for pol in policies:
            if hasattr(pol, "begin_episode"):
                pol.begin_episode(slot_ep, act_rng)

    while started < min(pool, n):
        begin(started)
        live.append((started, new_state()))
        started += 1
    while live:
        actions = np.full((len(live), 2), E.STAY, dtype=np.int64)
        for i, pol in enumerate(policies):
            idx = [j for j, (_, s) in enumerate(live) if not s.frozen[i]]
            if not idx:
                continue
            states = [live[j][1] for j in idx]
            if isinstance(pol, MixturePolicy):
                a = pol.act(states, i, config, act_rng, slots=[live[j][0] for j in idx])
            else:
                a = pol.act(states, i, config, act_rng)
            actions[idx, i] = a
        nxt = []
        for j, (ep, s) in enumerate(live):
            ns, res = E.step(s, actions[j], config, stag_rng)
            returns[ep] += res.rewards
            lengths[ep] += 1
            if res.newly_frozen == (True, True) and ns.agents[0] == ns.agents[1] == ns.stag:
                hunt[ep] = True
            if ns.done:
                trunc[ep] = res.truncated
                if started < n:
                    begin(started)
                    nxt.append((started, new_state()))
                    started += 1
            else:
                nxt.append((ep, ns))
        live = nxt
    return EpisodeBatch(returns, hunt, trunc, lengths)


# ---------------------------------------------------------------- classification

class PolicyClass(str, Enum):
    COOPERATIVE = "Cooperative"
    DEFECTIVE = "Defective"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class PolicyClassification:
    alpha: float
    cls: PolicyClass
    alpha_c: float = 0.5
    alpha_d: float = 0.1
    episodes: int = 0


def classify_alpha(alpha: float, alpha_c: float = 0.5, alpha_d: float = 0.1) -> PolicyClass:
    if alpha >= alpha_c:
        return PolicyClass.COOPERATIVE
    if alpha <= alpha_d:
        return PolicyClass.DEFECTIVE
    return PolicyClass.UNCLASSIFIED


def classify_policy(policy, config: E.EnvConfig, n: int, seed: int, alpha_c: float = 0.5,
                    alpha_d: float = 0.1, fixed_spawn_seed: int | None = None) -> PolicyClassification:
    """Joint-hunt rate in self-play.

    ``policy`` is either one policy (used for both agents, each acting on
    its own observation) or a ``(policy_0, policy_1)`` pair.
    """
    pair = tuple(policy) if isinstance(policy, (tuple, list)) else (policy, policy)
    eb = play_episodes(config, pair, n, seed, fixed_spawn_seed)
    alpha = float(eb.joint_hunt.mean())
    return PolicyClassification(alpha, classify_alpha(alpha, alpha_c, alpha_d), alpha_c, alpha_d, n)


# ---------------------------------------------------------------- empirical payoffs

CELLS = ("CC", "CD", "DC", "DD")


@dataclass
class CellStats:
    mean: tuple[float, float]
    stderr: tuple[float, float]
    episodes: int
    seed: int
    truncated: int = 0
    joint_hunt_rate: float = 0.0


@dataclass
class EmpiricalPayoffMatrix:
    cells: dict[str, CellStats]
    label: str = ""
    notes: dict = field(default_factory=dict)

    @property
    def R(self) -> float:
        return self.cells["CC"].mean[0]

    @property
    def P(self) -> float:
        return self.cells["DD"].mean[0]

    @property
    def S(self) -> float:
        return self.cells["CD"].mean[0]

    @property
    def T(self) -> float:
        return self.cells["DC"].mean[0]

    def row_payoffs(self) -> Payoff2x2:
        return Payoff2x2(self.R, self.P, self.S, self.T)

    def col_payoffs(self) -> Payoff2x2:
        """Player 2's own-perspective payoffs (it cooperates in CC and DC)."""
        c = self.cells
        return Payoff2x2(R=c["CC"].mean[1], P=c["DD"].mean[1], S=c["DC"].mean[1], T=c["CD"].mean[1])

    def stderr(self, which: str) -> float:
        cell = {"R": "CC", "P": "DD", "S": "CD", "T": "DC"}[which]
        return self.cells[cell].stderr[0]

    @classmethod
    def from_means(cls, table: dict[str, tuple[float, float]], episodes: int = 5000,
                   label: str = "") -> "EmpiricalPayoffMatrix":
        """Build a matrix from reported per-cell means (no sampling information)."""
        return cls({k: CellStats(tuple(v), (0.0, 0.0), episodes, -1) for k, v in table.items()}, label)


def _cell(batch: EpisodeBatch, seed: int) -> CellStats:
    r = batch.returns
    se = r.std(axis=0, ddof=1) / math.sqrt(batch.n) if batch.n > 1 else np.zeros(2)
    return CellStats((float(r[:, 0].mean()), float(r[:, 1].mean())), (float(se[0]), float(se[1])),
                     batch.n, seed, int(batch.truncated.sum()), float(batch.joint_hunt.mean()))


def empirical_payoffs(pi_c1: Policy, pi_d1: Policy, pi_c2: Policy, pi_d2: Policy,
                      config: E.EnvConfig, n: int = 5000, seed: int = 0,
                      fixed_spawn_seed: int | None = None) -> EmpiricalPayoffMatrix:
    """Cross-play player-1 policies (agent 0) against player-2 policies (agent 1)."""
    if n < 1:
        raise ValueError("need at least one episode per cell")
    pairs = {"CC": (pi_c1, pi_c2), "CD": (pi_c1, pi_d2), "DC": (pi_d1, pi_c2), "DD": (pi_d1, pi_d2)}
    cells = {}
    for k, name in enumerate(CELLS):
        cell_seed = seed * 4 + k
        batch = play_episodes(config, pairs[name], n, cell_seed, fixed_spawn_seed)
        cells[name] = _cell(batch, cell_seed)
    return EmpiricalPayoffMatrix(cells, config.label)


# ---------------------------------------------------------------- certification

@dataclass
class InequalityCheck:
    name: str
    margin: float
    stderr: float
    holds: bool


@dataclass
class Certification:
    is_mgsd: bool
    is_stag_hunt_ordered: bool
    checks: list[InequalityCheck]

    def report(self) -> str:
        lines = [f"MGSD: {self.is_mgsd}   Stag Hunt ordering (R > T >= P > S): {self.is_stag_hunt_ordered}"]
        for c in self.checks:
            lines.append(f"  {c.name:<10} margin={c.margin:+.4f}  stderr={c.stderr:.4f}  {'yes' if c.holds else 'no'}")
        lines.append("  (T > R and P > S are alternatives: an MGSD needs at least one of them)")
        return "\n".join(lines)


def certify(matrix: EmpiricalPayoffMatrix) -> Certification:
    p = matrix.row_payoffs()
    se = {k: matrix.stderr(k) for k in "RPST"}

    def comb(*ks):
        return math.sqrt(sum(se[k] ** 2 for k in ks))

    checks = [
        InequalityCheck("R > P", p.R - p.P, comb("R", "P"), p.R > p.P),
        InequalityCheck("R > S", p.R - p.S, comb("R", "S"), p.R > p.S),
        InequalityCheck("2R > T+S", 2 * p.R - p.T - p.S, math.sqrt(4 * se["R"] ** 2 + se["T"] ** 2 + se["S"] ** 2),
                        2 * p.R > p.T + p.S),
        InequalityCheck("T > R", p.T - p.R, comb("T", "R"), p.T > p.R),
        InequalityCheck("P > S", p.P - p.S, comb("P", "S"), p.P > p.S),
        InequalityCheck("T >= P", p.T - p.P, comb("T", "P"), p.T >= p.P),
    ]
    mgsd = is_social_dilemma(p)
    sh = from_mgsd(p)
    ordered = sh.h > sh.f_star >= sh.f > sh.m
    return Certification(mgsd, ordered, checks)


@dataclass
class DeviationAudit:
    s_below_p: bool
    p_within_forage_ceiling: bool
    dd_is_equilibrium: bool
    equilibria: list[tuple[int, int]]
    ceiling: float
    p: float
    p_stderr: float

    @property
    def passed(self) -> bool:
        return self.s_below_p and self.p_within_forage_ceiling and self.dd_is_equilibrium

    def report(self) -> str:
        names = {HUNT: "C", FORAGE: "D"}
        eqs = ", ".join(f"({names[a]},{names[b]})" for a, b in self.equilibria) or "none"
        return "\n".join([
            f"Nash deviation audit: {'PASS' if self.passed else 'FAIL'}",
            f"  S < P (unilateral cooperation loses): {self.s_below_p}",
            f"  P = {self.p:.4f} <= {self.ceiling:g} + 3*{self.p_stderr:.4f}: {self.p_within_forage_ceiling}",
            f"  meta-game pure equilibria: {eqs}",
        ])


def nash_deviation_audit(matrix: EmpiricalPayoffMatrix, forage_reward: float = 2.0) -> DeviationAudit:
    row, col = matrix.row_payoffs(), matrix.col_payoffs()
    res = pure_nash(row, col)
    p_se = matrix.stderr("P")
    return DeviationAudit(
        s_below_p=row.S < row.P,
        p_within_forage_ceiling=row.P <= forage_reward + 3 * p_se,
        dd_is_equilibrium=(FORAGE, FORAGE) in res.pure_equilibria,
        equilibria=res.pure_equilibria,
        ceiling=forage_reward,
        p=row.P,
        p_stderr=p_se,
    )


# ---------------------------------------------------------------- reports

EGTA_CSV_HEADER = ("cell", "player", "mean", "stderr", "episodes")


def matrix_csv(matrix: EmpiricalPayoffMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EGTA_CSV_HEADER)
    for name in CELLS:
        c = matrix.cells[name]
        for player in (0, 1):
            w.writerow([name, player + 1, repr(c.mean[player]), repr(c.stderr[player]), c.episodes])
    return buf.getvalue()


def read_matrix_csv(text: str, label: str = "") -> EmpiricalPayoffMatrix:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or tuple(rows[0].keys()) != EGTA_CSV_HEADER:
        raise ValueError("not an EGTA payoff CSV")
    acc: dict[str, dict] = {}
    for r in rows:
        d = acc.setdefault(r["cell"], {"mean": [0.0, 0.0], "se": [0.0, 0.0], "n": 0})
        i = int(r["player"]) - 1
        d["mean"][i] = float(r["mean"])
        d["se"][i] = float(r["stderr"])
        d["n"] = int(r["episodes"])
    return EmpiricalPayoffMatrix(
        {k: CellStats(tuple(v["mean"]), tuple(v["se"]), v["n"], -1) for k, v in acc.items()}, label)


def matrix_table(matrix: EmpiricalPayoffMatrix) -> str:
    """Two-decimal tuple table: rows are player 1's policy, columns player 2's."""
    c = matrix.cells

    def tup(name):
        m = c[name].mean
        return f"({m[0]:.2f}, {m[1]:.2f})"

    head = f"{matrix.label or 'meta-game':<10}{'pi2_C':>18}{'pi2_D':>18}"
    return "\n".join([
        head,
        f"{'pi1_C':<10}{tup('CC'):>18}{tup('CD'):>18}",
        f"{'pi1_D':<10}{tup('DC'):>18}{tup('DD'):>18}",
    ])
