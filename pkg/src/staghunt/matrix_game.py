"""Exact analysis of 2x2 social-dilemma matrix games.

Payoffs use the (R, P, S, T) convention, always from the point of view of
the player that owns them: R for mutual cooperation, P for mutual
defection, S for cooperating against a defector and T for defecting
against a cooperator.  In the Stag Hunt, cooperate = Hunt and
defect = Forage.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

HUNT = 0
FORAGE = 1
ACTION_NAMES = ("Hunt", "Forage")


class Label(str, Enum):
    PAYOFF_DOMINANT = "PayoffDominant"
    RISK_DOMINANT = "RiskDominant"
    OTHER = "Other"


@dataclass(frozen=True)
class Payoff2x2:
    R: float
    P: float
    S: float
    T: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.R, self.P, self.S, self.T)):
            raise ValueError(f"non-finite payoff in {self}")

    def matrix(self) -> list[list[float]]:
        """Own payoff indexed by [own action][other action]."""
        return [[self.R, self.S], [self.T, self.P]]

    def shifted(self, c: float) -> "Payoff2x2":
        return Payoff2x2(self.R + c, self.P + c, self.S + c, self.T + c)


@dataclass(frozen=True)
class StagHuntPayoffs:
    h: float = 25.0
    f: float = 2.0
    f_star: float = 2.0
    m: float = -1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.h, self.f, self.f_star, self.m)):
            raise ValueError(f"non-finite payoff in {self}")


@dataclass
class NashResult:
    pure_equilibria: list[tuple[int, int]]
    mixed_hunt_probability: float | None = None
    labels: dict[tuple[int, int], Label] = field(default_factory=dict)

    def named(self) -> list[tuple[str, str]]:
        return [(ACTION_NAMES[a], ACTION_NAMES[b]) for a, b in self.pure_equilibria]


def to_mgsd(sh: StagHuntPayoffs) -> Payoff2x2:
    return Payoff2x2(R=sh.h, P=sh.f, S=sh.m, T=sh.f_star)


def from_mgsd(p: Payoff2x2) -> StagHuntPayoffs:
    return StagHuntPayoffs(h=p.R, f=p.P, f_star=p.T, m=p.S)


def is_social_dilemma(p: Payoff2x2, eps: float = 0.0) -> bool:
    """True when all five social-dilemma inequalities hold.

    ``eps`` is a required margin on every strict inequality; 0 means the
    plain strict comparison.
    """
    R, P, S, T = p.R, p.P, p.S, p.T
    return (
        R - P > eps
        and R - S > eps
        and 2 * R - (T + S) > eps
        and (T - R > eps or P - S > eps)
    )


def is_stag_hunt(sh: StagHuntPayoffs) -> bool:
    return sh.h > sh.f_star and sh.f_star >= sh.f and sh.f > sh.m


def pure_nash(row: Payoff2x2, col: Payoff2x2) -> NashResult:
    """Enumerate pure equilibria of the bimatrix game given by ``row`` and ``col``.

    Profiles are ``(row action, col action)`` with 0 = Hunt/Cooperate and
    1 = Forage/Defect.  A profile is an equilibrium when neither player can
    strictly improve by deviating alone, so payoff ties admit several.
    """
    a = row.matrix()
    b = col.matrix()  # indexed [col action][row action]
    eqs = []
    for i in (HUNT, FORAGE):
        for j in (HUNT, FORAGE):
            row_ok = a[i][j] >= a[1 - i][j]
            col_ok = b[j][i] >= b[1 - j][i]
            if row_ok and col_ok:
                eqs.append((i, j))
    stag = is_stag_hunt(from_mgsd(row)) and is_stag_hunt(from_mgsd(col))
    labels = {}
    for prof in eqs:
        if stag and prof == (HUNT, HUNT):
            labels[prof] = Label.PAYOFF_DOMINANT
        elif stag and prof == (FORAGE, FORAGE):
            labels[prof] = Label.RISK_DOMINANT
        else:
            labels[prof] = Label.OTHER
    return NashResult(pure_equilibria=eqs, labels=labels)


def mixed_nash_symmetric(sh: StagHuntPayoffs) -> float:
    """Opponent hunt probability that leaves a player indifferent between actions."""
    denom = (sh.h - sh.f_star) + (sh.f - sh.m)
    if denom == 0:
        raise ValueError("indifference point undefined: (h - f*) + (f - m) == 0")
    return (sh.f - sh.m) / denom


def solve_stag_hunt(sh: StagHuntPayoffs) -> NashResult:
    p = to_mgsd(sh)
    res = pure_nash(p, p)
    if sh.h > sh.f_star and sh.f > sh.m:
        q = mixed_nash_symmetric(sh)
        if 0.0 < q < 1.0:
            res.mixed_hunt_probability = q
    return res
