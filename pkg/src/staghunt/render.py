"""ASCII frames of the grid."""
from __future__ import annotations

from .env import EnvConfig, EnvState

LEGEND = "A/B agents (a/b frozen)  S stag  p plant  * overlap  . empty"


def render(state: EnvState, config: EnvConfig) -> str:
    grid = [["." for _ in range(config.width)] for _ in range(config.height)]
    occupants: dict[tuple[int, int], list[str]] = {}
    for i, pos in enumerate(state.agents):
        glyph = "AB"[i]
        occupants.setdefault(pos, []).append(glyph.lower() if state.frozen[i] else glyph)
    occupants.setdefault(state.stag, []).append("S")
    for pos in state.plants:
        occupants.setdefault(pos, []).append("p")
    for (x, y), who in occupants.items():
        grid[y][x] = who[0] if len(who) == 1 else "*"
    border = "+" + "-" * config.width + "+"
    rows = [border] + ["|" + "".join(r) + "|" for r in grid] + [border]
    return "\n".join(rows)


def frame(state: EnvState, config: EnvConfig, rewards=None) -> str:
    head = f"t={state.t}"
    if rewards is not None:
        head += f"  rewards=({rewards[0]:g}, {rewards[1]:g})"
    if state.done:
        head += "  [done]"
    return head + "\n" + render(state, config)
