"""Named, independent random streams derived from one integer seed."""
from __future__ import annotations

import numpy as np

STREAMS = ("spawn", "stag", "policy-init", "sampling", "sgd")


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS.index(name),))
    return np.random.default_rng(ss)


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}
