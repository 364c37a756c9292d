"""Feed-forward categorical policy with a separate value network.

All parameters live in one flat float64 vector so that the optimiser and
the checkpoint format can treat them uniformly.  Layer order in the flat
vector (each matrix row-major, shape ``(fan_in, fan_out)``)::

    actor:  W1 (obs, hidden)  b1 (hidden)  W2 (hidden, hidden)  b2 (hidden)
            W3 (hidden, n_actions)  b3 (n_actions)
    critic: V1 (obs, hidden)  c1 (hidden)  V2 (hidden, hidden)  c2 (hidden)
            V3 (hidden, 1)  c3 (1)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1
LAYER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "V1", "c1", "V2", "c2", "V3", "c3")


@dataclass(frozen=True)
class MlpDims:
    obs_dim: int = 12
    hidden: int = 64
    n_actions: int = 5

    def shapes(self) -> list[tuple[int, ...]]:
        o, h, a = self.obs_dim, self.hidden, self.n_actions
        return [(o, h), (h,), (h, h), (h,), (h, a), (a,),
                (o, h), (h,), (h, h), (h,), (h, 1), (1,)]

    @property
    def size(self) -> int:
        return _layout(self)[-1][2]


@lru_cache(maxsize=None)
def _layout(dims: MlpDims) -> tuple[tuple[str, int, int, tuple[int, ...]], ...]:
    out, i = [], 0
    for name, shape in zip(LAYER_NAMES, dims.shapes()):
        n = int(np.prod(shape))
        out.append((name, i, i + n, shape))
        i += n
    return tuple(out)


class MlpParams:
    """Flat parameter vector plus shaped views into it."""

    def __init__(self, dims: MlpDims, flat: np.ndarray | None = None):
        self.dims = dims
        if flat is None:
            flat = np.zeros(dims.size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (dims.size,):
            raise ValueError(f"expected {dims.size} parameters, got {flat.shape}")
        self.flat = flat
        self.layers = {name: flat[a:b].reshape(shape) for name, a, b, shape in _layout(dims)}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def copy(self) -> "MlpParams":
        return MlpParams(self.dims, self.flat.copy())

    def __eq__(self, other):
        return (isinstance(other, MlpParams) and self.dims == other.dims
                and np.array_equal(self.flat, other.flat))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))

    def digest(self) -> str:
        return hashlib.sha256(self.flat.astype("<f8").tobytes()).hexdigest()


def init_params(rng: np.random.Generator, dims: MlpDims = MlpDims()) -> MlpParams:
    p = MlpParams(dims)
    for name in LAYER_NAMES:
        arr = p[name]
        if arr.ndim == 2:
            lim = np.sqrt(6.0 / (arr.shape[0] + arr.shape[1]))
            arr[...] = rng.uniform(-lim, lim, size=arr.shape)
    p["W3"][...] *= 0.01
    return p


def forward(params: MlpParams, obs: np.ndarray, cache: bool = False):
    """Logits ``(B, n_actions)`` and values ``(B,)`` for a batch of observations.

    A 1-D observation is treated as a batch of one and squeezed back.
    With ``cache=True`` also returns the activations needed by :func:`backward`.
    """
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    if x.shape[1] != params.dims.obs_dim:
        raise ValueError(f"observation has {x.shape[1]} features, expected {params.dims.obs_dim}")
    L = params.layers
    h1 = np.tanh(x @ L["W1"] + L["b1"])
    h2 = np.tanh(h1 @ L["W2"] + L["b2"])
    logits = h2 @ L["W3"] + L["b3"]
    g1 = np.tanh(x @ L["V1"] + L["c1"])
    g2 = np.tanh(g1 @ L["V2"] + L["c2"])
    values = (g2 @ L["V3"] + L["c3"])[:, 0]
    if single:
        logits, values = logits[0], values[0]
    if cache:
        return logits, values, (x, h1, h2, g1, g2)
    return logits, values


def backward(params: MlpParams, cache, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    """Flat gradient given upstream gradients w.r.t. logits and values."""
    x, h1, h2, g1, g2 = cache
    L = params.layers
    grad = MlpParams(params.dims)
    G = grad.layers
    G["W3"][...] = h2.T @ dlogits
    G["b3"][...] = dlogits.sum(0)
    d2 = (dlogits @ L["W3"].T) * (1.0 - h2 * h2)
    G["W2"][...] = h1.T @ d2
    G["b2"][...] = d2.sum(0)
    d1 = (d2 @ L["W2"].T) * (1.0 - h1 * h1)
    G["W1"][...] = x.T @ d1
    G["b1"][...] = d1.sum(0)

    dv = dvalues[:, None]
    G["V3"][...] = g2.T @ dv
    G["c3"][...] = dv.sum(0)
    e2 = (dv @ L["V3"].T) * (1.0 - g2 * g2)
    G["V2"][...] = g1.T @ e2
    G["c2"][...] = e2.sum(0)
    e1 = (e2 @ L["V2"].T) * (1.0 - g1 * g1)
    G["V1"][...] = x.T @ e1
    G["c1"][...] = e1.sum(0)
    return grad.flat


# -- categorical distribution helpers (work on the last axis) --

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_prob(logits: np.ndarray, action) -> np.ndarray:
    lp = log_softmax(logits)
    if lp.ndim == 1:
        return lp[action]
    return lp[np.arange(lp.shape[0]), action]


def entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    p = np.exp(lp)
    return -(p * lp).sum(axis=-1)


def sample_action(logits: np.ndarray, rng: np.random.Generator):
    """Sample by inverse CDF; returns ``(actions, log_probs)``."""
    single = logits.ndim == 1
    lg = logits[None, :] if single else logits
    p = softmax(lg)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(lg.shape[0])[:, None] * cdf[:, -1:]
    a = (u >= cdf).sum(axis=1)
    a = np.minimum(a, lg.shape[1] - 1)
    lp = log_prob(lg, a)
    if single:
        return int(a[0]), float(lp[0])
    return a, lp


# -- checkpoints --

def save_checkpoint(params: MlpParams, stem: str | Path, meta: dict | None = None) -> Path:
    """Write ``<stem>.json`` (manifest) and ``<stem>.f64`` (raw little-endian doubles)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = params.flat.astype("<f8").tobytes()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "obs_dim": params.dims.obs_dim,
        "hidden": params.dims.hidden,
        "n_actions": params.dims.n_actions,
        "activation": "tanh",
        "dtype": "float64-le",
        "layers": list(LAYER_NAMES),
        "n_params": params.dims.size,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    stem.with_suffix(".f64").write_bytes(blob)
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    return stem.with_suffix(".json")


def load_checkpoint(stem: str | Path) -> tuple[MlpParams, dict]:
    stem = Path(stem)
    if stem.suffix in (".json", ".f64"):
        stem = stem.with_suffix("")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    dims = MlpDims(manifest["obs_dim"], manifest["hidden"], manifest["n_actions"])
    blob = stem.with_suffix(".f64").read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ValueError(f"checkpoint payload hash mismatch for {stem}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return MlpParams(dims, flat), manifest
