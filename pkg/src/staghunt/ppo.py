"""Clipped-surrogate policy optimisation for the gridworld Stag Hunt.

Two training regimes share one loop: independent learners (one policy per
agent, each trained on its own reward) and a centralised learner (one
policy over the 25 joint actions, trained on the combined reward).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import env as E
from .policy import (
    MlpDims, MlpParams, backward, entropy, forward, init_params, log_softmax, sample_action,
)
from .seeding import streams

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    clip: float = 0.3
    gamma: float = 0.99
    train_batch: int = 4000
    sgd_minibatch: int = 128
    sgd_iters: int = 30
    kl_coeff: float = 0.2
    kl_target: float = 0.2
    entropy_coeff: float = 0.0
    vf_clip: float = 10.0
    vf_loss_coeff: float = 1.0
    gae_lambda: float = 1.0
    learning_rate: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 64
    num_envs: int = 32

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if min(self.train_batch, self.sgd_minibatch, self.sgd_iters, self.num_envs, self.hidden) <= 0:
            raise ValueError("batch sizes, iteration counts and widths must be positive")
        if self.sgd_minibatch > self.train_batch:
            raise ValueError("sgd_minibatch cannot exceed train_batch")


# ---------------------------------------------------------------- GAE

def compute_gae(rewards, values, terminals, bootstrap_value: float, gamma: float, lam: float):
    """Advantages and return targets for one trajectory fragment.

    ``bootstrap_value`` is the critic's estimate for the state after the
    last step; it is ignored when that step is terminal.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    nonterm = 1.0 - np.asarray(terminals, dtype=np.float64)
    n = len(rewards)
    adv = np.empty(n)
    next_v = bootstrap_value
    next_a = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_v * nonterm[t] - values[t]
        next_a = delta + gamma * lam * nonterm[t] * next_a
        adv[t] = next_a
        next_v = values[t]
    return adv, adv + values


# ---------------------------------------------------------------- loss

@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    logits: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "RolloutBatch":
        return RolloutBatch(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})


def ppo_loss_and_grad(params: MlpParams, mb: RolloutBatch, hp: Hyperparams, kl_coeff: float):
    """Loss, flat gradient and diagnostics for one minibatch.

    ``mb.advantages`` are used as given; standardisation happens once per
    update in :class:`Learner`.
    """
    n = len(mb)
    logits, values, cache = forward(params, mb.obs, cache=True)
    lp_all = log_softmax(logits)
    p = np.exp(lp_all)
    rows = np.arange(n)
    logp = lp_all[rows, mb.actions]
    ratio = np.exp(logp - mb.logp)
    A = mb.advantages
    surr1 = ratio * A
    clipped = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip)
    surr2 = clipped * A
    unclipped_active = surr1 <= surr2
    pol_loss = -np.mean(np.minimum(surr1, surr2))

    err = values - mb.returns
    sq = err * err
    vf_cap = hp.vf_clip * hp.vf_clip
    vf_loss = np.mean(np.minimum(sq, vf_cap))

    old_lp = log_softmax(mb.logits)
    old_p = np.exp(old_lp)
    kl = (old_p * (old_lp - lp_all)).sum(axis=1)
    ent = -(p * lp_all).sum(axis=1)

    loss = (pol_loss + hp.vf_loss_coeff * vf_loss
            - hp.entropy_coeff * ent.mean() + kl_coeff * kl.mean())
    if not np.isfinite(loss):
        raise TrainingError(
            f"non-finite PPO loss: policy={pol_loss} vf={vf_loss} kl={kl.mean()} entropy={ent.mean()}"
        )

    # d loss / d logp through the unclipped branch only
    dlogp = np.where(unclipped_active, -A * ratio, 0.0) / n
    onehot = np.zeros_like(p)
    onehot[rows, mb.actions] = 1.0
    dlogits = dlogp[:, None] * (onehot - p)
    dlogits += (kl_coeff / n) * (p - old_p)
    if hp.entropy_coeff:
        dlogits += (hp.entropy_coeff / n) * p * (lp_all + ent[:, None])
    dvalues = np.where(sq < vf_cap, 2.0 * err, 0.0) * (hp.vf_loss_coeff / n)
    grad = backward(params, cache, dlogits, dvalues)

    stats = {
        "loss": float(loss),
        "policy_loss": float(pol_loss),
        "vf_loss": float(vf_loss),
        "kl": float(kl.mean()),
        "entropy": float(ent.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > hp.clip)),
    }
    return float(loss), grad, stats


def adapt_kl_coeff(kl_coeff: float, measured_kl: float, kl_target: float) -> float:
    if measured_kl > 2.0 * kl_target:
        return kl_coeff * 1.5
    if measured_kl < 0.5 * kl_target:
        return kl_coeff * 0.5
    return kl_coeff


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


class Learner:
    """One PPO optimiser: parameters, Adam moments and the adaptive KL coefficient."""

    def __init__(self, params: MlpParams, hp: Hyperparams, rng: np.random.Generator):
        self.params = params
        self.hp = hp
        self.rng = rng
        self.adam = AdamState.zeros(params.dims.size)
        self.kl_coeff = hp.kl_coeff

    def reset_optimizer(self):
        self.adam = AdamState.zeros(self.params.dims.size)

    def update(self, batch: RolloutBatch) -> dict:
        hp = self.hp
        adv = batch.advantages
        std = adv.std()
        batch.advantages = (adv - adv.mean()) / (std + 1e-8)
        n = len(batch)
        flat = self.params.flat
        dims = self.params.dims
        stats = {}
        for _ in range(hp.sgd_iters):
            perm = self.rng.permutation(n)
            for s in range(0, n, hp.sgd_minibatch):
                mb = batch.take(perm[s:s + hp.sgd_minibatch])
                _, grad, stats = ppo_loss_and_grad(MlpParams(dims, flat), mb, hp, self.kl_coeff)
                flat, self.adam = adam_step(flat, grad, self.adam, hp.learning_rate,
                                            hp.adam_beta1, hp.adam_beta2, hp.adam_eps)
        params = MlpParams(dims, flat)
        if not params.is_finite():
            raise TrainingError("parameters became non-finite after update")
        self.params = params
        logits, _ = forward(params, batch.obs)
        new_lp = log_softmax(logits)
        old_lp = log_softmax(batch.logits)
        measured = float((np.exp(old_lp) * (old_lp - new_lp)).sum(axis=1).mean())
        stats = dict(stats, measured_kl=measured, kl_coeff=self.kl_coeff)
        self.kl_coeff = adapt_kl_coeff(self.kl_coeff, measured, hp.kl_target)
        return stats


# ---------------------------------------------------------------- rollouts

class _Slot:
    """A learner's view of the environment: which steps it decides and what it earns."""

    def __init__(self, kind: str, config: E.EnvConfig):
        self.kind = kind  # "agent0", "agent1" or "joint"
        self.config = config
        self.agent = {"agent0": 0, "agent1": 1}.get(kind)

    def active(self, s: E.EnvState) -> bool:
        if self.agent is None:
            return not s.done
        return not s.frozen[self.agent]

    def obs(self, states) -> np.ndarray:
        if self.agent is None:
            return np.hstack([E.observe_batch(states, 0, self.config),
                              E.observe_batch(states, 1, self.config)])
        return E.observe_batch(states, self.agent, self.config)

    def apply(self, actions: np.ndarray, idx, a):
        if self.agent is None:
            actions[idx, 0] = a // E.N_ACTIONS
            actions[idx, 1] = a % E.N_ACTIONS
        else:
            actions[idx, self.agent] = a

    def reward(self, res: E.StepResult) -> float:
        if self.agent is None:
            return res.rewards[0] + res.rewards[1]
        return res.rewards[self.agent]

    def terminal(self, res: E.StepResult) -> bool:
        if self.agent is None:
            return res.done
        return res.newly_frozen[self.agent]


@dataclass
class EpisodeStats:
    combined: list[float] = field(default_factory=list)
    agent0: list[float] = field(default_factory=list)
    agent1: list[float] = field(default_factory=list)
    truncated: int = 0


@dataclass
class TrainCurvePoint:
    iteration: int
    mean_combined_reward: float
    std_combined_reward: float
    agent0_mean: float
    agent1_mean: float
    episodes: int
    truncated: int

    @classmethod
    def from_stats(cls, it: int, st: EpisodeStats) -> "TrainCurvePoint":
        if st.combined:
            c = np.asarray(st.combined)
            return cls(it, float(c.mean()), float(c.std()), float(np.mean(st.agent0)),
                       float(np.mean(st.agent1)), len(c), st.truncated)
        return cls(it, 0.0, 0.0, 0.0, 0.0, 0, st.truncated)


class RolloutCollector:
    """A fixed pool of environments stepped in lockstep, persisting across iterations."""

    def __init__(self, config: E.EnvConfig, slots: list[str], num_envs: int,
                 spawn_rng: np.random.Generator, stag_rng: np.random.Generator,
                 sample_rng: np.random.Generator):
        self.config = config
        self.slots = [_Slot(k, config) for k in slots]
        self.spawn_rng = spawn_rng
        self.stag_rng = stag_rng
        self.sample_rng = sample_rng
        self.states = [E.reset(config, spawn_rng) for _ in range(num_envs)]
        self.ep_return = np.zeros((num_envs, 2))

    def collect(self, params: list[MlpParams], train_batch: int, gamma: float, lam: float):
        """Step until every slot has ``train_batch`` decision steps.

        Returns one :class:`RolloutBatch` per slot (exactly ``train_batch``
        long) and the statistics of episodes completed meanwhile.
        """
        K = len(self.states)
        nslot = len(self.slots)
        open_frag = [[None] * K for _ in range(nslot)]
        done_frags: list[list[dict]] = [[] for _ in range(nslot)]
        counts = [0] * nslot
        stats = EpisodeStats()
        cfg = self.config

        def close(j, k, bootstrap):
            fr = open_frag[j][k]
            open_frag[j][k] = None
            adv, ret = compute_gae(fr["rewards"], fr["values"], fr["terminals"],
                                   bootstrap, gamma, lam)
            fr["advantages"], fr["returns"] = adv, ret
            done_frags[j].append(fr)

        while min(counts) < train_batch:
            actions = np.full((K, 2), E.STAY, dtype=np.int64)
            acted = []
            for j, slot in enumerate(self.slots):
                idx = [k for k in range(K) if slot.active(self.states[k])]
                acted.append(idx)
                if not idx:
                    continue
                obs = slot.obs([self.states[k] for k in idx])
                logits, values = forward(params[j], obs)
                a, lp = sample_action(logits, self.sample_rng)
                slot.apply(actions, idx, a)
                for r, k in enumerate(idx):
                    fr = open_frag[j][k]
                    if fr is None:
                        fr = open_frag[j][k] = {"obs": [], "actions": [], "logp": [], "logits": [],
                                                "values": [], "rewards": [], "terminals": []}
                    fr["obs"].append(obs[r])
                    fr["actions"].append(a[r])
                    fr["logp"].append(lp[r])
                    fr["logits"].append(logits[r])
                    fr["values"].append(values[r])
                counts[j] += len(idx)
            for k in range(K):
                new, res = E.step(self.states[k], actions[k], cfg, self.stag_rng)
                self.ep_return[k] += res.rewards
                for j, slot in enumerate(self.slots):
                    fr = open_frag[j][k]
                    if fr is None or len(fr["rewards"]) == len(fr["actions"]):
                        continue
                    term = slot.terminal(res)
                    fr["rewards"].append(slot.reward(res))
                    fr["terminals"].append(term)
                    if term:
                        close(j, k, 0.0)
                if new.done:
                    for j, slot in enumerate(self.slots):
                        if open_frag[j][k] is not None:
                            _, v = forward(params[j], slot.obs([new]))
                            close(j, k, float(v[0]))
                    if res.truncated:
                        stats.truncated += 1
                    else:
                        stats.combined.append(float(self.ep_return[k].sum()))
                        stats.agent0.append(float(self.ep_return[k, 0]))
                        stats.agent1.append(float(self.ep_return[k, 1]))
                    self.ep_return[k] = 0.0
                    new = E.reset(cfg, self.spawn_rng)
                self.states[k] = new

        # batch boundary: bootstrap whatever is still open
        for j, slot in enumerate(self.slots):
            ks = [k for k in range(K) if open_frag[j][k] is not None]
            if ks:
                _, v = forward(params[j], slot.obs([self.states[k] for k in ks]))
                for k, vk in zip(ks, v):
                    close(j, k, float(vk))

        batches = []
        for j in range(nslot):
            frs = done_frags[j]
            cat = {key: np.concatenate([np.asarray(f[key]) for f in frs])[:train_batch]
                   for key in ("obs", "actions", "logp", "logits", "values", "rewards",
                               "terminals", "advantages", "returns")}
            cat["actions"] = cat["actions"].astype(np.int64)
            cat["terminals"] = cat["terminals"].astype(bool)
            batches.append(RolloutBatch(**cat))
        return batches, stats


# ---------------------------------------------------------------- trainers

@dataclass
class TrainResult:
    learners: list[Learner]
    curve: list[TrainCurvePoint]
    collector: RolloutCollector | None = None

    @property
    def policies(self) -> list[MlpParams]:
        return [l.params for l in self.learners]


def _resolve(env_config) -> E.EnvConfig:
    return E.config_for(env_config) if isinstance(env_config, str) else env_config


def _run(config: E.EnvConfig, slot_kinds: list[str], learners: list[Learner], hp: Hyperparams,
         iterations: int, rngs: dict, callback: Callable | None) -> TrainResult:
    collector = RolloutCollector(config, slot_kinds, hp.num_envs,
                                 rngs["spawn"], rngs["stag"], rngs["sampling"])
    curve = []
    for it in range(iterations):
        batches, st = collector.collect([l.params for l in learners], hp.train_batch,
                                        hp.gamma, hp.gae_lambda)
        upd = [l.update(b) for l, b in zip(learners, batches)]
        point = TrainCurvePoint.from_stats(it, st)
        curve.append(point)
        log.debug("iter %d %s reward=%.3f episodes=%d kl=%s", it, config.label,
                  point.mean_combined_reward, point.episodes, [u["measured_kl"] for u in upd])
        if callback is not None:
            callback(point, learners)
    return TrainResult(learners, curve, collector)


def make_learners(n: int, dims: MlpDims, hp: Hyperparams, rngs: dict,
                  init: list[MlpParams] | None = None) -> list[Learner]:
    out = []
    for i in range(n):
        params = init[i].copy() if init is not None else init_params(rngs["policy-init"], dims)
        out.append(Learner(params, hp, rngs["sgd"]))
    return out


def train_ippo(env_config, hp: Hyperparams = Hyperparams(), iterations: int = 1000, seed: int = 0,
               init: list[MlpParams] | None = None, callback: Callable | None = None) -> TrainResult:
    """Two independent PPO learners, one per agent, no shared parameters."""
    config = _resolve(env_config)
    rngs = streams(seed)
    dims = MlpDims(E.OBS_DIM, hp.hidden, E.N_ACTIONS)
    learners = make_learners(2, dims, hp, rngs, init)
    return _run(config, ["agent0", "agent1"], learners, hp, iterations, rngs, callback)


def decode_joint(a):
    return a // E.N_ACTIONS, a % E.N_ACTIONS


def encode_joint(a0, a1):
    return a0 * E.N_ACTIONS + a1


def train_centralized(env_config, hp: Hyperparams = Hyperparams(), iterations: int = 1000,
                      seed: int = 0, init: list[MlpParams] | None = None,
                      callback: Callable | None = None) -> TrainResult:
    """One joint-action policy over both agents, trained on the combined reward."""
    config = _resolve(env_config)
    rngs = streams(seed)
    dims = MlpDims(2 * E.OBS_DIM, hp.hidden, E.N_ACTIONS ** 2)
    learners = make_learners(1, dims, hp, rngs, init)
    return _run(config, ["joint"], learners, hp, iterations, rngs, callback)
